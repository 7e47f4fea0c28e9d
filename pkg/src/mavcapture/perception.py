"""Synthetic detections, pixel/bearing conversion, neighbor rejection and
gimbal tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from mavcapture.errors import ConfigError, InvalidInput
from mavcapture.world import CameraModel, Pose


@dataclass(frozen=True)
class Detection:
    center: np.ndarray
    width: float
    height: float
    confidence: float = 1.0
    is_outlier: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        if not (self.width > 0 and self.height > 0):
            raise InvalidInput("detection box must have positive size")

    @property
    def box(self) -> tuple[float, float, float, float]:
        """(u_min, v_min, u_max, v_max)"""
        u, v = self.center
        return (u - 0.5 * self.width, v - 0.5 * self.height, u + 0.5 * self.width, v + 0.5 * self.height)

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Bearing:
    direction: np.ndarray
    timestamp: float = 0.0
    agent: int = 0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float).reshape(3)
        n = float(np.linalg.norm(d))
        if not n > 0 or not math.isfinite(n):
            raise InvalidInput("bearing direction must be a non-zero finite vector")
        object.__setattr__(self, "direction", d / n)


def to_camera(p_world, cam_pose: Pose) -> np.ndarray:
    return cam_pose.orientation.T @ (np.asarray(p_world, dtype=float) - cam_pose.position)


def project_to_pixel(p_world, cam_pose: Pose, cam: CameraModel, eps: float = 1e-9) -> np.ndarray | None:
    """Pinhole projection ``K p_cam / z_cam``; ``None`` behind the camera."""
    p_cam = to_camera(p_world, cam_pose)
    if p_cam[2] <= eps:
        return None
    return (cam.intrinsics @ (p_cam / p_cam[2]))[:2]


def _vnorm(v: np.ndarray) -> float:
    return math.sqrt(float(v @ v))


def _project_unit(p_cam: np.ndarray, cam: CameraModel, eps: float) -> np.ndarray | None:
    norm = _vnorm(p_cam)
    if norm == 0.0:
        return None
    g = p_cam / norm
    if g[2] <= eps:
        return None
    return (cam.intrinsics @ g / g[2])[:2]


def project_neighbor(neighbor_pos, cam_pose: Pose, cam: CameraModel, eps: float = 1e-6) -> np.ndarray | None:
    """Image position of a neighbor from its unit camera-frame bearing."""
    return _project_unit(to_camera(neighbor_pos, cam_pose), cam, eps)


def synthesize_detection(
    target_pos,
    cam_pose: Pose,
    cam: CameraModel,
    noise_px: float,
    rng: np.random.Generator,
    target_diameter: float = 0.35,
    outlier_rate: float = 0.0,
) -> Detection | None:
    """Stand-in for the learned detector: project, jitter, size by range."""
    if noise_px < 0:
        raise InvalidInput("noise_px must be non-negative")
    p_cam = to_camera(target_pos, cam_pose)
    if p_cam[2] <= 0.0:
        return None
    pixel = (cam.intrinsics @ (p_cam / p_cam[2]))[:2]
    if not cam.in_image(pixel):
        return None
    rng_range = _vnorm(p_cam)
    size = max(cam.focal * target_diameter / rng_range, 1.0)
    if outlier_rate > 0.0 and rng.random() < outlier_rate:
        junk = rng.uniform([0.0, 0.0], [cam.width, cam.height])
        return Detection(junk, size, size, confidence=float(rng.uniform(0.3, 0.9)), is_outlier=True)
    if noise_px > 0.0:
        pixel = pixel + rng.normal(0.0, noise_px, size=2)
    return Detection(pixel, size, size, confidence=1.0)


def synthesize_neighbor_detections(
    neighbors,
    cam_pose: Pose,
    cam: CameraModel,
    rng: np.random.Generator,
    diameter: float = 0.5,
    detect_prob: float = 1.0,
) -> list[Detection]:
    """False detections produced by neighboring pursuers in view."""
    out = []
    for pos in neighbors:
        p_cam = to_camera(pos, cam_pose)
        if p_cam[2] <= 1e-9:
            continue
        pix = (cam.intrinsics @ (p_cam / p_cam[2]))[:2]
        if not cam.in_image(pix):
            continue
        if detect_prob < 1.0 and rng.random() >= detect_prob:
            continue
        size = max(cam.focal * diameter / _vnorm(p_cam), 1.0)
        out.append(Detection(pix, size, size, confidence=float(rng.uniform(0.5, 1.0)), is_outlier=True))
    return out


def pixel_to_bearing(det: Detection, cam: CameraModel, cam_pose: Pose, timestamp: float = 0.0, agent: int = 0) -> Bearing:
    k = cam.intrinsics
    fx, skew, cx, fy, cy = k[0, 0], k[0, 1], k[0, 2], k[1, 1], k[1, 2]
    if abs(fx * fy) < 1e-12:
        raise ConfigError("camera intrinsics are singular")
    # back-substitution through the upper-triangular K
    y = (det.center[1] - cy) / fy
    x = (det.center[0] - cx - skew * y) / fx
    return Bearing(cam_pose.orientation @ np.array([x, y, 1.0]), timestamp, agent)


def _chord_integral(x: float, cx: float, r: float) -> float:
    """Antiderivative of sqrt(r^2 - (x - cx)^2)."""
    u = min(max(x - cx, -r), r)
    return 0.5 * (u * math.sqrt(max(r * r - u * u, 0.0)) + r * r * math.asin(u / r))


def disk_box_overlap(center, radius: float, box: tuple[float, float, float, float]) -> float:
    """Exact area of a disk intersected with an axis-aligned box."""
    cx, cy = float(center[0]), float(center[1])
    x0, y0, x1, y1 = box
    if radius <= 0:
        return 0.0
    lo, hi = max(x0, cx - radius), min(x1, cx + radius)
    if hi <= lo or min(y1, cy + radius) <= max(y0, cy - radius):
        return 0.0
    breaks = {lo, hi}
    for y in (y0, y1):
        dy = y - cy
        if abs(dy) < radius:
            w = math.sqrt(radius * radius - dy * dy)
            for x in (cx - w, cx + w):
                if lo < x < hi:
                    breaks.add(x)
    xs = sorted(breaks)
    area = 0.0
    for a, b in zip(xs[:-1], xs[1:]):
        mid = 0.5 * (a + b)
        h = math.sqrt(max(radius * radius - (mid - cx) ** 2, 0.0))
        top_clipped = cy + h > y1
        bottom_clipped = cy - h < y0
        if min(y1, cy + h) <= max(y0, cy - h):
            continue
        chord = _chord_integral(b, cx, radius) - _chord_integral(a, cx, radius)
        # integrand is (top) - (bottom); each side is either the box edge or the circle arc
        top = (y1 * (b - a)) if top_clipped else (cy * (b - a) + chord)
        bottom = (y0 * (b - a)) if bottom_clipped else (cy * (b - a) - chord)
        area += top - bottom
    return area


def overlap_ratio(det: Detection, disk_center, disk_radius: float) -> float:
    """Fraction of the detection box covered by the disk."""
    return disk_box_overlap(disk_center, disk_radius, det.box) / det.area


def eliminate_neighbors(
    detections: list[Detection],
    neighbors,
    cam_pose: Pose,
    cam: CameraModel,
    overlap_threshold: float = 0.5,
    neighbor_diameter: float = 0.5,
) -> Detection | None:
    """Drop detections explained by a projected neighbor; return the most confident survivor."""
    if not 0.0 < overlap_threshold <= 1.0:
        raise InvalidInput("overlap_threshold must be in (0, 1]")
    disks = []
    for pos in neighbors:
        p_cam = to_camera(pos, cam_pose)
        pix = _project_unit(p_cam, cam, 1e-6)
        if pix is None:
            continue
        disks.append((pix, 0.5 * cam.focal * neighbor_diameter / _vnorm(p_cam)))
    survivors = [
        det for det in detections if all(overlap_ratio(det, c, r) <= overlap_threshold for c, r in disks)
    ]
    if not survivors:
        return None
    return max(survivors, key=lambda d: d.confidence)


def pixel_angle_error(det: Detection, cam: CameraModel) -> np.ndarray:
    """(pitch, yaw) corrections that would centre the detection."""
    k = cam.intrinsics
    du = det.center[0] - k[0, 2]
    dv = det.center[1] - k[1, 2]
    return np.array([math.atan2(dv, k[1, 1]), -math.atan2(du, k[0, 0])])


@dataclass(frozen=True)
class PidGains:
    kp: float = 4.0
    ki: float = 0.5
    kd: float = 0.05
    i_limit: float = 0.5  # clamp on the integrated error, rad*s


@dataclass(frozen=True)
class PidMemory:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(2))
    prev_error: np.ndarray | None = None


@lru_cache(maxsize=32)
def _gain_arrays(gains: tuple[PidGains, ...]) -> tuple[np.ndarray, ...]:
    return tuple(np.array([getattr(g, name) for g in gains]) for name in ("kp", "ki", "kd", "i_limit"))


def gimbal_pid_step(
    angle_error,
    gains: tuple[PidGains, PidGains],
    memory: PidMemory,
    dt: float,
    rate_limit: float = math.inf,
) -> tuple[np.ndarray, PidMemory]:
    """Independent PID on (pitch, yaw); returns rate commands in rad/s."""
    if not dt > 0:
        raise InvalidInput("dt must be positive")
    err = np.asarray(angle_error, dtype=float).reshape(2)
    kp, ki, kd, i_lim = _gain_arrays(tuple(gains))
    integral = np.minimum(np.maximum(memory.integral + err * dt, -i_lim), i_lim)
    deriv = 0.0 if memory.prev_error is None else (err - memory.prev_error) / dt
    cmd = np.minimum(np.maximum(kp * err + ki * integral + kd * deriv, -rate_limit), rate_limit)
    return cmd, PidMemory(integral, err)
