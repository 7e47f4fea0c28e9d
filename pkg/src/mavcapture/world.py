"""Frames, camera geometry, target trajectories and the pursuer plant.

Conventions: world frame is ENU with gravity along -z. Body frame is
forward-left-up and a level body has orientation ``rot_z(yaw)``. Camera frame
has the optical axis along +z with pixel axes right (+x) and down (+y).
Gimbal angles compose as yaw about body z, then pitch about the intermediate
y axis; positive pitch tilts the optical axis below the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from mavcapture.errors import ConfigError, InvalidInput

# Columns are the camera axes (right, down, optical) expressed in body FLU.
BODY_FROM_OPTICAL = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def orthonormality_error(rot: np.ndarray) -> float:
    return float(np.linalg.norm(rot.T @ rot - np.eye(3)))


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(np.asarray(a, dtype=float))) for a in arrays)


@dataclass(frozen=True)
class Pose:
    """World-from-frame rigid transform."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=float).reshape(3, 3))

    def to_world(self, p_local) -> np.ndarray:
        return self.orientation @ np.asarray(p_local, dtype=float) + self.position

    def to_local(self, p_world) -> np.ndarray:
        return self.orientation.T @ (np.asarray(p_world, dtype=float) - self.position)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: ``other`` is expressed in this frame."""
        return Pose(self.to_world(other.position), self.orientation @ other.orientation)

    def inverse(self) -> "Pose":
        rt = self.orientation.T
        return Pose(-rt @ self.position, rt)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera on a two-axis gimbal.

    ``mount_rotation`` maps camera-frame vectors into the gimbal (body-aligned)
    frame at zero gimbal angles. The default points the optical axis along
    body forward.
    """

    intrinsics: np.ndarray = field(
        default_factory=lambda: np.array([[800.0, 0.0, 640.0], [0.0, 800.0, 360.0], [0.0, 0.0, 1.0]])
    )
    mount_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mount_rotation: np.ndarray = field(default_factory=lambda: BODY_FROM_OPTICAL.copy())
    width: int = 1280
    height: int = 720
    gimbal_rate_max: float = 3.0  # rad/s, assumed
    pitch_limits: tuple[float, float] = (-0.5 * math.pi, 0.5 * math.pi)

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=float).reshape(3, 3)
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "mount_offset", np.asarray(self.mount_offset, dtype=float).reshape(3))
        object.__setattr__(self, "mount_rotation", np.asarray(self.mount_rotation, dtype=float).reshape(3, 3))
        if not np.allclose(np.tril(k, -1), 0.0) or k[0, 0] <= 0 or k[1, 1] <= 0 or abs(k[2, 2] - 1.0) > 1e-12:
            raise ConfigError("intrinsics must be upper-triangular with positive focal lengths and K[2,2] = 1")

    @property
    def focal(self) -> float:
        return float(0.5 * (self.intrinsics[0, 0] + self.intrinsics[1, 1]))

    @property
    def principal_point(self) -> np.ndarray:
        return self.intrinsics[:2, 2].copy()

    def in_image(self, pixel) -> bool:
        u, v = pixel
        return 0.0 <= u <= self.width and 0.0 <= v <= self.height


@dataclass(frozen=True)
class TargetState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        if not _finite(self.position, self.velocity):
            raise InvalidInput("target state must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


@dataclass(frozen=True)
class PlantLimits:
    a_max: float = 5.0
    v_max: float = 10.0
    yaw_rate_max: float = 2.0


@dataclass(frozen=True)
class PursuerState:
    id: int
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    gimbal_pitch: float = 0.0
    gimbal_yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))

    @property
    def body_orientation(self) -> np.ndarray:
        return rot_z(self.yaw)

    def body_pose(self) -> Pose:
        return Pose(self.position, self.body_orientation)


def step_plants(pos, vel, yaw, accel, yaw_cmd, dt: float, limits: PlantLimits = PlantLimits()):
    """Batched plant update on arrays of shape (n, 3), (n, 3), (n,), (n, 3), (n,).

    Acceleration is clipped per component to ``a_max``; the speed is clipped
    to ``v_max`` and the position uses the trapezoid of the old and new
    velocities, which equals ``p + v dt + a dt^2 / 2`` when no clip applies.
    """
    # np.minimum/np.maximum instead of np.clip: this runs every simulation tick
    a = np.minimum(np.maximum(accel, -limits.a_max), limits.a_max)
    v_new = vel + a * dt
    speed_sq = np.einsum("ij,ij->i", v_new, v_new)
    over = speed_sq > limits.v_max**2
    if over.any():
        v_new[over] *= (limits.v_max / np.sqrt(speed_sq[over]))[:, None]
    p_new = pos + 0.5 * dt * (vel + v_new)
    max_turn = limits.yaw_rate_max * dt
    err = np.remainder(yaw_cmd - yaw + np.pi, 2.0 * np.pi) - np.pi
    yaw_new = yaw + np.minimum(np.maximum(err, -max_turn), max_turn)
    yaw_new = np.remainder(yaw_new + np.pi, 2.0 * np.pi) - np.pi
    return p_new, v_new, yaw_new


def advance_plants(pos, vel, yaw, accel, yaw_cmd, dt: float, n_steps: int, limits: PlantLimits = PlantLimits()):
    """``n_steps`` calls of :func:`step_plants` with inputs held constant.

    Speed along ``v + a t`` is convex in ``t``, so when the end speed is within
    ``v_max`` no intermediate step clipped and the trapezoid steps sum to the
    exact constant-acceleration motion. The yaw slew likewise reaches
    ``min(|err|, n * max_turn)``. Otherwise fall back to stepping.
    """
    a = np.minimum(np.maximum(accel, -limits.a_max), limits.a_max)
    span = n_steps * dt
    v_new = vel + a * span
    if np.max(np.einsum("ij,ij->i", v_new, v_new)) > limits.v_max**2:
        for _ in range(n_steps):
            pos, vel, yaw = step_plants(pos, vel, yaw, accel, yaw_cmd, dt, limits)
        return pos, vel, yaw
    p_new = pos + vel * span + 0.5 * a * span * span
    max_turn = n_steps * limits.yaw_rate_max * dt
    err = np.remainder(yaw_cmd - yaw + np.pi, 2.0 * np.pi) - np.pi
    yaw_new = yaw + np.minimum(np.maximum(err, -max_turn), max_turn)
    yaw_new = np.remainder(yaw_new + np.pi, 2.0 * np.pi) - np.pi
    return p_new, v_new, yaw_new


def step_plant(
    state: PursuerState,
    accel,
    yaw_cmd: float,
    dt: float,
    limits: PlantLimits = PlantLimits(),
) -> PursuerState:
    """Advance the saturated double integrator of one pursuer by ``dt``."""
    a = np.asarray(accel, dtype=float).reshape(3)
    if not (dt > 0.0) or not _finite(a, [yaw_cmd, dt], state.position, state.velocity):
        raise InvalidInput("step_plant needs finite inputs and dt > 0")
    p, v, yaw = step_plants(
        state.position[None, :], state.velocity[None, :].copy(), np.array([state.yaw]), a[None, :], np.array([yaw_cmd]), dt, limits
    )
    return replace(state, position=p[0], velocity=v[0], yaw=float(yaw[0]))


def circle_target(
    t: float,
    radius: float = 10.0,
    speed: float = 3.0,
    center=(0.0, 0.0, 0.0),
    altitude: float = 0.0,
    phase: float = 0.0,
) -> TargetState:
    """Counter-clockwise horizontal circle starting at ``center + (radius, 0, altitude)``."""
    if not radius > 0.0:
        raise ConfigError(f"circle radius must be positive, got {radius}")
    if speed < 0.0:
        raise ConfigError(f"circle speed must be non-negative, got {speed}")
    c = np.asarray(center, dtype=float)
    theta = phase + speed * t / radius
    ct, st = math.cos(theta), math.sin(theta)
    pos = c + np.array([radius * ct, radius * st, altitude])
    vel = np.array([-speed * st, speed * ct, 0.0])
    return TargetState(pos, vel)


def line_target(t: float, start=(0.0, 0.0, 0.0), velocity=(0.0, 0.0, 0.0)) -> TargetState:
    v = np.asarray(velocity, dtype=float)
    return TargetState(np.asarray(start, dtype=float) + v * t, v)


def gimbal_rotation(pitch: float, yaw: float) -> np.ndarray:
    return rot_z(yaw) @ rot_y(pitch)


def camera_pose(pursuer: PursuerState, cam: CameraModel) -> Pose:
    r_body = pursuer.body_orientation
    position = r_body @ cam.mount_offset + pursuer.position
    orientation = r_body @ gimbal_rotation(pursuer.gimbal_pitch, pursuer.gimbal_yaw) @ cam.mount_rotation
    return Pose(position, orientation)


def optical_axis(pose: Pose) -> np.ndarray:
    return pose.orientation[:, 2].copy()
