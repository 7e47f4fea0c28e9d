"""Real-time capture decision from the four corner-mass trajectories.

The flying envelope swept by the corners is represented as two convex
polytopes: ``A`` (everything the opening net sweeps, muzzle included) and
``B`` (the part swept after the mouth reaches its largest area). A point is
capturable when it lies in ``A`` and not in ``B``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from mavcapture.errors import ConfigError, InvalidInput
from mavcapture.netdyn import (
    LaunchParams,
    NetModel,
    NetParams,
    NetTopology,
    build_net,
    corner_launch_directions,
    integrate_net,
    launch_initial_state,
)
from mavcapture.world import Pose

log = logging.getLogger(__name__)

TAU_GEOM = 1e-6


class DegenerateEnvelope(ConfigError):
    """Generator points span less than three dimensions."""


@dataclass(frozen=True)
class CornerModel:
    """Lightweight corner propagation.

    Corners fly under gravity and optional quadratic drag (``drag`` is the
    coefficient divided by corner mass, 1/m). ``reach`` caps each corner's
    distance from the gun axis line through the net centre, standing in for
    the fully spread net; ``None`` gives free ballistic flight. At the cap the
    outward relative velocity is reversed and scaled by ``restitution``.
    """

    reach: float | None = None
    restitution: float = 0.0
    drag: float = 0.0
    gravity: float = 9.81
    centre_speed: float | None = None  # axial speed of the net centre; default momentum-weighted
    substeps: int = 10


@dataclass
class CornerTrajectories:
    times: np.ndarray  # (n,)
    paths: np.ndarray  # (n, 4, 3)
    dt_env: float
    t_env: float

    def __post_init__(self):
        if self.paths.ndim != 3 or self.paths.shape[1:] != (4, 3) or len(self.paths) != len(self.times):
            raise InvalidInput("corner paths must have shape (n_samples, 4, 3)")


def momentum_centre_speed(topo: NetTopology, launch: LaunchParams) -> float:
    """Axial speed of the net's centre of mass at launch."""
    corner_mass = float(np.sum(topo.mass[list(topo.corner_nodes)]))
    total = float(np.sum(topo.mass))
    axial_corner = launch.muzzle_speed * math.cos(launch.spread_half_angle)
    axial_knot = launch.bundle_speed_fraction * launch.muzzle_speed
    return (corner_mass * axial_corner + (total - corner_mass) * axial_knot) / total


def default_corner_model(topo: NetTopology, launch: LaunchParams, gravity: float = 9.81) -> CornerModel:
    """Reach set to half the nominal spread diagonal of ``topo``."""
    return CornerModel(
        reach=0.5 * topo.nominal_diagonal(),
        gravity=gravity,
        centre_speed=momentum_centre_speed(topo, launch),
    )


def _ballistic(gun_pose: Pose, launch: LaunchParams, times: np.ndarray, model: CornerModel) -> np.ndarray:
    rot = gun_pose.orientation
    axis = rot[:, 0]
    gvec = np.array([0.0, 0.0, -model.gravity])
    pos = np.repeat(gun_pose.position[None, :], 4, axis=0)
    vel = launch.muzzle_speed * corner_launch_directions(launch.spread_half_angle) @ rot.T
    centre_speed = model.centre_speed if model.centre_speed is not None else launch.muzzle_speed
    centre_v0 = centre_speed * axis

    out = np.empty((len(times), 4, 3))
    out[0] = pos
    t = float(times[0])
    for k in range(1, len(times)):
        h = (times[k] - times[k - 1]) / model.substeps
        for _ in range(model.substeps):
            acc = gvec - model.drag * np.linalg.norm(vel, axis=1)[:, None] * vel
            pos = pos + vel * h + 0.5 * acc * h * h
            vel = vel + acc * h
            t += h
            if model.reach is not None:
                centre = gun_pose.position + centre_v0 * t + 0.5 * gvec * t * t
                centre_v = centre_v0 + gvec * t
                d = pos - centre
                lateral = d - np.outer(d @ axis, axis)
                dist = np.linalg.norm(lateral, axis=1)
                for q in np.flatnonzero(dist > model.reach):
                    n = lateral[q] / dist[q]
                    pos[q] = pos[q] - (dist[q] - model.reach) * n
                    outward = float(np.dot(vel[q] - centre_v, n))
                    if outward > 0.0:
                        vel[q] = vel[q] - (1.0 + model.restitution) * outward * n
        out[k] = pos
    return out


def corner_trajectories(
    gun_pose: Pose,
    launch: LaunchParams,
    t_env: float,
    dt_env: float,
    mode: str = "ballistic",
    model: CornerModel | None = None,
    topo: NetTopology | None = None,
    net_params: NetParams | None = None,
    net_dt: float = 1e-4,
) -> CornerTrajectories:
    """Predict the four corner paths after launch.

    ``ballistic`` is the real-time model; ``full-oracle`` extracts the corner
    rows of a full net rollout and is meant for testing.
    """
    if not t_env > 0.0 or not dt_env > 0.0:
        raise InvalidInput("t_env and dt_env must be positive")
    n = int(round(t_env / dt_env))
    times = np.arange(n + 1) * dt_env
    if mode == "ballistic":
        if model is None:
            model = default_corner_model(topo if topo is not None else build_net(19), launch)
        paths = _ballistic(gun_pose, launch, times, model)
    elif mode == "full-oracle":
        topo = topo if topo is not None else build_net(19)
        net = NetModel(topo, net_params if net_params is not None else NetParams())
        every = max(1, int(round(dt_env / net_dt)))
        traj = integrate_net(launch_initial_state(gun_pose, launch, topo), net_dt, t_env, net, sample_every=every)
        paths = traj.corner_positions()
        times = traj.times
    else:
        raise ConfigError(f"unknown corner mode {mode!r}")
    return CornerTrajectories(times, paths, dt_env, t_env)


@dataclass(frozen=True)
class ConvexPolytope:
    """Half-space form ``normals @ p + offsets <= 0`` with unit normals."""

    normals: np.ndarray
    offsets: np.ndarray
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @classmethod
    def from_points(cls, points: np.ndarray, name: str = "polytope") -> "ConvexPolytope":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) < 4 or np.linalg.matrix_rank(pts[1:] - pts[0], tol=1e-9) < 3:
            raise DegenerateEnvelope(f"{name}: generator points are coplanar or too few ({len(pts)})")
        try:
            hull = ConvexHull(pts)
        except QhullError as exc:
            raise DegenerateEnvelope(f"{name}: {exc}") from exc
        eq = hull.equations
        return cls(eq[:, :3].copy(), eq[:, 3].copy(), pts[hull.vertices].copy())

    @property
    def empty(self) -> bool:
        return len(self.normals) == 0

    def transformed(self, pose: Pose) -> "ConvexPolytope":
        """Express a polytope defined in ``pose``'s frame in the world frame."""
        normals = self.normals @ pose.orientation.T
        offsets = self.offsets - normals @ pose.position
        vertices = self.vertices @ pose.orientation.T + pose.position
        return ConvexPolytope(normals, offsets, vertices)

    def volume(self) -> float:
        return float(ConvexHull(self.vertices).volume)


def point_in_convex(p, poly: ConvexPolytope, tol: float = TAU_GEOM) -> bool:
    """Boundary points (within ``tol``) count as inside."""
    if poly.empty:
        log.warning("point_in_convex called on an empty polytope")
        return False
    p = np.asarray(p, dtype=float)
    return bool(np.all(poly.normals @ p + poly.offsets <= tol))


def points_in_convex(points, poly: ConvexPolytope, tol: float = TAU_GEOM) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if poly.empty:
        return np.zeros(len(pts), dtype=bool)
    return np.all(pts @ poly.normals.T + poly.offsets <= tol, axis=1)


def mouth_area(corners: np.ndarray) -> np.ndarray:
    """Quadrilateral area of corners ordered around the axis; shape (..., 4, 3)."""
    d1 = corners[..., 2, :] - corners[..., 0, :]
    d2 = corners[..., 3, :] - corners[..., 1, :]
    return 0.5 * np.linalg.norm(np.cross(d1, d2), axis=-1)


@dataclass(frozen=True)
class CaptureEnvelope:
    A: ConvexPolytope
    B: ConvexPolytope
    t_star: float

    def transformed(self, pose: Pose) -> "CaptureEnvelope":
        return CaptureEnvelope(self.A.transformed(pose), self.B.transformed(pose), self.t_star)

    def dump(self) -> str:
        """Plain-text vertices and half-spaces of both polytopes."""
        lines = [f"# t_star {self.t_star:.6f}"]
        for name, poly in (("A", self.A), ("B", self.B)):
            lines.append(f"polytope {name} vertices {len(poly.vertices)} halfspaces {len(poly.normals)}")
            lines.extend("v {:.9f} {:.9f} {:.9f}".format(*v) for v in poly.vertices)
            lines.extend(
                "h {:.12f} {:.12f} {:.12f} {:.12f}".format(*n, b) for n, b in zip(poly.normals, poly.offsets)
            )
        return "\n".join(lines) + "\n"


def build_envelope(corners: CornerTrajectories, muzzle) -> CaptureEnvelope:
    if len(corners.times) < 3:
        raise InvalidInput("need at least 3 time samples to build an envelope")
    area = mouth_area(corners.paths)
    peak = float(np.max(area))
    k_star = int(np.flatnonzero(area >= peak * (1.0 - 1e-9))[0])
    all_pts = np.vstack([np.asarray(muzzle, dtype=float)[None, :], corners.paths.reshape(-1, 3)])
    a = ConvexPolytope.from_points(all_pts, "A")
    b = ConvexPolytope.from_points(corners.paths[k_star:].reshape(-1, 3), "B (samples after peak mouth area)")
    return CaptureEnvelope(a, b, float(corners.times[k_star]))


def is_capturable(p, env: CaptureEnvelope, tol: float = TAU_GEOM) -> bool:
    return point_in_convex(p, env.A, tol) and not point_in_convex(p, env.B, tol)


def capturable_many(points, env: CaptureEnvelope, tol: float = TAU_GEOM) -> np.ndarray:
    return points_in_convex(points, env.A, tol) & ~points_in_convex(points, env.B, tol)


@dataclass(frozen=True)
class DwellState:
    duration: float = 0.0
    last_t: float | None = None


def dwell_trigger(state: DwellState, in_region: bool, t: float, window: float = 0.5) -> tuple[DwellState, bool]:
    """Accumulate in-region time; fire once when it first reaches ``window``.

    Each sample accounts for the interval since the previous decision, so at
    50 Hz from ``last_t = 0`` the 25th consecutive in-region sample fires.
    """
    if state.last_t is not None and t < state.last_t:
        raise InvalidInput(f"dwell timestamps must be monotone ({t} < {state.last_t})")
    if not in_region:
        return DwellState(0.0, t), False
    step = 0.0 if state.last_t is None else t - state.last_t
    duration = state.duration + step
    eps = 1e-9
    fire = state.duration < window - eps <= duration
    return DwellState(duration, t), fire


@dataclass
class GunEnvelope:
    """Envelope cached in the gun-level frame (muzzle at origin, yaw zero)."""

    envelope: CaptureEnvelope
    gun_pitch: float

    def gun_level_pose(self, muzzle, yaw: float) -> Pose:
        from mavcapture.world import rot_z

        return Pose(np.asarray(muzzle, dtype=float), rot_z(yaw))

    def capturable(self, p_world, muzzle, yaw: float) -> bool:
        local = self.gun_level_pose(muzzle, yaw).to_local(p_world)
        return is_capturable(local, self.envelope)
