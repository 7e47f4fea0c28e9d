"""Lumped-mass flying-net dynamics.

The net is an ``Ns x Ns`` grid of knots plus four heavy corner masses, each
tied to a grid corner by a single corner thread. Threads follow a piecewise
Kelvin-Voigt law (they pull when taut, never push). The state is
``s = [r; v]`` with ``r`` and ``v`` stacked per node, length ``6N``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from mavcapture.errors import ConfigError, InvalidInput, NetDivergence
from mavcapture.world import Pose

log = logging.getLogger(__name__)

KNOT, CORNER = 0, 1


@dataclass(frozen=True)
class NetMaterials:
    """Material and geometry constants; none of these are published, all assumed."""

    pitch: float = 0.06  # rest length of a grid thread, m
    corner_thread_length: float = 0.30  # m
    thread_radius: float = 0.5e-3  # m
    rho_net: float = 950.0  # kg/m^3
    m_knot: float = 0.2e-3  # kg
    m_corner: float = 0.030  # kg


@dataclass(frozen=True)
class NetParams:
    """Force-model constants.

    ``omega_n1_a`` defaults to the first axial natural frequency of a single
    grid thread, ``(pi / l0) sqrt(E / rho)``, when left as ``None``.
    """

    E_net: float = 0.5e9
    xi_a: float = 0.05
    omega_n1_a: float | None = None
    C_d: float = 0.02
    gravity: float = 9.81
    drag_mode: str = "relative"  # "relative" (per-thread relative velocity) or "absolute"

    def __post_init__(self):
        if self.drag_mode not in ("relative", "absolute"):
            raise ConfigError(f"drag_mode must be 'relative' or 'absolute', got {self.drag_mode!r}")
        if self.E_net <= 0 or self.xi_a < 0 or self.C_d < 0 or self.gravity < 0:
            raise ConfigError("net parameters must be non-negative (E_net positive)")
        if self.omega_n1_a is not None and self.omega_n1_a <= 0:
            raise ConfigError("omega_n1_a must be positive")


@dataclass(frozen=True)
class LaunchParams:
    muzzle_speed: float = 25.0  # m/s
    spread_half_angle: float = math.radians(20.0)
    bundle_speed_fraction: float = 0.8
    bundle_size: float = 0.02  # m, side of the packed bundle

    def __post_init__(self):
        if not self.muzzle_speed > 0:
            raise ConfigError("muzzle_speed must be positive")


@dataclass
class NetTopology:
    ns: int
    kind: np.ndarray  # (N,) KNOT / CORNER
    thread_i: np.ndarray  # (n_threads,)
    thread_j: np.ndarray
    rest_length: np.ndarray
    radius: np.ndarray
    mass: np.ndarray  # (N,)
    grid_corners: tuple[int, int, int, int]
    corner_nodes: tuple[int, int, int, int]
    materials: NetMaterials = field(default_factory=NetMaterials)

    @property
    def n_nodes(self) -> int:
        return len(self.kind)

    @property
    def n_threads(self) -> int:
        return len(self.thread_i)

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in zip(self.thread_i, self.thread_j):
            adj[i].append(int(j))
            adj[j].append(int(i))
        return adj

    def degree(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.thread_i, self.thread_j]), minlength=self.n_nodes)

    def nominal_diagonal(self) -> float:
        """Corner-to-corner distance of the fully spread, unstretched net."""
        m = self.materials
        return (self.ns - 1) * m.pitch * math.sqrt(2.0) + 2.0 * m.corner_thread_length

    def grid_index(self, row: int, col: int) -> int:
        return row * self.ns + col


def build_net(ns: int, materials: NetMaterials = NetMaterials()) -> NetTopology:
    """Grid threads, corner threads and the lumped node masses."""
    if ns < 2:
        raise ConfigError(f"Ns must be >= 2, got {ns}")
    if materials.pitch <= 0 or materials.corner_thread_length <= 0 or materials.thread_radius <= 0:
        raise ConfigError("net pitch, corner thread length and thread radius must be positive")
    if materials.m_knot <= 0 or materials.m_corner <= 0 or materials.rho_net <= 0:
        raise ConfigError("net masses and density must be positive")

    n_grid = ns * ns
    ti, tj, l0 = [], [], []
    for row in range(ns):
        for col in range(ns):
            here = row * ns + col
            if col + 1 < ns:
                ti.append(here)
                tj.append(here + 1)
                l0.append(materials.pitch)
            if row + 1 < ns:
                ti.append(here)
                tj.append(here + ns)
                l0.append(materials.pitch)
    # Ordered by quadrant 45 + 90 q degrees in the (col, row) plane, matching
    # corner_launch_directions; consecutive entries are adjacent corners.
    grid_corners = (n_grid - 1, n_grid - ns, 0, ns - 1)
    corner_nodes = tuple(n_grid + q for q in range(4))
    for q in range(4):
        ti.append(grid_corners[q])
        tj.append(corner_nodes[q])
        l0.append(materials.corner_thread_length)

    thread_i = np.array(ti, dtype=np.int64)
    thread_j = np.array(tj, dtype=np.int64)
    rest = np.array(l0)
    radius = np.full(len(rest), materials.thread_radius)
    kind = np.full(n_grid + 4, KNOT, dtype=np.int8)
    kind[n_grid:] = CORNER

    # Half of every adjacent thread's mass; equals |N_i| m_line / 2 for uniform threads.
    m_line = materials.rho_net * math.pi * radius**2 * rest
    mass = np.bincount(thread_i, weights=0.5 * m_line, minlength=n_grid + 4)
    mass += np.bincount(thread_j, weights=0.5 * m_line, minlength=n_grid + 4)
    mass += np.where(kind == KNOT, materials.m_knot, materials.m_corner)

    return NetTopology(
        ns=ns,
        kind=kind,
        thread_i=thread_i,
        thread_j=thread_j,
        rest_length=rest,
        radius=radius,
        mass=mass,
        grid_corners=grid_corners,
        corner_nodes=corner_nodes,
        materials=materials,
    )


def thread_coefficients(topo: NetTopology, params: NetParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-thread stiffness and damping, ``k = E pi r^2 / l0``, ``c = 2 xi k / omega``."""
    k = params.E_net * math.pi * topo.radius**2 / topo.rest_length
    omega = params.omega_n1_a
    if omega is None:
        m = topo.materials
        omega = math.pi / m.pitch * math.sqrt(params.E_net / m.rho_net)
    c = 2.0 * params.xi_a * k / omega
    return k, c


def split_state(s: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    return s[: 3 * n].reshape(n, 3), s[3 * n :].reshape(n, 3)


def pack_state(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(r, dtype=float).ravel(), np.asarray(v, dtype=float).ravel()])


class NetModel:
    """Precomputed force model for one topology and parameter set."""

    def __init__(self, topo: NetTopology, params: NetParams = NetParams(), eps: float = 1e-12):
        self.topo = topo
        self.params = params
        self.n = topo.n_nodes
        self.k, self.c = thread_coefficients(topo, params)
        self.eps = eps
        self.coincident_count = 0
        self._gvec = np.array([0.0, 0.0, -params.gravity])

    def _scatter(self, per_thread: np.ndarray) -> np.ndarray:
        """Add +f to thread_i and -f to thread_j, fixed reduction order."""
        ti, tj, n = self.topo.thread_i, self.topo.thread_j, self.n
        out = np.empty((n, 3))
        for ax in range(3):
            out[:, ax] = np.bincount(ti, weights=per_thread[:, ax], minlength=n) - np.bincount(
                tj, weights=per_thread[:, ax], minlength=n
            )
        return out

    def thread_tensions(self, r: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Force on the ``i`` end of every thread (the ``j`` end gets the negative)."""
        ti, tj = self.topo.thread_i, self.topo.thread_j
        d = r[tj] - r[ti]
        length = np.sqrt(np.einsum("ij,ij->i", d, d))
        ok = length > self.eps
        self.coincident_count += int(np.count_nonzero(~ok))
        safe = np.where(ok, length, 1.0)
        e = d / safe[:, None]
        ve = np.einsum("ij,ij->i", v[tj] - v[ti], e)
        mag = self.k * (length - self.topo.rest_length) + self.c * ve
        active = ok & (length > self.topo.rest_length) & (mag > 0.0)
        return np.where(active, mag, 0.0)[:, None] * e

    def drag_forces(self, v: np.ndarray) -> np.ndarray:
        cd = self.params.C_d
        if self.params.drag_mode == "absolute":
            speed = np.linalg.norm(v, axis=1)
            return -cd * speed[:, None] * v
        vrel = v[self.topo.thread_j] - v[self.topo.thread_i]
        speed = np.sqrt(np.einsum("ij,ij->i", vrel, vrel))
        return self._scatter(cd * speed[:, None] * vrel)

    def accelerations(self, r: np.ndarray, v: np.ndarray) -> np.ndarray:
        force = self._scatter(self.thread_tensions(r, v))
        if self.params.C_d > 0.0:
            force += self.drag_forces(v)
        return force / self.topo.mass[:, None] + self._gvec

    def derivative(self, s: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(s)):
            raise InvalidInput("non-finite net state")
        r, v = split_state(s, self.n)
        return pack_state(v, self.accelerations(r, v))

    def energy(self, s: np.ndarray) -> float:
        """Kinetic + gravitational + elastic energy of taut threads."""
        r, v = split_state(s, self.n)
        m = self.topo.mass
        kinetic = 0.5 * float(np.sum(m * np.einsum("ij,ij->i", v, v)))
        potential = float(np.sum(m * r[:, 2])) * self.params.gravity
        d = r[self.topo.thread_j] - r[self.topo.thread_i]
        stretch = np.maximum(np.linalg.norm(d, axis=1) - self.topo.rest_length, 0.0)
        elastic = 0.5 * float(np.sum(self.k * stretch**2))
        return kinetic + potential + elastic

    def stable_dt(self) -> float:
        """Conservative explicit step bound ``2 / omega_max`` from per-node stiffness sums."""
        ti, tj = self.topo.thread_i, self.topo.thread_j
        ksum = np.bincount(ti, weights=self.k, minlength=self.n) + np.bincount(tj, weights=self.k, minlength=self.n)
        omega_sq = float(np.max(2.0 * ksum / self.topo.mass))
        return 2.0 / math.sqrt(omega_sq)


def tension(i: int, j: int, s: np.ndarray, topo: NetTopology, params: NetParams) -> np.ndarray:
    """Force exerted on node ``i`` by thread ``(i, j)``."""
    hit = np.flatnonzero(
        ((topo.thread_i == i) & (topo.thread_j == j)) | ((topo.thread_i == j) & (topo.thread_j == i))
    )
    if hit.size == 0:
        raise InvalidInput(f"({i}, {j}) is not a thread")
    t = int(hit[0])
    r, v = split_state(np.asarray(s, dtype=float), topo.n_nodes)
    k, c = thread_coefficients(topo, params)
    d = r[j] - r[i]
    length = float(np.linalg.norm(d))
    if length < 1e-12:
        return np.zeros(3)
    e = d / length
    mag = k[t] * (length - topo.rest_length[t]) + c[t] * float(np.dot(v[j] - v[i], e))
    if length > topo.rest_length[t] and mag > 0.0:
        return mag * e
    return np.zeros(3)


def drag_force(i: int, s: np.ndarray, topo: NetTopology, C_d: float, mode: str = "relative") -> np.ndarray:
    r, v = split_state(np.asarray(s, dtype=float), topo.n_nodes)
    if mode == "absolute":
        return -C_d * float(np.linalg.norm(v[i])) * v[i]
    total = np.zeros(3)
    for j in topo.adjacency()[i]:
        vij = v[j] - v[i]
        total += C_d * float(np.linalg.norm(vij)) * vij
    return total


def net_derivative(s: np.ndarray, topo: NetTopology, params: NetParams) -> np.ndarray:
    return NetModel(topo, params).derivative(np.asarray(s, dtype=float))


@dataclass
class NetTrajectory:
    times: np.ndarray  # (n_samples,)
    states: np.ndarray  # (n_samples, 6N)
    topo: NetTopology

    def positions(self, k: int) -> np.ndarray:
        return self.states[k, : 3 * self.topo.n_nodes].reshape(-1, 3)

    def corner_positions(self) -> np.ndarray:
        """(n_samples, 4, 3) corner-mass paths."""
        n = self.topo.n_nodes
        r = self.states[:, : 3 * n].reshape(len(self.times), n, 3)
        return r[:, list(self.topo.corner_nodes), :]

    def transformed(self, pose: Pose, base_velocity=None) -> "NetTrajectory":
        """Rigidly move a trajectory computed in a local frame into ``pose``.

        ``base_velocity`` adds a Galilean drift, valid because the force model
        depends only on relative velocities when drag is per-thread.
        """
        n = self.topo.n_nodes
        rot = pose.orientation
        r = self.states[:, : 3 * n].reshape(len(self.times), n, 3) @ rot.T + pose.position
        v = self.states[:, 3 * n :].reshape(len(self.times), n, 3) @ rot.T
        if base_velocity is not None:
            bv = np.asarray(base_velocity, dtype=float)
            r = r + self.times[:, None, None] * bv
            v = v + bv
        states = np.concatenate([r.reshape(len(self.times), -1), v.reshape(len(self.times), -1)], axis=1)
        return NetTrajectory(self.times.copy(), states, self.topo)


def integrate_net(
    s0: np.ndarray,
    dt: float,
    duration: float,
    model: NetModel,
    scheme: str = "semi-implicit-euler",
    sample_every: int = 10,
    bound: float = 1e6,
) -> NetTrajectory:
    """Fixed-step integration from ``t = 0`` to ``duration``."""
    if not dt > 0.0:
        raise InvalidInput("dt must be positive")
    if scheme not in ("semi-implicit-euler", "rk4"):
        raise ConfigError(f"unknown scheme {scheme!r}")
    dt_max = model.stable_dt()
    if dt > dt_max:
        log.warning("net dt=%.3g exceeds the explicit stability estimate %.3g", dt, dt_max)

    n = model.n
    steps = int(round(duration / dt))
    s = np.asarray(s0, dtype=float).copy()
    if s.shape != (6 * n,):
        raise InvalidInput(f"state length {s.shape} does not match 6N = {6 * n}")
    times = [0.0]
    states = [s.copy()]
    for step in range(1, steps + 1):
        if scheme == "rk4":
            k1 = model.derivative(s)
            k2 = model.derivative(s + 0.5 * dt * k1)
            k3 = model.derivative(s + 0.5 * dt * k2)
            k4 = model.derivative(s + dt * k3)
            s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            r, v = split_state(s, n)
            v = v + dt * model.accelerations(r, v)
            r = r + dt * v
            s = pack_state(r, v)
        norm = float(np.max(np.abs(s)))
        if not math.isfinite(norm) or norm > bound:
            raise NetDivergence(step * dt, norm)
        if step % sample_every == 0 or step == steps:
            times.append(step * dt)
            states.append(s.copy())
    return NetTrajectory(np.array(times), np.array(states), model.topo)


def spread_layout(topo: NetTopology) -> np.ndarray:
    """Node positions of the flat, unstretched net centred at the origin in the x-y plane."""
    m = topo.materials
    ns = topo.ns
    r = np.zeros((topo.n_nodes, 3))
    offset = 0.5 * (ns - 1) * m.pitch
    for row in range(ns):
        for col in range(ns):
            r[row * ns + col] = [col * m.pitch - offset, row * m.pitch - offset, 0.0]
    for q, node in enumerate(topo.corner_nodes):
        phi = math.pi / 4.0 + q * math.pi / 2.0
        r[node] = r[topo.grid_corners[q]] + m.corner_thread_length * np.array([math.cos(phi), math.sin(phi), 0.0])
    return r


def corner_launch_directions(spread_half_angle: float) -> np.ndarray:
    """Unit launch directions of the four corners in the gun frame (axis +x)."""
    dirs = []
    for q in range(4):
        phi = math.pi / 4.0 + q * math.pi / 2.0
        dirs.append(
            [
                math.cos(spread_half_angle),
                math.sin(spread_half_angle) * math.cos(phi),
                math.sin(spread_half_angle) * math.sin(phi),
            ]
        )
    return np.array(dirs)


def launch_initial_state(
    gun_pose: Pose,
    launch: LaunchParams,
    topo: NetTopology,
    base_velocity=None,
) -> np.ndarray:
    """Net packed into a small square bundle at the muzzle, corners flung outward.

    The gun axis is the +x axis of ``gun_pose``; the grid lies in the gun's
    y-z plane. Corner ``q`` sits in the quadrant at angle ``45 + 90 q`` degrees.
    """
    ns = topo.ns
    n = topo.n_nodes
    rot = gun_pose.orientation
    half = 0.5 * launch.bundle_size
    r_local = np.zeros((n, 3))
    coords = np.linspace(-half, half, ns)
    for row in range(ns):
        for col in range(ns):
            r_local[row * ns + col] = [0.0, coords[col], coords[row]]
    dirs = corner_launch_directions(launch.spread_half_angle)
    for q, node in enumerate(topo.corner_nodes):
        gc = r_local[topo.grid_corners[q]]
        # Corner masses sit just outside the bundle in their own quadrant.
        r_local[node] = gc * 1.0 + np.array([0.0, dirs[q, 1], dirs[q, 2]]) * 1e-3
    v_local = np.zeros((n, 3))
    v_local[:, 0] = launch.bundle_speed_fraction * launch.muzzle_speed
    for q, node in enumerate(topo.corner_nodes):
        v_local[node] = launch.muzzle_speed * dirs[q]
    r = r_local @ rot.T + gun_pose.position
    v = v_local @ rot.T
    if base_velocity is not None:
        v = v + np.asarray(base_velocity, dtype=float)
    return pack_state(r, v)


def corner_spread(corners: np.ndarray) -> np.ndarray:
    """Largest pairwise corner distance; ``corners`` has shape (..., 4, 3)."""
    d = corners[..., :, None, :] - corners[..., None, :, :]
    return np.max(np.linalg.norm(d, axis=-1), axis=(-1, -2))


def hull_contains(points: np.ndarray, queries: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Vectorized point-in-convex-hull; degenerate (flat) hulls contain nothing."""
    queries = np.atleast_2d(queries)
    try:
        hull = ConvexHull(points)
    except (QhullError, ValueError):
        return np.zeros(len(queries), dtype=bool)
    eq = hull.equations
    return np.all(queries @ eq[:, :3].T + eq[:, 3] <= tol, axis=1)


@dataclass
class EnclosureVerdict:
    captured: bool
    enclosed: bool
    mouth_closed: bool
    first_enclosure_time: float | None
    closure_time: float | None


def enclosure_oracle(
    traj: NetTrajectory,
    target_points: np.ndarray,
    closure_fraction: float = 0.5,
) -> EnclosureVerdict:
    """Full-dynamics capture verdict for a target sampled at ``traj.times``.

    ``target_points`` is (n_samples, 3), or a single (3,) point for a static
    target. Enclosure: the target lies inside the convex hull of all node
    positions at some sample. Mouth closure: at or after the first enclosure
    the corner spread drops below ``closure_fraction`` of the nominal
    diagonal.
    """
    pts = np.asarray(target_points, dtype=float)
    if pts.ndim == 1:
        pts = np.broadcast_to(pts, (len(traj.times), 3))
    if len(pts) != len(traj.times):
        raise InvalidInput("target samples must be synchronized with the net trajectory")
    spread = corner_spread(traj.corner_positions())
    limit = closure_fraction * traj.topo.nominal_diagonal()
    first = None
    for k in range(len(traj.times)):
        if hull_contains(traj.positions(k), pts[k])[0]:
            first = k
            break
    if first is None:
        return EnclosureVerdict(False, False, False, None, None)
    closed = np.flatnonzero(spread[first:] < limit)
    if closed.size == 0:
        return EnclosureVerdict(False, True, False, float(traj.times[first]), None)
    k_close = first + int(closed[0])
    return EnclosureVerdict(True, True, True, float(traj.times[first]), float(traj.times[k_close]))


def enclosure_grid(traj: NetTrajectory, points: np.ndarray, closure_fraction: float = 0.5) -> np.ndarray:
    """Static-point verdicts for many points against one trajectory (vectorized over points)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    spread = corner_spread(traj.corner_positions())
    closed_at = spread < closure_fraction * traj.topo.nominal_diagonal()
    # closed_after[k]: closure happens at some sample >= k
    closed_after = np.flip(np.logical_or.accumulate(np.flip(closed_at)))
    verdict = np.zeros(len(pts), dtype=bool)
    for k in range(len(traj.times)):
        if not closed_after[k]:
            break
        undecided = ~verdict
        if not undecided.any():
            break
        inside = hull_contains(traj.positions(k), pts[undecided])
        idx = np.flatnonzero(undecided)
        verdict[idx[inside]] = True
    return verdict
