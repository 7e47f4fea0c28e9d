"""Pseudo-linear bearing measurements and the distributed spatial-temporal
triangulation (STT) estimator, plus the lossy packet network it runs over."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from mavcapture.errors import ConfigError, InvalidInput, NumericalError

log = logging.getLogger(__name__)

I3 = np.eye(3)
I6 = np.eye(6)


def projective_matrix(g) -> np.ndarray:
    """``I - g g^T`` for the (renormalized) bearing ``g``."""
    g = np.asarray(g, dtype=float).reshape(3)
    n = float(np.linalg.norm(g))
    if not n > 1e-12 or not np.isfinite(n):
        raise InvalidInput("bearing must be a non-zero finite vector")
    g = g / n
    return I3 - np.outer(g, g)


@dataclass(frozen=True)
class PseudoLinearMeasurement:
    z: np.ndarray  # (3,)
    H: np.ndarray  # (3, 6)

    @property
    def P(self) -> np.ndarray:
        return self.H[:, :3]


def pseudo_linear(g, sensor_pos) -> PseudoLinearMeasurement:
    """``z = P_g s`` and ``H = [P_g, 0]`` so that ``z = H x`` for an exact bearing."""
    direction = getattr(g, "direction", g)
    p = projective_matrix(direction)
    z = p @ np.asarray(sensor_pos, dtype=float).reshape(3)
    return PseudoLinearMeasurement(z, np.hstack([p, np.zeros((3, 3))]))


def cv_transition(dt: float) -> np.ndarray:
    a = np.eye(6)
    a[:3, 3:] = dt * I3
    return a


@dataclass(frozen=True)
class SttParams:
    c: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 0.8
    R_w: np.ndarray = field(default_factory=lambda: I3 / 0.01**2)
    dt: float = 0.02

    def __post_init__(self):
        if min(self.c, self.gamma1, self.gamma2) <= 0:
            raise ConfigError("c, gamma1, gamma2 must be positive")
        r = np.asarray(self.R_w, dtype=float).reshape(3, 3)
        object.__setattr__(self, "R_w", r)
        if not np.allclose(r, r.T) or np.min(np.linalg.eigvalsh(r)) <= 0:
            raise ConfigError("R_w must be symmetric positive definite")

    @property
    def A(self) -> np.ndarray:
        return cv_transition(self.dt)

    @classmethod
    def for_noise(cls, sigma_g: float, **kw) -> "SttParams":
        """``R_w = I / sigma^2`` with a floor so a noiseless run stays well scaled."""
        sigma = max(sigma_g, 1e-3)
        return cls(R_w=I3 / sigma**2, **kw)


@dataclass(frozen=True)
class EstimatorState:
    x_hat: np.ndarray
    M_hat: np.ndarray
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x_hat", np.asarray(self.x_hat, dtype=float).reshape(6))
        object.__setattr__(self, "M_hat", np.asarray(self.M_hat, dtype=float).reshape(6, 6))


@dataclass(frozen=True)
class SharePacket:
    sender: int
    g: np.ndarray
    p: np.ndarray
    prior: np.ndarray | None
    step: int

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).reshape(3)
        object.__setattr__(self, "g", g / np.linalg.norm(g))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        if self.prior is not None:
            object.__setattr__(self, "prior", np.asarray(self.prior, dtype=float).reshape(6))


def spd_inverse(m: np.ndarray, what: str) -> np.ndarray:
    sym = 0.5 * (m + m.T)
    try:
        l_inv = np.linalg.inv(np.linalg.cholesky(sym))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is not positive definite (min eig {np.min(np.linalg.eigvalsh(sym)):.3e})") from exc
    return l_inv.T @ l_inv


def stt_prior(state: EstimatorState, params: SttParams) -> tuple[np.ndarray, np.ndarray]:
    """Prior estimate and prior information-like matrix."""
    a = params.A
    x_prior = a @ state.x_hat
    m_prior = spd_inverse(a @ state.M_hat @ a.T, "A M A^T") / params.gamma1
    return x_prior, m_prior


def stt_step(
    state: EstimatorState,
    own_packet: SharePacket | None,
    neighbor_packets: list[SharePacket],
    params: SttParams,
    prior: tuple[np.ndarray, np.ndarray] | None = None,
) -> EstimatorState:
    """One STT update.

    The measurement sum runs over the own packet and every neighbor packet;
    the consensus mean runs over neighbor packets that carry a prior. With
    no own packet (target not detected) the agent fuses whatever arrived and
    with nothing at all it coasts on the forgetting-weighted prior.
    ``prior`` may pass a precomputed ``stt_prior(state, params)``.
    """
    x_prior, m_prior = prior if prior is not None else stt_prior(state, params)
    r = params.R_w
    e_meas = np.zeros(6)
    info = np.zeros((6, 6))
    own = [own_packet] if own_packet is not None else []
    for pkt in [*own, *neighbor_packets]:
        # H = [P, 0] and z - H x = P (p - x_pos), so only the position block is non-zero
        proj = I3 - pkt.g[:, None] * pkt.g[None, :]
        w = proj @ r @ proj
        e_meas[:3] += w @ (pkt.p - x_prior[:3])
        info[:3, :3] += w
    priors = [pkt.prior for pkt in neighbor_packets if pkt.prior is not None]
    e_cons = sum(priors) / len(priors) - x_prior if priors else np.zeros(6)
    s = params.c * info + I6
    m_hat = spd_inverse(params.gamma2 * m_prior + s, "gamma2 M^- + S")
    x_hat = x_prior + m_hat @ (params.c * e_meas + e_cons)
    return EstimatorState(x_hat, m_hat, state.step + 1)


def triangulate(bearings, positions) -> np.ndarray | None:
    """Least-squares intersection of bearing lines; ``None`` if ill-conditioned."""
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for g, p in zip(bearings, positions):
        proj = projective_matrix(g)
        a += proj
        b += proj @ np.asarray(p, dtype=float)
    if len(bearings) < 2 or np.linalg.cond(a) > 1e8:
        return None
    return np.linalg.solve(a, b)


def init_from_packets(packets: list[SharePacket], m0: float = 1.0) -> EstimatorState | None:
    point = triangulate([p.g for p in packets], [p.p for p in packets])
    if point is None:
        return None
    return EstimatorState(np.concatenate([point, np.zeros(3)]), m0 * I6, 0)


def ring_topology(n: int) -> dict[int, list[int]]:
    return {i: sorted({(i - 1) % n, (i + 1) % n} - {i}) for i in range(n)}


def full_topology(n: int) -> dict[int, list[int]]:
    return {i: [j for j in range(n) if j != i] for i in range(n)}


class Network:
    """Per-tick packet delivery with Bernoulli drops and a fixed delay.

    ``topology`` maps each receiver to the senders it listens to. With
    ``rotating=True`` each receiver hears only one of its neighbors per
    exchange, cycling through them.
    """

    def __init__(
        self,
        topology: dict[int, list[int]],
        drop_prob: float = 0.0,
        delay_steps: int = 0,
        rng: np.random.Generator | None = None,
        rotating: bool = False,
    ):
        if not 0.0 <= drop_prob <= 1.0:
            raise ConfigError("drop_prob must be in [0, 1]")
        if delay_steps < 0:
            raise ConfigError("delay_steps must be non-negative")
        ids = set(topology)
        for recv, senders in topology.items():
            unknown = set(senders) - ids
            if unknown:
                raise ConfigError(f"topology of agent {recv} references unknown agents {sorted(unknown)}")
        graph = nx.Graph()
        graph.add_nodes_from(ids)
        graph.add_edges_from((r, s) for r, ss in topology.items() for s in ss)
        if len(ids) > 1 and not nx.is_connected(graph):
            log.warning("communication topology is not connected")
        self.topology = {k: sorted(v) for k, v in topology.items()}
        self.drop_prob = drop_prob
        self.delay_steps = delay_steps
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.rotating = rotating
        self._queue: deque[dict[int, list[SharePacket]]] = deque()
        self._exchanges = 0

    def exchange(self, outbox: list[SharePacket]) -> dict[int, list[SharePacket]]:
        by_sender = {}
        for pkt in outbox:
            if pkt.sender not in self.topology:
                raise ConfigError(f"packet from unknown agent {pkt.sender}")
            by_sender[pkt.sender] = pkt
        inboxes: dict[int, list[SharePacket]] = {}
        for recv in sorted(self.topology):
            senders = self.topology[recv]
            if self.rotating and senders:
                senders = [senders[self._exchanges % len(senders)]]
            box = []
            for s in senders:
                # one draw per link per exchange keeps the stream aligned across runs
                dropped = self.rng.random() < self.drop_prob
                if s in by_sender and not dropped:
                    box.append(by_sender[s])
            inboxes[recv] = box
        self._exchanges += 1
        self._queue.append(inboxes)
        if len(self._queue) > self.delay_steps:
            return self._queue.popleft()
        return {recv: [] for recv in self.topology}


def network_exchange(
    outbox: list[SharePacket],
    topology: dict[int, list[int]],
    drop_prob: float,
    delay_steps: int,
    rng: np.random.Generator,
) -> dict[int, list[SharePacket]]:
    """Single-shot exchange; with ``delay_steps > 0`` nothing arrives yet."""
    return Network(topology, drop_prob, delay_steps, rng).exchange(outbox)
