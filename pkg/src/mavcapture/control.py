"""Surrounding-formation references and closed-form MPC pursuit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from mavcapture.errors import ConfigError, InvalidInput


@dataclass(frozen=True)
class FormationSpec:
    n_agents: int = 4
    radius: float = 1.5
    altitude_offset: float = 1.5
    phase_offsets: tuple[float, ...] | None = None  # uniform spacing when None

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigError("formation radius must be positive")
        phases = self.phases()
        if len(phases) != self.n_agents:
            raise ConfigError("need one phase offset per agent")
        wrapped = sorted(p % (2 * math.pi) for p in phases)
        gaps = np.diff(wrapped + [wrapped[0] + 2 * math.pi])
        if self.n_agents > 1 and np.min(gaps) < 1e-9:
            raise ConfigError("formation phase offsets must be distinct modulo 2*pi")

    def phases(self) -> tuple[float, ...]:
        if self.phase_offsets is not None:
            return tuple(self.phase_offsets)
        return tuple(2 * math.pi * i / self.n_agents for i in range(self.n_agents))

    def offset(self, agent: int) -> np.ndarray:
        if not 0 <= agent < self.n_agents:
            raise InvalidInput(f"agent {agent} outside formation of {self.n_agents}")
        phi = self.phases()[agent]
        return np.array([self.radius * math.cos(phi), self.radius * math.sin(phi), self.altitude_offset])


def formation_reference(target_est, form: FormationSpec, agent: int) -> np.ndarray:
    """Expected pursuer state: estimate shifted by the agent's formation offset."""
    x = np.asarray(target_est, dtype=float).reshape(6).copy()
    x[:3] += form.offset(agent)
    return x


def double_integrator(dt: float, dim: int = 3) -> tuple[np.ndarray, np.ndarray]:
    eye = np.eye(dim)
    a = np.block([[eye, dt * eye], [np.zeros((dim, dim)), eye]])
    b = np.vstack([0.5 * dt * dt * eye, dt * eye])
    return a, b


def transition_powers(A: np.ndarray, K: int) -> np.ndarray:
    """Stack ``A^1 .. A^K`` so that ``transition_powers(A, K) @ x0`` is the reference."""
    out = np.empty((K, *A.shape))
    out[0] = A
    for k in range(1, K):
        out[k] = A @ out[k - 1]
    return out


def propagate_reference(x0, A: np.ndarray, K: int) -> np.ndarray:
    """Rows ``x_exp(1..K)``."""
    if K < 1:
        raise InvalidInput("horizon must be at least 1")
    out = np.empty((K, len(A)))
    x = np.asarray(x0, dtype=float)
    for k in range(K):
        x = A @ x
        out[k] = x
    return out


@dataclass(frozen=True, eq=False)
class MpcProblem:
    """Unconstrained tracking problem over ``K`` steps of a double integrator.

    Cost: sum over k = 1..K of ||p_exp(k) - p(k)||_Q^2 plus sum over
    k = 0..K-1 of ||u(k)||_R^2.
    """

    K: int = 20
    dt: float = 0.1
    Q: np.ndarray = field(default_factory=lambda: np.eye(3))
    R_u: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))
    a_max: float = 5.0

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        r = np.atleast_2d(np.asarray(self.R_u, dtype=float))
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "R_u", r)
        if self.K < 1:
            raise ConfigError("MPC horizon must be >= 1")
        if q.shape != r.shape or q.shape[0] != q.shape[1]:
            raise ConfigError(f"Q {q.shape} and R_u {r.shape} must be square and equal-sized")
        if np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) < -1e-12:
            raise ConfigError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (r + r.T))) <= 0:
            raise ConfigError("R_u must be positive definite")

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @cached_property
    def AB(self) -> tuple[np.ndarray, np.ndarray]:
        return double_integrator(self.dt, self.dim)

    @cached_property
    def _condensed(self):
        """Stacked prediction ``P = Phi x0 + Gamma U`` and the gain ``(G^T Q G + R)^-1 G^T Q``."""
        a, b = self.AB
        d, K = self.dim, self.K
        sel = np.hstack([np.eye(d), np.zeros((d, d))])
        powers = [np.eye(2 * d)]
        for _ in range(K):
            powers.append(a @ powers[-1])
        phi = np.vstack([sel @ powers[k] for k in range(1, K + 1)])
        gamma = np.zeros((K * d, K * d))
        for k in range(1, K + 1):
            for j in range(k):
                gamma[(k - 1) * d : k * d, j * d : (j + 1) * d] = sel @ powers[k - 1 - j] @ b
        q_bar = np.kron(np.eye(K), self.Q)
        r_bar = np.kron(np.eye(K), self.R_u)
        normal = gamma.T @ q_bar @ gamma + r_bar
        gain = cho_solve(cho_factor(normal), gamma.T @ q_bar)
        return phi, gamma, q_bar, gain

    def objective(self, x0, reference, U) -> float:
        phi, gamma, q_bar, _ = self._condensed
        u = np.asarray(U, dtype=float).ravel()
        err = np.asarray(reference, dtype=float)[:, : self.dim].ravel() - phi @ np.asarray(x0, dtype=float) - gamma @ u
        return float(err @ q_bar @ err + u @ np.kron(np.eye(self.K), self.R_u) @ u)


def mpc_solve(x0, reference, prob: MpcProblem) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form optimal sequence ``U`` (K x dim) and the clipped first command."""
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    x0 = np.asarray(x0, dtype=float).ravel()
    if ref.shape[0] != prob.K or ref.shape[1] < prob.dim or x0.shape != (2 * prob.dim,):
        raise ConfigError(
            f"reference {ref.shape} / state {x0.shape} do not match K={prob.K}, dim={prob.dim}"
        )
    phi, _, _, gain = prob._condensed
    u = (gain @ (ref[:, : prob.dim].ravel() - phi @ x0)).reshape(prob.K, prob.dim)
    return u, np.clip(u[0], -prob.a_max, prob.a_max)


def desired_yaw(pursuer_pos, target_est, previous: float = 0.0, eps: float = 1e-6) -> float:
    """Heading of the horizontal line of sight; holds ``previous`` when overhead."""
    d = np.asarray(target_est, dtype=float)[:2] - np.asarray(pursuer_pos, dtype=float)[:2]
    if float(np.hypot(d[0], d[1])) <= eps:
        return previous
    return math.atan2(d[1], d[0])
