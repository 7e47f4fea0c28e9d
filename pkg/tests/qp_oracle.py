"""Iterative reference solver for the unconstrained tracking MPC.

It never forms the condensed matrices. The cost is evaluated by simulating
the double integrator step by step, and conjugate gradients runs on the
normal equations using a forward rollout and its adjoint as the only access
to the dynamics.
"""

import numpy as np


def _ab(dt, d):
    a = np.eye(2 * d)
    a[:d, d:] = dt * np.eye(d)
    b = np.vstack([0.5 * dt * dt * np.eye(d), dt * np.eye(d)])
    return a, b


def rollout_positions(x0, U, dt):
    """Positions p(1..K) from x(k+1) = A x(k) + B u(k)."""
    U = np.asarray(U, dtype=float)
    d = U.shape[1]
    a, b = _ab(dt, d)
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty_like(U)
    for k in range(len(U)):
        x = a @ x + b @ U[k]
        out[k] = x[:d]
    return out


def adjoint_positions(W, dt):
    """Transpose of ``U -> rollout_positions(0, U)`` applied to position weights ``W``."""
    W = np.asarray(W, dtype=float)
    K, d = W.shape
    a, b = _ab(dt, d)
    lam = np.zeros(2 * d)
    out = np.empty_like(W)
    for k in range(K - 1, -1, -1):
        lam = lam + np.concatenate([W[k], np.zeros(d)])
        out[k] = b.T @ lam
        lam = a.T @ lam
    return out


def rollout_cost(x0, U, ref, Q, R, dt):
    p = rollout_positions(x0, U, dt)
    e = np.asarray(ref)[:, : p.shape[1]] - p
    return float(sum(ek @ Q @ ek for ek in e) + sum(uk @ R @ uk for uk in np.asarray(U)))


def cg_solve(x0, ref, Q, R, dt, K, tol=1e-13, max_iter=10_000):
    d = Q.shape[0]
    free = rollout_positions(x0, np.zeros((K, d)), dt)
    rhs = adjoint_positions((np.asarray(ref)[:, :d] - free) @ Q.T, dt)

    def hess(V):
        return adjoint_positions(rollout_positions(np.zeros(2 * d), V, dt) @ Q.T, dt) + V @ R.T

    U = np.zeros((K, d))
    r = rhs - hess(U)
    p = r.copy()
    rs = float(np.sum(r * r))
    scale = max(float(np.sum(rhs * rhs)), 1e-300)
    for _ in range(max_iter):
        if rs <= tol * tol * scale:
            break
        hp = hess(p)
        alpha = rs / float(np.sum(p * hp))
        U = U + alpha * p
        r = r - alpha * hp
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return U
