"""Energy drift of an undamped, drag-free 4x4 net in free fall.

The net starts flat and unstretched at the gravity datum. Corners are tossed
outward at a range of speeds, and a random per-node kick shows what happens
when the stiffest thread modes are excited directly. Drift is relative to
the initial energy.

    python scripts/net_energy.py
"""

import math

import numpy as np

from mavcapture.netdyn import NetModel, NetParams, build_net, integrate_net, pack_state, spread_layout


def initial_velocity(topo, corner_speed: float, kick: float, rng) -> np.ndarray:
    v = np.zeros((topo.n_nodes, 3))
    for q, node in enumerate(topo.corner_nodes):
        phi = math.pi / 4.0 + q * math.pi / 2.0
        v[node] = corner_speed * np.array([math.cos(phi), math.sin(phi), 0.3])
    if kick > 0.0:
        v += rng.normal(0.0, kick, size=v.shape)
    return v


def drift(scheme: str, dt: float, corner_speed: float, kick: float = 0.0) -> float:
    topo = build_net(4)
    model = NetModel(topo, NetParams(xi_a=0.0, C_d=0.0))
    v = initial_velocity(topo, corner_speed, kick, np.random.default_rng(0))
    traj = integrate_net(pack_state(spread_layout(topo), v), dt, 1.0, model, scheme, sample_every=100)
    e = np.array([model.energy(s) for s in traj.states])
    return float(np.max(np.abs(e - e[0])) / abs(e[0]))


def main():
    for corner_speed, kick in ((0.5, 0.0), (1.0, 0.0), (2.0, 0.0), (0.0, 0.5)):
        for scheme in ("rk4", "semi-implicit-euler"):
            for dt in (1e-4, 5e-5):
                d = drift(scheme, dt, corner_speed, kick)
                print(f"corner toss {corner_speed:.1f} m/s  kick {kick:.1f} m/s  {scheme:20s} dt={dt:.0e}  drift {d:.2e}")


if __name__ == "__main__":
    main()
