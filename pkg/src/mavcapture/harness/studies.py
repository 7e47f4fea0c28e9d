"""Stand-alone net studies: the launch demo and the envelope agreement grid."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from mavcapture.capture import CaptureEnvelope, is_capturable
from mavcapture.harness.config import ScenarioConfig
from mavcapture.harness.scenario import gun_envelope, net_objects, target_function
from mavcapture.netdyn import (
    EnclosureVerdict,
    NetModel,
    NetTrajectory,
    enclosure_grid,
    enclosure_oracle,
    integrate_net,
    launch_initial_state,
)
from mavcapture.world import Pose, rot_y, rot_z


@dataclass
class DemoResult:
    launch_time: float
    gun_pose: Pose
    trajectory: NetTrajectory
    target_points: np.ndarray
    verdict: EnclosureVerdict


def demo_capture(cfg: ScenarioConfig, launch_time: float = 20.5, distance: float = 5.0) -> DemoResult:
    """Launch at ``launch_time`` toward the scenario target ``distance`` ahead on the gun axis.

    The gun trails the target along its heading, pitched down by the
    configured gun pitch, and moves with the target's velocity at launch.
    """
    target_fn = target_function(cfg)
    tgt = target_fn(launch_time)
    heading = math.atan2(tgt.velocity[1], tgt.velocity[0]) if np.any(tgt.velocity[:2]) else 0.0
    rot = rot_z(heading) @ rot_y(math.radians(cfg.capture.gun_pitch_deg))
    gun = Pose(tgt.position - distance * rot[:, 0], rot)
    topo, params, launch = net_objects(cfg)
    s0 = launch_initial_state(gun, launch, topo, tgt.velocity)
    traj = integrate_net(s0, cfg.net.net_dt, cfg.net.flight_time, NetModel(topo, params), cfg.net.scheme, cfg.net.sample_every)
    points = np.array([target_fn(launch_time + float(t)).position for t in traj.times])
    verdict = enclosure_oracle(traj, points, cfg.capture.closure_fraction)
    return DemoResult(launch_time, gun, traj, points, verdict)


@dataclass
class EnvelopeStudy:
    points: np.ndarray  # gun-level frame
    simplified: np.ndarray
    oracle: np.ndarray
    query_seconds: float
    rollout_seconds: float
    envelope: CaptureEnvelope

    @property
    def agreement(self) -> float:
        return float(np.mean(self.simplified == self.oracle))

    @property
    def speedup(self) -> float:
        return self.rollout_seconds / self.query_seconds

    def confusion(self) -> dict[str, int]:
        s, o = self.simplified, self.oracle
        return {
            "both_capture": int(np.sum(s & o)),
            "both_miss": int(np.sum(~s & ~o)),
            "simplified_only": int(np.sum(s & ~o)),
            "oracle_only": int(np.sum(~s & o)),
        }

    def summary(self) -> dict:
        return {
            "n_points": len(self.points),
            "agreement": self.agreement,
            "confusion": self.confusion(),
            "query_seconds": self.query_seconds,
            "rollout_seconds": self.rollout_seconds,
            "speedup": self.speedup,
            "t_star": self.envelope.t_star,
        }


def envelope_grid(cfg: ScenarioConfig, envelope: CaptureEnvelope, n_axial: int = 12, n_lateral: int = 7) -> np.ndarray:
    """Box of static points in front of the gun, in the gun-level frame.

    Axially it spans the muzzle to the far end of A, laterally 1.2 times the
    corner reach on each side, and it is aligned with the pitched gun axis.
    """
    topo, _, _ = net_objects(cfg)
    rot = rot_y(math.radians(cfg.capture.gun_pitch_deg))
    far = float(np.max(envelope.A.vertices @ rot[:, 0]))
    half = 0.6 * topo.nominal_diagonal()
    a = np.linspace(0.0, far, n_axial)
    u = np.linspace(-half, half, n_lateral)
    aa, uu, vv = np.meshgrid(a, u, u, indexing="ij")
    return np.stack([aa.ravel(), uu.ravel(), vv.ravel()], axis=1) @ rot.T


def envelope_study(cfg: ScenarioConfig, n_axial: int = 12, n_lateral: int = 7) -> EnvelopeStudy:
    """Compare the simplified A-minus-B verdict with full-dynamics enclosure on a static grid."""
    env = gun_envelope(cfg).envelope
    points = envelope_grid(cfg, env, n_axial, n_lateral)

    # a fresh rollout, timed, rather than the cached canonical one
    topo, params, launch = net_objects(cfg)
    t0 = time.perf_counter()
    pitch = math.radians(cfg.capture.gun_pitch_deg)
    s0 = launch_initial_state(Pose(np.zeros(3), rot_y(pitch)), launch, topo)
    traj = integrate_net(s0, cfg.net.net_dt, cfg.net.flight_time, NetModel(topo, params), cfg.net.scheme, cfg.net.sample_every)
    rollout_seconds = time.perf_counter() - t0
    oracle = enclosure_grid(traj, points, cfg.capture.closure_fraction)

    t0 = time.perf_counter()
    simplified = np.array([is_capturable(p, env) for p in points])
    query_seconds = (time.perf_counter() - t0) / len(points)
    return EnvelopeStudy(points, simplified, oracle, query_seconds, rollout_seconds, env)
