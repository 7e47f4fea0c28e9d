"""Scenario configuration: nested dataclasses, YAML loading with line-precise
diagnostics, and named presets."""

from __future__ import annotations

import dataclasses
import math
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from mavcapture.errors import ConfigError


@dataclass
class TimingConfig:
    sim_dt: float = 0.001
    gimbal_dt: float = 0.01
    estimator_dt: float = 0.02
    control_dt: float = 0.02
    duration: float = 20.0
    rmse_window: float = 10.0  # metrics use the final window of the run


@dataclass
class TargetConfig:
    kind: str = "circle"  # circle | line
    radius: float = 10.0
    speed: float = 3.0
    center: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    altitude: float = 10.0
    phase: float = 0.0
    start: list[float] = field(default_factory=lambda: [0.0, 0.0, 10.0])
    velocity: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class PursuerConfig:
    n: int = 4
    init: str = "formation"  # formation | explicit
    init_offset_std: float = 0.5
    positions: list[list[float]] | None = None


@dataclass
class FormationConfig:
    radius: float = 1.5
    altitude_offset: float = 1.5
    phase_offsets: list[float] | None = None


@dataclass
class PlantConfig:
    a_max: float = 5.0
    v_max: float = 10.0
    yaw_rate_max: float = 2.0


@dataclass
class CameraConfig:
    fx: float = 800.0
    fy: float = 800.0
    cx: float = 640.0
    cy: float = 360.0
    width: int = 1280
    height: int = 720
    mount_offset: list[float] = field(default_factory=lambda: [0.1, 0.0, -0.05])
    gimbal_rate_max: float = 3.0
    pid_kp: float = 4.0
    pid_ki: float = 0.5
    pid_kd: float = 0.05
    pid_i_limit: float = 0.5


@dataclass
class PerceptionConfig:
    sigma_g: float = 0.01
    pixel_noise: float = 0.0
    outlier_rate: float = 0.0
    target_diameter: float = 0.35
    neighbor_diameter: float = 0.5
    neighbor_detect_prob: float = 1.0
    overlap_threshold: float = 0.5


@dataclass
class NetworkConfig:
    topology: str = "ring"  # ring | ring_rotating | full
    drop_prob: float = 0.0
    delay_steps: int = 0


@dataclass
class EstimatorConfig:
    c: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 0.8
    m0: float = 1.0


@dataclass
class MpcConfig:
    horizon: int = 20
    dt: float = 0.1
    q: float = 1.0
    r: float = 0.1


@dataclass
class CaptureConfig:
    enabled: bool = True
    gun_pitch_deg: float = 45.0
    gun_offset: list[float] = field(default_factory=lambda: [0.2, 0.0, -0.1])
    dwell: float = 0.5
    t_env: float = 0.5
    dt_env: float = 0.01
    restitution: float = 0.0
    adjudication: str = "full"  # full | fast | none
    single_shot: bool = True  # after the first launch the other pursuers hold fire
    closure_fraction: float = 0.5


@dataclass
class NetConfig:
    ns: int = 19
    pitch: float = 0.06
    corner_thread_length: float = 0.30
    thread_radius: float = 0.5e-3
    rho_net: float = 950.0
    m_knot: float = 0.2e-3
    m_corner: float = 0.030
    E_net: float = 0.5e9
    xi_a: float = 0.05
    omega_n1_a: float | None = None
    C_d: float = 0.02
    gravity: float = 9.81
    drag_mode: str = "relative"
    muzzle_speed: float = 25.0
    spread_half_angle_deg: float = 20.0
    bundle_speed_fraction: float = 0.8
    bundle_size: float = 0.02
    net_dt: float = 1e-4
    flight_time: float = 0.8
    scheme: str = "semi-implicit-euler"
    sample_every: int = 10


@dataclass
class ScenarioConfig:
    name: str = "sim4"
    seed: int = 0
    timing: TimingConfig = field(default_factory=TimingConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    pursuers: PursuerConfig = field(default_factory=PursuerConfig)
    formation: FormationConfig = field(default_factory=FormationConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    capture: CaptureConfig = field(default_factory=CaptureConfig)
    net: NetConfig = field(default_factory=NetConfig)


def ticks_per(period: float, sim_dt: float, what: str) -> int:
    ratio = period / sim_dt
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"{what}={period} is not an integer multiple of sim_dt={sim_dt}")
    return n


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    """Semantic checks that cannot be expressed by types alone."""
    t = cfg.timing
    if not t.sim_dt > 0 or not t.duration > 0:
        raise ConfigError("timing.sim_dt and timing.duration must be positive")
    for name in ("gimbal_dt", "estimator_dt", "control_dt"):
        ticks_per(getattr(t, name), t.sim_dt, f"timing.{name}")
    if not 0 < t.rmse_window <= t.duration:
        raise ConfigError("timing.rmse_window must be in (0, duration]")
    if cfg.target.kind not in ("circle", "line"):
        raise ConfigError(f"target.kind must be 'circle' or 'line', got {cfg.target.kind!r}")
    if cfg.target.kind == "circle" and cfg.target.radius <= 0:
        raise ConfigError("target.radius must be positive")
    if cfg.target.speed < 0:
        raise ConfigError("target.speed must be non-negative")
    if cfg.pursuers.n < 1:
        raise ConfigError("pursuers.n must be >= 1")
    if cfg.pursuers.init not in ("formation", "explicit"):
        raise ConfigError("pursuers.init must be 'formation' or 'explicit'")
    if cfg.pursuers.init == "explicit" and (cfg.pursuers.positions is None or len(cfg.pursuers.positions) != cfg.pursuers.n):
        raise ConfigError("pursuers.positions must list one position per pursuer when init is 'explicit'")
    if cfg.formation.phase_offsets is not None and len(cfg.formation.phase_offsets) != cfg.pursuers.n:
        raise ConfigError("formation.phase_offsets needs one entry per pursuer")
    p = cfg.perception
    if p.sigma_g < 0 or p.pixel_noise < 0 or not 0 <= p.outlier_rate <= 1:
        raise ConfigError("perception noise levels must be non-negative and outlier_rate in [0, 1]")
    if not 0 < p.overlap_threshold <= 1:
        raise ConfigError("perception.overlap_threshold must be in (0, 1]")
    if cfg.network.topology not in ("ring", "ring_rotating", "full"):
        raise ConfigError(f"network.topology must be ring, ring_rotating or full, got {cfg.network.topology!r}")
    if not 0 <= cfg.network.drop_prob <= 1 or cfg.network.delay_steps < 0:
        raise ConfigError("network.drop_prob must be in [0, 1] and delay_steps >= 0")
    e = cfg.estimator
    if min(e.c, e.gamma1, e.gamma2, e.m0) <= 0:
        raise ConfigError("estimator constants must be positive")
    if cfg.mpc.horizon < 1 or cfg.mpc.dt <= 0 or cfg.mpc.q < 0 or cfg.mpc.r <= 0:
        raise ConfigError("mpc needs horizon >= 1, dt > 0, q >= 0, r > 0")
    c = cfg.capture
    if c.adjudication not in ("full", "fast", "none"):
        raise ConfigError("capture.adjudication must be full, fast or none")
    if c.dwell < 0 or c.t_env <= 0 or c.dt_env <= 0 or c.t_env / c.dt_env < 2:
        raise ConfigError("capture envelope needs dwell >= 0 and at least 3 samples")
    n = cfg.net
    if n.ns < 2 or n.net_dt <= 0 or n.flight_time <= 0 or n.muzzle_speed <= 0:
        raise ConfigError("net needs ns >= 2 and positive net_dt, flight_time, muzzle_speed")
    if n.scheme not in ("semi-implicit-euler", "rk4") or n.drag_mode not in ("relative", "absolute"):
        raise ConfigError("net.scheme or net.drag_mode has an unknown value")
    return cfg


# ----------------------------------------------------------------- loading


def _line(node: yaml.Node) -> int:
    return node.start_mark.line + 1


_constructor = yaml.SafeLoader("")


def _coerce(tp, node: yaml.Node, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if isinstance(node, yaml.ScalarNode) and node.tag == "tag:yaml.org,2002:null":
            if type(None) in args:
                return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], node, path)
    if is_dataclass(tp):
        return _build(tp, node, path)
    if origin is list:
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"line {_line(node)}: {path} must be a list")
        return [_coerce(args[0], item, f"{path}[{i}]") for i, item in enumerate(node.value)]
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"line {_line(node)}: {path} must be a scalar")
    value = _constructor.construct_object(node, deep=True)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"line {_line(node)}: {path} must be a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"line {_line(node)}: {path} must be an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"line {_line(node)}: {path} must be true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"line {_line(node)}: {path} must be a string, got {value!r}")
        return value
    raise ConfigError(f"line {_line(node)}: unsupported type for {path}")


def _build(cls, node: yaml.Node, path: str):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"line {_line(node)}: {path or 'config'} must be a mapping")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key_node, value_node in node.value:
        key = key_node.value
        full = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"line {_line(key_node)}: unknown key '{full}'")
        if key in kwargs:
            raise ConfigError(f"line {_line(key_node)}: duplicate key '{full}'")
        kwargs[key] = _coerce(hints[key], value_node, full)
    return cls(**kwargs)


def loads_config(text: str) -> ScenarioConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}malformed YAML: {exc.problem}") from exc
    if node is None:
        return validate(ScenarioConfig())
    return validate(_build(ScenarioConfig, node, ""))


def load_config(path) -> ScenarioConfig:
    return loads_config(Path(path).read_text())


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: ScenarioConfig) -> str:
    """Fully resolved YAML; reloading it yields an equal config."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)


def replace_path(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Copy with dotted-path overrides, e.g. ``replace_path(cfg, **{"network.drop_prob": 0.2})``."""
    out = dataclasses.replace(cfg)
    for dotted, value in changes.items():
        parts = dotted.split(".")
        objs = [out]
        for part in parts[:-1]:
            objs.append(dataclasses.replace(getattr(objs[-1], part)))
        setattr(objs[-1], parts[-1], value)
        for parent, part, child in zip(reversed(objs[:-1]), reversed(parts[:-1]), reversed(objs[1:])):
            setattr(parent, part, child)
    return validate(out)


def preset(name: str) -> ScenarioConfig:
    """Named scenarios: ``sim4`` (four-pursuer simulation) and ``experiment3``."""
    if name == "sim4":
        return validate(ScenarioConfig())
    if name == "experiment3":
        cfg = ScenarioConfig(name="experiment3")
        cfg.pursuers.n = 3
        cfg.target.speed = 4.0
        cfg.perception.sigma_g = 0.02
        cfg.perception.pixel_noise = 1.0
        cfg.network.drop_prob = 0.1
        return validate(cfg)
    raise ConfigError(f"unknown preset {name!r} (expected sim4 or experiment3)")


def gun_spread_rad(cfg: ScenarioConfig) -> float:
    return math.radians(cfg.net.spread_half_angle_deg)
