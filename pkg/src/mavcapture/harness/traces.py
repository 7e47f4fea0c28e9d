"""Trace, summary and frame files.

Every float is written with a fixed format so that two runs with the same
seed produce byte-identical files. Wall-clock timings go to a separate file
that is not part of that guarantee.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from mavcapture.capture import CaptureEnvelope
from mavcapture.harness.config import dump_config
from mavcapture.harness.scenario import RunMetrics, Traces
from mavcapture.netdyn import NetTrajectory

FLOAT_FMT = ".10g"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v) + 0.0, FLOAT_FMT)  # + 0.0 folds -0.0 into 0.0


def write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _clean(obj):
    """JSON-safe copy with floats rounded through the trace format."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return bool(obj) if isinstance(obj, np.bool_) else obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    x = float(obj)
    if not np.isfinite(x):
        return str(x)
    return float(format(x, FLOAT_FMT))


def write_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")


def emit_traces(metrics: RunMetrics, out_dir) -> dict[str, Path]:
    """Write the per-run CSV traces, the JSON summary and the resolved config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr = metrics.traces
    files = {
        "estimation": out / "estimation.csv",
        "control": out / "control.csv",
        "gimbal": out / "gimbal.csv",
        "capture": out / "capture.csv",
        "summary": out / "summary.json",
        "config": out / "config.yaml",
        "timing": out / "timing.json",
    }
    write_csv(files["estimation"], Traces.ESTIMATION_HEADER, tr.estimation)
    write_csv(files["control"], Traces.CONTROL_HEADER, tr.control)
    write_csv(files["gimbal"], Traces.GIMBAL_HEADER, tr.gimbal)
    write_csv(files["capture"], Traces.CAPTURE_HEADER, tr.capture)
    write_json(files["summary"], metrics.summary())
    files["config"].write_text(dump_config(metrics.config))
    write_json(files["timing"], metrics.wall_clock)
    return files


def write_net_frames(traj: NetTrajectory, path) -> None:
    """Plain-text frames, one line per node and sample: ``t node x y z``."""
    with open(path, "w", newline="\n") as fh:
        fh.write("# t node x y z\n")
        for k, t in enumerate(traj.times):
            tt = _fmt(t)
            for node, (x, y, z) in enumerate(traj.positions(k)):
                fh.write(f"{tt} {node} {_fmt(x)} {_fmt(y)} {_fmt(z)}\n")


def read_net_frames(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_net_frames`: (times, positions of shape (n_t, n_nodes, 3))."""
    data = np.loadtxt(path, comments="#")
    times = np.unique(data[:, 0])
    n_nodes = int(data[:, 1].max()) + 1
    return times, data[:, 2:].reshape(len(times), n_nodes, 3)


def write_envelope(env: CaptureEnvelope, path) -> None:
    Path(path).write_text(env.dump())
