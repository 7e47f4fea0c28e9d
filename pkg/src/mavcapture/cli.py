"""Command-line entry point: ``python -m mavcapture {run,batch,netdemo,validate-envelope}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from mavcapture.errors import ConfigError, NetDivergence
from mavcapture.harness.config import load_config, preset, replace_path

EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_BELOW_THRESHOLD = 4

log = logging.getLogger("mavcapture")


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="scenario YAML file")
    src.add_argument("--preset", default="sim4", help="named scenario (sim4, experiment3)")
    p.add_argument("--out", type=Path, default=Path(out_default), help="output directory")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")


def _load(args):
    cfg = load_config(args.config) if args.config else preset(args.preset)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        changes["timing.duration"] = args.duration
        changes["timing.rmse_window"] = min(cfg.timing.rmse_window, args.duration)
    if getattr(args, "adjudication", None) is not None:
        changes["capture.adjudication"] = args.adjudication
    return replace_path(cfg, **changes) if changes else cfg


def cmd_run(args) -> int:
    from mavcapture.harness.scenario import run_scenario
    from mavcapture.harness.traces import emit_traces

    cfg = _load(args)
    metrics = run_scenario(cfg)
    emit_traces(metrics, args.out)
    print(f"position RMSE (m):   " + " ".join(f"{v:.4f}" for v in metrics.position_rmse.values()))
    print(f"velocity RMSE (m/s): " + " ".join(f"{v:.4f}" for v in metrics.velocity_rmse.values()))
    for ev in metrics.triggers:
        verdict = "not adjudicated" if ev.verdict is None else ("capture" if ev.verdict.captured else "miss")
        print(f"trigger t={ev.t:.2f}s agent {ev.agent}: {verdict}")
    print(f"captured: {metrics.captured}")
    print(f"traces written to {args.out}")
    return 0


def cmd_batch(args) -> int:
    from mavcapture.harness.batch import monte_carlo
    from mavcapture.harness.traces import write_csv, write_json

    cfg = _load(args)
    summary = monte_carlo(cfg, args.trials, cfg.seed, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    write_json(args.out / "batch_summary.json", summary.as_dict())
    write_csv(
        args.out / "trials.csv",
        "trial,seed,captured,fired,first_trigger_t,first_enclosure_time",
        [(r.index, r.seed, r.captured, r.fired, r.first_trigger_t if r.fired else float("nan"),
          r.first_enclosure_time if r.first_enclosure_time is not None else float("nan")) for r in summary.trials],
    )
    print(summary.table())
    print("field trials for comparison: success 11  miss 6  total 17  rate 64.7%")
    return 0


def cmd_netdemo(args) -> int:
    from mavcapture.harness.studies import demo_capture
    from mavcapture.harness.traces import write_json, write_net_frames

    cfg = _load(args)
    demo = demo_capture(cfg, args.launch_time, args.distance)
    args.out.mkdir(parents=True, exist_ok=True)
    write_net_frames(demo.trajectory, args.out / "net_frames.txt")
    v = demo.verdict
    write_json(
        args.out / "netdemo.json",
        {"launch_time": demo.launch_time, "distance": args.distance, "verdict": v.__dict__},
    )
    print(f"enclosed {v.enclosed} at {v.first_enclosure_time}  mouth closed {v.mouth_closed} at {v.closure_time}")
    print(f"captured: {v.captured}")
    return 0


def cmd_validate_envelope(args) -> int:
    from mavcapture.harness.studies import envelope_study
    from mavcapture.harness.traces import write_csv, write_envelope, write_json

    cfg = _load(args)
    study = envelope_study(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_envelope(study.envelope, args.out / "envelope.txt")
    write_json(args.out / "envelope_study.json", study.summary())
    write_csv(
        args.out / "envelope_grid.csv",
        "x,y,z,simplified,oracle",
        [(*p, s, o) for p, s, o in zip(study.points, study.simplified, study.oracle)],
    )
    c = study.confusion()
    print(f"agreement {100 * study.agreement:.1f}% over {len(study.points)} points  {c}")
    print(f"query {study.query_seconds * 1e6:.1f} us  rollout {study.rollout_seconds:.2f} s  speedup {study.speedup:.3g}x")
    if args.min_agreement is not None and study.agreement < args.min_agreement:
        return EXIT_BELOW_THRESHOLD
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mavcapture", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and write traces")
    _common(p, "out/run")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--adjudication", choices=["full", "fast", "none"], default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="Monte-Carlo success rate")
    _common(p, "out/batch")
    p.add_argument("--trials", type=int, default=17)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--adjudication", choices=["full", "fast"], default=None)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("netdemo", help="single net launch with frame export")
    _common(p, "out/netdemo")
    p.add_argument("--launch-time", type=float, default=20.5)
    p.add_argument("--distance", type=float, default=5.0)
    p.set_defaults(func=cmd_netdemo)

    p = sub.add_parser("validate-envelope", help="simplified envelope versus full net dynamics")
    _common(p, "out/envelope")
    p.add_argument("--min-agreement", type=float, default=None, help="exit nonzero below this fraction")
    p.set_defaults(func=cmd_validate_envelope)
    return parser


def main(argv=None) -> int:
    from mavcapture.harness.scenario import SimulationAborted

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationAborted, NetDivergence) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
