"""Seeded Monte-Carlo batches with a binomial confidence interval."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import binomtest

from mavcapture.errors import InvalidInput
from mavcapture.harness.config import ScenarioConfig, validate
from mavcapture.harness.scenario import RunMetrics, run_scenario

# Success rate of the real-world trials (11 of 17), shown next to simulated rates.
FIELD_SUCCESSES = 11
FIELD_TRIALS = 17


@dataclass
class TrialRecord:
    index: int
    seed: int
    captured: bool
    fired: bool
    first_trigger_t: float | None
    first_enclosure_time: float | None


@dataclass
class BatchSummary:
    successes: int
    misses: int
    total: int
    rate: float
    ci_low: float
    ci_high: float
    confidence: float = 0.95
    trials: list[TrialRecord] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["field_reference"] = {"successes": FIELD_SUCCESSES, "total": FIELD_TRIALS, "rate": FIELD_SUCCESSES / FIELD_TRIALS}
        return out

    def table(self) -> str:
        return (
            f"success {self.successes}  miss {self.misses}  total {self.total}  "
            f"rate {100 * self.rate:.1f}%  ({100 * self.confidence:.0f}% CI {100 * self.ci_low:.1f}-{100 * self.ci_high:.1f}%)"
        )


def summarize(verdicts, confidence: float = 0.95, trials: list[TrialRecord] | None = None) -> BatchSummary:
    """Counts, rate and the Wilson score interval for a list of boolean verdicts."""
    v = [bool(x) for x in verdicts]
    if not v:
        raise InvalidInput("need at least one trial")
    k = sum(v)
    ci = binomtest(k, len(v)).proportion_ci(confidence_level=confidence, method="wilson")
    return BatchSummary(k, len(v) - k, len(v), k / len(v), float(ci.low), float(ci.high), confidence, trials or [])


def trial_seeds(seed: int, n_trials: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n_trials, dtype=np.uint32)]


def _run_trial(args) -> TrialRecord:
    index, cfg, runner = args
    m: RunMetrics = runner(cfg)
    first = m.triggers[0] if m.triggers else None
    enclosure = first.verdict.first_enclosure_time if first is not None and first.verdict is not None else None
    return TrialRecord(index, cfg.seed, m.captured, first is not None, first.t if first else None, enclosure)


def monte_carlo(
    cfg: ScenarioConfig,
    n_trials: int,
    seed: int,
    runner: Callable[[ScenarioConfig], RunMetrics] = run_scenario,
    workers: int = 1,
    confidence: float = 0.95,
) -> BatchSummary:
    """Run ``n_trials`` independently seeded scenarios and tally first-launch captures.

    Each trial gets its own copy of the config with a seed drawn from
    ``seed``; trials share nothing, so ``workers > 1`` runs them in separate
    processes with identical results.
    """
    if n_trials < 1:
        raise InvalidInput("n_trials must be >= 1")
    validate(cfg)
    jobs = [(i, dataclasses.replace(cfg, seed=s), runner) for i, s in enumerate(trial_seeds(seed, n_trials))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_trial, jobs))
    else:
        records = [_run_trial(job) for job in jobs]
    return summarize([r.captured for r in records], confidence, records)
