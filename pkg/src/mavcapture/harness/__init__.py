"""Scenario configuration, the tick loop, Monte-Carlo batches and trace output."""

from mavcapture.harness.config import ScenarioConfig, load_config, loads_config, preset
from mavcapture.harness.scenario import RunMetrics, SimulationAborted, run_scenario

__all__ = ["RunMetrics", "ScenarioConfig", "SimulationAborted", "load_config", "loads_config", "preset", "run_scenario"]
