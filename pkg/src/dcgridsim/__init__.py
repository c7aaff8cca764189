"""Co-simulation of a data center with chilled-water storage selling frequency regulation."""

from .engine import InputData, RunResult, ScenarioConfig, report, run_scenario, simulate
from .market import CostReport, MarketData, ScoreBreakdown, performance_score
from .plant import Plant, PlantParams, PlantState
from .timeseries import TimeSeries

__version__ = "0.1.0"

__all__ = ["CostReport", "InputData", "MarketData", "Plant", "PlantParams", "PlantState", "RunResult",
           "ScenarioConfig", "ScoreBreakdown", "TimeSeries", "performance_score", "report", "run_scenario",
           "simulate"]
