"""Config-driven benchmark pipeline: generate, tune, run, evaluate, report, diagnose."""

from .config import BenchmarkConfig, load_config
from .pipeline import diagnose, evaluate, generate, report, run, tune

__all__ = ["BenchmarkConfig", "load_config", "generate", "tune", "run", "evaluate", "report", "diagnose"]
