from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import MetricsRow, adapt_experiment, evaluate, federate, train
from .report import report

__all__ = [
    "ConfigError", "ExperimentConfig", "MetricsRow", "adapt_experiment", "evaluate",
    "federate", "load_config", "parse_config", "report", "train",
]
