from .experiment import ExperimentConfig, ExperimentKind, load_config
from .formatter import ReportFormatter
from .runner import Report, fit_scaling, run_experiment

__all__ = [
    'ExperimentConfig', 'ExperimentKind', 'load_config',
    'ReportFormatter',
    'Report', 'fit_scaling', 'run_experiment',
]
