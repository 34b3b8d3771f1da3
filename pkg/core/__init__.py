"""
Core module for momlab: rate theory, objectives and experiments for constant-parameter Nesterov ASG and SGD
"""

from .errors import MomlabError
from .theory import OptimizerParams, SpectrumBounds, RateReport, rate_report, nesterov_defaults
from .optim import OracleConfig, RecordOptions, Trajectory, run
from .report_generator import ReportGenerator
from .run_config import RunConfig

__all__ = ['MomlabError', 'OptimizerParams', 'SpectrumBounds', 'RateReport', 'rate_report', 'nesterov_defaults',
           'OracleConfig', 'RecordOptions', 'Trajectory', 'run', 'ReportGenerator', 'RunConfig']
