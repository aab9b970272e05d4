"""
Core RSS map prediction workbench: scenes, channel oracle, features,
network, losses, training, collaborative adaptation and PAC checks.
"""

from .errors import (WorkbenchError, ConfigurationError, UsageError, ContractError,
                     DomainError, DatasetMissingError, report_failure)
from .scene_builder import SceneConfig, Scene, DomainShiftSpec, ShiftProfile, generate_scene
from .channel import PathLossParams, RssMap, compute_rss_map
from .features import FeatureConfig, FeatureBlock, extract_features
from .net import NetConfig, Model, ModelSnapshot, init_model
from .loss import LossBreakdown, total_loss
from .dataset import RssDataset, load_split
from .trainer import TrainConfig, EvalReport, train, evaluate
from .adapt import AdaptConfig, FeatureStats, Donor, collaborative_adapt
from .pac import FiniteClassSpec, monte_carlo_verify
from .experiment import (ExperimentConfig, OutputLayout, cmd_gen, cmd_train, cmd_sweep,
                         cmd_adapt, cmd_pac)

__all__ = [
    'WorkbenchError', 'ConfigurationError', 'UsageError', 'ContractError', 'DomainError',
    'DatasetMissingError', 'report_failure', 'SceneConfig', 'Scene', 'DomainShiftSpec', 'ShiftProfile',
    'generate_scene', 'PathLossParams', 'RssMap', 'compute_rss_map', 'FeatureConfig',
    'FeatureBlock', 'extract_features', 'NetConfig', 'Model', 'ModelSnapshot', 'init_model',
    'LossBreakdown', 'total_loss', 'RssDataset', 'load_split', 'TrainConfig', 'EvalReport',
    'train', 'evaluate', 'AdaptConfig', 'FeatureStats', 'Donor', 'collaborative_adapt',
    'FiniteClassSpec', 'monte_carlo_verify', 'ExperimentConfig', 'OutputLayout', 'cmd_gen',
    'cmd_train', 'cmd_sweep', 'cmd_adapt', 'cmd_pac',
]
