"""Continual-learning engine on fixed-dimension feature vectors: change-rate
gated parameter fusion, SVD-isolated task subspaces with exponential scaling,
Gaussian pseudo-feature replay, and a reproducible experiment harness."""

from .config import ExperimentConfig, resolve_config
from .datastream import FeatureSet, SynthConfig, TaskStream, synth_stream
from .evalkit import avg_last, evaluate_seen, update_overlap_matrix
from .gfm import GfmState, end_task_fusion, gfm_init
from .hlm import SubspaceState, begin_task, init_decomposition, merge_task, test_reconstruction
from .learner import FmmConfig, LearnerState, ScheduleConfig, train_task
from .linalg import gaussian_sample, quantile_nearest_rank, subspace_overlap, thin_svd
from .replay import ClassStats, fit_class_stats, sample_pseudo_features
from .runner import RunResult, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "resolve_config",
    "FeatureSet",
    "SynthConfig",
    "TaskStream",
    "synth_stream",
    "avg_last",
    "evaluate_seen",
    "update_overlap_matrix",
    "GfmState",
    "end_task_fusion",
    "gfm_init",
    "SubspaceState",
    "begin_task",
    "init_decomposition",
    "merge_task",
    "test_reconstruction",
    "FmmConfig",
    "LearnerState",
    "ScheduleConfig",
    "train_task",
    "gaussian_sample",
    "quantile_nearest_rank",
    "subspace_overlap",
    "thin_svd",
    "ClassStats",
    "fit_class_stats",
    "sample_pseudo_features",
    "RunResult",
    "run_experiment",
    "__version__",
]
