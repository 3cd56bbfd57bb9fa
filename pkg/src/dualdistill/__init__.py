"""Bi-directional knowledge distillation between a population pool model
and a subject-customized model, with a synthetic seizure-prediction
benchmark to exercise it end to end.

The package is layered bottom-up:

- ``autograd``: a small reverse-mode tape over numpy arrays
- ``losses``: softened softmax, divergences, and the joint objective
- ``models``: layer configs, forward passes with feature taps, checkpoints
- ``trainer``: Adam, the two training stages, and the alternating roles
- ``data``: timeline labeling, windowing, the dataset file format, and
  the synthetic cohort generator
- ``evaluation``: metrics, leave-one-out, ablations, reports
- ``benchmark``: the pinned default experiment everything above plugs into
- ``cli``: the command-line entry point
"""

from .autograd import Tensor
from .benchmark import (benchmark_cohort, benchmark_distill_config,
                        benchmark_model_config, benchmark_spec,
                        benchmark_timeline)
from .data import (Mechanism, Recording, SubjectDataset, SyntheticSpec,
                   TimelineParams, generate_cohort, label_timeline,
                   read_subject_dataset, windows_for_recording, write_dataset)
from .errors import (ConfigError, DataError, FormatError, GraphError,
                     NumericError, ShapeError)
from .evaluation import (ExperimentResult, Metrics, ablate, compute_metrics,
                         emit_report, forgetting_probe, leave_one_out,
                         prepare_folds)
from .losses import (DivergenceKind, bregman_divergence, cross_entropy,
                     feature_difference, joint_loss, softmax_temperature)
from .models import (LayerSpec, Model, ModelConfig, build_model,
                     load_checkpoint, predict, save_checkpoint)
from .trainer import (DistillConfig, PassiveRule, TrainingSet, distill,
                      fit_crossentropy, grid_search, pretrain_pool)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "benchmark_cohort", "benchmark_distill_config", "benchmark_model_config",
    "benchmark_spec", "benchmark_timeline",
    "Mechanism", "Recording", "SubjectDataset", "SyntheticSpec",
    "TimelineParams", "generate_cohort", "label_timeline",
    "read_subject_dataset", "windows_for_recording", "write_dataset",
    "ConfigError", "DataError", "FormatError", "GraphError",
    "NumericError", "ShapeError",
    "ExperimentResult", "Metrics", "ablate", "compute_metrics",
    "emit_report", "forgetting_probe", "leave_one_out", "prepare_folds",
    "DivergenceKind", "bregman_divergence", "cross_entropy",
    "feature_difference", "joint_loss", "softmax_temperature",
    "LayerSpec", "Model", "ModelConfig", "build_model",
    "load_checkpoint", "predict", "save_checkpoint",
    "DistillConfig", "PassiveRule", "TrainingSet", "distill",
    "fit_crossentropy", "grid_search", "pretrain_pool",
    "__version__",
]
