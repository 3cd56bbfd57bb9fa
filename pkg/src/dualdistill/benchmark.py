"""The shipped end-to-end benchmark: a deterministic 10-subject synthetic
cohort plus the model and training configuration tuned for it.

Every piece is an ordinary library object, so the CLI and the test suite
run the exact same experiment.  The cohort uses a compressed timeline
(minutes instead of hours between seizures) to keep desk-scale runtimes,
positive-polarity channel mixing so that cross-subject structure is
transferable, and a low mechanism amplitude so that a from-scratch model
has real headroom left for pooled knowledge to fill.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from .data import (SubjectDataset, SyntheticSpec, TimelineParams,
                   generate_cohort, windows_for_recording)
from .models import LayerSpec, ModelConfig
from .trainer import DistillConfig, PassiveRule

BENCHMARK_SEED = 0
BENCHMARK_SUBJECTS = 10
BENCHMARK_CHANNELS = 8
BENCHMARK_FS = 32.0
BENCHMARK_WINDOW_S = 20.0


def benchmark_timeline() -> TimelineParams:
    """Compressed timing rules sized to the 7000 s recordings."""
    return TimelineParams(sph_s=25.0, pil_s=150.0, lead_gap_s=1000.0,
                          interictal_guard_s=150.0,
                          window_s=BENCHMARK_WINDOW_S, preictal_overlap=0.25)


def benchmark_mixing(n_subjects: int = BENCHMARK_SUBJECTS,
                     n_channels: int = BENCHMARK_CHANNELS,
                     n_mechanisms: int = 4) -> Tuple:
    """Per-subject positive channel gains, seeded and frozen.

    Positive polarity keeps mechanism signatures correlated across
    subjects, which is what makes pooled pretraining transferable.
    """
    rng = np.random.default_rng(np.random.SeedSequence(BENCHMARK_SEED,
                                                       spawn_key=(23,)))
    mix = rng.uniform(0.4, 1.0, size=(n_subjects, n_channels, n_mechanisms))
    return tuple(tuple(tuple(float(v) for v in row) for row in subj)
                 for subj in mix)


def benchmark_spec() -> SyntheticSpec:
    return SyntheticSpec(fs=BENCHMARK_FS, mixing=benchmark_mixing(),
                         mechanism_snr=0.6, seed=BENCHMARK_SEED)


def benchmark_model_config(in_length: int = None) -> ModelConfig:
    """A small position-invariant CNN: two conv/relu blocks, global
    average pooling (tapped as the shared embedding), linear head."""
    if in_length is None:
        in_length = int(round(BENCHMARK_WINDOW_S * BENCHMARK_FS))
    return ModelConfig(in_channels=BENCHMARK_CHANNELS, in_length=in_length,
                       num_classes=2, layers=(
                           LayerSpec(kind="conv1d", out_channels=12, kernel=15, stride=4),
                           LayerSpec(kind="relu"),
                           LayerSpec(kind="conv1d", out_channels=16, kernel=9, stride=3),
                           LayerSpec(kind="relu"),
                           LayerSpec(kind="global_avg_pool", tap=True, name="embed"),
                           LayerSpec(kind="dense", units=2),
                       ))


def benchmark_distill_config() -> DistillConfig:
    return DistillConfig(lr=1e-3, batch_size=8, epochs_stage1=15,
                         epochs_stage2=80, temperature=4.0, momentum=0.995,
                         passive_rule=PassiveRule.PARAMETER_EMA,
                         weight_dif=0.05, weight_div=0.25,
                         temperature_compensation=True,
                         seed=BENCHMARK_SEED)


def benchmark_cohort() -> List[SubjectDataset]:
    """Generate, label, and window the full cohort (deterministic)."""
    timeline = benchmark_timeline()
    return [windows_for_recording(rec, timeline)
            for rec in generate_cohort(benchmark_spec())]
