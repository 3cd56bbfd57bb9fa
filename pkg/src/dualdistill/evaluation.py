"""Evaluation harness: window metrics, leave-one-subject-out protocol,
ablation tables, and report rendering.

Sensitivity is undefined when a test set has no preictal windows and is
reported as absent rather than zero; the false-prediction rate likewise
needs interictal hours on the clock.  The leave-one-out protocol trains
the pool on every other subject's windows (the held-out subject is
asserted absent from every pretraining batch), distills on the held-out
subject's train split, and compares against a from-scratch baseline
given the same architecture, data, and epoch budget.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import SubjectDataset
from .errors import ConfigError, DataError
from .models import Model, ModelConfig, build_model, predict
from .trainer import (DistillConfig, TrainingSet, concat_training_sets, distill,
                      fit_crossentropy, pretrain_pool)


@dataclass
class Metrics:
    n_windows: int
    tp: int
    fp: int
    tn: int
    fn: int
    interictal_hours: float
    accuracy: float
    sensitivity: Optional[float]
    fpr_per_hour: Optional[float]


def compute_metrics(predictions, labels, window_s: float = 20.0) -> Metrics:
    """Confusion counts and rates for window-level predictions.

    ``labels`` may be an array or anything with a ``.y`` attribute.
    Interictal hours are the interictal window count times the window
    length; with no interictal windows the false-prediction rate is
    absent, mirroring how sensitivity is absent without positives.
    """
    y = np.asarray(getattr(labels, "y", labels)).reshape(-1)
    p = np.asarray(predictions).reshape(-1)
    if p.shape != y.shape:
        raise DataError("got %d predictions for %d labels" % (p.size, y.size))
    if p.size == 0:
        raise DataError("no windows to score")
    for arr, what in ((p, "prediction"), (y, "label")):
        bad = ~np.isin(arr, (0, 1))
        if bad.any():
            raise DataError("%s values must be 0/1" % what)

    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    acc = (tp + tn) / p.size
    sens = tp / (tp + fn) if (tp + fn) > 0 else None
    hours = (fp + tn) * window_s / 3600.0
    fpr = fp / hours if hours > 0 else None
    return Metrics(p.size, tp, fp, tn, fn, hours, acc, sens, fpr)


@dataclass
class SubjectResult:
    subject_id: int
    baseline: Metrics
    distilled: Metrics


@dataclass
class ExperimentResult:
    subjects: List[SubjectResult]

    def mean(self, scheme: str, field_name: str) -> Optional[float]:
        vals = [getattr(getattr(r, scheme), field_name) for r in self.subjects]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None


def _baseline_model(config: ModelConfig, train: TrainingSet,
                    cfg: DistillConfig) -> Model:
    model = build_model(config, cfg.seed)
    fit_crossentropy(model, train, cfg, epochs=cfg.epochs_stage2, shuffle_stream=4)
    return model


@dataclass
class Fold:
    """Per-subject artifacts that do not depend on the stage-2 objective:
    the pool pretrained on everyone else, the held-out subject's splits,
    and the from-scratch baseline with its test metrics."""
    dataset: SubjectDataset
    pool: Model
    train: TrainingSet
    test: SubjectDataset
    baseline: Model
    baseline_metrics: Metrics


def prepare_folds(datasets: Sequence[SubjectDataset], config: ModelConfig,
                  cfg: DistillConfig, window_s: float = 20.0) -> List[Fold]:
    """Pretrain one pool and one baseline per held-out subject.

    The swept stage-2 factors (loss weights, divergence kind,
    temperature) do not enter here, so one set of folds serves the
    default pipeline and every ablation cell with identical results.
    """
    cfg.validate()
    ids = [d.subject_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate subject ids in cohort: %s" % sorted(ids))
    if len(datasets) < 2:
        raise DataError("leave-one-out needs at least two subjects")
    folds = []
    for ds in sorted(datasets, key=lambda d: d.subject_id):
        others = [d for d in datasets if d.subject_id != ds.subject_id]
        pool_data = concat_training_sets([d.as_training_set() for d in others])
        pool, _log = pretrain_pool(config, pool_data, cfg,
                                   forbid_subjects={ds.subject_id})
        train, _val, test = ds.split()
        baseline = _baseline_model(config, train.as_training_set(), cfg)
        m_base = compute_metrics(predict(baseline, test.X), test.y, window_s)
        folds.append(Fold(ds, pool, train.as_training_set(), test, baseline, m_base))
    return folds


def leave_one_out(datasets: Sequence[SubjectDataset], config: ModelConfig,
                  cfg: DistillConfig, window_s: float = 20.0,
                  folds: Optional[List[Fold]] = None) -> ExperimentResult:
    """Hold out each subject in turn; distill for it and score its test split.

    Folds are independent and keyed by subject id, so the order of
    ``datasets`` does not affect any per-subject number.  Pass
    precomputed ``folds`` to reuse pools/baselines across experiments.
    """
    if folds is None:
        folds = prepare_folds(datasets, config, cfg, window_s)
    results = []
    for fold in folds:
        cus, _pool_out, _log = distill(fold.pool, fold.train, cfg)
        m_dist = compute_metrics(predict(cus, fold.test.X), fold.test.y, window_s)
        results.append(SubjectResult(fold.dataset.subject_id,
                                     baseline=fold.baseline_metrics,
                                     distilled=m_dist))
    return ExperimentResult(results)


# -- ablations ----------------------------------------------------------------

ABLATION_AXES = ("loss", "divergence", "temperature")


@dataclass
class AblationRow:
    cell: str
    mean_accuracy: float
    mean_sensitivity: Optional[float]
    mean_fpr_per_hour: Optional[float]
    delta_accuracy: float    # versus the naive baseline mean


@dataclass
class AblationTable:
    axis: str
    baseline_accuracy: float
    rows: List[AblationRow]


def _axis_cells(axis: str, cfg: DistillConfig) -> List[Tuple[str, Optional[DistillConfig]]]:
    from .losses import DivergenceKind
    if axis == "loss":
        return [("divergence_only", replace(cfg, weight_dif=0.0)),
                ("feature_only", replace(cfg, weight_div=0.0)),
                ("both", cfg)]
    if axis == "divergence":
        return [(k.value, replace(cfg, divergence=k)) for k in DivergenceKind]
    if axis == "temperature":
        return [("naive", None)] + [
            ("T%g" % t, replace(cfg, temperature=float(t))) for t in (1, 4, 8)]
    raise ConfigError("unknown ablation axis %r; expected one of %s"
                      % (axis, list(ABLATION_AXES)))


def ablate(datasets: Sequence[SubjectDataset], config: ModelConfig,
           cfg: DistillConfig, axis: str, window_s: float = 20.0,
           folds: Optional[List[Fold]] = None,
           cell_cache: Optional[Dict] = None) -> AblationTable:
    """Sweep one factor of the objective over the full leave-one-out protocol.

    Stage-1 pools and naive baselines do not depend on the swept factor,
    so they are trained once per fold and shared across cells; results
    are identical to running each cell from scratch.

    Different axes revisit the same configuration (the unablated cell
    appears on every axis).  Pass one ``cell_cache`` dict across calls to
    compute each distinct configuration once; entries are keyed by the
    full stage-2 configuration, so share a cache only between calls that
    use the same folds.
    """
    cells = _axis_cells(axis, cfg)
    cfg.validate()
    if folds is None:
        folds = prepare_folds(datasets, config, cfg, window_s)

    base_acc = float(np.mean([f.baseline_metrics.accuracy for f in folds]))

    rows = []
    for name, cell_cfg in cells:
        if cell_cfg is None:
            per = [f.baseline_metrics for f in folds]
        else:
            key = tuple(tuple(sorted(v.items())) if isinstance(v, dict) else v
                        for v in astuple(cell_cfg))
            if cell_cache is not None and key in cell_cache:
                per = cell_cache[key]
            else:
                per = []
                for fold in folds:
                    cus, _p, _l = distill(fold.pool, fold.train, cell_cfg)
                    per.append(compute_metrics(predict(cus, fold.test.X),
                                               fold.test.y, window_s))
                if cell_cache is not None:
                    cell_cache[key] = per
        acc = float(np.mean([m.accuracy for m in per]))
        sens = [m.sensitivity for m in per if m.sensitivity is not None]
        fpr = [m.fpr_per_hour for m in per if m.fpr_per_hour is not None]
        rows.append(AblationRow(
            cell=name, mean_accuracy=acc,
            mean_sensitivity=float(np.mean(sens)) if sens else None,
            mean_fpr_per_hour=float(np.mean(fpr)) if fpr else None,
            delta_accuracy=acc - base_acc))
    return AblationTable(axis=axis, baseline_accuracy=base_acc, rows=rows)


# -- anti-forgetting probe ----------------------------------------------------

@dataclass
class ForgettingResult:
    accuracy_before: float
    accuracy_after_distill: float
    accuracy_after_finetune: float

    @property
    def distill_degradation(self) -> float:
        return self.accuracy_before - self.accuracy_after_distill

    @property
    def finetune_degradation(self) -> float:
        return self.accuracy_before - self.accuracy_after_finetune


def forgetting_probe(datasets: Sequence[SubjectDataset], config: ModelConfig,
                     cfg: DistillConfig, target_id: int) -> ForgettingResult:
    """How much other-subject skill the pool loses while adapting.

    The pool trains on the other subjects' train splits and is scored on
    their test splits before and after stage 2 on the target subject.
    The comparison arm fine-tunes a copy of the pool on the same target
    data with plain cross-entropy at the same lr for the same epochs.
    """
    cfg.validate()
    target = next((d for d in datasets if d.subject_id == target_id), None)
    if target is None:
        raise DataError("no subject with id %r in cohort" % (target_id,))
    others = [d for d in datasets if d.subject_id != target_id]
    if not others:
        raise DataError("anti-forgetting probe needs other subjects")

    splits = [d.split() for d in others]
    pool_train = concat_training_sets([s[0].as_training_set() for s in splits])
    heldout = concat_training_sets([s[2].as_training_set() for s in splits])
    pool, _ = pretrain_pool(config, pool_train, cfg, forbid_subjects={target_id})

    acc_before = float(np.mean(predict(pool, heldout.X) == heldout.y))
    target_train, _v, _t = target.split()

    _cus, pool_after, _log = distill(pool, target_train.as_training_set(), cfg)
    acc_distill = float(np.mean(predict(pool_after, heldout.X) == heldout.y))

    tuned = pool.copy()
    fit_crossentropy(tuned, target_train.as_training_set(), cfg,
                     epochs=cfg.epochs_stage2, shuffle_stream=5)
    acc_tuned = float(np.mean(predict(tuned, heldout.X) == heldout.y))
    return ForgettingResult(acc_before, acc_distill, acc_tuned)


# -- report rendering ---------------------------------------------------------

def _fmt(v: Optional[float]) -> str:
    return "" if v is None else "%.3f" % v


def report_rows(result: ExperimentResult) -> List[Tuple[str, str, str, str, str]]:
    rows = []
    for r in result.subjects:
        for scheme in ("baseline", "distilled"):
            m: Metrics = getattr(r, scheme)
            rows.append((str(r.subject_id), scheme, _fmt(m.accuracy),
                         _fmt(m.sensitivity), _fmt(m.fpr_per_hour)))
    return rows


REPORT_HEADER = ("subject", "scheme", "accuracy", "sensitivity", "fpr_per_hour")


def emit_report(result: ExperimentResult, fmt: str = "csv") -> str:
    """Render per-subject metrics as CSV, or markdown with Average rows."""
    rows = report_rows(result)
    if fmt == "csv":
        lines = [",".join(REPORT_HEADER)]
        lines += [",".join(r) for r in rows]
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(REPORT_HEADER) + " |",
                 "|" + "|".join([" --- "] * len(REPORT_HEADER)) + "|"]
        for r in rows:
            cells = [c if c else "-" for c in r]
            lines.append("| " + " | ".join(cells) + " |")
        for scheme in ("baseline", "distilled"):
            lines.append("| average | %s | %s | %s | %s |" % (
                scheme, _fmt(result.mean(scheme, "accuracy")) or "-",
                _fmt(result.mean(scheme, "sensitivity")) or "-",
                _fmt(result.mean(scheme, "fpr_per_hour")) or "-"))
        return "\n".join(lines) + "\n"
    raise ConfigError("unknown report format %r; use csv or markdown" % (fmt,))


def parse_report_csv(text: str) -> List[Tuple[str, ...]]:
    lines = [ln for ln in text.strip().split("\n") if ln]
    if not lines or tuple(lines[0].split(",")) != REPORT_HEADER:
        raise DataError("not a metrics report: bad header")
    return [tuple(ln.split(",")) for ln in lines[1:]]


def render_report_rows(rows: Sequence[Tuple[str, ...]]) -> str:
    lines = [",".join(REPORT_HEADER)]
    lines += [",".join(r) for r in rows]
    return "\n".join(lines) + "\n"


def ablation_csv(table: AblationTable) -> str:
    lines = ["cell,mean_accuracy,mean_sensitivity,mean_fpr_per_hour,delta_accuracy"]
    for r in table.rows:
        lines.append("%s,%s,%s,%s,%+.3f" % (
            r.cell, _fmt(r.mean_accuracy), _fmt(r.mean_sensitivity),
            _fmt(r.mean_fpr_per_hour), r.delta_accuracy))
    return "\n".join(lines) + "\n"


def ablation_markdown(table: AblationTable) -> str:
    head = ("cell", "mean_accuracy", "mean_sensitivity", "mean_fpr_per_hour",
            "delta_accuracy")
    lines = ["axis: " + table.axis,
             "",
             "| " + " | ".join(head) + " |",
             "|" + "|".join([" --- "] * len(head)) + "|"]
    for r in table.rows:
        lines.append("| %s | %s | %s | %s | %+.3f |" % (
            r.cell, _fmt(r.mean_accuracy) or "-", _fmt(r.mean_sensitivity) or "-",
            _fmt(r.mean_fpr_per_hour) or "-", r.delta_accuracy))
    return "\n".join(lines) + "\n"
