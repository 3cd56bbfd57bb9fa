"""Evaluation harness tests.

Confusion counts are checked against a per-window brute-force oracle,
rate metrics against hand-computed worked examples, and the experiment
drivers for determinism: shared folds must give bit-identical numbers
whether cells run through the default pipeline or an ablation sweep.
"""

import dataclasses

import numpy as np
import pytest

from dualdistill.errors import ConfigError, DataError
from dualdistill.evaluation import (
    ABLATION_AXES, AblationRow, AblationTable, ExperimentResult, Metrics,
    SubjectResult, ablate, ablation_csv, ablation_markdown, compute_metrics,
    emit_report, forgetting_probe, leave_one_out, parse_report_csv,
    prepare_folds, render_report_rows, report_rows,
)
from dualdistill.data import SubjectDataset
from dualdistill.models import LayerSpec, ModelConfig
from dualdistill.trainer import DistillConfig


# -- confusion counts and rates -----------------------------------------------

def test_false_alarm_rate_two_per_hour():
    # 180 interictal windows of 20 s = exactly one hour on the clock
    y = np.zeros(180, dtype=np.int64)
    p = np.zeros(180, dtype=np.int64)
    p[[10, 90]] = 1
    m = compute_metrics(p, y, window_s=20.0)
    assert (m.tp, m.fp, m.tn, m.fn) == (0, 2, 178, 0)
    assert m.interictal_hours == pytest.approx(1.0)
    assert m.fpr_per_hour == pytest.approx(2.0)
    assert m.sensitivity is None        # no preictal windows to be sensitive to
    assert m.accuracy == pytest.approx(178 / 180)


def test_perfect_predictions():
    y = np.array([0, 1, 0, 1, 1, 0])
    m = compute_metrics(y.copy(), y, window_s=20.0)
    assert m.accuracy == 1.0 and m.sensitivity == 1.0
    assert m.fpr_per_hour == 0.0
    assert m.n_windows == 6


def test_sensitivity_absent_without_positives_but_not_zero():
    m = compute_metrics(np.zeros(5), np.zeros(5))
    assert m.sensitivity is None
    assert m.fpr_per_hour == 0.0


def test_fpr_absent_without_interictal_windows():
    m = compute_metrics(np.ones(4), np.ones(4))
    assert m.fpr_per_hour is None
    assert m.interictal_hours == 0.0
    assert m.sensitivity == 1.0


def test_labels_can_come_from_a_dataset_object():
    ds = SubjectDataset(3, np.zeros((4, 1, 2), np.float32),
                        np.array([0, 1, 1, 0]), np.arange(4.0))
    m = compute_metrics(np.array([0, 1, 0, 1]), ds)
    assert (m.tp, m.fp, m.tn, m.fn) == (1, 1, 1, 1)
    assert m.accuracy == 0.5 and m.sensitivity == 0.5


def test_metrics_input_validation():
    with pytest.raises(DataError):
        compute_metrics(np.zeros(3), np.zeros(4))
    with pytest.raises(DataError):
        compute_metrics(np.zeros(0), np.zeros(0))
    with pytest.raises(DataError):
        compute_metrics(np.array([0, 2]), np.array([0, 1]))
    with pytest.raises(DataError):
        compute_metrics(np.array([0, 1]), np.array([0, 3]))


def test_confusion_counts_match_brute_force_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(1, 40))
        p = rng.integers(0, 2, n)
        y = rng.integers(0, 2, n)
        w = float(rng.uniform(1.0, 60.0))
        m = compute_metrics(p, y, window_s=w)
        tp = sum(1 for a, b in zip(p, y) if a == 1 and b == 1)
        fp = sum(1 for a, b in zip(p, y) if a == 1 and b == 0)
        tn = sum(1 for a, b in zip(p, y) if a == 0 and b == 0)
        fn = sum(1 for a, b in zip(p, y) if a == 0 and b == 1)
        assert (m.tp, m.fp, m.tn, m.fn) == (tp, fp, tn, fn)
        assert m.n_windows == n
        assert m.accuracy == (tp + tn) / n
        assert m.sensitivity == (tp / (tp + fn) if tp + fn else None)
        hours = (fp + tn) * w / 3600.0
        assert m.interictal_hours == hours
        assert m.fpr_per_hour == (fp / hours if hours else None)


# -- report rendering ---------------------------------------------------------

def small_result():
    def metrics(tp, fp, tn, fn):
        return compute_metrics(
            np.concatenate([np.ones(tp + fp), np.zeros(tn + fn)]),
            np.concatenate([np.ones(tp), np.zeros(fp + tn), np.ones(fn)]))
    return ExperimentResult([
        SubjectResult(0, metrics(3, 1, 10, 2), metrics(4, 0, 11, 1)),
        SubjectResult(1, metrics(0, 2, 9, 0), metrics(0, 0, 11, 0)),
    ])


def test_report_csv_round_trip_is_byte_identical():
    text = emit_report(small_result(), "csv")
    assert render_report_rows(parse_report_csv(text)) == text


def test_report_rows_and_blank_cells():
    rows = report_rows(small_result())
    assert len(rows) == 4
    assert rows[0][:2] == ("0", "baseline")
    # subject 1 has no preictal windows: sensitivity cell stays empty
    assert rows[2][3] == "" and rows[3][3] == ""
    assert all(len(r) == 5 for r in rows)


def test_report_csv_values_are_three_decimals():
    text = emit_report(small_result(), "csv")
    lines = text.strip().split("\n")
    assert lines[0] == "subject,scheme,accuracy,sensitivity,fpr_per_hour"
    assert lines[1] == "0,baseline,0.812,0.600,16.364"
    assert lines[2] == "0,distilled,0.938,0.800,0.000"


def test_empty_result_gives_header_only_csv():
    text = emit_report(ExperimentResult([]), "csv")
    assert text == "subject,scheme,accuracy,sensitivity,fpr_per_hour\n"
    assert parse_report_csv(text) == []
    assert render_report_rows([]) == text


def test_markdown_report_has_average_rows():
    res = small_result()
    md = emit_report(res, "markdown")
    lines = md.strip().split("\n")
    assert lines[0].startswith("| subject | scheme |")
    avg = [ln for ln in lines if ln.startswith("| average |")]
    assert len(avg) == 2
    # averages recomputed from the per-subject metrics, blanks skipped
    base_avg = avg[0].split("|")[3].strip()
    assert base_avg == "%.3f" % res.mean("baseline", "accuracy")
    # subject 1 contributes no sensitivity; mean uses subject 0 alone
    assert avg[0].split("|")[4].strip() == "%.3f" % 0.6
    # absent cells render as a dash in markdown
    assert "| - |" in " ".join(ln for ln in lines if "| 1 |" in ln)


def test_parse_rejects_foreign_csv():
    with pytest.raises(DataError):
        parse_report_csv("time,value\n1,2\n")
    with pytest.raises(DataError):
        parse_report_csv("")


def test_unknown_report_format_rejected():
    with pytest.raises(ConfigError):
        emit_report(small_result(), "yaml")


def test_ablation_table_rendering_signs_and_dashes():
    table = AblationTable("loss", 0.9, [
        AblationRow("both", 0.95, 0.8, None, 0.05),
        AblationRow("feature_only", 0.85, None, 1.5, -0.05),
    ])
    csv = ablation_csv(table)
    lines = csv.strip().split("\n")
    assert lines[0] == "cell,mean_accuracy,mean_sensitivity,mean_fpr_per_hour,delta_accuracy"
    assert lines[1] == "both,0.950,0.800,,+0.050"
    assert lines[2] == "feature_only,0.850,,1.500,-0.050"
    md = ablation_markdown(table)
    assert md.startswith("axis: loss")
    assert "| both | 0.950 | 0.800 | - | +0.050 |" in md


# -- experiment drivers on a tiny cohort --------------------------------------

def tiny_model():
    return ModelConfig(2, 32, 2, layers=(
        LayerSpec("conv1d", out_channels=4, kernel=5, stride=2),
        LayerSpec("relu", tap=True, name="feat"),
        LayerSpec("global_avg_pool"),
        LayerSpec("dense", units=2),
    ))


def tiny_cfg():
    return DistillConfig(lr=1e-2, batch_size=16, epochs_stage1=2,
                         epochs_stage2=3, seed=7)


def tiny_cohort(n_subjects=2, n=60):
    rng = np.random.default_rng(11)
    out = []
    for s in range(n_subjects):
        y = np.tile([0, 1], n // 2).astype(np.int64)
        X = rng.standard_normal((n, 2, 32)).astype(np.float32)
        X += (0.8 + 0.2 * s) * y[:, None, None]
        out.append(SubjectDataset(s, X, y, np.arange(n, dtype=np.float64)))
    return out


def test_leave_one_out_runs_one_fold_per_subject():
    cohort = tiny_cohort()
    res = leave_one_out(cohort, tiny_model(), tiny_cfg())
    assert [r.subject_id for r in res.subjects] == [0, 1]
    for r in res.subjects:
        assert 0.0 <= r.baseline.accuracy <= 1.0
        assert 0.0 <= r.distilled.accuracy <= 1.0
        assert r.distilled.n_windows == 12      # last fifth of 60 windows


def test_fold_results_do_not_depend_on_cohort_order():
    cohort = tiny_cohort()
    a = leave_one_out(cohort, tiny_model(), tiny_cfg())
    b = leave_one_out(list(reversed(cohort)), tiny_model(), tiny_cfg())
    for ra, rb in zip(a.subjects, b.subjects):
        assert ra.subject_id == rb.subject_id
        assert ra.distilled == rb.distilled
        assert ra.baseline == rb.baseline


def test_cohort_validation():
    cohort = tiny_cohort()
    with pytest.raises(DataError):
        prepare_folds([cohort[0]], tiny_model(), tiny_cfg())
    dup = [cohort[0], dataclasses.replace(cohort[1], subject_id=0)]
    with pytest.raises(DataError):
        prepare_folds(dup, tiny_model(), tiny_cfg())


def test_ablation_shares_folds_with_the_default_pipeline():
    cohort = tiny_cohort()
    cfg = tiny_cfg()
    folds = prepare_folds(cohort, tiny_model(), cfg)
    res = leave_one_out(cohort, tiny_model(), cfg, folds=folds)
    table = ablate(cohort, tiny_model(), cfg, "loss", folds=folds)
    assert [r.cell for r in table.rows] == ["divergence_only", "feature_only", "both"]
    both = next(r for r in table.rows if r.cell == "both")
    assert both.mean_accuracy == res.mean("distilled", "accuracy")
    assert table.baseline_accuracy == res.mean("baseline", "accuracy")


def test_temperature_axis_reuses_the_baseline_as_naive_cell():
    cohort = tiny_cohort()
    cfg = tiny_cfg()
    folds = prepare_folds(cohort, tiny_model(), cfg)
    table = ablate(cohort, tiny_model(), cfg, "temperature", folds=folds)
    assert [r.cell for r in table.rows] == ["naive", "T1", "T4", "T8"]
    naive = table.rows[0]
    assert naive.mean_accuracy == table.baseline_accuracy
    assert naive.delta_accuracy == 0.0


def test_divergence_axis_lists_all_three_kinds():
    cohort = tiny_cohort()
    cfg = tiny_cfg()
    folds = prepare_folds(cohort, tiny_model(), cfg)
    table = ablate(cohort, tiny_model(), cfg, "divergence", folds=folds)
    assert [r.cell for r in table.rows] == ["mse", "kl", "logistic"]


def test_cell_cache_reuses_identical_configurations_across_axes():
    cohort = tiny_cohort()
    cfg = tiny_cfg()
    folds = prepare_folds(cohort, tiny_model(), cfg)
    cache = {}
    cached = {axis: ablate(cohort, tiny_model(), cfg, axis, folds=folds,
                           cell_cache=cache)
              for axis in ABLATION_AXES}
    fresh = {axis: ablate(cohort, tiny_model(), cfg, axis, folds=folds)
             for axis in ABLATION_AXES}
    for axis in ABLATION_AXES:
        assert cached[axis] == fresh[axis]
    # loss(3) + divergence(3) + temperature(3) cells, minus the unablated
    # configuration shared by all three axes
    assert len(cache) == 7


def test_unknown_axis_rejected():
    assert ABLATION_AXES == ("loss", "divergence", "temperature")
    with pytest.raises(ConfigError):
        ablate([], tiny_model(), tiny_cfg(), "widths")


def test_forgetting_probe_reports_consistent_degradation():
    cohort = tiny_cohort(n_subjects=3)
    res = forgetting_probe(cohort, tiny_model(), tiny_cfg(), target_id=1)
    for v in (res.accuracy_before, res.accuracy_after_distill,
              res.accuracy_after_finetune):
        assert 0.0 <= v <= 1.0
    assert res.distill_degradation == pytest.approx(
        res.accuracy_before - res.accuracy_after_distill)
    assert res.finetune_degradation == pytest.approx(
        res.accuracy_before - res.accuracy_after_finetune)


def test_forgetting_probe_input_validation():
    cohort = tiny_cohort(n_subjects=2)
    with pytest.raises(DataError):
        forgetting_probe(cohort, tiny_model(), tiny_cfg(), target_id=9)
    with pytest.raises(DataError):
        forgetting_probe([cohort[0]], tiny_model(), tiny_cfg(), target_id=0)
