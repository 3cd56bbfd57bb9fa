"""Minimal end-to-end walkthrough on a tiny in-memory cohort.

Builds three small synthetic subjects, pretrains a pool model on two of
them, distills a customized model for the third, and prints test-split
metrics for the distilled model against a from-scratch baseline.

Run:  python3 demos/quickstart.py      (about 30 s on one core)
"""

import numpy as np

from dualdistill import (DistillConfig, LayerSpec, ModelConfig, PassiveRule,
                         SubjectDataset, build_model, compute_metrics, distill,
                         fit_crossentropy, predict, pretrain_pool)
from dualdistill.trainer import concat_training_sets


def make_subject(subject_id, rng, n=120):
    """Windows with a subject-specific class offset on top of noise."""
    y = np.tile([0, 1], n // 2).astype(np.int64)
    X = rng.standard_normal((n, 2, 64)).astype(np.float32)
    X += (0.6 + 0.15 * subject_id) * y[:, None, None]
    return SubjectDataset(subject_id, X, y, np.arange(n, dtype=np.float64))


def main():
    rng = np.random.default_rng(0)
    cohort = [make_subject(s, rng) for s in range(3)]
    target = cohort[2]

    config = ModelConfig(2, 64, 2, layers=(
        LayerSpec("conv1d", out_channels=6, kernel=7, stride=3),
        LayerSpec("relu", tap=True, name="feat"),
        LayerSpec("global_avg_pool"),
        LayerSpec("dense", units=2),
    ))
    # EMA passive updates pull the freshly cloned customized model toward
    # the pool between its own steps — a warm start it needs at 30 epochs.
    cfg = DistillConfig(lr=1e-3, batch_size=8, epochs_stage1=10,
                        epochs_stage2=30, temperature=4.0, seed=0,
                        passive_rule=PassiveRule.PARAMETER_EMA)

    pool_data = concat_training_sets(
        [d.as_training_set() for d in cohort[:2]])
    pool, _ = pretrain_pool(config, pool_data, cfg,
                            forbid_subjects={target.subject_id})
    print("pool pretrained on subjects 0 and 1 "
          "(%d windows)" % len(pool_data.y))

    train, _val, test = target.split()
    cus, pool_after, log = distill(pool, train.as_training_set(), cfg)
    print("distilled on subject 2's train split; %d alternating steps"
          % len(log.records))

    baseline = build_model(config, cfg.seed)
    fit_crossentropy(baseline, train.as_training_set(), cfg,
                     epochs=cfg.epochs_stage2)

    for name, model in (("baseline ", baseline), ("distilled", cus)):
        m = compute_metrics(predict(model, test.X), test.y)
        sens = "%.3f" % m.sensitivity if m.sensitivity is not None else "n/a"
        print("%s  accuracy %.3f  sensitivity %s  (tp %d fp %d tn %d fn %d)"
              % (name, m.accuracy, sens, m.tp, m.fp, m.tn, m.fn))


if __name__ == "__main__":
    main()
