"""Command-line experiment runner.

Subcommands: generate, pretrain, distill, evaluate, loo, ablate, report.
Every subcommand starts from the shipped benchmark settings, overlays an
optional JSON run-config file (``--config``), then applies individual
flag overrides.  Exit codes: 0 success, 2 configuration/usage error,
3 data or file-format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import sys
from typing import List, Optional

from . import benchmark
from .data import (Mechanism, SubjectDataset, SyntheticSpec, TimelineParams,
                   generate_cohort, read_subject_dataset, windows_for_recording,
                   write_dataset)
from .errors import (ConfigError, DataError, FormatError, GraphError,
                     NumericError, ShapeError)
from .evaluation import (ablate, ablation_csv, ablation_markdown,
                         compute_metrics, emit_report, leave_one_out,
                         parse_report_csv)
from .losses import DivergenceKind
from .models import (ModelConfig, REFERENCE_CONFIGS, config_from_dict,
                     load_checkpoint, predict, save_checkpoint)
from .trainer import (DistillConfig, PassiveRule, concat_training_sets,
                      distill, pretrain_pool)


@dataclasses.dataclass
class RunSettings:
    model: ModelConfig
    distill: DistillConfig
    spec: SyntheticSpec
    timeline: TimelineParams


def distill_config_to_dict(cfg: DistillConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["divergence"] = cfg.divergence.value
    d["passive_rule"] = cfg.passive_rule.value
    return d


def distill_config_from_dict(d: dict, base: Optional[DistillConfig] = None
                             ) -> DistillConfig:
    cfg = base if base is not None else DistillConfig()
    known = {f.name for f in dataclasses.fields(DistillConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError("unknown distill settings: %s" % sorted(unknown))
    updates = dict(d)
    if "divergence" in updates:
        updates["divergence"] = DivergenceKind.parse(updates["divergence"])
    if "passive_rule" in updates:
        updates["passive_rule"] = PassiveRule.parse(updates["passive_rule"])
    if "feature_weights" in updates and updates["feature_weights"] is not None:
        updates["feature_weights"] = dict(updates["feature_weights"])
    return dataclasses.replace(cfg, **updates)


def _model_from_dict(d: dict, base: ModelConfig) -> ModelConfig:
    if "reference" in d:
        name = d["reference"]
        if name not in REFERENCE_CONFIGS:
            raise ConfigError("unknown reference model %r; have %s"
                              % (name, sorted(REFERENCE_CONFIGS)))
        return REFERENCE_CONFIGS[name](
            d.get("in_channels", base.in_channels),
            d.get("in_length", base.in_length),
            d.get("num_classes", base.num_classes))
    return config_from_dict(d)


def _spec_from_dict(d: dict, base: SyntheticSpec) -> SyntheticSpec:
    known = {f.name for f in dataclasses.fields(SyntheticSpec)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError("unknown cohort settings: %s" % sorted(unknown))
    updates = dict(d)
    # resized cohorts drop the base per-subject tables unless replacements come along
    if any(k in updates for k in ("n_subjects", "n_channels", "mechanisms")):
        updates.setdefault("mixing", None)
        updates.setdefault("subject_weights", None)
    if "mechanisms" in updates:
        updates["mechanisms"] = tuple(
            Mechanism(**m) if isinstance(m, dict) else Mechanism(float(m))
            for m in updates["mechanisms"])
    if "mixing" in updates and updates["mixing"] is not None:
        updates["mixing"] = tuple(
            tuple(tuple(float(v) for v in row) for row in subj)
            for subj in updates["mixing"])
    if "subject_weights" in updates and updates["subject_weights"] is not None:
        updates["subject_weights"] = tuple(
            tuple(float(v) for v in row) for row in updates["subject_weights"])
    return dataclasses.replace(base, **updates)


def _timeline_from_dict(d: dict, base: TimelineParams) -> TimelineParams:
    known = {f.name for f in dataclasses.fields(TimelineParams)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError("unknown timeline settings: %s" % sorted(unknown))
    return dataclasses.replace(base, **d)


def load_settings(args: argparse.Namespace) -> RunSettings:
    settings = RunSettings(model=benchmark.benchmark_model_config(),
                           distill=benchmark.benchmark_distill_config(),
                           spec=benchmark.benchmark_spec(),
                           timeline=benchmark.benchmark_timeline())
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError("cannot read config file %s: %s" % (path, exc))
        except json.JSONDecodeError as exc:
            raise ConfigError("config file %s is not valid JSON: %s" % (path, exc))
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(raw) - {"model", "distill", "cohort", "timeline"}
        if unknown:
            raise ConfigError("unknown config sections: %s" % sorted(unknown))
        if "timeline" in raw:
            settings.timeline = _timeline_from_dict(raw["timeline"], settings.timeline)
        if "cohort" in raw:
            settings.spec = _spec_from_dict(raw["cohort"], settings.spec)
        if "model" in raw:
            settings.model = _model_from_dict(raw["model"], settings.model)
        if "distill" in raw:
            settings.distill = distill_config_from_dict(raw["distill"], settings.distill)

    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        settings.spec = dataclasses.replace(settings.spec, seed=args.seed)
    if getattr(args, "temperature", None) is not None:
        overrides["temperature"] = args.temperature
    if getattr(args, "momentum", None) is not None:
        overrides["momentum"] = args.momentum
    if getattr(args, "divergence", None) is not None:
        overrides["divergence"] = DivergenceKind.parse(args.divergence)
    if getattr(args, "passive_rule", None) is not None:
        overrides["passive_rule"] = PassiveRule.parse(args.passive_rule)
    if overrides:
        settings.distill = dataclasses.replace(settings.distill, **overrides)
    settings.timeline.validate()
    settings.spec.validate()
    settings.distill.validate()
    return settings


def _outdir(args: argparse.Namespace) -> str:
    out = args.out or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def _load_cohort(data_dir: str) -> List[SubjectDataset]:
    paths = sorted(glob.glob(os.path.join(data_dir, "*.dbds")))
    if not paths:
        raise DataError("no .dbds dataset files in %s" % data_dir)
    return [read_subject_dataset(p) for p in paths]


def _pick_subject(cohort: List[SubjectDataset], subject: int) -> SubjectDataset:
    for ds in cohort:
        if ds.subject_id == subject:
            return ds
    raise DataError("subject %d not found; dataset holds %s"
                    % (subject, sorted(d.subject_id for d in cohort)))


# -- subcommands --------------------------------------------------------------

def cmd_generate(args) -> int:
    settings = load_settings(args)
    out = _outdir(args)
    recordings = generate_cohort(settings.spec)
    for rec in recordings:
        ds = windows_for_recording(rec, settings.timeline)
        path = os.path.join(out, "subject_%02d.dbds" % ds.subject_id)
        write_dataset(ds.to_samples(), path)
        print("wrote %s: %d windows (%d preictal)"
              % (path, len(ds), int(ds.y.sum())))
    return 0


def cmd_pretrain(args) -> int:
    settings = load_settings(args)
    out = _outdir(args)
    cohort = _load_cohort(args.data)
    forbid = None
    if args.subject is not None:
        forbid = {args.subject}
        cohort = [d for d in cohort if d.subject_id != args.subject]
        if not cohort:
            raise DataError("no training subjects left after holding out %d"
                            % args.subject)
    data = concat_training_sets([d.as_training_set() for d in cohort])
    pool, log = pretrain_pool(settings.model, data, settings.distill,
                              forbid_subjects=forbid)
    ckpt = os.path.join(out, "pool.dbkd")
    save_checkpoint(pool, ckpt)
    log.to_csv(os.path.join(out, "pretrain_log.csv"))
    print("pretrained on %d windows from %d subjects -> %s"
          % (len(data.y), len(cohort), ckpt))
    return 0


def cmd_distill(args) -> int:
    settings = load_settings(args)
    out = _outdir(args)
    pool = load_checkpoint(args.pool)
    cohort = _load_cohort(args.data)
    ds = _pick_subject(cohort, args.subject)
    train, _val, _test = ds.split()
    cus, pool_after, log = distill(pool, train.as_training_set(), settings.distill)
    cus_path = os.path.join(out, "cus_s%02d.dbkd" % args.subject)
    pool_path = os.path.join(out, "pool_after_s%02d.dbkd" % args.subject)
    save_checkpoint(cus, cus_path)
    save_checkpoint(pool_after, pool_path)
    log.to_csv(os.path.join(out, "distill_log_s%02d.csv" % args.subject))
    print("distilled on %d train windows of subject %d -> %s"
          % (len(train), args.subject, cus_path))
    return 0


def cmd_evaluate(args) -> int:
    settings = load_settings(args)
    model = load_checkpoint(args.model)
    cohort = _load_cohort(args.data)
    ds = _pick_subject(cohort, args.subject)
    _train, _val, test = ds.split()
    m = compute_metrics(predict(model, test.X), test.y,
                        settings.timeline.window_s)
    print("subject %d test split: %d windows" % (args.subject, m.n_windows))
    print("accuracy     %.3f" % m.accuracy)
    print("sensitivity  %s" % ("%.3f" % m.sensitivity
                               if m.sensitivity is not None else "undefined"))
    print("fpr_per_hour %s" % ("%.3f" % m.fpr_per_hour
                               if m.fpr_per_hour is not None else "undefined"))
    return 0


def cmd_loo(args) -> int:
    settings = load_settings(args)
    out = _outdir(args)
    cohort = _load_cohort(args.data)
    result = leave_one_out(cohort, settings.model, settings.distill,
                           settings.timeline.window_s)
    csv_path = os.path.join(out, "report.csv")
    md_path = os.path.join(out, "report.md")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(emit_report(result, "csv"))
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(emit_report(result, "markdown"))
    print("wrote %s and %s" % (csv_path, md_path))
    print("mean accuracy: baseline %.3f  distilled %.3f"
          % (result.mean("baseline", "accuracy"),
             result.mean("distilled", "accuracy")))
    return 0


def cmd_ablate(args) -> int:
    settings = load_settings(args)
    out = _outdir(args)
    cohort = _load_cohort(args.data)
    table = ablate(cohort, settings.model, settings.distill, args.axis,
                   settings.timeline.window_s)
    csv_path = os.path.join(out, "ablation_%s.csv" % args.axis)
    md_path = os.path.join(out, "ablation_%s.md" % args.axis)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(ablation_csv(table))
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(ablation_markdown(table))
    print("wrote %s and %s" % (csv_path, md_path))
    for row in table.rows:
        print("%-16s mean accuracy %.3f (%+.3f vs baseline)"
              % (row.cell, row.mean_accuracy, row.delta_accuracy))
    return 0


def cmd_report(args) -> int:
    try:
        with open(args.infile, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError("cannot read report %s: %s" % (args.infile, exc))
    rows = parse_report_csv(text)
    header = ("subject", "scheme", "accuracy", "sensitivity", "fpr_per_hour")
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join([" --- "] * len(header)) + "|"]
    sums = {}
    for row in rows:
        if len(row) != len(header):
            raise DataError("report row has %d fields, expected %d"
                            % (len(row), len(header)))
        lines.append("| " + " | ".join(c if c else "-" for c in row) + " |")
        scheme = row[1]
        for j, cell in enumerate(row[2:], start=2):
            if cell:
                tot, cnt = sums.get((scheme, j), (0.0, 0))
                sums[(scheme, j)] = (tot + float(cell), cnt + 1)
    for scheme in sorted({row[1] for row in rows}):
        cells = []
        for j in (2, 3, 4):
            tot_cnt = sums.get((scheme, j))
            cells.append("%.3f" % (tot_cnt[0] / tot_cnt[1]) if tot_cnt else "-")
        lines.append("| average | %s | %s | %s | %s |" % (scheme, *cells))
    text_md = "\n".join(lines) + "\n"
    sys.stdout.write(text_md)
    if args.out:
        out = _outdir(args)
        md_path = os.path.join(out, "report.md")
        with open(md_path, "w", encoding="utf-8") as fh:
            fh.write(text_md)
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualdistill",
        description="Seizure-prediction distillation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", help="output directory (default: runs)")

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--temperature", type=float)
    train.add_argument("--momentum", type=float)
    train.add_argument("--divergence", choices=["mse", "kl", "logistic"])
    train.add_argument("--passive-rule", dest="passive_rule",
                       choices=["damped", "ema", "literal"])

    p = sub.add_parser("generate", parents=[common],
                       help="write the synthetic cohort as .dbds files")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", parents=[common, train],
                       help="pretrain a pool model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--subject", type=int, help="subject id to hold out")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("distill", parents=[common, train],
                       help="distill a customized model for one subject")
    p.add_argument("--data", required=True)
    p.add_argument("--subject", type=int, required=True)
    p.add_argument("--pool", required=True, help="pool checkpoint path")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a checkpoint on a subject's test split")
    p.add_argument("--data", required=True)
    p.add_argument("--subject", type=int, required=True)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("loo", parents=[common, train],
                       help="run the full leave-one-out benchmark")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("ablate", parents=[common, train],
                       help="sweep one training factor over the benchmark")
    p.add_argument("--data", required=True)
    p.add_argument("--axis", required=True,
                   choices=["loss", "divergence", "temperature"])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", parents=[common],
                       help="render a metrics CSV as a markdown table")
    p.add_argument("--infile", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError, GraphError) as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return 2
    except (DataError, FormatError) as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return 3
    except NumericError as exc:
        print("numeric error: %s" % exc, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
