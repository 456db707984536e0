"""Command-line entry point: ``tpa synth | train | eval | gradcheck``.

Exit codes: 0 success, 1 gradient check failure, 2 config error,
3 data error, 4 non-finite loss.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_model, save_model
from .checks import format_table, timed_suite
from .config import ConfigError, load_config
from .dataio import (DataFormatError, Dataset, read_dataset, save_prompt_bank, load_prompt_bank,
                     synth_generate, write_dataset)
from .metrics import PredictionSet, calibration_report, reliability_export
from .trainer import NonFiniteLossError, cross_validate, evaluate

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_DATA, EXIT_NAN = 0, 1, 2, 3, 4

log = logging.getLogger("tpa")


def cmd_synth(args) -> int:
    ds, bank = synth_generate(args.seed, args.classes, args.per_class, args.dim,
                              (args.t_min, args.t_max), args.separation)
    write_dataset(ds, args.dataset_out)
    save_prompt_bank(bank, args.bank_out)
    counts = ", ".join(f"{c}:{n}" for c, n in enumerate(ds.class_counts()))
    print(f"wrote {len(ds)} records (D={ds.dim}, C={ds.num_classes}; per class {counts}) to {args.dataset_out}")
    print(f"wrote {bank.num_classes}-entry prompt bank to {args.bank_out}")
    return EXIT_OK


def _load_data(cfg):
    if not cfg.data.dataset_path:
        raise DataFormatError("config data.dataset_path is not set")
    if not cfg.data.prompt_bank_path:
        raise DataFormatError("config data.prompt_bank_path is not set")
    ds = read_dataset(cfg.data.dataset_path)
    bank, _ = load_prompt_bank(cfg.data.prompt_bank_path, dim=ds.dim)
    bank.check_against(ds)
    return ds, bank


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set or ())
    ds, bank = _load_data(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    result = cross_validate(ds, bank, cfg, parallel=args.parallel_folds)
    for f in result.folds:
        (out / f"fold_{f.fold}.json").write_text(json.dumps(f.summary(), indent=1, sort_keys=True))
        reliability_export(f.report.bins, out / f"fold_{f.fold}_reliability.csv")
        save_model(out / f"fold_{f.fold}.ckpt", f.state, bank.embeddings, cfg, ds.dim, ds.num_classes,
                   fold=f.fold, best_epoch=f.best_epoch, val_ids=f.val_ids, metrics=f.report.to_dict())
    (out / "aggregate.json").write_text(result.report_json())
    for name, agg in result.aggregate.items():
        print(f"{name:>9}: {agg['mean']:.4f} +/- {agg['std']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, prompts, cfg, meta = load_model(args.checkpoint)
    ds = read_dataset(args.dataset)
    if ds.dim != meta["dim"] or ds.num_classes != meta["num_classes"]:
        raise DataFormatError(f"dataset (D={ds.dim}, C={ds.num_classes}) does not match checkpoint "
                              f"(D={meta['dim']}, C={meta['num_classes']})")
    if args.records == "val":
        wanted = set(meta.get("val_ids", []))
        ds = Dataset(ds.dim, ds.num_classes, [r for r in ds.records if r.id in wanted])
        if len(ds) == 0:
            raise DataFormatError("none of the checkpoint's validation ids are in the dataset")
    if args.bins is not None:
        cfg.metrics.bins = args.bins
    preds = evaluate(model, ds, prompts, cfg)
    report = calibration_report(preds, cfg.metrics.bins, cfg.metrics.skip_absent_f1)
    doc = {"checkpoint": str(args.checkpoint), "records": len(ds), "metrics": report.to_dict(),
           "mc_samples": args.mc_samples, "uncertainty": _uncertainty(model, ds, prompts, cfg, args)}
    text = json.dumps(doc, indent=1, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text)
    else:
        print(text)
    if args.reliability:
        reliability_export(report.bins, args.reliability)
    print(f"macro_f1 {report.macro_f1:.4f}  auc {report.auc}  ece {report.ece:.4f}  aece {report.aece:.4f}",
          file=sys.stderr)
    return EXIT_OK


def _uncertainty(model, ds, prompts, cfg, args) -> list:
    from .dataio import sample_clip
    rng = np.random.default_rng(args.seed)
    rows = []
    B = cfg.trainer.batch
    for start in range(0, len(ds), B):
        recs = ds.records[start:start + B]
        clips = np.stack([sample_clip(r, cfg.data.clip_len, "eval") for r in recs])
        mean, var, ent = model.predictive_uncertainty(clips, prompts, args.mc_samples, rng)
        for r, m, v, e in zip(recs, mean, var, ent):
            rows.append({"id": r.id, "label": r.label, "pred": int(np.argmax(m)),
                         "mean_probs": m.tolist(), "variance": v.tolist(), "entropy": float(e)})
    return rows


def cmd_gradcheck(args) -> int:
    rows, elapsed = timed_suite(range(args.seed, args.seed + args.seeds), args.tolerance, not args.ops_only)
    print(format_table(rows, elapsed))
    return EXIT_OK if all(r.passed for r in rows) else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tpa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic embedding dataset and prompt bank")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--per-class", type=int, default=60)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--t-min", type=int, default=24)
    s.add_argument("--t-max", type=int, default=64)
    s.add_argument("--separation", type=float, default=4.0)
    s.add_argument("--dataset-out", default="synth.tpae")
    s.add_argument("--bank-out", default="synth_prompts.json")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="stratified cross-validation from a JSON config")
    t.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    t.add_argument("--out", required=True, help="output directory for reports and checkpoints")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override")
    t.add_argument("--parallel-folds", type=int, default=1)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--records", choices=("all", "val"), default="all",
                   help="'val' restricts to the checkpoint fold's validation ids")
    e.add_argument("--mc-samples", type=int, default=1)
    e.add_argument("--bins", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--report", help="write the JSON report here instead of stdout")
    e.add_argument("--reliability", help="reliability CSV output path")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="central-difference checks of every op and model path")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--seeds", type=int, default=10)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--ops-only", action="store_true", help="skip the end-to-end model checks")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
