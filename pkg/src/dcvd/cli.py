"""Command-line entry point: ``dcvd <subcommand> ...``.

A data directory produced by ``ingest`` holds ``records.jsonl`` plus one
manifest per split (``train.json``, ``valid.json``, ``test.json``).
Training, evaluation, ablation and sweep outputs land in a run directory
named ``<timestamp>-seed<seed>`` under ``--runs``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, TrainConfig, load_config, parse_override, save_config
from .dataset import DatasetError, load_records, make_splits, read_manifest, sample_fraction, save_records, select, write_manifests
from .explain import ExplanationError
from .graphs import GraphExtractionError, extract_graph
from .metrics import reports_to_csv
from .pipeline import ABLATIONS, SWEEPABLE, Checkpoint, Trainer, ablate, evaluate, make_explainer, predict, sweep
from .synthetic import make_synthetic

logger = logging.getLogger("dcvd")

RECORDS = "records.jsonl"


def _config(args) -> TrainConfig:
    overrides = dict(parse_override(s) for s in (args.set or []))
    cfg = load_config(args.config, overrides or None)
    cfg.validate()
    return cfg


def _load_split(data_dir: Path, name: str):
    records = load_records(data_dir / RECORDS)
    manifest = data_dir / f"{name}.json"
    if not manifest.exists():
        raise DatasetError(f"{manifest}: no such split manifest (run `dcvd ingest` first)")
    return select(records, read_manifest(manifest))


def _run_dir(root: Path, seed: int, tag: str = "") -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = f"{stamp}-seed{seed}" + (f"-{tag}" if tag else "")
    path = root / base
    n = 1
    while path.exists():
        path = root / f"{base}.{n}"
        n += 1
    path.mkdir(parents=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def cmd_ingest(args) -> int:
    records = load_records(args.records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ratios = tuple(float(x) for x in args.ratios.split(","))
    splits = make_splits(records, ratios, seed=args.seed)
    if args.fraction < 1:
        splits = tuple(sample_fraction(s, args.fraction, args.seed) for s in splits)
    save_records(records, out / RECORDS)
    write_manifests(splits, out)
    for s in splits:
        print(f"{s.name}: {len(s)} samples")
    return 0


def cmd_graph(args) -> int:
    source = Path(args.source).read_text()
    print(extract_graph(source).to_json(indent=2 if args.pretty else None))
    return 0


def cmd_explain(args) -> int:
    cfg = _config(args)
    if args.cache_dir:
        cfg = cfg.replace(cache_dir=args.cache_dir)
    records = load_records(Path(args.data) / RECORDS)
    explainer = make_explainer(cfg)
    results = explainer.explain_many((fn.id, fn.source) for fn in records)
    bad = [fid for fid, r in results.items() if not r.well_formed]
    print(f"explained {len(results)} functions ({len(bad)} not well-formed)")
    for fid in bad:
        logger.warning("explanation for %s is missing expected sections", fid)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    train_fns, valid_fns = _load_split(data, "train"), _load_split(data, "valid")
    run = _run_dir(Path(args.runs), cfg.seed, "train")
    trainer = Trainer(cfg, train_fns)
    ckpt = trainer.fit(valid_fns)
    ckpt.save(run / "checkpoint.pt")
    save_config(cfg, run / "config.yaml")
    _write_json(run / "history.json", trainer.history)
    if ckpt.val_report is not None:
        _write_json(run / "valid_report.json", ckpt.val_report)
    print(f"run directory: {run}")
    print(f"best epoch {ckpt.epoch}, validation score {ckpt.val_score}")
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    fns = _load_split(Path(args.data), args.split)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(ckpt, fns, predictions_path=out / f"{args.split}_predictions.jsonl")
    report.header["split"] = args.split
    _write_json(out / f"{args.split}_report.json", report.to_dict())
    print(report.table())
    return 0


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    source = Path(args.source).read_text()
    bundle = predict(ckpt, source, function_id=Path(args.source).stem)
    result = {"y_hat_f": bundle.y_hat_f, "ranked_lines": bundle.ranked_lines()[: args.top or None]}
    print(json.dumps(result, indent=2))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    splits = [_load_split(data, n) for n in ("train", "valid", "test")]
    variants = ["full", *ABLATIONS] if args.variant == "all" else [args.variant]
    run = _run_dir(Path(args.runs), cfg.seed, "ablate")
    rows = []
    for v in variants:
        result = ablate(v, cfg, *splits)
        _write_json(run / f"{v}_report.json", result.report.to_dict())
        print(result.report.table(v))
        rows.append({"variant": v, **result.report.csv_row()})
    (run / "ablation.csv").write_text(reports_to_csv(rows))
    print(f"run directory: {run}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    splits = [_load_split(data, n) for n in ("train", "valid", "test")]
    values = [float(v) if args.param == "alpha" else int(v) for v in args.values.split(",")]
    rows = sweep(args.param, values, cfg, *splits)
    text = reports_to_csv(rows)
    run = _run_dir(Path(args.runs), cfg.seed, f"sweep-{args.param}")
    (run / f"sweep_{args.param}.csv").write_text(text)
    sys.stdout.write(text)
    print(f"run directory: {run}")
    return 0


def cmd_synth(args) -> int:
    save_records(make_synthetic(args.n, args.seed), args.out)
    print(f"wrote {args.n} functions to {args.out}")
    return 0


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (defaults to the packaged default.yaml)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcvd", description="Dual-channel C vulnerability detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_parser("ingest", help="validate a JSONL dataset and write split manifests")
    p.add_argument("records")
    p.add_argument("--out", required=True, help="data directory to create")
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fraction", type=float, default=1.0, help="keep a random fraction of every split")
    p.set_defaults(func=cmd_ingest)

    p = add_parser("graph", help="dump the AST+CFG graph of one C function as JSON")
    p.add_argument("source")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_graph)

    p = add_parser("explain", help="fetch or generate explanations for every record into the cache")
    p.add_argument("data")
    p.add_argument("--cache-dir")
    _add_config_args(p)
    p.set_defaults(func=cmd_explain)

    p = add_parser("train", help="train a model and save the best checkpoint")
    p.add_argument("data")
    p.add_argument("--runs", default="runs")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--out", help="output directory (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = add_parser("predict", help="score one C function and rank its lines")
    p.add_argument("checkpoint")
    p.add_argument("source")
    p.add_argument("--top", type=int, default=0, help="only print the top N lines")
    p.set_defaults(func=cmd_predict)

    p = add_parser("ablate", help="train and test an ablation variant")
    p.add_argument("variant", choices=["all", "full", *ABLATIONS])
    p.add_argument("data")
    p.add_argument("--runs", default="runs")
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)

    p = add_parser("sweep", help="Score-vs-value CSV for one hyperparameter")
    p.add_argument("param", choices=SWEEPABLE)
    p.add_argument("values", help="comma-separated values, e.g. 0.2,0.4,0.6")
    p.add_argument("data")
    p.add_argument("--runs", default="runs")
    _add_config_args(p)
    p.set_defaults(func=cmd_sweep)

    p = add_parser("synth", help="write a small synthetic C dataset")
    p.add_argument("out")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (ConfigError, DatasetError, GraphExtractionError, ExplanationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
