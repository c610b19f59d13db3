"""
The command line subcommands. Each takes the parsed arguments and the user
settings, and returns an exit code (see util.exit_code_on_error).
"""

import csv
from dataclasses import replace
import json
import logging
from pathlib import Path

import numpy as np

from .bench import run_bench, write_bench_csv, write_bench_summary, format_bench_table
from .check import format_check_table, run_checks
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .errors import CheckFailure, ConfigError
from .features import read_features
from .manifest import load_bags, load_manifest
from .metrics import metrics_by_length, metrics_report, summarize
from .model import RetMILModel, attention_scores
from .sequencer import split_and_pad
from .synthetic import generate_synthetic
from .tensor import no_grad, set_precision
from .train import evaluate, train, write_history_csv
from .util import atomic_write, exit_code_on_error, parse_number_list


logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.bin"
HISTORY_NAME = "history.csv"


def _run_config(args, settings):
    "The run configuration from --config (or defaults), with flags applied, and precision set."
    config = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    workers = args.workers if args.workers is not None else settings.get("workers")
    config = config.with_overrides(precision=args.precision, seed=args.seed, workers=workers)
    set_precision(config.precision)
    logger.debug("Run configuration: %s", config)
    return config


def _write_json(data, out):
    if out is None:
        print(json.dumps(data, indent=2, sort_keys=True))
        return
    with atomic_write(out, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("Wrote %s", out)


def _check_compatible(model, manifest):
    if model.config.d != manifest.d:
        raise ConfigError(f"Model expects {model.config.d} dimensional features, "
                          f"manifest has {manifest.d}")
    if model.config.num_classes != manifest.num_classes:
        raise ConfigError(f"Model has {model.config.num_classes} classes, "
                          f"manifest has {manifest.num_classes}")


@exit_code_on_error
def gen_synthetic(args, settings):
    config = _run_config(args, settings)
    manifest = generate_synthetic(config.synthetic, args.out)
    manifest.validate(require_splits=("train", "val", "test"))


@exit_code_on_error
def train_command(args, settings):
    config = _run_config(args, settings)
    manifest_path = args.manifest or config.paths.manifest
    if manifest_path is None:
        raise ConfigError("No manifest given, use --manifest or paths.manifest in the config")
    manifest = load_manifest(manifest_path).validate(require_splits=("train", "val"))
    model = RetMILModel(config.model, seed=config.seed)
    _check_compatible(model, manifest)
    logger.info("Training a model with %d parameter values on %d bags",
                model.store.num_values(), len(manifest.split("train")))

    model, history = train(model, load_bags(manifest, "train"), load_bags(manifest, "val"),
                           config.train)

    out_dir = Path(args.out) if args.out else config.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_dir / CHECKPOINT_NAME)
    write_history_csv(out_dir / HISTORY_NAME, history)
    logger.info("Wrote checkpoint and history to %s", out_dir)


def _evaluate_checkpoint(path, manifest, bags, workers, length_bins):
    model = load_checkpoint(path)
    _check_compatible(model, manifest)
    predictions = evaluate(model, bags, workers)
    y_true = [p.label for p in predictions]
    y_pred = [p.predicted for p in predictions]
    num_classes = model.config.num_classes
    scores = [p.probabilities[1] for p in predictions] if num_classes == 2 else None
    report = metrics_report(y_true, y_pred, scores, num_classes)
    if length_bins:
        report["by_length"] = metrics_by_length(y_true, y_pred, [p.n_tokens for p in predictions],
                                                length_bins, scores, num_classes)
    report["checkpoint"] = str(path)
    return report


@exit_code_on_error
def eval_command(args, settings):
    config = _run_config(args, settings)
    manifest = load_manifest(args.manifest).validate(require_splits=(args.split,))
    bags = load_bags(manifest, args.split)
    length_bins = parse_number_list(args.length_bins) if args.length_bins else None
    reports = [_evaluate_checkpoint(path, manifest, bags, config.workers, length_bins)
               for path in args.checkpoint]
    for report in reports:
        logger.info("%s: B-Acc %.4f, weighted F1 %.4f", report["checkpoint"],
                    report["bacc"], report["weighted_f1"])
    if len(reports) == 1:
        result = reports[0]
    else:
        metrics = ["bacc", "weighted_f1"] + (["auc"] if all("auc" in r for r in reports) else [])
        result = {
            "checkpoints": reports,
            "summary": {m: summarize([r[m] for r in reports]) for m in metrics},
        }
    result["split"] = args.split
    _write_json(result, args.out)


@exit_code_on_error
def score_command(args, settings):
    _run_config(args, settings)
    model = load_checkpoint(args.checkpoint)
    seq = read_features(args.input)
    with no_grad():
        trace = model.forward(seq, streaming=True)
    scores = attention_scores(trace)
    with atomic_write(args.out, "w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["token_index", "score"])
        for i, score in enumerate(scores):
            writer.writerow([i, repr(float(score))])
    logger.info("Wrote %d token scores to %s (score sum %.8f)", len(scores), args.out, scores.sum())


@exit_code_on_error
def split_command(args, settings):
    config = _run_config(args, settings)
    l = args.subseq_len or config.model.subseq_len
    seq = read_features(args.input)
    batch = split_and_pad(seq, l, with_stack=False)
    q, r = divmod(seq.n_tokens, l)
    print(f"N={seq.n_tokens} l={l} rows={batch.n_rows} full={q} remainder={r}")
    if args.dump_provenance:
        with atomic_write(args.dump_provenance, "w") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["row", "slot", "token_index"])
            for (row, slot), token in np.ndenumerate(batch.provenance):
                writer.writerow([row, slot, int(token)])


@exit_code_on_error
def bench_command(args, settings):
    config = _run_config(args, settings)
    cfg = config.bench
    if args.precision is not None:
        cfg = replace(cfg, precision=args.precision)
    records = run_bench(cfg)
    print(format_bench_table(records))
    out = Path(args.out) if args.out else config.output_dir() / "bench.csv"
    write_bench_csv(out, records)
    if args.summary:
        write_bench_summary(args.summary, records, cfg)
    logger.info("Wrote %d bench records to %s", len(records), out)


@exit_code_on_error
def check_command(args, settings):
    _run_config(args, settings)
    results = run_checks(fault=args.inject_fault)
    print(format_check_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailure(f"Failed check(s): {', '.join(failed)}")
