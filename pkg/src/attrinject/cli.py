"""Command-line experiment harness.

Subcommands: train, sweep, gradcheck, transfer, params, stats. Every
command takes explicit seeds and paths, appends an immutable record to a
ledger file, and exits 0 on success, 2 on configuration errors, 3 on data
errors, and 4 on failed checks.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from . import autograd as ag
from .checkpoint import CheckpointError, save_model
from .config import ConfigError, load_config, model_template, train_config
from .data import (
    DataError,
    corpus_stats,
    generate_interaction_corpus,
    generate_transfer_data,
    InteractionSpec,
    load_corpus,
    load_transfer_sidecar,
    make_disjoint_entity_split,
    save_corpus,
    TransferSpec,
    write_transfer_sidecar,
)
from .experiment import BoundCorpus, run_experiment
from .gradcheck import run_standard_checks
from .injection import InjectionConfigError, count_parameters
from .layers import SITES, ModelConfigError
from .transfer import (
    FrozenEncodings,
    category_classify_train,
    headline_perplexity,
    majority_baseline,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4

CONFIG_ERRORS = (ConfigError, ModelConfigError, InjectionConfigError)
DATA_ERRORS = (DataError, CheckpointError, FileNotFoundError, ag.InvalidInputError)


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def offgrid_bias_sites(cfg) -> list[str]:
    """Bias injection anywhere but attention is constructible, yet outside
    the standard evaluation grid; runs carry a flag saying so."""
    if cfg.representation != "bias":
        return []
    return [site for site in cfg.sites if site != "attend"]


def append_ledger(out_dir: Path, command: str, payload: dict, metrics: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config_hash": config_hash(payload),
        "config": payload,
        "metrics": metrics,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(out_dir / "ledger.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _load_any_corpus(args) -> object:
    if getattr(args, "synthetic", False):
        spec = InteractionSpec(mark_rate=args.mark_rate)
        return generate_interaction_corpus(spec, seed=args.corpus_seed)
    if args.corpus_dir:
        d = Path(args.corpus_dir)
        return load_corpus(d / "train.txt", d / "dev.txt", d / "test.txt")
    if args.train_file and args.dev_file and args.test_file:
        return load_corpus(args.train_file, args.dev_file, args.test_file)
    raise DataError(
        "no corpus given: use --corpus-dir, the three --train-file/--dev-file/"
        "--test-file paths, or --synthetic"
    )


def _corpus_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus-dir", help="directory with train.txt/dev.txt/test.txt")
    parser.add_argument("--train-file")
    parser.add_argument("--dev-file")
    parser.add_argument("--test-file")
    parser.add_argument(
        "--synthetic", action="store_true",
        help="generate the attribute-interaction corpus instead of loading files",
    )
    parser.add_argument("--corpus-seed", type=int, default=0)
    parser.add_argument("--mark-rate", type=float, default=0.3)
    parser.add_argument(
        "--paper-scale", action="store_true",
        help="use full-scale dimensions (300-wide vectors, 15x15 chunk factors) "
             "instead of the desk-scale defaults",
    )


PAPER_SCALE = dict(
    embed_dim=300, word_dim=300, hidden_dim=300, attn_dim=300,
    user_dim=300, product_dim=300, chunk_rows=15, chunk_cols=15,
)


def cmd_train(args) -> int:
    values = load_config(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    if getattr(args, "paper_scale", False):
        values.update(PAPER_SCALE)
    template = model_template(values)
    tcfg = train_config(values)
    corpus = _load_any_corpus(args)
    bound = BoundCorpus.bind(corpus, min_freq=values.get("min_word_freq", 2))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_experiment(
        bound, template, tcfg, log_path=out_dir / "metrics.jsonl"
    )
    extra = {
        "user_names": bound.users.names,
        "product_names": bound.products.names,
        "word_tokens": bound.words.tokens,
        "seed": tcfg.seed,
    }
    save_model(out_dir / "checkpoint.bin", result.model, extra=extra)
    metrics = {
        "best_epoch": result.metrics.best_epoch,
        "dev_accuracy": result.metrics.best_dev_accuracy,
        "dev_rmse": result.metrics.best_dev_rmse,
        "test_accuracy": result.test_accuracy,
        "test_rmse": result.test_rmse,
        "epochs_run": len(result.metrics.epochs),
    }
    payload = {"model": asdict(result.model.cfg), "train": asdict(tcfg)}
    offgrid = offgrid_bias_sites(result.model.cfg)
    if offgrid:
        payload["offgrid_bias_sites"] = offgrid
        print(
            f"note: bias representation at {offgrid} is outside the standard "
            "comparison grid (bias is normally compared at the attention site only)",
            file=sys.stderr,
        )
    append_ledger(out_dir, "train", payload, metrics)
    print(json.dumps({"label": result.label, **metrics}))
    return EXIT_OK


SWEEP_SINGLE = [("bias", ("attend",))] + [
    (rep, (site,)) for rep in ("matrix", "chunk") for site in SITES
]
SWEEP_JOINT = [
    ("chunk", (a, b)) for i, a in enumerate(SITES) for b in SITES[i + 1:]
]


def _sweep_cells(mode: str) -> list[tuple[str, tuple[str, ...]]]:
    if mode == "single":
        return list(SWEEP_SINGLE)
    if mode == "joint":
        return list(SWEEP_JOINT)
    if mode == "grid":
        return [("chunk", (site,)) for site in SITES] + list(SWEEP_JOINT)
    raise ConfigError(f"unknown sweep mode {mode!r}; use single, joint, or grid")


def cmd_sweep(args) -> int:
    cells = _sweep_cells(args.mode)
    deduped: list[tuple[str, tuple[str, ...]]] = []
    seen = set()
    for rep, sites in cells:
        key = (rep, tuple(sorted(sites)))
        if key in seen:
            print(f"warning: duplicate sweep cell {key} dropped", file=sys.stderr)
            continue
        seen.add(key)
        deduped.append((rep, sites))

    corpus = _load_any_corpus(args)
    bound = BoundCorpus.bind(corpus, min_freq=2)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = load_config(args.config) if args.config else {}
    if getattr(args, "paper_scale", False):
        values.update(PAPER_SCALE)
    results: dict[tuple[str, tuple[str, ...]], float] = {}
    for index, (rep, sites) in enumerate(deduped):
        template = replace(
            model_template({**values, "representation": rep, "sites": sites}),
            representation=rep, sites=sites,
        )
        tcfg = train_config(
            {**values, "seed": args.seed + index, "max_epochs": args.epochs}
        )
        result = run_experiment(bound, template, tcfg)
        results[(rep, tuple(sorted(sites)))] = result.metrics.best_dev_accuracy
        payload = {"model": asdict(result.model.cfg), "train": asdict(tcfg)}
        append_ledger(out_dir, "sweep", payload, {
            "cell": result.label,
            "dev_accuracy": result.metrics.best_dev_accuracy,
            "test_accuracy": result.test_accuracy,
        })
        print(f"{result.label}: dev={result.metrics.best_dev_accuracy:.4f}")

    if args.mode == "grid":
        write_grid_csv(out_dir / "grid.csv", results)
        print(f"grid written to {out_dir / 'grid.csv'}")
    return EXIT_OK


def write_grid_csv(path, results: dict) -> None:
    """Square site-by-site matrix: the diagonal holds single-site accuracies
    and cell (row, col) holds joint accuracy minus the row's single one."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + list(SITES))
        for row_site in SITES:
            single = results[("chunk", (row_site,))]
            row: list[object] = [row_site]
            for col_site in SITES:
                if col_site == row_site:
                    row.append(f"{single:.4f}")
                else:
                    joint = results[("chunk", tuple(sorted((row_site, col_site))))]
                    row.append(f"{joint - single:+.4f}")
            writer.writerow(row)


def cmd_gradcheck(args) -> int:
    reports = run_standard_checks(seed=args.seed)
    failed = [r for r in reports if not r.ok]
    for report in reports:
        status = "ok" if report.ok else "FAIL"
        print(f"{report.label:24s} max_rel_err={report.max_relative_error:.3e} {status}")
        if args.verbose:
            for group in report.groups:
                print(f"    {group.name:28s} {group.max_relative_error:.3e}")
    print(f"{len(reports) - len(failed)}/{len(reports)} configurations passed")
    if args.out:
        out_dir = Path(args.out)
        append_ledger(out_dir, "gradcheck", {"seed": args.seed}, {
            "passed": len(reports) - len(failed),
            "total": len(reports),
            "worst": max(r.max_relative_error for r in reports),
        })
    return EXIT_OK if not failed else EXIT_CHECK


def cmd_transfer(args) -> int:
    encodings = FrozenEncodings.from_checkpoint(args.checkpoint)
    records = load_transfer_sidecar(args.sidecar)
    corpus = make_disjoint_entity_split(
        records, ratios=(8, 1, 1), seed=args.corpus_seed
    )
    before = encodings.checksum()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics: dict = {"provenance": encodings.provenance}
    seeds = list(range(args.runs))
    random_enc = FrozenEncodings.random(
        encodings.users, encodings.products,
        encodings.user_table.shape[1], encodings.product_table.shape[1],
        seed=args.seed,
    )
    if args.task in ("category", "both"):
        learned = category_classify_train(encodings, corpus, seeds=seeds)
        random_result = category_classify_train(random_enc, corpus, seeds=seeds)
        metrics["category"] = {
            "majority": majority_baseline(corpus),
            "random": [random_result.mean_accuracy, random_result.interval],
            "learned": [learned.mean_accuracy, learned.interval],
        }
        print(
            f"category: majority={metrics['category']['majority']:.4f} "
            f"random={random_result.mean_accuracy:.4f}±{random_result.interval:.4f} "
            f"learned={learned.mean_accuracy:.4f}±{learned.interval:.4f}"
        )
    if args.task in ("headline", "both"):
        learned_ppl = headline_perplexity(
            encodings, corpus, hidden=args.decoder_hidden, seed=args.seed
        )
        random_ppl = headline_perplexity(
            random_enc, corpus, hidden=args.decoder_hidden, seed=args.seed
        )
        metrics["headline"] = {"random": random_ppl, "learned": learned_ppl}
        print(f"headline: random={random_ppl:.3f} learned={learned_ppl:.3f}")
    if encodings.checksum() != before:
        print("error: frozen encodings were modified", file=sys.stderr)
        return EXIT_CHECK
    append_ledger(out_dir, "transfer", {
        "checkpoint": str(args.checkpoint), "task": args.task, "seed": args.seed,
    }, metrics)
    return EXIT_OK


def cmd_params(args) -> int:
    values = load_config(args.config) if args.config else {}
    template = model_template(values)
    table = count_parameters(template)
    print(json.dumps(table, indent=2))
    ratio = table["matrix_to_chunk_ratio"]
    print(f"matrix-to-chunk generator ratio: {ratio}")
    return EXIT_OK


def cmd_stats(args) -> int:
    corpus = _load_any_corpus(args)
    print(json.dumps(corpus_stats(corpus), indent=2))
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    if args.kind == "interaction":
        spec = InteractionSpec(mark_rate=args.mark_rate)
        corpus = generate_interaction_corpus(spec, seed=args.corpus_seed)
        save_corpus(corpus, out_dir)
    else:
        spec = TransferSpec()
        corpus, records = generate_transfer_data(spec, seed=args.corpus_seed)
        save_corpus(corpus, out_dir)
        write_transfer_sidecar(records, out_dir / "sidecar.tsv")
    print(f"wrote synthetic {args.kind} data to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrinject",
        description="Train and probe attribute-injected sentiment classifiers.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one configuration")
    p_train.add_argument("--config", help="key=value configuration file")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    _corpus_args(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="run representation-by-site grids")
    p_sweep.add_argument("--mode", default="grid", choices=("single", "joint", "grid"))
    p_sweep.add_argument("--config")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--epochs", type=int, default=2)
    _corpus_args(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--verbose", action="store_true")
    p_grad.add_argument("--out")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_transfer = sub.add_parser("transfer", help="frozen-encoding transfer tasks")
    p_transfer.add_argument("--checkpoint", required=True)
    p_transfer.add_argument("--sidecar", required=True)
    p_transfer.add_argument("--task", default="both",
                            choices=("category", "headline", "both"))
    p_transfer.add_argument("--out", required=True)
    p_transfer.add_argument("--seed", type=int, default=0)
    p_transfer.add_argument("--runs", type=int, default=10)
    p_transfer.add_argument("--corpus-seed", type=int, default=0)
    p_transfer.add_argument("--decoder-hidden", type=int, default=64)
    p_transfer.set_defaults(func=cmd_transfer)

    p_params = sub.add_parser("params", help="parameter count report")
    p_params.add_argument("--config")
    p_params.set_defaults(func=cmd_params)

    p_stats = sub.add_parser("stats", help="corpus statistics")
    _corpus_args(p_stats)
    p_stats.set_defaults(func=cmd_stats)

    p_synth = sub.add_parser("synth", help="write synthetic corpora to disk")
    p_synth.add_argument("--kind", default="interaction",
                         choices=("interaction", "transfer"))
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--corpus-seed", type=int, default=0)
    p_synth.add_argument("--mark-rate", type=float, default=0.3)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
