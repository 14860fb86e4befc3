"""Command-line interface: train, evaluate, ablate and report.

Exit codes: 0 success, 2 configuration/data errors, 3 numeric or integrity
failures at run time.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig, load_config, parse_variant, save_config
from .errors import ConfigError, ContractError, IntegrityError, NumericError, ParseError
from .metrics import EvalResult, evaluate_model, write_metrics_csv
from .pipeline import Prepared, build_model, prepare
from .training import apply_checkpoint, save_checkpoint, train

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SEED_ENV = "D2NN_SEED"


def _resolve_seed(args_seed: Optional[int], cfg: RunConfig) -> int:
    """Priority: --seed flag, then the D2NN_SEED environment variable, then
    the config value."""
    if args_seed is not None:
        return args_seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}")
    return cfg.seed


def _split_events(prepared: Prepared, name: str):
    events = {
        "train": prepared.split.train,
        "validation": prepared.split.validation,
        "test": prepared.split.test,
    }[name]
    if not events:
        raise ConfigError(f"the {name} split is empty for this dataset")
    return events


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args.seed, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare(cfg, seed)
    model = build_model(cfg, prepared, seed)
    result = train(model, prepared.news_idx, prepared.split, cfg.optimizer, seed)
    save_checkpoint(str(out / "model.ckpt"), model.named_parameters())
    cfg.seed = seed
    save_config(cfg, str(out / "config.json"))
    with open(out / "training_stats.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_auc"])
        for st in result.history:
            writer.writerow(
                [st.epoch, f"{st.train_loss:.6f}", "" if st.val_auc is None else f"{st.val_auc:.6f}"]
            )
    print(
        f"trained {cfg.variant} for {len(result.history)} epochs "
        f"(best epoch {result.best_epoch}); checkpoint at {out / 'model.ckpt'}"
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args.seed, cfg)
    ks = tuple(args.k) if args.k else cfg.metric_ks
    prepared = prepare(cfg, seed)
    model = build_model(cfg, prepared, seed)
    apply_checkpoint(model, args.checkpoint)
    events = _split_events(prepared, args.split)
    result = evaluate_model(model, prepared.news_idx, events, ks=ks, seed=seed)
    if args.out:
        write_metrics_csv(result, args.out, ks=ks)
    _print_result(cfg.variant, result)
    return EXIT_OK


def _print_result(label: str, result: EvalResult) -> None:
    auc_s = "n/a" if result.auc is None else f"{result.auc:.3f}"
    print(
        f"{label}: auc {auc_s}, ndcg {result.mean_ndcg:.3f}, "
        f"div {result.mean_div:.3f}, tradeoff {result.tradeoff:.3f}"
    )


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args.seed, cfg)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise ConfigError("--variants needs at least one variant label")
    for v in variants:
        parse_variant(v)
    prepared = prepare(cfg, seed)
    events = _split_events(prepared, "test")
    rows = []
    for v in variants:
        model = build_model(cfg, prepared, seed, variant=v)
        train(model, prepared.news_idx, prepared.split, cfg.optimizer, seed)
        result = evaluate_model(model, prepared.news_idx, events, ks=cfg.metric_ks, seed=seed)
        _print_result(v, result)
        rows.append(
            [
                v,
                "" if result.auc is None else f"{result.auc:.6f}",
                f"{result.mean_ndcg:.6f}",
                f"{result.mean_div:.6f}",
                f"{result.tradeoff:.6f}",
            ]
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "auc", "mean_ndcg", "mean_div", "tradeoff"])
            writer.writerows(rows)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    tables = []
    for path in args.inputs:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
        if not rows:
            raise ParseError(f"{path}: empty CSV")
        tables.append((Path(path).stem, rows[0], rows[1:]))
    header = tables[0][1]
    for name, hdr, _ in tables[1:]:
        if hdr != header:
            raise ParseError(f"report inputs disagree on columns ({name} has {hdr})")
    lines = _render_report(tables, header, args.format)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _render_report(tables, header, fmt: str) -> list[str]:
    out_header = ["source"] + header
    body = [[name] + row for name, _, rows in tables for row in rows]
    if fmt == "csv":
        return [",".join(out_header)] + [",".join(str(c) for c in row) for row in body]
    widths = [
        max(len(str(x)) for x in [out_header[i]] + [r[i] for r in body])
        for i in range(len(out_header))
    ]

    def fmt_row(cells):
        return "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"

    return [fmt_row(out_header), fmt_row(["-" * w for w in widths])] + [
        fmt_row(r) for r in body
    ]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="d2nn", description="Diversity-aware news recommendation"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--k", type=int, nargs="*", help="ranking cutoffs (default from config)")
    p.add_argument("--out", help="write a metric,k,value CSV here")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare several variants")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", required=True, help="comma-separated variant labels")
    p.add_argument("--out", help="combined results CSV")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="merge result CSVs into one table")
    p.add_argument("inputs", nargs="+", help="CSV files produced by evaluate/ablate")
    p.add_argument("--format", choices=("csv", "md"), default="md")
    p.add_argument("--out", help="write here instead of stdout")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, IntegrityError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
