"""Command-line entry point: ``flexencoder <command> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, parse_config
from .data import FORMATS, RatingTable, ingest, load_preprocessed, subsample, write_preprocessed
from .errors import ConfigError, FlexEncoderError
from .search import (
    SearchSpace,
    correlation_matrix,
    format_correlation,
    format_top,
    parse_space,
    read_results,
    run_trials,
    top_k,
)
from .trainer import evaluate, predict_row, prepare, train

ARCH_FIELDS = ("hidden_layers", "activation", "decoder_constraint", "pivot", "mean_normalization")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # keep usage errors to one line like every other diagnostic
        self.exit(2, f"{self.prog}: error: {message}\n")


def _out(line: str) -> None:
    print(line, flush=True)


def _load_table(data_dir: str, fraction: float | None, seed: int) -> RatingTable:
    table = load_preprocessed(data_dir)
    if fraction is not None and fraction < 1.0:
        table = subsample(table, fraction, seed)
    return table


def cmd_preprocess(args) -> int:
    table = ingest(args.input, args.format)
    out = write_preprocessed(table, args.out)
    _out(f"ratings,{len(table)},users,{table.n_users},items,{table.n_items},out,{out}")
    return 0


def cmd_train(args) -> int:
    config = parse_config(args.config)
    table = _load_table(args.data, args.subsample, args.subsample_seed)
    model, report = train(config, table, log=_out if args.verbose else None)
    _out(report.line(omit_timing=args.omit_timing))
    meta = {"data": str(Path(args.data).resolve())}
    if args.subsample is not None:
        meta["subsample"] = repr(args.subsample)
        meta["subsample_seed"] = str(args.subsample_seed)
    save_checkpoint(args.out, model, config, meta)
    return 0


def _check_arch(saved: ModelConfig, given: ModelConfig) -> None:
    for name in ARCH_FIELDS:
        if getattr(saved, name) != getattr(given, name):
            raise ConfigError(
                f"{name}: config says {getattr(given, name)!r} but the checkpoint was trained with "
                f"{getattr(saved, name)!r}"
            )


def _checkpoint_table(meta: dict[str, str], data: str | None) -> RatingTable:
    data_dir = data or meta.get("data")
    if not data_dir:
        raise ConfigError("data: checkpoint records no data directory, pass --data")
    fraction = float(meta["subsample"]) if "subsample" in meta else None
    return _load_table(data_dir, fraction, int(meta.get("subsample_seed", 0)))


def cmd_eval(args) -> int:
    model, saved, meta = load_checkpoint(args.ckpt)
    config = parse_config(args.config) if args.config else saved
    _check_arch(saved, config)
    table = _checkpoint_table(meta, args.data)
    split_ = prepare(config, table)
    if split_.train.n_cols != model.n:
        raise ConfigError(f"data has {split_.train.n_cols} columns, checkpoint expects {model.n}")
    report = evaluate(model, config, split_)
    _out(report.line(omit_timing=args.omit_timing))
    return 0


def cmd_predict(args) -> int:
    model, config, meta = load_checkpoint(args.ckpt)
    table = _checkpoint_table(meta, args.data)
    split_ = prepare(config, table)
    if config.item_based:
        row_ids, col_ids, rows, cols = table.item_ids, table.user_ids, table.items, table.users
        row = table.item_index(_raw(args.row, row_ids))
    else:
        row_ids, col_ids, rows, cols = table.user_ids, table.item_ids, table.users, table.items
        row = table.user_index(_raw(args.row, row_ids))
    if args.top < 1:
        raise ValueError("--top must be >= 1")
    # every known rating of the row is input; the mean is the one the model trained with
    sel = rows == row
    pred, best = predict_row(
        model, config, cols[sel], table.ratings[sel], split_.means.row_means[row], top=args.top
    )
    for c in best:
        _out(f"{col_ids[c]},{pred[c]:.6f}")
    return 0


def _raw(text: str, ids: np.ndarray):
    return int(text) if np.issubdtype(ids.dtype, np.integer) else text


def cmd_search(args) -> int:
    space = parse_space(args.space) if args.space else SearchSpace()
    table = _load_table(args.data, args.subsample, args.subsample_seed)
    results = run_trials(
        space,
        args.trials,
        args.seed,
        table,
        args.out,
        workers=args.workers,
        omit_timing=args.omit_timing,
        log=_out if args.verbose else None,
    )
    ok = sum(r.status == "ok" for r in results)
    _out(f"trials,{len(results)},ok,{ok},out,{args.out}")
    return 0


def cmd_report(args) -> int:
    results = read_results(args.results)
    if args.corr:
        labels, corr = correlation_matrix(results)
        Path(args.corr).write_text(format_correlation(labels, corr))
    text = format_top(top_k(results, args.top))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flexencoder", description="Autoencoder rating prediction and parameter search.")
    p.add_argument("--version", action="version", version=f"flexencoder {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="remap raw ratings to dense ids")
    s.add_argument("input")
    s.add_argument("--format", choices=FORMATS, default="tab4")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    def data_opts(s):
        s.add_argument("--subsample", type=float, default=None, help="keep this fraction of ratings")
        s.add_argument("--subsample-seed", type=int, default=0)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--omit-timing", action="store_true", help="report 0 seconds for reproducible output")
    s.add_argument("--quiet", dest="verbose", action="store_false", help="print only the eval line")
    data_opts(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on the held-out protocol")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--data", default=None)
    s.add_argument("--omit-timing", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="top-N predictions for one row")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--row", required=True, help="raw user id (item id when item-based)")
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--data", default=None)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("search", help="random configuration search")
    s.add_argument("--space", default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--omit-timing", action="store_true")
    s.add_argument("--quiet", dest="verbose", action="store_false")
    data_opts(s)
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("report", help="correlation matrix and top-k table from results")
    s.add_argument("--results", required=True)
    s.add_argument("--corr", default=None)
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FlexEncoderError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"flexencoder {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
