"""Training loop and the held-out evaluation protocol."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import ModelConfig
from .data import (
    MeanTable,
    RatingTable,
    RowMatrix,
    compute_means,
    iter_batches,
    normalize_rows,
    pivot,
    split,
)
from .errors import DivergenceError, EmptyEvaluationError, ShapeError
from .kernels import flush_subnormals
from .model import FlexModel, build_model, dense_refeed, forward, round_to_grid, train_step
from .nn import RngStream
from .optim import Optimizer

# child streams of RngStream(config.seed); one per consumer so they never interfere
STREAM_INIT = 0
STREAM_SPLIT = 1
STREAM_BATCHES = 2
STREAM_CORRUPTION = 3
STREAM_EVAL_MASK = 4

EVAL_CHUNK = 256

Log = Callable[[str], None]


@dataclass
class EvalReport:
    rmse: float
    evaluated_count: int
    history: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def line(self, omit_timing: bool = False) -> str:
        seconds = 0.0 if omit_timing else self.seconds
        return f"eval_rmse,{self.rmse!r},count,{self.evaluated_count},seconds,{seconds:.3f}"


@dataclass
class Split:
    """Everything derived from (config, table) before training starts."""

    train: RowMatrix
    means: MeanTable
    test_rows: np.ndarray
    test_cols: np.ndarray
    test_ratings: np.ndarray
    train_table: RatingTable
    test_table: RatingTable


def prepare(config: ModelConfig, table: RatingTable) -> Split:
    """Split, pivot and compute training means. Deterministic in ``config.seed``."""
    root = RngStream(config.seed)
    train_table, test_table = split(table, config.test_split_rate, root.child(STREAM_SPLIT))
    train = pivot(train_table, config.pivot_index)
    means = compute_means(train)
    test = pivot(test_table, config.pivot_index)
    rows, cols, ratings = test.triples()
    return Split(train, means, rows, cols, ratings, train_table, test_table)


def _row_sq_and_count(report) -> tuple[float, float]:
    return report.mmse * report.observed_count, report.observed_count


def fit(
    model: FlexModel,
    config: ModelConfig,
    train: RowMatrix,
    means: MeanTable | None,
    log: Log | None = None,
) -> list[float]:
    """Run ``config.epochs`` epochs over ``train`` and return per-epoch train RMSE.

    The train RMSE of an epoch pools the primary (not re-fed) batch losses.
    Raises DivergenceError as soon as a loss stops being finite.
    """
    if train.n_cols != model.n:
        raise ShapeError(f"matrix width {train.n_cols} does not match model input width {model.n}")
    root = RngStream(config.seed)
    corrupt = root.child(STREAM_CORRUPTION)
    opt = Optimizer(config.optimizer, config.lr, config.weight_decay)
    men = config.mean_normalization
    history: list[float] = []
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"), flush_subnormals():
        for epoch in range(1, config.epochs + 1):
            sq = count = 0.0
            batches = iter_batches(
                train, means, config.train_batch_size, men, root.child(STREAM_BATCHES, epoch), model.dtype
            )
            for batch in batches:
                if not batch.mask.any():
                    continue
                report, trace = train_step(model, batch, opt, corrupt)
                if not math.isfinite(report.mmse):
                    raise DivergenceError(epoch)
                s, c = _row_sq_and_count(report)
                sq += s
                count += c
                if config.dense_refeed:
                    extra = dense_refeed(
                        model, trace, batch, config.dense_refeed, config.dense_refeed_rounding, opt, corrupt
                    )
                    if not math.isfinite(extra.mmse):
                        raise DivergenceError(epoch, "re-fed loss became non-finite")
            rmse = math.sqrt(sq / count) if count else float("nan")
            history.append(rmse)
            if log is not None:
                log(f"epoch,{epoch},train_rmse,{rmse!r}")
    return history


def _eval_targets(split_: Split, tmr: float, seed: int) -> np.ndarray:
    """Boolean flag per test triple: True = hidden evaluation target."""
    rng = RngStream(seed).child(STREAM_EVAL_MASK)
    return rng.random(split_.test_ratings.shape[0]) < tmr


def predict_dense(
    model: FlexModel,
    config: ModelConfig,
    inputs: np.ndarray,
    observed: np.ndarray,
    row_means: np.ndarray | None,
) -> np.ndarray:
    """Eval-mode predictions in rating space for dense input rows."""
    x = inputs.astype(model.dtype)
    if config.mean_normalization:
        x = normalize_rows(x, observed, row_means)
    with np.errstate(over="ignore", invalid="ignore"):
        q = forward(model, x, "eval").q.astype(np.float64)
    if config.mean_normalization:
        q = q + row_means[:, None]
    if config.prediction_rounding:
        q = round_to_grid(q)
    return q


def evaluate(
    model: FlexModel,
    config: ModelConfig,
    split_: Split,
    started: float | None = None,
    history: list[float] | None = None,
) -> EvalReport:
    """RMSE on held-out ratings.

    A ``test_mask_rate`` fraction of each row's test ratings are hidden and
    predicted; the rest are added to the row's training ratings as input.
    """
    started = time.perf_counter() if started is None else started
    train, means = split_.train, split_.means
    target = _eval_targets(split_, config.test_mask_rate, config.seed)
    t_rows = split_.test_rows[target]
    t_cols = split_.test_cols[target]
    t_vals = split_.test_ratings[target]
    if t_rows.shape[0] == 0:
        raise EmptyEvaluationError("no evaluation targets (test split or mask rate too small)")
    k_rows = split_.test_rows[~target]
    k_cols = split_.test_cols[~target]
    k_vals = split_.test_ratings[~target]

    eval_rows = np.unique(t_rows)
    sq = 0.0
    for start in range(0, eval_rows.shape[0], EVAL_CHUNK):
        rows = eval_rows[start : start + EVAL_CHUNK]
        pos = np.full(train.n_rows, -1, dtype=np.int64)
        pos[rows] = np.arange(rows.shape[0])
        local, cols, vals = train.gather(rows)
        x = np.zeros((rows.shape[0], train.n_cols))
        x[local, cols] = vals
        keep = pos[k_rows] >= 0
        x[pos[k_rows[keep]], k_cols[keep]] = k_vals[keep]
        observed = x != 0
        q = predict_dense(model, config, x, observed, means.row_means[rows])
        sel = pos[t_rows] >= 0
        err = q[pos[t_rows[sel]], t_cols[sel]] - t_vals[sel]
        sq += float(np.dot(err, err))
    count = int(t_rows.shape[0])
    rmse = math.sqrt(sq / count)
    return EvalReport(rmse, count, list(history or []), time.perf_counter() - started)


def train(
    config: ModelConfig, table: RatingTable, log: Log | None = None, dtype=np.float32
) -> tuple[FlexModel, EvalReport]:
    """Split, train for ``config.epochs`` epochs, then evaluate on the held-out split."""
    started = time.perf_counter()
    split_ = prepare(config, table)
    if not _eval_targets(split_, config.test_mask_rate, config.seed).any():
        # fail before spending the training budget
        raise EmptyEvaluationError("no evaluation targets (test split or mask rate too small)")
    model = build_model(config, split_.train.n_cols, RngStream(config.seed).child(STREAM_INIT), dtype)
    history = fit(model, config, split_.train, split_.means, log)
    report = evaluate(model, config, split_, started, history)
    return model, report


def top_n(pred: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` largest values; equal values keep ascending index order."""
    order = np.lexsort((np.arange(pred.shape[0]), -pred))
    return order[:n]


def predict_row(
    model: FlexModel,
    config: ModelConfig,
    cols: np.ndarray,
    values: np.ndarray,
    row_mean: float | None = None,
    top: int | None = None,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Dense predictions for one row given its known ratings.

    With ``top`` the indices of the best ``top`` columns are returned too.
    """
    cols = np.asarray(cols, dtype=np.int64)
    x = np.zeros((1, model.n))
    if cols.size and cols.max() >= model.n:
        raise ShapeError(f"column {cols.max()} outside row width {model.n}")
    x[0, cols] = values
    observed = np.zeros(x.shape, dtype=bool)
    observed[0, cols] = True
    means = None
    if config.mean_normalization:
        if row_mean is None:
            raise ValueError("row_mean is required with mean normalization")
        means = np.array([row_mean], dtype=np.float64)
    pred = predict_dense(model, config, x, observed, means)[0]
    if top is None:
        return pred
    return pred, top_n(pred, top)
