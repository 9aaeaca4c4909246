"""Random configuration search, the results file, and its summaries."""

from __future__ import annotations

import csv
import io
import math
import multiprocessing
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .config import CONFIG_KEYS, ModelConfig, _parse_bool, _parse_pivot, format_value, parse_value
from .data import RatingTable
from .errors import (
    ConfigError,
    DivergenceError,
    EmptyEvaluationError,
    EmptyResultsError,
    InsufficientDataError,
    ParseError,
)
from .nn import Activation, RngStream
from .optim import OptimizerKind

# stream key for config sampling; training uses keys 0-4 of the same seed
STREAM_SAMPLE = 5

PROBS = tuple(round(0.1 * i, 1) for i in range(10))
HIDDEN_SIZES = tuple(2**e for e in range(1, 13))


@dataclass(frozen=True)
class SearchSpace:
    lr: tuple = (1e-4, 1e-3, 5e-3, 1e-2, 1e-1)
    weight_decay: tuple = (0.0, 1e-3, 5e-3, 1e-2, 1e-1)
    drop_prob: tuple = PROBS
    noise_prob: tuple = PROBS
    test_mask_rate: tuple = PROBS
    test_split_rate: tuple = (0.1, 0.2, 0.3, 0.4)
    train_batch_size: tuple = (32, 64, 128, 256, 512)
    epochs: tuple = (10, 20, 40)
    dense_refeed: tuple = (0, 1, 2, 3)
    dense_refeed_rounding: tuple = (True, False)
    decoder_constraint: tuple = (True, False)
    mean_normalization: tuple = (True, False)
    prediction_rounding: tuple = (True, False)
    pivot: tuple = ("user", "item")
    optimizer: tuple = tuple(OptimizerKind)
    activation: tuple = tuple(Activation)
    hidden_layer_count: tuple = (1, 2, 3, 4, 5)
    hidden_layer_sizes: tuple = HIDDEN_SIZES

    def __post_init__(self):
        for name, pool in self.pools().items():
            if not pool:
                raise ConfigError(f"{name}: pool is empty")
        if any(c < 1 or c > 5 for c in self.hidden_layer_count):
            raise ConfigError("hidden_layer_count: counts must lie in 1..5")
        for s in self.hidden_layer_sizes:
            if s < 2 or s > 4096 or s & (s - 1):
                raise ConfigError(f"hidden_layer_sizes: {s} is not a power of two in 2..4096")

    def pools(self) -> dict[str, tuple]:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


# order of draws in sample_config; changing it changes every sampled trial
_SCALAR_FIELDS = (
    "lr", "weight_decay", "drop_prob", "noise_prob", "train_batch_size", "epochs",
    "optimizer", "activation", "dense_refeed", "dense_refeed_rounding",
    "decoder_constraint", "mean_normalization", "prediction_rounding", "pivot",
    "test_mask_rate", "test_split_rate",
)


def _space_parser(key: str) -> Callable[[str], object]:
    if key in ("hidden_layer_count", "hidden_layer_sizes"):
        return lambda t: int(t)
    if key == "pivot":
        return _parse_pivot
    if key in ("dense_refeed_rounding", "decoder_constraint", "mean_normalization", "prediction_rounding"):
        return _parse_bool
    return lambda t: parse_value(key, t)


def _split_top(text: str) -> list[str]:
    """Split on commas that are not inside brackets, so ``[[0,1],[1,0]]`` works."""
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts


def parse_space_text(text: str, source: str = "<space>") -> SearchSpace:
    """Read ``key=[v1,v2,...]`` lines. Omitted keys keep the default pool."""
    pools: dict[str, tuple] = {}
    known = SearchSpace.__dataclass_fields__
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if not sep or key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown or malformed entry {raw.strip()!r}")
        if not (value.startswith("[") and value.endswith("]")):
            raise ConfigError(f"{source}:{lineno}: {key}: expected a bracketed list")
        parse = _space_parser(key)
        try:
            items = tuple(parse(v.strip()) for v in _split_top(value[1:-1]) if v.strip())
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
        pools[key] = items
    try:
        return SearchSpace(**pools)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_space(path: str | Path) -> SearchSpace:
    path = Path(path)
    return parse_space_text(path.read_text(), source=str(path))


def sample_config(space: SearchSpace, rng: RngStream, seed: int = 0) -> ModelConfig:
    values = {name: rng.choice(getattr(space, name)) for name in _SCALAR_FIELDS}
    count = int(rng.choice(space.hidden_layer_count))
    values["hidden_layers"] = tuple(int(rng.choice(space.hidden_layer_sizes)) for _ in range(count))
    for name in ("lr", "weight_decay", "drop_prob", "noise_prob", "test_mask_rate", "test_split_rate"):
        values[name] = float(values[name])
    for name in ("train_batch_size", "epochs", "dense_refeed"):
        values[name] = int(values[name])
    return ModelConfig(**values, seed=seed)


@dataclass
class TrialResult:
    trial_id: int
    seed: int
    config: ModelConfig
    status: str  # ok | diverged | failed
    rmse: float | None = None
    train_seconds: float = 0.0
    note: str = field(default="", compare=False)

    def __post_init__(self):
        if (self.status == "ok") != (self.rmse is not None):
            raise ValueError("rmse must be present exactly when status is ok")


RESULT_FIELDS = [k for k in CONFIG_KEYS if k != "seed"]
RESULT_HEADER = ["trial_id", "seed", "status", "rmse", "train_seconds", *RESULT_FIELDS]


def _cell(key: str, config: ModelConfig) -> str:
    value = getattr(config, key)
    if key == "hidden_layers":
        return "|".join(str(h) for h in value)
    return format_value(value)


def format_result(result: TrialResult, omit_timing: bool = False) -> str:
    seconds = 0.0 if omit_timing else result.train_seconds
    cells = [
        str(result.trial_id),
        str(result.seed),
        result.status,
        "" if result.rmse is None else repr(result.rmse),
        f"{seconds:.3f}",
    ]
    cells += [_cell(k, result.config) for k in RESULT_FIELDS]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(cells)
    return buf.getvalue()


def _parse_row(row: dict[str, str], lineno: int) -> TrialResult:
    try:
        values = {}
        for key in RESULT_FIELDS:
            text = row[key]
            if key == "hidden_layers":
                text = "[" + text.replace("|", ",") + "]"
            values[key] = parse_value(key, text)
        seed = int(row["seed"])
        config = ModelConfig(**values, seed=seed)
        rmse = float(row["rmse"]) if row["rmse"] else None
        return TrialResult(int(row["trial_id"]), seed, config, row["status"], rmse, float(row["train_seconds"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad results row ({exc})", lineno) from None


def read_results(path: str | Path) -> list[TrialResult]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_HEADER:
            raise ParseError(f"{path}: unexpected results header", 1)
        return [_parse_row(row, lineno) for lineno, row in enumerate(reader, start=2)]


def write_results(path: str | Path, results: Iterable[TrialResult], omit_timing: bool = False) -> None:
    rows = sorted(results, key=lambda r: r.trial_id)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(",".join(RESULT_HEADER) + "\n")
        for r in rows:
            fh.write(format_result(r, omit_timing))
    os.replace(tmp, path)


def run_trial(
    space: SearchSpace, trial_id: int, base_seed: int, table: RatingTable, dtype=np.float32
) -> TrialResult:
    from .trainer import train  # local: trainer pulls in the whole model stack

    seed = base_seed + trial_id
    config = sample_config(space, RngStream(seed).child(STREAM_SAMPLE), seed)
    started = time.perf_counter()
    try:
        _, report = train(config, table, dtype=dtype)
    except DivergenceError as exc:
        return TrialResult(trial_id, seed, config, "diverged", None, time.perf_counter() - started, str(exc))
    except EmptyEvaluationError as exc:
        return TrialResult(trial_id, seed, config, "failed", None, time.perf_counter() - started, str(exc))
    status = "ok" if math.isfinite(report.rmse) else "diverged"
    rmse = report.rmse if status == "ok" else None
    return TrialResult(trial_id, seed, config, status, rmse, report.seconds)


_WORKER: dict = {}


def _worker_init(space, base_seed, table):
    from threadpoolctl import threadpool_limits

    # one BLAS thread per worker so T workers use T cores
    _WORKER["limits"] = threadpool_limits(1)
    _WORKER.update(space=space, base_seed=base_seed, table=table)


def _worker_run(trial_id: int) -> TrialResult:
    return run_trial(_WORKER["space"], trial_id, _WORKER["base_seed"], _WORKER["table"])


def run_trials(
    space: SearchSpace,
    n_trials: int,
    base_seed: int,
    table: RatingTable,
    results_path: str | Path,
    workers: int = 1,
    omit_timing: bool = False,
    log: Callable[[str], None] | None = None,
) -> list[TrialResult]:
    """Run trials ``0..n_trials-1``; trial ``i`` uses seed ``base_seed + i``.

    Each finished trial is appended to ``results_path`` right away. Trial ids
    already present in the file are skipped, so an interrupted campaign can be
    resumed by rerunning the same command. On completion the file is
    rewritten sorted by trial id, which makes its bytes independent of the
    worker count.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    results_path = Path(results_path)
    done: dict[int, TrialResult] = {}
    if results_path.exists() and results_path.stat().st_size > 0:
        done = {r.trial_id: r for r in read_results(results_path)}
    else:
        results_path.parent.mkdir(parents=True, exist_ok=True)
        results_path.write_text(",".join(RESULT_HEADER) + "\n")
    pending = [i for i in range(n_trials) if i not in done]

    def record(result: TrialResult) -> None:
        with open(results_path, "a", newline="") as fh:
            fh.write(format_result(result, omit_timing))
            fh.flush()
            os.fsync(fh.fileno())
        done[result.trial_id] = result
        if log is not None:
            shown = "" if result.rmse is None else f"{result.rmse:.4f}"
            log(f"trial,{result.trial_id},{result.status},{shown}")

    if workers == 1 or len(pending) <= 1:
        for i in pending:
            record(run_trial(space, i, base_seed, table))
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_worker_init, initargs=(space, base_seed, table)) as pool:
            for result in pool.imap(_worker_run, pending):
                record(result)
    write_results(results_path, done.values(), omit_timing)
    return [done[i] for i in sorted(done)]


CORR_COLUMNS = {
    "LR": "lr",
    "WeD": "weight_decay",
    "DrP": "drop_prob",
    "NoP": "noise_prob",
    "TBS": "train_batch_size",
    "TMR": "test_mask_rate",
    "Ep": "epochs",
    "DeF": "dense_refeed",
    "DeFR": "dense_refeed_rounding",
    "DeC": "decoder_constraint",
    "MeN": "mean_normalization",
    "PrR": "prediction_rounding",
    "TSR": "test_split_rate",
    "RMSE": None,
}


def _ok(results: Iterable[TrialResult]) -> list[TrialResult]:
    return [r for r in results if r.status == "ok"]


def pearson_matrix(data: np.ndarray) -> np.ndarray:
    """Pearson correlation between the columns of ``data``.

    A constant column correlates 0 with everything else; the diagonal is 1.
    """
    x = np.asarray(data, dtype=np.float64)
    xc = x - x.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", xc, xc))
    scale = np.where(norms > 0, norms, 1.0)
    z = xc / scale
    corr = z.T @ z
    corr[:, norms == 0] = 0.0
    corr[norms == 0, :] = 0.0
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def correlation_matrix(results: Iterable[TrialResult]) -> tuple[list[str], np.ndarray]:
    """Labels and the Pearson matrix over ok trials. Booleans enter as 0/1."""
    ok = _ok(results)
    if len(ok) < 3:
        raise InsufficientDataError(f"need at least 3 ok trials for correlations, got {len(ok)}")
    labels = list(CORR_COLUMNS)
    rows = []
    for r in ok:
        rows.append([
            float(r.rmse) if key is None else float(getattr(r.config, key))
            for key in CORR_COLUMNS.values()
        ])
    return labels, pearson_matrix(np.array(rows))


def format_correlation(labels: list[str], corr: np.ndarray) -> str:
    lines = ["," + ",".join(labels)]
    for label, row in zip(labels, corr):
        lines.append(label + "," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


TOP_COLUMNS = ["HLs", "WeD", "DrP", "NoP", "Opt", "Act", "DeC", "MeN", "PrR", "PI", "RMSE", "LR", "seed"]


def top_k(results: Iterable[TrialResult], k: int) -> list[TrialResult]:
    """The ``k`` lowest-RMSE ok trials, ascending; ties go to the lower trial id."""
    ok = _ok(results)
    if not ok:
        raise EmptyResultsError("no ok trials to rank")
    if k < 0:
        raise ValueError("k must be >= 0")
    return sorted(ok, key=lambda r: (r.rmse, r.trial_id))[:k]


def top_row(r: TrialResult) -> list[str]:
    c = r.config
    return [
        "[" + ",".join(str(h) for h in c.hidden_layers) + "]",
        format_value(c.weight_decay),
        format_value(c.drop_prob),
        format_value(c.noise_prob),
        c.optimizer.value,
        c.activation.value,
        format_value(c.decoder_constraint),
        format_value(c.mean_normalization),
        format_value(c.prediction_rounding),
        c.pivot,
        repr(r.rmse),
        format_value(c.lr),
        str(r.seed),
    ]


def format_top(rows: list[TrialResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TOP_COLUMNS)
    for r in rows:
        writer.writerow(top_row(r))
    return buf.getvalue()
