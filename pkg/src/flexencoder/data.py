"""Rating ingestion, ID remapping, splitting, pivoting and batch construction."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, EmptyDatasetError, ParseError
from .model import RowBatch
from .nn import RngStream

GRID = np.arange(2, 11) / 2.0  # 1.0, 1.5, ..., 5.0

FORMATS = ("tab4", "csv-header", "dat")
SEPARATORS = {"tab4": "\t", "csv-header": ",", "dat": "::"}
CSV_HEADER = ["userId", "movieId", "rating", "timestamp"]

RATINGS_FILE = "ratings.csv"
USERS_FILE = "users.csv"
ITEMS_FILE = "items.csv"


def on_grid(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    twice = r * 2
    return (twice == np.round(twice)) & (r >= GRID[0]) & (r <= GRID[-1])


@dataclass(frozen=True)
class RatingTable:
    """Rating triples over dense user/item ids.

    ``user_ids[u]`` is the raw id of dense user ``u`` (likewise for items);
    raw ids are sorted ascending, so the remap does not depend on file order.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray
    timestamps: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ratings.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_ids.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_ids.shape[0]

    def select(self, keep: np.ndarray) -> "RatingTable":
        """Subset of triples; the id space is unchanged."""
        ts = None if self.timestamps is None else self.timestamps[keep]
        return RatingTable(
            self.users[keep], self.items[keep], self.ratings[keep], self.user_ids, self.item_ids, ts
        )

    def user_index(self, raw_id) -> int:
        return _lookup(self.user_ids, raw_id, "user")

    def item_index(self, raw_id) -> int:
        return _lookup(self.item_ids, raw_id, "item")


def _lookup(ids: np.ndarray, raw_id, axis: str) -> int:
    pos = int(np.searchsorted(ids, raw_id))
    if pos >= ids.shape[0] or ids[pos] != raw_id:
        raise KeyError(f"unknown {axis} id {raw_id}")
    return pos


def from_triples(
    raw_users, raw_items, ratings, timestamps=None, *, dedupe: bool = True
) -> RatingTable:
    """Build a table from raw-id triples: drop repeated (user, item) pairs
    keeping the last occurrence, then remap ids in ascending raw order."""
    raw_users = np.asarray(raw_users, dtype=np.int64)
    raw_items = np.asarray(raw_items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)
    if timestamps is not None:
        timestamps = np.asarray(timestamps, dtype=np.int64)
    if ratings.shape[0] == 0:
        raise EmptyDatasetError("no ratings")
    if dedupe:
        # unique on the reversed arrays keeps the last occurrence of each pair
        pairs = np.stack([raw_users[::-1], raw_items[::-1]], axis=1)
        _, first_rev = np.unique(pairs, axis=0, return_index=True)
        keep = np.sort(ratings.shape[0] - 1 - first_rev)
        raw_users, raw_items, ratings = raw_users[keep], raw_items[keep], ratings[keep]
        if timestamps is not None:
            timestamps = timestamps[keep]
    user_ids, users = np.unique(raw_users, return_inverse=True)
    item_ids, items = np.unique(raw_items, return_inverse=True)
    return RatingTable(
        users.astype(np.int64), items.astype(np.int64), ratings, user_ids, item_ids, timestamps
    )


def _parse_number(text: str, lineno: int, what: str, integer: bool):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{what} is not a number: {text!r}", lineno) from None
    if integer:
        if not value.is_integer():
            raise ParseError(f"{what} must be an integer: {text!r}", lineno)
        return int(value)
    return value


def ingest(path: str | Path, format: str = "tab4") -> RatingTable:
    """Read a rating file.

    ``tab4``: ``user<TAB>item<TAB>rating<TAB>timestamp`` per line.
    ``csv-header``: comma separated with a ``userId,movieId,rating,timestamp`` header.
    ``dat``: ``user::item::rating::timestamp`` per line (the MovieLens 1M layout).
    Ratings must lie on the half-step grid 1.0 .. 5.0.
    """
    if format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {format!r}")
    users, items, ratings, stamps = [], [], [], []
    sep = SEPARATORS[format]
    with open(path, newline="") as fh:
        lineno = 0
        if format == "csv-header":
            header = fh.readline()
            lineno = 1
            fields = [h.strip() for h in header.strip().split(",")]
            if fields[:3] != CSV_HEADER[:3]:
                raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {header.strip()!r}", 1)
        for raw in fh:
            lineno += 1
            line = raw.strip()
            if not line:
                continue
            parts = line.split(sep)
            if format != "csv-header" and len(parts) != 4:
                raise ParseError(f"expected 4 {sep!r}-separated fields, got {len(parts)}", lineno)
            if format == "csv-header" and len(parts) not in (3, 4):
                raise ParseError(f"expected 3 or 4 comma-separated fields, got {len(parts)}", lineno)
            u = _parse_number(parts[0], lineno, "user id", True)
            i = _parse_number(parts[1], lineno, "item id", True)
            r = _parse_number(parts[2], lineno, "rating", False)
            if not on_grid(r):
                raise ParseError(f"rating {parts[2]} is outside the grid 1.0, 1.5, ..., 5.0", lineno)
            ts = _parse_number(parts[3], lineno, "timestamp", True) if len(parts) > 3 else 0
            users.append(u)
            items.append(i)
            ratings.append(r)
            stamps.append(ts)
    if not ratings:
        raise EmptyDatasetError(f"{path}: no ratings found")
    return from_triples(users, items, ratings, stamps)


def write_preprocessed(table: RatingTable, out_dir: str | Path) -> Path:
    """Write remapped triples plus the raw->dense id maps for both axes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / RATINGS_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "col_id", "rating"])
        for u, i, r in zip(table.users.tolist(), table.items.tolist(), table.ratings.tolist()):
            w.writerow([u, i, _fmt_rating(r)])
    for name, ids in ((USERS_FILE, table.user_ids), (ITEMS_FILE, table.item_ids)):
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["raw_id", "dense_id"])
            for dense, raw in enumerate(ids.tolist()):
                w.writerow([raw, dense])
    return out


def _fmt_rating(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


def _read_map(path: Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    raw, dense = data[:, 0], data[:, 1]
    if not np.array_equal(np.sort(dense), np.arange(dense.shape[0])):
        raise ParseError(f"{path}: dense ids are not contiguous from 0")
    ids = np.empty_like(raw)
    ids[dense] = raw
    if np.any(np.diff(ids) <= 0):
        raise ParseError(f"{path}: raw ids must increase with dense id")
    return ids


def load_preprocessed(data_dir: str | Path) -> RatingTable:
    d = Path(data_dir)
    if not (d / RATINGS_FILE).exists():
        raise FileNotFoundError(f"{d / RATINGS_FILE} not found (run the preprocess command first)")
    data = np.loadtxt(d / RATINGS_FILE, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] == 0:
        raise EmptyDatasetError(f"{d / RATINGS_FILE}: no ratings")
    user_ids = _read_map(d / USERS_FILE)
    item_ids = _read_map(d / ITEMS_FILE)
    users = data[:, 0].astype(np.int64)
    items = data[:, 1].astype(np.int64)
    ratings = data[:, 2]
    if users.max() >= user_ids.shape[0] or items.max() >= item_ids.shape[0]:
        raise ParseError(f"{d / RATINGS_FILE}: ids exceed the sidecar maps")
    if not np.all(on_grid(ratings)):
        raise ParseError(f"{d / RATINGS_FILE}: ratings outside the grid")
    return RatingTable(users, items, ratings, user_ids, item_ids)


def split(table: RatingTable, tsr: float, seed: int | RngStream) -> tuple[RatingTable, RatingTable]:
    """Send each triple to the test side independently with probability ``tsr``."""
    if not 0.0 <= tsr < 1.0:
        raise ConfigError(f"test split rate must lie in [0, 1), got {tsr}")
    rng = seed if isinstance(seed, RngStream) else RngStream(seed)
    test = rng.random(len(table)) < tsr
    return table.select(~test), table.select(test)


def subsample(table: RatingTable, fraction: float, seed: int | RngStream) -> RatingTable:
    """Keep each triple with probability ``fraction`` and re-densify the ids."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"subsample fraction must lie in (0, 1], got {fraction}")
    rng = seed if isinstance(seed, RngStream) else RngStream(seed)
    keep = rng.random(len(table)) < fraction
    if not keep.any():
        raise EmptyDatasetError("subsample kept no ratings")
    ts = None if table.timestamps is None else table.timestamps[keep]
    return from_triples(
        table.user_ids[table.users[keep]],
        table.item_ids[table.items[keep]],
        table.ratings[keep],
        ts,
        dedupe=False,
    )


@dataclass(frozen=True)
class RowMatrix:
    """Row-grouped sparse ratings (CSR layout).

    ``pivot`` is ``"user"`` when rows are users and columns items, ``"item"``
    for the transpose.
    """

    pivot: str
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    n_rows: int
    n_cols: int

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row_of_entries(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), self.row_counts())

    def gather(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Entries of ``rows`` as (position in ``rows``, column, value)."""
        rows = np.asarray(rows, dtype=np.int64)
        starts, ends = self.indptr[rows], self.indptr[rows + 1]
        counts = ends - starts
        local = np.repeat(np.arange(rows.shape[0]), counts)
        # flat index of every entry: start of its row plus offset inside the row
        offsets = np.arange(local.shape[0]) - np.repeat(np.cumsum(counts) - counts, counts)
        src = starts[local] + offsets
        return local, self.indices[src], self.values[src]

    def dense(self, rows: np.ndarray | None = None, dtype=np.float64) -> np.ndarray:
        """Densify ``rows`` (all rows by default); missing entries are 0."""
        if rows is None:
            rows = np.arange(self.n_rows)
        local, cols, vals = self.gather(rows)
        out = np.zeros((len(rows), self.n_cols), dtype=dtype)
        out[local, cols] = vals
        return out

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.row_of_entries(), self.indices.copy(), self.values.copy()


def _pivot_name(pi) -> str:
    if isinstance(pi, str) and pi in ("user", "item"):
        return pi
    try:
        idx = tuple(int(v) for v in pi)
    except (TypeError, ValueError):
        idx = None
    if idx == (0, 1):
        return "user"
    if idx == (1, 0):
        return "item"
    raise ConfigError(f"pivot must be [0,1] (user-based) or [1,0] (item-based), got {pi!r}")


def build_rows(rows, cols, values, n_rows: int, n_cols: int, pivot: str) -> RowMatrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    order = np.lexsort((cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    return RowMatrix(pivot, indptr, cols, values, n_rows, n_cols)


def pivot(table: RatingTable, pi) -> RowMatrix:
    """User rows (``[0,1]``) or item rows (``[1,0]``); the other axis gives the width."""
    name = _pivot_name(pi)
    if name == "user":
        return build_rows(table.users, table.items, table.ratings, table.n_users, table.n_items, name)
    return build_rows(table.items, table.users, table.ratings, table.n_items, table.n_users, name)


@dataclass(frozen=True)
class MeanTable:
    row_means: np.ndarray
    global_mean: float


def compute_means(train: RowMatrix) -> MeanTable:
    """Per-row rating mean; rows with no ratings fall back to the global mean."""
    if train.nnz == 0:
        raise EmptyDatasetError("cannot compute means of an empty matrix")
    global_mean = float(train.values.mean())
    counts = train.row_counts()
    sums = np.bincount(train.row_of_entries(), weights=train.values, minlength=train.n_rows)
    means = np.where(counts > 0, sums / np.maximum(counts, 1), global_mean)
    return MeanTable(means, global_mean)


def normalize_rows(dense: np.ndarray, observed: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Subtract each row's mean at observed entries; missing entries stay 0."""
    return np.where(observed, dense - means[:, None].astype(dense.dtype), 0).astype(dense.dtype)


def iter_batches(
    train: RowMatrix,
    means: MeanTable | None,
    tbs: int,
    men: bool,
    seed: int | RngStream,
    dtype=np.float32,
) -> Iterator[RowBatch]:
    if tbs < 1:
        raise ConfigError(f"train batch size must be >= 1, got {tbs}")
    if men and means is None:
        raise ConfigError("mean normalization needs a MeanTable")
    rng = seed if isinstance(seed, RngStream) else RngStream(seed)
    order = rng.permutation(train.n_rows)
    for start in range(0, train.n_rows, tbs):
        rows = order[start : start + tbs]
        local, cols, vals = train.gather(rows)
        y = np.zeros((rows.shape[0], train.n_cols), dtype=dtype)
        y[local, cols] = vals
        observed = np.zeros(y.shape, dtype=bool)
        observed[local, cols] = True
        if men:
            mu = means.row_means[rows]
            y = normalize_rows(y, observed, mu)
            mask = np.ones_like(y)
            offsets = mu
        else:
            mask = observed.astype(dtype)
            offsets = None
        yield RowBatch(y, y, mask, offsets, rows)


def make_batches(
    train: RowMatrix,
    means: MeanTable | None,
    tbs: int,
    men: bool,
    seed: int | RngStream,
    dtype=np.float32,
) -> list[RowBatch]:
    """Shuffle rows with ``seed`` and cut them into dense batches of ``tbs`` rows.

    Missing entries are 0. With ``men`` the observed entries become
    ``r - mean`` and the mask is all ones; otherwise the mask marks observed
    entries. ``x`` and ``y`` start out as the same array.
    """
    return list(iter_batches(train, means, tbs, men, seed, dtype))
