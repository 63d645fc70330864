"""Dataset ingestion, chronological splits, window splicing and synthetic data."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

SPLITS = ("train", "val", "test")


@dataclass
class MultivariateSeries:
    names: list
    values: np.ndarray  # (time, M)
    timestamps: list | None = None
    granularity: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series values must be 2-D (time, variates), got shape {self.values.shape}")
        if len(self.names) != self.values.shape[1]:
            raise DataError(f"{len(self.names)} names for {self.values.shape[1]} variates")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains missing or non-finite values")

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_variates(self):
        return self.values.shape[1]


def load_csv(path, date_column="date"):
    """Read a header + numeric-rows CSV.

    A first column named ``date_column`` is kept as timestamps. Error
    coordinates are 1-based (data row, file column); the header is row 0.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        has_date = bool(header) and header[0].strip().lower() == date_column
        first = 1 if has_date else 0
        names = [h.strip() for h in header[first:]]
        if not names:
            raise DataError(f"{path}: no variate columns in header")
        rows, stamps = [], []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
            vals = []
            for c in range(first, len(row)):
                cell = row[c].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: unparseable cell {cell!r} at (row {r}, col {c + 1})") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: missing/non-finite value at (row {r}, col {c + 1})")
                vals.append(v)
            rows.append(vals)
            if has_date:
                stamps.append(row[0].strip())
    if not rows:
        raise DataError(f"{path}: no data rows")
    return MultivariateSeries(names, np.array(rows), stamps if has_date else None)


def write_csv(series, path, header=None):
    """Write ``series`` in the format :func:`load_csv` reads (exact float repr)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        elif series.timestamps is not None:
            w.writerow(["date"] + list(series.names))
        else:
            w.writerow(list(series.names))
        for i, row in enumerate(series.values):
            cells = [repr(float(v)) for v in row]
            if series.timestamps is not None:
                cells = [series.timestamps[i]] + cells
            w.writerow(cells)


def split_sizes(n_rows, ratios):
    """(train, val, test) row counts: val/test by floor, remainder to train."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"split ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {sum(ratios)}")
    n_val = math.floor(n_rows * ratios[1] + 1e-9)
    n_test = math.floor(n_rows * ratios[2] + 1e-9)
    return n_rows - n_val - n_test, n_val, n_test


def chronological_split(series, ratios):
    """Contiguous train / val / test segments in time order."""
    n_train, n_val, _ = split_sizes(len(series), ratios)
    cuts = [0, n_train, n_train + n_val, len(series)]
    return [
        MultivariateSeries(
            series.names,
            series.values[a:b],
            None if series.timestamps is None else series.timestamps[a:b],
            series.granularity,
        )
        for a, b in zip(cuts[:-1], cuts[1:])
    ]


@dataclass
class WindowSet:
    """Stride-1 (input, target) pairs over a shared value array.

    ``starts[k]`` is the row of the first input step of window ``k`` in
    ``values``; the target follows the input immediately.
    """

    values: np.ndarray
    starts: np.ndarray
    seq_len: int
    pred_len: int
    split: str

    def __len__(self):
        return len(self.starts)

    @property
    def n_variates(self):
        return self.values.shape[1]

    def _gather(self, offset, length, idx):
        starts = self.starts if idx is None else self.starts[idx]
        rows = starts[:, None] + offset + np.arange(length)[None, :]
        return self.values[rows]

    def inputs(self, idx=None):
        return self._gather(0, self.seq_len, idx)

    def targets(self, idx=None):
        return self._gather(self.seq_len, self.pred_len, idx)

    def target_rows(self):
        return self.starts[:, None] + self.seq_len + np.arange(self.pred_len)[None, :]

    def input_rows(self):
        return self.starts[:, None] + np.arange(self.seq_len)[None, :]


def make_windows(series, ratios, seq_len, pred_len):
    """Window sets for train / val / test.

    Train windows lie inside the train segment. Val and test targets lie in
    their own segment; their look-back may reach into preceding rows.
    """
    n_train, n_val, n_test = split_sizes(len(series), ratios)
    bounds = {
        "train": (0, n_train),
        "val": (n_train, n_train + n_val),
        "test": (n_train + n_val, len(series)),
    }
    out = {}
    for split, (lo, hi) in bounds.items():
        first = lo if split == "train" else max(0, lo - seq_len)
        last = hi - seq_len - pred_len  # inclusive start of the final window
        if last < first:
            raise DataError(
                f"{split} split has no complete window: rows {lo}..{hi - 1} cannot host "
                f"L={seq_len} + T={pred_len} (context from row {first})"
            )
        out[split] = WindowSet(series.values, np.arange(first, last + 1), seq_len, pred_len, split)
    return out


def synth_multi_periodic(seed, length, periods, amplitudes, slope=0.0, sigma=0.0, n_variates=1,
                         granularity="synthetic"):
    """Sum of seeded-phase sinusoids + linear trend + Gaussian noise per variate."""
    periods = [float(p) for p in periods]
    amplitudes = [float(a) for a in amplitudes]
    if not periods:
        raise DataError("synthetic series needs at least one period")
    if len(periods) != len(amplitudes):
        raise DataError(f"{len(periods)} periods but {len(amplitudes)} amplitudes")
    if any(p <= 0 for p in periods):
        raise DataError(f"periods must be positive, got {periods}")
    if sigma < 0:
        raise DataError(f"noise sigma must be non-negative, got {sigma}")
    if length < 1 or n_variates < 1:
        raise DataError(f"length and variate count must be positive, got {length}, {n_variates}")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_variates, len(periods)))
    noise = rng.standard_normal((length, n_variates)) * sigma
    t = np.arange(length, dtype=np.float64)
    values = slope * t[:, None] + noise
    for k, (p, a) in enumerate(zip(periods, amplitudes)):
        values += a * np.sin(2.0 * np.pi * t[:, None] / p + phases[None, :, k])
    names = [f"var{m}" for m in range(n_variates)]
    return MultivariateSeries(names, values, None, granularity)


__all__ = [
    "MultivariateSeries", "SPLITS", "WindowSet", "chronological_split", "load_csv",
    "make_windows", "split_sizes", "synth_multi_periodic", "write_csv",
]
