"""Series container, lag/horizon windowing, chronological splits, scaling, CSV I/O."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigInvalid,
    EmptySeries,
    InsufficientLength,
    LengthMismatch,
    MissingValues,
    NonFiniteValue,
    TooFewWindows,
    ZeroVariance,
)

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class TimeSeries:
    """A named, uniformly spaced sequence of finite float64 samples."""

    name: str
    values: np.ndarray
    sample_index_origin: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size == 0:
            raise EmptySeries(f"series {self.name!r} is empty")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise NonFiniteValue(f"series {self.name!r} has a non-finite value at index {bad}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    def renamed(self, name):
        return TimeSeries(name, self.values, self.sample_index_origin)


@dataclass(frozen=True)
class WindowedDataset:
    """Aligned input windows and future targets.

    ``inputs`` is [num_samples, lag, num_channels] and ``targets`` is
    [num_samples, num_tasks, horizon]. ``task_channels[j]`` is the input channel
    whose future values form task ``j``. ``start`` is the series index of the
    first sample of window 0, so window ``s`` targets the samples starting at
    ``start + s + lag``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    lag: int
    horizon: int
    channel_names: tuple
    task_names: tuple
    task_channels: tuple
    start: int = 0

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def num_channels(self):
        return self.inputs.shape[2]

    def target_positions(self):
        """Series index of the first target sample of every window."""
        return self.start + np.arange(len(self)) + self.lag

    def subset(self, lo, hi):
        return WindowedDataset(
            self.inputs[lo:hi],
            self.targets[lo:hi],
            self.lag,
            self.horizon,
            self.channel_names,
            self.task_names,
            self.task_channels,
            self.start + lo,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    validation_fraction: float = 0.2
    test_fraction: float = 0.2

    def __post_init__(self):
        fractions = (self.train_fraction, self.validation_fraction, self.test_fraction)
        for name, f in zip(("train", "validation", "test"), fractions):
            if not 0.0 < f < 1.0:
                raise ConfigInvalid(f"split.{name}_fraction", f"must lie in (0, 1), got {f}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigInvalid("split", f"fractions must sum to 1, got {sum(fractions)}")


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean, "std": self.std}


IDENTITY_STATS = NormStats(0.0, 1.0)


def build_windows(series_list, task_indices, lag, horizon):
    """Slice aligned series into (lag inputs, horizon targets) pairs."""
    if lag < 1 or horizon < 1:
        raise ConfigInvalid("lag/horizon", f"must be >= 1, got lag={lag}, horizon={horizon}")
    if not series_list:
        raise EmptySeries("no series given")
    lengths = {len(s) for s in series_list}
    if len(lengths) != 1:
        raise LengthMismatch(f"series lengths differ: {sorted(lengths)}")
    T = lengths.pop()
    if T < lag + horizon:
        raise InsufficientLength(f"length {T} < lag + horizon = {lag + horizon}")
    n_ch = len(series_list)
    for j in task_indices:
        if not 0 <= j < n_ch:
            raise ConfigInvalid("task_indices", f"channel {j} out of range for {n_ch} channels")

    data = np.stack([s.values for s in series_list], axis=1)  # [T, C]
    n = T - lag - horizon + 1
    win = np.lib.stride_tricks.sliding_window_view(data, lag, axis=0)  # [T-lag+1, C, lag]
    inputs = np.ascontiguousarray(win[:n].transpose(0, 2, 1))
    fut = np.lib.stride_tricks.sliding_window_view(data[lag:], horizon, axis=0)  # [., C, H]
    targets = np.ascontiguousarray(fut[:n][:, list(task_indices), :])
    names = tuple(s.name for s in series_list)
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        lag=lag,
        horizon=horizon,
        channel_names=names,
        task_names=tuple(names[j] for j in task_indices),
        task_channels=tuple(int(j) for j in task_indices),
        start=series_list[0].sample_index_origin,
    )


def split_sizes(num_samples, spec):
    """(train, validation, test) window counts for ``num_samples`` windows.

    Validation and test get ``floor(fraction * n)`` windows (at least one
    each); the remainder goes to training.
    """
    n_val = max(1, math.floor(spec.validation_fraction * num_samples + 1e-9))
    n_test = max(1, math.floor(spec.test_fraction * num_samples + 1e-9))
    n_train = num_samples - n_val - n_test
    if n_train < 1:
        raise TooFewWindows(f"{num_samples} windows cannot fill three non-empty splits")
    return n_train, n_val, n_test


def chronological_split(dataset, spec=SplitSpec()):
    n_train, n_val, _ = split_sizes(len(dataset), spec)
    return (
        dataset.subset(0, n_train),
        dataset.subset(n_train, n_train + n_val),
        dataset.subset(n_train + n_val, len(dataset)),
    )


def series_stats(values):
    values = np.asarray(values, dtype=np.float64)
    return NormStats(float(values.mean()), float(values.std()))


def zscore_normalize(series, stats_from):
    """Scale ``series`` by the mean and population std of ``stats_from``."""
    stats = series_stats(stats_from.values)
    if stats.std < 1e-12:
        raise ZeroVariance(f"series {stats_from.name!r} has zero variance")
    return TimeSeries(series.name, stats.apply(series.values), series.sample_index_origin), stats


def inverse_zscore(series, stats):
    return TimeSeries(series.name, stats.invert(series.values), series.sample_index_origin)


def training_segment_length(num_train_windows, lag, horizon):
    """Number of leading samples touched by the first ``num_train_windows`` windows."""
    return num_train_windows + lag + horizon - 1


# ---------------------------------------------------------------------------
# CSV


@dataclass
class SeriesFile:
    series: TimeSeries
    timestamps: list = field(default_factory=list)


def _interpolate_interior(values, name):
    values = np.asarray(values, dtype=np.float64)
    missing = np.isnan(values)
    if not missing.any():
        return values
    known = np.flatnonzero(~missing)
    if known.size == 0:
        raise MissingValues(f"{name}: every value is missing")
    if missing[: known[0]].any() or missing[known[-1] + 1:].any():
        raise MissingValues(f"{name}: missing values at the series edge cannot be interpolated")
    idx = np.arange(values.size)
    out = values.copy()
    out[missing] = np.interp(idx[missing], known, values[known])
    return out


def read_series_csv(path, interpolate_missing=False, name=None):
    """Read a ``[timestamp,]value`` CSV.

    Missing cells raise :class:`MissingValues` unless ``interpolate_missing``
    is set, in which case interior gaps are filled linearly.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptySeries(f"{path}: empty file") from None
        if "value" not in header:
            raise MissingValues(f"{path}: no 'value' column in header {header}")
        col = header.index("value")
        has_ts = header[0] == "timestamp" and col != 0
        raw, stamps = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            cell = row[col].strip() if col < len(row) else ""
            if cell.lower() in _MISSING_TOKENS:
                if not interpolate_missing:
                    raise MissingValues(f"{path}:{lineno}: missing value")
                raw.append(math.nan)
            else:
                try:
                    raw.append(float(cell))
                except ValueError:
                    raise MissingValues(f"{path}:{lineno}: cannot parse {cell!r}") from None
            if has_ts:
                stamps.append(row[0])
    values = _interpolate_interior(raw, str(path)) if interpolate_missing else np.array(raw)
    return SeriesFile(TimeSeries(name or "original", values), stamps)


def write_series_csv(path, values, timestamps=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if timestamps:
            w.writerow(["timestamp", "value"])
            for ts, v in zip(timestamps, values):
                w.writerow([ts, repr(float(v))])
        else:
            w.writerow(["value"])
            for v in values:
                w.writerow([repr(float(v))])
