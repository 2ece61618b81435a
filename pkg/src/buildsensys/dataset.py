"""Loading, hourly alignment, normalisation, splitting and windowing.

CSV layout (UTF-8, header row)::

    timestamp,traffic_volume,occ:<zone>,...,env:<name>,...

``timestamp`` is ISO-8601 (naive values are read as UTC) or integer epoch
seconds. Every other column is a building channel whose kind comes from its
prefix. Frames always store occupancy channels first, then environmental
channels, each group in file order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

HOUR = 3600
KINDS = ("occupancy", "environmental")
_PREFIX = {"occ": "occupancy", "env": "environmental"}


@dataclass(frozen=True)
class Channel:
    name: str
    kind: str

    @property
    def column(self) -> str:
        return ("occ:" if self.kind == "occupancy" else "env:") + self.name


@dataclass(frozen=True, eq=False)
class TimeSeriesFrame:
    """Aligned building channels plus the traffic target.

    ``channels`` has shape ``(T, N)`` with occupancy columns first.
    """

    timestamps: np.ndarray
    channels: np.ndarray
    channel_meta: tuple[Channel, ...]
    traffic: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        ch = np.asarray(self.channels, dtype=np.float64)
        tr = np.asarray(self.traffic, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != ts.shape[0] or tr.shape != ts.shape:
            raise DataError(
                f"frame shapes disagree: timestamps {ts.shape}, channels {ch.shape}, traffic {tr.shape}"
            )
        if ch.shape[1] != len(self.channel_meta):
            raise DataError(f"{ch.shape[1]} channel columns but {len(self.channel_meta)} names")
        kinds = [c.kind for c in self.channel_meta]
        if kinds != sorted(kinds, key=KINDS.index):
            raise DataError("occupancy channels must precede environmental channels")
        for a in (ts, ch, tr):
            a.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "traffic", tr)
        object.__setattr__(self, "channel_meta", tuple(self.channel_meta))

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    @property
    def n_occ(self) -> int:
        return sum(c.kind == "occupancy" for c in self.channel_meta)

    @property
    def n_env(self) -> int:
        return sum(c.kind == "environmental" for c in self.channel_meta)

    @property
    def names(self) -> list[str]:
        return [c.column for c in self.channel_meta]

    @property
    def occupancy(self) -> np.ndarray:
        return self.channels[:, : self.n_occ]

    @property
    def environmental(self) -> np.ndarray:
        return self.channels[:, self.n_occ :]

    @property
    def is_hourly(self) -> bool:
        return len(self) < 2 or bool(np.all(np.diff(self.timestamps) == HOUR))

    def rows(self, start: int, stop: int) -> TimeSeriesFrame:
        return replace(
            self,
            timestamps=self.timestamps[start:stop],
            channels=self.channels[start:stop],
            traffic=self.traffic[start:stop],
        )

    def equals(self, other: TimeSeriesFrame) -> bool:
        return (
            self.channel_meta == other.channel_meta
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.channels, other.channels, equal_nan=True)
            and np.array_equal(self.traffic, other.traffic, equal_nan=True)
        )


@dataclass(frozen=True)
class SampleWindow:
    """One sample: ``exo`` is ``(L, N)``, ``hist`` the ``L-1`` previous volumes."""

    exo: np.ndarray
    hist: np.ndarray
    label: np.ndarray
    anchor: int


@dataclass(frozen=True)
class NormStats:
    names: tuple[str, ...]
    channel_mean: np.ndarray
    channel_std: np.ndarray
    traffic_mean: float
    traffic_std: float

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "channel_mean": self.channel_mean.tolist(),
            "channel_std": self.channel_std.tolist(),
            "traffic_mean": self.traffic_mean,
            "traffic_std": self.traffic_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NormStats:
        return cls(
            names=tuple(d["names"]),
            channel_mean=np.asarray(d["channel_mean"], dtype=np.float64),
            channel_std=np.asarray(d["channel_std"], dtype=np.float64),
            traffic_mean=float(d["traffic_mean"]),
            traffic_std=float(d["traffic_std"]),
        )


# -- time helpers ------------------------------------------------------------


def parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        value = None
    if value is not None:
        if not math.isfinite(value) or value != int(value):
            raise ValueError(f"epoch seconds must be integral: {text!r}")
        return int(value)
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def local_calendar(timestamps: np.ndarray, utc_offset_hours: float = 0.0):
    """Return ``(day_index, hour_of_day, day_of_week)`` with Monday = 0."""
    local = np.asarray(timestamps, dtype=np.int64) + int(round(utc_offset_hours * HOUR))
    day = np.floor_divide(local, 86400)
    hour = np.floor_divide(np.mod(local, 86400), HOUR)
    dow = np.mod(day + 3, 7)  # 1970-01-01 was a Thursday
    return day, hour, dow


# -- I/O ---------------------------------------------------------------------


def _channel_from_column(col: str) -> Channel:
    prefix, sep, name = col.partition(":")
    if not sep or prefix not in _PREFIX or not name:
        raise DataError(f"column {col!r} is not of the form occ:<zone> or env:<name>")
    return Channel(name=name, kind=_PREFIX[prefix])


def load_csv(path, schema: Sequence[str] | None = None) -> TimeSeriesFrame:
    """Read a frame from CSV; rows come back sorted by timestamp.

    ``schema`` optionally lists the expected channel columns (``occ:...``,
    ``env:...``). Empty cells load as NaN and are left for
    :func:`synchronize_hourly` to fill.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:2] != ["timestamp", "traffic_volume"]:
            raise DataError(f"{path}: header must start with timestamp,traffic_volume")
        columns = header[2:]
        if schema is not None and list(schema) != columns:
            raise DataError(f"{path}: channel columns {columns} do not match schema {list(schema)}")
        meta = [_channel_from_column(c) for c in columns]
        if len(set(columns)) != len(columns):
            raise DataError(f"{path}: duplicate channel column")
        if not any(c.kind == "occupancy" for c in meta):
            raise DataError(f"{path}: at least one occ:<zone> column is required")

        stamps, values = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                stamps.append(parse_timestamp(row[0]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: column timestamp: bad value {row[0]!r}") from None
            parsed = []
            for col, cell in zip(header[1:], row[1:]):
                cell = cell.strip()
                if cell == "":
                    parsed.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {col}: non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: column {col}: non-finite value {cell!r}")
                if col == "traffic_volume" and v < 0:
                    raise DataError(f"{path}:{lineno}: column traffic_volume: negative volume {v}")
                parsed.append(v)
            values.append(parsed)

    ts = np.asarray(stamps, dtype=np.int64)
    data = np.asarray(values, dtype=np.float64).reshape(len(stamps), len(header) - 1)
    order = np.argsort(ts, kind="stable")
    ts, data = ts[order], data[order]
    dup = np.flatnonzero(np.diff(ts) == 0)
    if dup.size:
        raise DataError(f"{path}: duplicate timestamp {format_timestamp(ts[dup[0]])}")

    kind_order = sorted(range(len(meta)), key=lambda i: KINDS.index(meta[i].kind))
    return TimeSeriesFrame(
        timestamps=ts,
        channels=data[:, 1:][:, kind_order],
        channel_meta=tuple(meta[i] for i in kind_order),
        traffic=data[:, 0],
        meta={"source": str(path)},
    )


def write_csv(frame: TimeSeriesFrame, path) -> None:
    """Write ``frame`` in the loader's format; floats use round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "traffic_volume", *frame.names])
        for i in range(len(frame)):
            w.writerow(
                [format_timestamp(frame.timestamps[i]), repr(float(frame.traffic[i]))]
                + [repr(float(v)) for v in frame.channels[i]]
            )


# -- alignment ---------------------------------------------------------------

FILL_POLICIES = ("auto", "linear", "previous")
MAX_GAP_HOURS = 24
LINEAR_GAP_HOURS = 3


def _fill_column(col: np.ndarray, policy: str, name: str) -> np.ndarray:
    col = col.copy()
    missing = np.isnan(col)
    if not missing.any():
        return col
    if missing.all():
        raise DataError(f"channel {name} has no readings")
    idx = np.flatnonzero(missing)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) != 1) + 1)
    n = len(col)
    for run in runs:
        lo, hi = run[0] - 1, run[-1] + 1
        if len(run) > MAX_GAP_HOURS:
            raise DataError(
                f"channel {name}: gap of {len(run)} hours exceeds {MAX_GAP_HOURS}h (data too sparse)"
            )
        if lo < 0:
            col[run] = col[hi]
        elif hi >= n:
            col[run] = col[lo]
        elif policy == "linear" or (policy == "auto" and len(run) <= LINEAR_GAP_HOURS):
            frac = (run - lo) / (hi - lo)
            col[run] = col[lo] + frac * (col[hi] - col[lo])
        else:
            col[run] = col[lo]
    return col


def synchronize_hourly(frame: TimeSeriesFrame, fill_policy: str = "auto") -> TimeSeriesFrame:
    """Resample to one row per hour.

    Readings are bucketed by the hour they fall in and averaged; hours with
    no reading are filled per ``fill_policy``: ``auto`` interpolates gaps of
    up to three hours and repeats the last value for longer ones,
    ``linear`` always interpolates, ``previous`` always repeats. Gaps longer
    than 24 hours are rejected.
    """
    if fill_policy not in FILL_POLICIES:
        raise DataError(f"unknown fill policy {fill_policy!r}; expected one of {FILL_POLICIES}")
    if len(frame) == 0:
        raise DataError("cannot synchronize an empty frame")
    bucket = np.floor_divide(frame.timestamps, HOUR) * HOUR
    start, stop = int(bucket.min()), int(bucket.max())
    n = (stop - start) // HOUR + 1
    slot = (bucket - start) // HOUR
    table = np.column_stack([frame.traffic, frame.channels])
    sums = np.zeros((n, table.shape[1]))
    counts = np.zeros((n, table.shape[1]))
    ok = ~np.isnan(table)
    np.add.at(sums, slot, np.where(ok, table, 0.0))
    np.add.at(counts, slot, ok.astype(np.float64))
    with np.errstate(invalid="ignore", divide="ignore"):
        hourly = np.where(counts > 0, sums / np.maximum(counts, 1.0), np.nan)
    names = ["traffic_volume", *frame.names]
    filled = np.column_stack(
        [_fill_column(hourly[:, j], fill_policy, names[j]) for j in range(hourly.shape[1])]
    )
    return replace(
        frame,
        timestamps=start + HOUR * np.arange(n, dtype=np.int64),
        channels=filled[:, 1:],
        traffic=filled[:, 0],
    )


# -- normalisation -----------------------------------------------------------


def fit_norm(frame: TimeSeriesFrame, train_fraction: float = 0.7) -> NormStats:
    """Per-channel z-score statistics from the leading training rows only."""
    n_train = int(math.floor(len(frame) * train_fraction))
    if n_train < 2:
        raise DataError(f"training portion has {n_train} rows; need at least 2")
    ch = frame.channels[:n_train]
    tr = frame.traffic[:n_train]
    mu, sd = ch.mean(axis=0), ch.std(axis=0)
    for name, s in zip(frame.names, sd):
        if not s > 0:
            raise DataError(f"channel {name} has zero variance on the training split")
    tsd = float(tr.std())
    if not tsd > 0:
        raise DataError("channel traffic_volume has zero variance on the training split")
    return NormStats(tuple(frame.names), mu, sd, float(tr.mean()), tsd)


def apply_norm(frame: TimeSeriesFrame, stats: NormStats) -> TimeSeriesFrame:
    if tuple(frame.names) != stats.names:
        raise DataError(f"frame channels {frame.names} do not match stats {list(stats.names)}")
    return replace(
        frame,
        channels=(frame.channels - stats.channel_mean) / stats.channel_std,
        traffic=(frame.traffic - stats.traffic_mean) / stats.traffic_std,
    )


def invert_norm(values, stats: NormStats, channel: str | None = None) -> np.ndarray:
    """Undo :func:`apply_norm` for traffic values, or for one named channel."""
    v = np.asarray(values, dtype=np.float64)
    if channel is None:
        return v * stats.traffic_std + stats.traffic_mean
    j = stats.names.index(channel)
    return v * stats.channel_std[j] + stats.channel_mean[j]


# -- splitting and windowing --------------------------------------------------

SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


def split_bounds(n: int) -> tuple[int, int]:
    if n < 10:
        raise DataError(f"frame of length {n} is too short to split (need >= 10)")
    n_train = (n * 7) // 10
    n_val = n // 10
    return n_train, n_train + n_val


def chronological_split(frame: TimeSeriesFrame):
    """Contiguous 70/10/20 partition; train and validation sizes are floored."""
    a, b = split_bounds(len(frame))
    return frame.rows(0, a), frame.rows(a, b), frame.rows(b, len(frame))


def window_count(n: int, L: int, tau: int, stride: int = 1) -> int:
    span = L + tau - 1
    return 0 if n < span else (n - span) // stride + 1


def make_windows(frame: TimeSeriesFrame, L: int, tau: int, stride: int = 1) -> list[SampleWindow]:
    """Slide over ``frame``; the sample anchored at row ``t`` uses

    exo = channels[t-L+1 .. t], hist = traffic[t-L+1 .. t-1],
    label = traffic[t .. t+tau-1].

    Callers window each split separately so no sample straddles a boundary.
    """
    if L < 1 or tau < 1 or stride < 1:
        raise DataError(f"window sizes must be >= 1 (L={L}, tau={tau}, stride={stride})")
    n = len(frame)
    out = []
    for t in range(L - 1, n - tau + 1, stride):
        out.append(
            SampleWindow(
                exo=frame.channels[t - L + 1 : t + 1],
                hist=frame.traffic[t - L + 1 : t],
                label=frame.traffic[t : t + tau],
                anchor=int(frame.timestamps[t]),
            )
        )
    return out


def stack_windows(windows: Sequence[SampleWindow]):
    """Batch arrays ``(exo, hist, label, anchors)`` for a list of windows."""
    if not windows:
        raise DataError("no windows to stack")
    return (
        np.stack([w.exo for w in windows]),
        np.stack([w.hist for w in windows]),
        np.stack([w.label for w in windows]),
        np.array([w.anchor for w in windows], dtype=np.int64),
    )


@dataclass(frozen=True)
class PreparedData:
    """A frame split chronologically and normalised with training statistics.

    Every forecaster reads its samples through :meth:`windows`, so the main
    model and the baselines see identical windows and statistics.
    """

    raw: TimeSeriesFrame
    norm: TimeSeriesFrame
    stats: NormStats
    bounds: tuple[int, int, int]
    L: int

    def split_range(self, split: str) -> tuple[int, int]:
        a, b, n = self.bounds
        ranges = {"train": (0, a), "val": (a, b), "test": (b, n)}
        if split not in ranges:
            raise DataError(f"unknown split {split!r}")
        return ranges[split]

    def anchor_rows(self, split: str, tau: int = 1) -> np.ndarray:
        """Frame row of the first label of every window in ``split``."""
        lo, hi = self.split_range(split)
        return np.arange(lo + self.L - 1, hi - tau + 1, dtype=np.int64)

    def windows(self, split: str, tau: int = 1):
        """``(exo, hist, label, rows)`` in normalised units."""
        lo, hi = self.split_range(split)
        wins = make_windows(self.norm.rows(lo, hi), self.L, tau)
        if not wins:
            raise DataError(f"{split} split has {hi - lo} rows, too few for L={self.L}, tau={tau}")
        exo, hist, label, _ = stack_windows(wins)
        return exo, hist, label, self.anchor_rows(split, tau)


def prepare(frame: TimeSeriesFrame, L: int, stats: NormStats | None = None) -> PreparedData:
    """Split and normalise ``frame``; ``stats`` (e.g. from a checkpoint) skips fitting."""
    a, b = split_bounds(len(frame))
    if stats is None:
        stats = fit_norm(frame.rows(0, a), train_fraction=1.0)
    return PreparedData(frame, apply_norm(frame, stats), stats, (a, b, len(frame)), L)
