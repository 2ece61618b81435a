"""Building-traffic correlation statistics.

Day vectors are 24-hour local-time slices of total occupancy (sum of the
occupancy channels) and traffic volume. Days with missing or non-finite
hours are skipped and reported rather than imputed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import TimeSeriesFrame, local_calendar
from .errors import DataError

DEFAULT_RUSH_HOURS = (7, 8, 9, 10, 16, 17, 18, 19)
GROUPINGS = ("weekday_weekend", "rush_normal")


class UndefinedCorrelation(DataError):
    """Pearson correlation of a constant vector."""


@dataclass(frozen=True)
class DayVectors:
    day: int
    dow: int
    b: np.ndarray
    t: np.ndarray

    @property
    def weekday(self) -> bool:
        return self.dow < 5


def cosine(b, t) -> float:
    b = np.asarray(b, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    nb, nt = np.linalg.norm(b), np.linalg.norm(t)
    if nb == 0.0 or nt == 0.0:
        raise DataError("cosine similarity of a zero-norm vector")
    return float(np.clip(b @ t / (nb * nt), -1.0, 1.0))


def cosine_daily(days: Sequence[DayVectors]) -> np.ndarray:
    """Cosine similarity per day; NaN marks a day with a zero-norm vector."""
    out = np.full(len(days), np.nan)
    for i, d in enumerate(days):
        try:
            out[i] = cosine(d.b, d.t)
        except DataError:
            pass
    return out


def pearson(b, t) -> float:
    b = np.asarray(b, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if b.shape != t.shape or b.ndim != 1:
        raise DataError(f"pearson needs equal-length vectors, got {b.shape} and {t.shape}")
    if b.size < 2:
        raise DataError("pearson needs at least two observations")
    db, dt = b - b.mean(), t - t.mean()
    sbb, stt = db @ db, dt @ dt
    if sbb == 0.0 or stt == 0.0:
        raise UndefinedCorrelation("pearson correlation undefined for a constant vector")
    return float(np.clip(db @ dt / np.sqrt(sbb * stt), -1.0, 1.0))


def pearson_daily(days: Sequence[DayVectors]) -> np.ndarray:
    out = np.full(len(days), np.nan)
    for i, d in enumerate(days):
        try:
            out[i] = pearson(d.b, d.t)
        except DataError:
            pass
    return out


def daily_vectors(frame: TimeSeriesFrame, utc_offset_hours: float = 0.0, interval: int = 24):
    """Split a frame into per-day vectors; returns ``(days, skipped_day_indices)``.

    ``interval`` must divide 24; shorter intervals cut each day into several
    consecutive blocks.
    """
    if interval < 2 or 24 % interval:
        raise DataError(f"interval must divide 24 and be >= 2, got {interval}")
    day, hour, dow = local_calendar(frame.timestamps, utc_offset_hours)
    occ = frame.occupancy.sum(axis=1)
    days, skipped = [], []
    for d in np.unique(day):
        rows = np.flatnonzero(day == d)
        hours = hour[rows]
        b, t = occ[rows], frame.traffic[rows]
        complete = rows.size == 24 and np.array_equal(np.sort(hours), np.arange(24))
        if not complete or not (np.all(np.isfinite(b)) and np.all(np.isfinite(t))):
            skipped.append(int(d))
            continue
        order = np.argsort(hours)
        b, t = b[order], t[order]
        for k in range(0, 24, interval):
            days.append(DayVectors(int(d), int(dow[rows[0]]), b[k : k + interval], t[k : k + interval]))
    return days, skipped


def _stats(values: np.ndarray) -> dict:
    v = values[np.isfinite(values)]
    if v.size == 0:
        raise DataError("empty group")
    return {"mean": float(v.mean()), "std": float(v.std()), "count": int(v.size)}


def grouped_similarity(frame: TimeSeriesFrame, grouping: str = "weekday_weekend",
                       rush_hours: Iterable[int] = DEFAULT_RUSH_HOURS, utc_offset_hours: float = 0.0) -> dict:
    """Mean/std of cosine and Pearson per group.

    ``weekday_weekend`` scores whole days and groups them by day type;
    ``rush_normal`` scores each day's rush-hour slice and its remaining hours
    separately.
    """
    if grouping not in GROUPINGS:
        raise DataError(f"unknown grouping {grouping!r}; expected one of {GROUPINGS}")
    days, skipped = daily_vectors(frame, utc_offset_hours)
    if len({d.day for d in days}) < 7:
        raise DataError("grouped similarity needs at least one full week of data")
    if grouping == "weekday_weekend":
        groups = {
            "weekday": [d for d in days if d.weekday],
            "weekend": [d for d in days if not d.weekday],
        }
    else:
        rush = np.zeros(24, dtype=bool)
        rush[list(rush_hours)] = True
        groups = {
            "rush": [DayVectors(d.day, d.dow, d.b[rush], d.t[rush]) for d in days],
            "normal": [DayVectors(d.day, d.dow, d.b[~rush], d.t[~rush]) for d in days],
        }
    out = {"grouping": grouping, "skipped_days": skipped, "groups": {}}
    for name, members in groups.items():
        if not members:
            raise DataError(f"empty group {name!r}")
        out["groups"][name] = {
            "cosine": _stats(cosine_daily(members)),
            "pearson": _stats(pearson_daily(members)),
        }
    return out


# -- route passing probability -------------------------------------------------


@dataclass(frozen=True)
class RouteSet:
    routes: tuple[tuple[str, ...], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.routes:
            raise DataError("route set is empty")
        if any(len(r) == 0 for r in self.routes):
            raise DataError("route with no segments")


def read_routes(path) -> RouteSet:
    """One route per line, comma-separated segment ids; blank lines ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    routes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        segs = tuple(s.strip() for s in line.split(","))
        if any(not s for s in segs):
            raise DataError(f"{path}:{lineno}: empty segment id")
        routes.append(segs)
    return RouteSet(tuple(routes))


def passing_probability(routes: RouteSet) -> dict[str, float]:
    """Fraction of routes traversing each segment, sorted by decreasing value."""
    counts: dict[str, int] = {}
    for r in routes.routes:
        for seg in set(r):
            counts[seg] = counts.get(seg, 0) + 1
    n = len(routes.routes)
    return dict(sorted(((s, c / n) for s, c in counts.items()), key=lambda kv: (-kv[1], kv[0])))


def analyze(frame: TimeSeriesFrame, routes: RouteSet | None = None,
            rush_hours: Iterable[int] = DEFAULT_RUSH_HOURS, utc_offset_hours: float = 0.0,
            interval: int = 24) -> dict:
    """Full correlation report as plain JSON-ready data."""
    days, skipped = daily_vectors(frame, utc_offset_hours, interval)
    cos = cosine_daily(days)
    pr = pearson_daily(days)
    finite = pr[np.isfinite(pr)]
    weekday_pr = np.array([p for p, d in zip(pr, days) if d.weekday and np.isfinite(p)])
    report = {
        "cosine": {"per_day": [None if np.isnan(v) else float(v) for v in cos], **_stats(cos)},
        "pearson": {
            "per_day": [None if np.isnan(v) else float(v) for v in pr],
            **_stats(pr),
            "fraction_ge_0.5": float(np.mean(finite >= 0.5)) if finite.size else None,
            "weekday_fraction_ge_0.5": float(np.mean(weekday_pr >= 0.5)) if weekday_pr.size else None,
        },
        "interval_hours": interval,
        "skipped_days": skipped,
        "grouped": {
            g: grouped_similarity(frame, g, rush_hours, utc_offset_hours)["groups"] for g in GROUPINGS
        },
    }
    if routes is not None:
        report["passing_probability"] = passing_probability(routes)
    return report
