"""Aggregates over per-episode benchmark records, plus the CSV exports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..sacrl import EpisodeRecord

SMOOTH_WINDOW = 20
FINAL_FRACTION = 0.2


def episodes_to_first_success(successes) -> int | None:
    """1-based index of the first successful episode, None if there was none."""
    for i, s in enumerate(successes):
        if s:
            return i + 1
    return None


def final_success_rate(successes, fraction: float = FINAL_FRACTION) -> float:
    s = np.asarray(successes, dtype=np.float64)
    if s.size == 0:
        raise ValidationError("no episodes")
    k = max(1, int(round(fraction * s.size)))
    return float(s[-k:].mean())


def smoothed_success(successes, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Trailing-window success rate; early episodes average over what exists so far."""
    s = np.asarray(successes, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(s)])
    idx = np.arange(1, s.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def success_auc(successes, window: int = SMOOTH_WINDOW) -> float:
    """Area under the smoothed success curve, normalised by the episode count."""
    curve = smoothed_success(successes, window)
    return float(curve.mean()) if curve.size else 0.0


@dataclass(frozen=True)
class RunSummary:
    source: str
    seed: int
    episodes: int
    first_success: int | None
    final_rate: float
    auc: float
    status: str = "ok"

    @classmethod
    def from_records(cls, source: str, seed: int, records: list[EpisodeRecord]) -> RunSummary:
        hits = [r.success for r in records]
        return cls(source, seed, len(records), episodes_to_first_success(hits),
                   final_success_rate(hits), success_auc(hits))

    @classmethod
    def failed(cls, source: str, seed: int, reason: str) -> RunSummary:
        return cls(source, seed, 0, None, float("nan"), float("nan"), f"failed: {reason}")


@dataclass
class RunMetrics:
    records: dict[tuple[str, int], list[EpisodeRecord]] = field(default_factory=dict)
    failures: dict[tuple[str, int], str] = field(default_factory=dict)

    def summaries(self) -> list[RunSummary]:
        out = [RunSummary.from_records(src, seed, recs) for (src, seed), recs in sorted(self.records.items())]
        out += [RunSummary.failed(src, seed, why) for (src, seed), why in sorted(self.failures.items())]
        return sorted(out, key=lambda s: (s.source, s.seed))

    def sources(self) -> list[str]:
        return sorted({k[0] for k in self.records})

    def curve(self, source: str) -> tuple[np.ndarray, list[int]]:
        """(seeds x episodes) smoothed success curves for one source."""
        keys = sorted(k for k in self.records if k[0] == source)
        if not keys:
            raise ValidationError(f"no runs for source {source!r}")
        lengths = {len(self.records[k]) for k in keys}
        if len(lengths) != 1:
            raise ValidationError(f"runs for {source!r} have different episode counts {sorted(lengths)}")
        curves = np.stack([smoothed_success([r.success for r in self.records[k]]) for k in keys])
        return curves, [k[1] for k in keys]


# ------------------------------------------------------------------ CSV

SUMMARY_FIELDS = ("source", "seed", "episodes", "first_success", "final_success_rate", "auc", "status")
CURVE_FIELDS = ("episode", "mean", "min", "max")
REWARD_FIELDS = ("t", "p", "handcrafted", "sparse")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_summary(path: str | Path, summaries: list[RunSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for s in summaries:
            w.writerow([s.source, s.seed, s.episodes, _fmt(s.first_success), _fmt(s.final_rate), _fmt(s.auc), s.status])


def read_summary(path: str | Path) -> list[RunSummary]:
    with open(path, newline="") as fh:
        return [RunSummary(row["source"], int(row["seed"]), int(row["episodes"]),
                           int(row["first_success"]) if row["first_success"] else None,
                           float(row["final_success_rate"]), float(row["auc"]), row["status"])
                for row in csv.DictReader(fh)]


def write_curve(path: str | Path, curves: np.ndarray, seeds: list[int]) -> None:
    """One row per episode: mean/min/max over seeds then the per-seed values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*CURVE_FIELDS, *(f"seed_{s}" for s in seeds)])
        mean, lo, hi = curves.mean(axis=0), curves.min(axis=0), curves.max(axis=0)
        for i in range(curves.shape[1]):
            w.writerow([i + 1, repr(float(mean[i])), repr(float(lo[i])), repr(float(hi[i])),
                        *(repr(float(v)) for v in curves[:, i])])


def read_curve(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def write_rewards(path: str | Path, p, handcrafted, sparse) -> None:
    p, handcrafted, sparse = (np.asarray(v, dtype=np.float64) for v in (p, handcrafted, sparse))
    if not p.shape == handcrafted.shape == sparse.shape:
        raise ValidationError("reward columns differ in length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REWARD_FIELDS)
        for t in range(p.size):
            w.writerow([t, repr(float(p[t])), repr(float(handcrafted[t])), repr(float(sparse[t]))])


def read_rewards(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in REWARD_FIELDS}
