"""Segmentation accuracy metrics and the paired Wilcoxon signed-rank test.

Boundary definition: a mask voxel with at least one six-connected
background neighbor, with the grid border counting as background.
All distances are Euclidean between boundary-voxel centers, in mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateSample, EmptyMask, GridMismatch

WILCOXON_EXACT_MAX_N = 15


def dsc(a: np.ndarray, b: np.ndarray) -> float:
    """Dice similarity coefficient 2|a n b| / (|a|+|b|); both-empty -> 1.0."""
    if a.shape != b.shape:
        raise GridMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    inter = int((a & b).sum())
    return 2.0 * inter / (na + nb)


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with a six-connected background neighbor (border = background)."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    core = (slice(1, -1),) * 3
    interior = np.ones_like(m)
    for axis in range(3):
        for step in (-1, 1):
            interior &= np.roll(padded, step, axis=axis)[core]
    return m & ~interior


@dataclass(frozen=True)
class SurfaceDistanceSet:
    """Directed boundary-to-boundary distance multisets, in mm."""

    d_ab: np.ndarray
    d_ba: np.ndarray
    spacing_mm: tuple[float, float, float]


def surface_distances(
    a: np.ndarray, b: np.ndarray, spacing_mm: tuple[float, float, float]
) -> SurfaceDistanceSet:
    """Distances from each boundary voxel of a to the boundary of b, and back."""
    if a.shape != b.shape:
        raise GridMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        raise EmptyMask("surface distances need two nonempty masks")
    sp = np.asarray(spacing_mm, dtype=np.float64)
    pa = np.argwhere(boundary_voxels(a)) * sp
    pb = np.argwhere(boundary_voxels(b)) * sp
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    return SurfaceDistanceSet(
        np.asarray(d_ab, dtype=np.float64),
        np.asarray(d_ba, dtype=np.float64),
        tuple(float(s) for s in spacing_mm),
    )


def hausdorff(
    a: np.ndarray,
    b: np.ndarray,
    spacing_mm: tuple[float, float, float],
    percentile: int = 100,
) -> float:
    """Symmetric (95th-percentile) Hausdorff distance in mm."""
    if percentile not in (95, 100):
        raise ValueError(f"percentile must be 95 or 100, got {percentile}")
    sd = surface_distances(a, b, spacing_mm)
    if percentile == 100:
        return float(max(sd.d_ab.max(), sd.d_ba.max()))
    return float(
        max(np.percentile(sd.d_ab, 95), np.percentile(sd.d_ba, 95))
    )


def asd(a: np.ndarray, b: np.ndarray, spacing_mm) -> float:
    """Average symmetric surface distance: mean over both boundary sets."""
    sd = surface_distances(a, b, spacing_mm)
    total = sd.d_ab.sum() + sd.d_ba.sum()
    return float(total / (sd.d_ab.size + sd.d_ba.size))


def _signed_ranks(diff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop zeros, average-rank the |differences|; returns (ranks, signs)."""
    diff = np.asarray(diff, dtype=np.float64)
    diff = diff[diff != 0.0]
    if diff.size == 0:
        raise DegenerateSample("all paired differences are zero")
    mag = np.abs(diff)
    order = np.argsort(mag, kind="stable")
    ranks = np.empty(diff.size, dtype=np.float64)
    i = 0
    while i < diff.size:
        j = i
        while j + 1 < diff.size and mag[order[j + 1]] == mag[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks, np.sign(diff)


def wilcoxon_signed_rank(x, y) -> tuple[float, float]:
    """Two-sided Wilcoxon matched-pairs signed-rank test.

    Returns (W, p) where W is the sum of ranks of positive differences.
    Zero differences are dropped and tied magnitudes get average ranks.
    The p-value is exact (enumeration of all 2^n sign assignments) for
    effective n <= 15, else a normal approximation with continuity
    correction and tie-corrected variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 1:
        raise ValueError("x and y must be equal-length 1D samples")
    ranks, signs = _signed_ranks(x - y)
    w_pos = float(ranks[signs > 0].sum())
    n = ranks.size

    if n <= WILCOXON_EXACT_MAX_N:
        p = _exact_two_sided_p(ranks, w_pos)
    else:
        mu = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(
            ((tie_counts**3 - tie_counts) / 48.0).sum()
        )
        d = w_pos - mu
        z = (d - 0.5 * np.sign(d)) / math.sqrt(var) if var > 0 else 0.0
        p = math.erfc(abs(z) / math.sqrt(2.0))
        p = min(1.0, max(p, 0.0))
    return w_pos, p


def _exact_two_sided_p(ranks: np.ndarray, w_pos: float) -> float:
    """p = P(|W - mu| >= |w - mu|) over all equally likely sign patterns.

    Ranks are doubled to integers so tied (half-integer) ranks stay exact.
    """
    n = ranks.size
    r2 = np.rint(ranks * 2).astype(np.int64)
    total2 = int(r2.sum())
    w2 = int(round(w_pos * 2))
    # distribution of 2*W over sign patterns, by convolution
    counts = np.zeros(total2 + 1, dtype=np.int64)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    # symmetric about total2/2: compare deviations |2*W2 - total2|
    dev = abs(2 * w2 - total2)
    support_dev = np.abs(2 * np.arange(total2 + 1) - total2)
    tail = int(counts[support_dev >= dev].sum())
    return tail / float(2**n)


@dataclass(frozen=True)
class MetricRow:
    case: str
    organ: str
    stratum: str
    set: str
    dsc: float
    hd_mm: float | None
    hd95_mm: float | None
    asd_mm: float | None

    def to_json(self) -> dict:
        return {
            "case": self.case,
            "organ": self.organ,
            "stratum": self.stratum,
            "set": self.set,
            "dsc": self.dsc,
            "hd_mm": self.hd_mm,
            "hd95_mm": self.hd95_mm,
            "asd_mm": self.asd_mm,
        }


_METRIC_FIELDS = ("dsc", "hd_mm", "hd95_mm", "asd_mm")


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[MetricRow, ...]
    per_organ: dict = field(default_factory=dict)
    per_stratum: dict = field(default_factory=dict)
    paired_tests: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "rows": [r.to_json() for r in self.rows],
            "per_organ": self.per_organ,
            "per_stratum": self.per_stratum,
            "paired_tests": self.paired_tests,
        }


def _mean_sd(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "sd": sd, "n": int(arr.size)}


def aggregate(rows: list[MetricRow]) -> MetricsReport:
    """Per-organ / per-stratum mean +- sd, plus paired tests between sets.

    Paired Wilcoxon p-values are computed for every metric between each
    pair of prediction sets, over the (case, organ) pairs both sets share;
    an all-zero difference is reported as {"degenerate": true}.
    """
    if not rows:
        raise ValueError("aggregate requires at least one row")
    rows = tuple(sorted(rows, key=lambda r: (r.case, r.organ, r.set)))
    sets = sorted({r.set for r in rows})

    per_organ: dict = {}
    per_stratum: dict = {}
    for set_name in sets:
        sub = [r for r in rows if r.set == set_name]
        organ_stats: dict = {}
        for organ in sorted({r.organ for r in sub}):
            o_rows = [r for r in sub if r.organ == organ]
            organ_stats[organ] = {
                m: _mean_sd([getattr(r, m) for r in o_rows if getattr(r, m) is not None])
                for m in _METRIC_FIELDS
                if any(getattr(r, m) is not None for r in o_rows)
            }
        per_organ[set_name] = organ_stats
        stratum_stats: dict = {}
        strata = sorted({r.stratum for r in sub})
        for stratum in strata + ["all"]:
            s_rows = sub if stratum == "all" else [r for r in sub if r.stratum == stratum]
            stratum_stats[stratum] = {
                m: _mean_sd([getattr(r, m) for r in s_rows if getattr(r, m) is not None])
                for m in _METRIC_FIELDS
                if any(getattr(r, m) is not None for r in s_rows)
            }
        per_stratum[set_name] = stratum_stats

    paired: dict = {}
    for i, set_a in enumerate(sets):
        for set_b in sets[i + 1 :]:
            key = f"{set_a}|{set_b}"
            by_key_a = {(r.case, r.organ): r for r in rows if r.set == set_a}
            by_key_b = {(r.case, r.organ): r for r in rows if r.set == set_b}
            shared = sorted(set(by_key_a) & set(by_key_b))
            tests: dict = {}
            for m in _METRIC_FIELDS:
                xs, ys = [], []
                for k in shared:
                    va, vb = getattr(by_key_a[k], m), getattr(by_key_b[k], m)
                    if va is not None and vb is not None:
                        xs.append(va)
                        ys.append(vb)
                if not xs:
                    continue
                try:
                    w, p = wilcoxon_signed_rank(xs, ys)
                    tests[m] = {"w": w, "p": p, "n": len(xs)}
                except DegenerateSample:
                    tests[m] = {"degenerate": True, "n": len(xs)}
            paired[key] = tests

    return MetricsReport(rows, per_organ, per_stratum, paired)
