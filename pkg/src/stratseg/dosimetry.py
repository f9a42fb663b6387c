"""Dose-grid alignment, per-organ dose statistics, relative dose
differences under contour substitution, and DVH curves.

The dose grid is resampled onto the image grid (never masks onto the
dose grid) so that contour fidelity is preserved while the planned dose
field stays fixed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, FormatError, GridMismatch, NoOverlap, ZeroReferenceDose
from .volumes import Volume3D, _trilinear_gather

DOSE_SPACING_WARN_MM = (1.0, 5.0)


@dataclass(frozen=True)
class DoseGrid:
    """Planned dose field with an origin offset relative to the image grid.

    ``origin_mm`` is the physical position of the center of dose voxel
    (0, 0, 0), expressed in the image frame whose voxel (0, 0, 0) center
    sits at half the image spacing.
    """

    volume: Volume3D
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.volume.kind != "dose_gy":
            raise FormatError("DoseGrid requires a dose_gy volume")
        object.__setattr__(
            self, "origin_mm", tuple(float(v) for v in self.origin_mm)
        )
        sp = self.volume.spacing_mm
        lo, hi = DOSE_SPACING_WARN_MM
        if any(s < lo or s > hi for s in sp):
            warnings.warn(
                f"dose spacing {sp} outside the usual [{lo}, {hi}] mm band",
                stacklevel=2,
            )


def _dose_index_coords(dose: DoseGrid, target: Volume3D):
    """Target voxel centers expressed in dose index space, per axis."""
    coords = []
    for axis in range(3):
        centers_mm = (np.arange(target.shape[axis]) + 0.5) * target.spacing_mm[axis]
        coords.append(
            (centers_mm - dose.origin_mm[axis]) / dose.volume.spacing_mm[axis]
        )
    return coords


def coverage_mask(dose: DoseGrid, target: Volume3D) -> np.ndarray:
    """Boolean grid of target voxels whose centers fall inside the dose grid."""
    cz, cy, cx = _dose_index_coords(dose, target)

    def inside(c, n):
        # a center is covered while it lies within the voxel-center hull
        return (c >= -0.5) & (c <= n - 0.5)

    nz, ny, nx = dose.volume.shape
    return (
        inside(cz, nz)[:, None, None]
        & inside(cy, ny)[None, :, None]
        & inside(cx, nx)[None, None, :]
    )


def align_dose(dose: DoseGrid, target: Volume3D) -> Volume3D:
    """Trilinearly interpolate the dose at target voxel centers.

    Voxels outside the dose grid get 0 Gy; a coverage warning is issued
    when any target voxel is uncovered. Raises NoOverlap when no target
    voxel is covered at all.
    """
    inside = coverage_mask(dose, target)
    n_inside = int(inside.sum())
    if n_inside == 0:
        raise NoOverlap("dose grid and target grid share no physical extent")
    cz, cy, cx = _dose_index_coords(dose, target)
    values = _trilinear_gather(
        dose.volume.values.astype(np.float64), cz, cy, cx
    )
    values[~inside] = 0.0
    if n_inside < inside.size:
        frac = n_inside / inside.size
        warnings.warn(
            f"dose grid covers only {frac:.1%} of the target grid; "
            "uncovered voxels set to 0 Gy",
            stacklevel=2,
        )
    return Volume3D(values.astype(np.float32), target.spacing_mm, kind="dose_gy")


def _masked(mask: np.ndarray, aligned_dose: Volume3D) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != aligned_dose.shape:
        raise GridMismatch(
            f"mask {mask.shape} vs dose {aligned_dose.shape} grids differ"
        )
    if not mask.any():
        raise EmptyMask("dose statistics need a nonempty mask")
    return aligned_dose.values[mask]


def mean_dose(mask: np.ndarray, aligned_dose: Volume3D) -> float:
    return float(_masked(mask, aligned_dose).mean())


def max_dose(mask: np.ndarray, aligned_dose: Volume3D) -> float:
    return float(_masked(mask, aligned_dose).max())


def diff_mean_dose(
    sub_mask: np.ndarray, ref_mask: np.ndarray, aligned_dose: Volume3D
) -> float:
    """Signed percent change in mean dose when the substitute contour
    replaces the reference contour under a fixed dose grid."""
    ref = mean_dose(ref_mask, aligned_dose)
    if ref == 0.0:
        raise ZeroReferenceDose("reference mean dose is zero")
    sub = mean_dose(sub_mask, aligned_dose)
    return 100.0 * (sub - ref) / ref


def diff_max_dose(
    sub_mask: np.ndarray, ref_mask: np.ndarray, aligned_dose: Volume3D
) -> float:
    """Signed percent change in maximum dose under contour substitution."""
    ref = max_dose(ref_mask, aligned_dose)
    if ref == 0.0:
        raise ZeroReferenceDose("reference max dose is zero")
    sub = max_dose(sub_mask, aligned_dose)
    return 100.0 * (sub - ref) / ref


@dataclass(frozen=True)
class DVHCurve:
    """Cumulative dose-volume curve: v(d) = fraction of voxels with dose >= d."""

    bin_edges_gy: np.ndarray
    volume_fraction: np.ndarray

    def __post_init__(self):
        v = self.volume_fraction
        if v.size and (np.diff(v) > 1e-12).any():
            raise FormatError("DVH volume fractions must be non-increasing")


def dvh(mask: np.ndarray, aligned_dose: Volume3D, bin_width_gy: float) -> DVHCurve:
    """Cumulative >=-dose histogram over uniform bins covering [0, max dose].

    The edge list extends one bin past the maximum dose so the curve
    always ends at 0.
    """
    if bin_width_gy <= 0:
        raise FormatError(f"bin width must be positive, got {bin_width_gy}")
    doses = _masked(mask, aligned_dose).astype(np.float64)
    top = int(np.floor(doses.max() / bin_width_gy)) + 1
    edges = np.arange(top + 1, dtype=np.float64) * bin_width_gy
    frac = (doses[None, :] >= edges[:, None]).mean(axis=1)
    return DVHCurve(edges, frac)


@dataclass(frozen=True)
class DoseRow:
    case: str
    organ: str
    set: str
    mean_gy: float
    max_gy: float
    diff_mean_pct: float | None
    diff_max_pct: float | None
    coverage: float

    def to_json(self) -> dict:
        return {
            "case": self.case,
            "organ": self.organ,
            "set": self.set,
            "mean_gy": self.mean_gy,
            "max_gy": self.max_gy,
            "diff_mean_pct": self.diff_mean_pct,
            "diff_max_pct": self.diff_max_pct,
            "coverage": self.coverage,
        }


@dataclass(frozen=True)
class DoseReport:
    rows: tuple[DoseRow, ...]
    # dvh_curves[(case, organ, set)] -> DVHCurve
    dvh_curves: dict = field(default_factory=dict, repr=False)
    aggregates: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "rows": [r.to_json() for r in self.rows],
            "aggregates": self.aggregates,
        }


def aggregate_dose_rows(rows: list[DoseRow]) -> dict:
    """Per-set signed means and absolute-magnitude means of the diffs."""
    out: dict = {}
    for set_name in sorted({r.set for r in rows}):
        sub = [r for r in rows if r.set == set_name]
        diffs_mean = [r.diff_mean_pct for r in sub if r.diff_mean_pct is not None]
        diffs_max = [r.diff_max_pct for r in sub if r.diff_max_pct is not None]
        entry = {"n": len(sub)}
        if diffs_mean:
            entry["diff_mean_pct_signed"] = float(np.mean(diffs_mean))
            entry["diff_mean_pct_abs"] = float(np.mean(np.abs(diffs_mean)))
        if diffs_max:
            entry["diff_max_pct_signed"] = float(np.mean(diffs_max))
            entry["diff_max_pct_abs"] = float(np.mean(np.abs(diffs_max)))
        out[set_name] = entry
    return out
