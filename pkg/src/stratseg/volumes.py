"""Typed 3D grids with physical spacing and a bit-exact on-disk format.

All arrays are C-ordered with axes (z, y, x); spacing is stored
(sz, sy, sx) to match. The interchange format is a ``<name>.json``
sidecar plus a ``<name>.raw`` little-endian payload.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import FormatError, GridMismatch, IoError, ModeError


class Stratum(str, Enum):
    ANCHOR = "anchor"
    MID_LEVEL = "mid_level"
    SMALL_HARD = "small_hard"


@dataclass(frozen=True)
class OrganEntry:
    label_id: int
    name: str
    stratum: Stratum


@dataclass(frozen=True)
class OrganRegistry:
    """Label-id registry with one stratum tag per organ."""

    entries: tuple[OrganEntry, ...]

    def __post_init__(self):
        ids = [e.label_id for e in self.entries]
        names = [e.name for e in self.entries]
        if len(set(ids)) != len(ids):
            raise FormatError("registry label_ids are not unique")
        if len(set(names)) != len(names):
            raise FormatError("registry names are not unique")
        if any(i <= 0 for i in ids):
            raise FormatError("label_id 0 is reserved for background")

    def __len__(self):
        return len(self.entries)

    def by_id(self, label_id: int) -> OrganEntry:
        for e in self.entries:
            if e.label_id == label_id:
                return e
        raise KeyError(label_id)

    def by_stratum(self, stratum: Stratum) -> tuple[OrganEntry, ...]:
        return tuple(e for e in self.entries if e.stratum == stratum)

    def label_ids(self) -> tuple[int, ...]:
        return tuple(e.label_id for e in self.entries)

    def to_table(self) -> dict:
        return {
            str(e.label_id): {"name": e.name, "stratum": e.stratum.value}
            for e in self.entries
        }

    @staticmethod
    def from_table(table: dict) -> "OrganRegistry":
        entries = tuple(
            OrganEntry(int(k), v["name"], Stratum(v["stratum"]))
            for k, v in sorted(table.items(), key=lambda kv: int(kv[0]))
        )
        return OrganRegistry(entries)

    def content_hash(self) -> str:
        import hashlib

        blob = json.dumps(self.to_table(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Volume3D:
    """Dense scalar grid (intensity or dose) with physical spacing in mm."""

    values: np.ndarray
    spacing_mm: tuple[float, float, float]
    kind: str = "intensity"

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        if v.ndim != 3:
            raise FormatError(f"volume must be 3D, got ndim={v.ndim}")
        if any(s <= 0 for s in self.spacing_mm):
            raise FormatError(f"spacing must be positive, got {self.spacing_mm}")
        if self.kind not in ("intensity", "dose_gy"):
            raise FormatError(f"unknown volume kind {self.kind!r}")
        if self.kind == "dose_gy" and v.size and float(v.min()) < 0:
            raise FormatError("dose_gy volume has negative values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class LabelMask:
    """Integer organ-label grid; label 0 is background."""

    labels: np.ndarray
    spacing_mm: tuple[float, float, float]
    registry: OrganRegistry = field(repr=False)

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels)
        if lab.dtype not in (np.uint8, np.uint16):
            if lab.size and lab.min() < 0:
                raise FormatError("labels must be non-negative")
            lab = lab.astype(np.uint16 if (lab.size and lab.max() > 255) else np.uint8)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        if lab.ndim != 3:
            raise FormatError(f"mask must be 3D, got ndim={lab.ndim}")
        if any(s <= 0 for s in self.spacing_mm):
            raise FormatError(f"spacing must be positive, got {self.spacing_mm}")
        present = set(np.unique(lab).tolist()) - {0}
        known = set(self.registry.label_ids())
        if not present <= known:
            raise FormatError(f"labels {sorted(present - known)} missing from registry")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape

    def organ_mask(self, label_id: int) -> np.ndarray:
        return self.labels == label_id


@dataclass(frozen=True)
class BoxRegion:
    """Half-open voxel box [lo, hi) in (z, y, x) index space."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))
        if not all(l < h for l, h in zip(self.lo, self.hi)):
            raise FormatError(f"degenerate box lo={self.lo} hi={self.hi}")

    @property
    def extent(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))


_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1"), "u16": np.dtype("<u2")}


def _dtype_name(arr: np.ndarray) -> str:
    for name, dt in _DTYPES.items():
        if arr.dtype == dt:
            return name
    raise FormatError(f"unsupported dtype {arr.dtype}")


def save_volume(v: Volume3D | LabelMask, path: str | Path) -> None:
    """Write ``<path>.json`` sidecar and ``<path>.raw`` little-endian payload."""
    path = Path(path)
    if isinstance(v, LabelMask):
        arr = v.labels
        sidecar = {
            "shape": list(v.shape),
            "spacing_mm": list(v.spacing_mm),
            "dtype": _dtype_name(arr),
            "order": "C",
            "endianness": "little",
            "kind": "labels",
            "label_table": v.registry.to_table(),
        }
    else:
        arr = v.values
        sidecar = {
            "shape": list(v.shape),
            "spacing_mm": list(v.spacing_mm),
            "dtype": "f32",
            "order": "C",
            "endianness": "little",
            "kind": v.kind,
        }
    try:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))
        path.with_suffix(".raw").write_bytes(np.ascontiguousarray(arr).tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_volume(path: str | Path) -> Volume3D | LabelMask:
    """Load a sidecar/raw pair written by :func:`save_volume`."""
    path = Path(path)
    try:
        sidecar = json.loads(path.with_suffix(".json").read_text())
        raw = path.with_suffix(".raw").read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"bad sidecar {path}.json: {e}") from e

    for key in ("shape", "spacing_mm", "dtype", "order", "endianness", "kind"):
        if key not in sidecar:
            raise FormatError(f"sidecar {path}.json missing field {key!r}")
    if sidecar["order"] != "C" or sidecar["endianness"] != "little":
        raise FormatError(f"unsupported layout in {path}.json")
    shape = tuple(int(n) for n in sidecar["shape"])
    spacing = tuple(float(s) for s in sidecar["spacing_mm"])
    if len(shape) != 3 or any(n <= 0 for n in shape):
        raise FormatError(f"bad shape {shape} in {path}.json")
    if any(s <= 0 for s in spacing):
        raise FormatError(f"bad spacing {spacing} in {path}.json")
    dtype = _DTYPES.get(sidecar["dtype"])
    if dtype is None:
        raise FormatError(f"unknown dtype {sidecar['dtype']!r} in {path}.json")
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{path}.raw has {len(raw)} bytes, sidecar implies {expected}"
        )
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape)

    if sidecar["kind"] == "labels":
        if "label_table" not in sidecar:
            raise FormatError(f"label mask sidecar {path}.json missing label_table")
        registry = OrganRegistry.from_table(sidecar["label_table"])
        return LabelMask(arr.copy(), spacing, registry)
    return Volume3D(arr.copy(), spacing, kind=sidecar["kind"])


def _target_shape(shape, spacing, target_spacing):
    return tuple(
        int(np.ceil(n * s / t)) for n, s, t in zip(shape, spacing, target_spacing)
    )


def _source_coords(out_shape, spacing, target_spacing):
    """Map output voxel centers into input index space, clamped to the grid."""
    coords = []
    for n_out, s, t in zip(out_shape, spacing, target_spacing):
        # center of output voxel i sits at physical (i + 0.5) * t
        c = (np.arange(n_out) + 0.5) * t / s - 0.5
        coords.append(c)
    return coords


def resample(
    v: Volume3D | LabelMask,
    target_spacing_mm: tuple[float, float, float],
    mode: str,
) -> Volume3D | LabelMask:
    """Resample to a new spacing; physical extent is preserved.

    Output shape is ceil(shape * spacing / target). Trilinear sampling
    evaluates at output-voxel centers mapped into input physical space,
    clamping to the boundary; label masks require nearest-neighbor.
    """
    target = tuple(float(t) for t in target_spacing_mm)
    if any(t <= 0 for t in target):
        raise FormatError(f"target spacing must be positive, got {target}")
    if mode not in ("nearest", "trilinear"):
        raise ModeError(f"unknown resample mode {mode!r}")
    is_mask = isinstance(v, LabelMask)
    if is_mask and mode != "nearest":
        raise ModeError("label masks require mode 'nearest'")

    arr = v.labels if is_mask else v.values
    if target == v.spacing_mm:
        out = arr.copy()
    else:
        out_shape = _target_shape(arr.shape, v.spacing_mm, target)
        cz, cy, cx = _source_coords(out_shape, v.spacing_mm, target)
        if mode == "nearest":
            iz = np.clip(np.rint(cz).astype(np.int64), 0, arr.shape[0] - 1)
            iy = np.clip(np.rint(cy).astype(np.int64), 0, arr.shape[1] - 1)
            ix = np.clip(np.rint(cx).astype(np.int64), 0, arr.shape[2] - 1)
            out = arr[np.ix_(iz, iy, ix)]
        else:
            out = _trilinear_gather(arr.astype(np.float64), cz, cy, cx).astype(
                np.float32
            )
    if is_mask:
        return LabelMask(out, target, v.registry)
    return Volume3D(out, target, kind=v.kind)


def _trilinear_gather(arr, cz, cy, cx):
    """Separable trilinear interpolation at the coordinate grid cz x cy x cx."""
    def lo_frac(c, n):
        c = np.clip(c, 0.0, n - 1.0)
        lo = np.floor(c).astype(np.int64)
        lo = np.minimum(lo, n - 2) if n > 1 else np.zeros_like(lo)
        return lo, c - lo

    z0, fz = lo_frac(cz, arr.shape[0])
    y0, fy = lo_frac(cy, arr.shape[1])
    x0, fx = lo_frac(cx, arr.shape[2])
    z1 = np.minimum(z0 + 1, arr.shape[0] - 1)
    y1 = np.minimum(y0 + 1, arr.shape[1] - 1)
    x1 = np.minimum(x0 + 1, arr.shape[2] - 1)

    fz = fz[:, None, None]
    fy = fy[None, :, None]
    fx = fx[None, None, :]

    def g(zi, yi, xi):
        return arr[np.ix_(zi, yi, xi)]

    c00 = g(z0, y0, x0) * (1 - fx) + g(z0, y0, x1) * fx
    c01 = g(z0, y1, x0) * (1 - fx) + g(z0, y1, x1) * fx
    c10 = g(z1, y0, x0) * (1 - fx) + g(z1, y0, x1) * fx
    c11 = g(z1, y1, x0) * (1 - fx) + g(z1, y1, x1) * fx
    c0 = c00 * (1 - fy) + c01 * fy
    c1 = c10 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def crop_pad(
    v: Volume3D | LabelMask, box: BoxRegion, pad_value
) -> Volume3D | LabelMask:
    """Extract ``box`` from the grid; out-of-grid voxels are ``pad_value``.

    The box may extend outside the grid on any side.
    """
    is_mask = isinstance(v, LabelMask)
    arr = v.labels if is_mask else v.values
    out = np.full(box.extent, pad_value, dtype=arr.dtype)

    src_lo = [max(l, 0) for l in box.lo]
    src_hi = [min(h, n) for h, n in zip(box.hi, arr.shape)]
    if all(sl < sh for sl, sh in zip(src_lo, src_hi)):
        dst_lo = [sl - l for sl, l in zip(src_lo, box.lo)]
        dst_hi = [dl + (sh - sl) for dl, sl, sh in zip(dst_lo, src_lo, src_hi)]
        out[
            dst_lo[0] : dst_hi[0], dst_lo[1] : dst_hi[1], dst_lo[2] : dst_hi[2]
        ] = arr[src_lo[0] : src_hi[0], src_lo[1] : src_hi[1], src_lo[2] : src_hi[2]]

    if is_mask:
        return LabelMask(out, v.spacing_mm, v.registry)
    return Volume3D(out, v.spacing_mm, kind=v.kind)


def check_same_grid(a, b, what="grids"):
    sa = a.shape if hasattr(a, "shape") else None
    sb = b.shape if hasattr(b, "shape") else None
    if sa != sb:
        raise GridMismatch(f"{what} differ in shape: {sa} vs {sb}")
