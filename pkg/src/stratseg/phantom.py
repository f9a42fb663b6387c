"""Deterministic synthetic head-and-neck-like phantoms with 42-label truth.

Anatomy is parametric: additive-contrast ellipsoids and tubes inside a
body ellipsoid, with Gaussian noise. Anchor organs are large and high
contrast, mid-level organs medium and low contrast, small & hard organs
are tiny low-contrast spheres whose radii are fixed in voxel units
(1-3 voxels) so the zoom-in branch genuinely matters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import IoError, PlacementError, SplitError
from .organs import canonical_registry
from .volumes import LabelMask, Stratum, Volume3D, load_volume, save_volume

# (name, shape, (z, y, x) fractional center, size) — sizes are grid
# fractions for anchor/mid organs, voxel units for small & hard.
# Tubes run along z: size = (radius_y, radius_x, half_length_z).
_ANCHOR_TEMPLATES = [
    ("brainstem", "tube", (0.62, 0.56, 0.50), (0.050, 0.050, 0.130)),
    ("cerebellum", "ellipsoid", (0.66, 0.74, 0.50), (0.080, 0.095, 0.130)),
    ("eye_l", "ellipsoid", (0.60, 0.20, 0.33), (0.052, 0.052, 0.052)),
    ("eye_r", "ellipsoid", (0.60, 0.20, 0.67), (0.052, 0.052, 0.052)),
    ("mandible_l", "ellipsoid", (0.30, 0.30, 0.35), (0.042, 0.100, 0.048)),
    ("mandible_r", "ellipsoid", (0.30, 0.30, 0.65), (0.042, 0.100, 0.048)),
    ("spinal_cord", "tube", (0.15, 0.62, 0.50), (0.034, 0.034, 0.125)),
    ("tmj_l", "ellipsoid", (0.47, 0.44, 0.28), (0.038, 0.038, 0.038)),
    ("tmj_r", "ellipsoid", (0.47, 0.44, 0.72), (0.038, 0.038, 0.038)),
]

_MID_TEMPLATES = [
    ("basal_ganglia_l", "ellipsoid", (0.78, 0.48, 0.40), (0.040, 0.048, 0.048)),
    ("basal_ganglia_r", "ellipsoid", (0.78, 0.48, 0.60), (0.040, 0.048, 0.048)),
    ("brachial_plexus_l", "ellipsoid", (0.12, 0.58, 0.30), (0.034, 0.042, 0.075)),
    ("brachial_plexus_r", "ellipsoid", (0.12, 0.58, 0.70), (0.034, 0.042, 0.075)),
    ("constrictor_inf", "ellipsoid", (0.22, 0.56, 0.50), (0.028, 0.034, 0.058)),
    ("constrictor_mid", "ellipsoid", (0.30, 0.56, 0.50), (0.028, 0.034, 0.058)),
    ("constrictor_sup", "ellipsoid", (0.38, 0.56, 0.50), (0.028, 0.034, 0.058)),
    ("epiglottis", "ellipsoid", (0.40, 0.40, 0.50), (0.032, 0.030, 0.042)),
    ("esophagus", "tube", (0.08, 0.62, 0.50), (0.028, 0.028, 0.065)),
    ("larynx_gs", "ellipsoid", (0.29, 0.45, 0.50), (0.040, 0.042, 0.048)),
    ("oral_cavity", "ellipsoid", (0.42, 0.25, 0.50), (0.058, 0.085, 0.105)),
    ("parotid_l", "ellipsoid", (0.40, 0.52, 0.24), (0.058, 0.052, 0.044)),
    ("parotid_r", "ellipsoid", (0.40, 0.52, 0.76), (0.058, 0.052, 0.044)),
    ("smg_l", "ellipsoid", (0.27, 0.36, 0.38), (0.040, 0.044, 0.044)),
    ("smg_r", "ellipsoid", (0.27, 0.36, 0.62), (0.040, 0.044, 0.044)),
    ("temporal_lobe_l", "ellipsoid", (0.72, 0.38, 0.27), (0.055, 0.070, 0.052)),
    ("temporal_lobe_r", "ellipsoid", (0.72, 0.38, 0.73), (0.055, 0.070, 0.052)),
    ("thyroid_l", "ellipsoid", (0.13, 0.43, 0.42), (0.042, 0.034, 0.032)),
    ("thyroid_r", "ellipsoid", (0.13, 0.43, 0.58), (0.042, 0.034, 0.032)),
]

_SH_TEMPLATES = [
    ("cochlea_l", "ellipsoid", (0.46, 0.58, 0.28), (1.5, 1.5, 1.5)),
    ("cochlea_r", "ellipsoid", (0.46, 0.58, 0.72), (1.5, 1.5, 1.5)),
    ("hypothalamus", "ellipsoid", (0.80, 0.42, 0.50), (1.8, 1.8, 1.8)),
    ("inner_ear_l", "ellipsoid", (0.58, 0.50, 0.19), (2.0, 2.0, 2.0)),
    ("inner_ear_r", "ellipsoid", (0.58, 0.50, 0.81), (2.0, 2.0, 2.0)),
    ("lacrimal_l", "ellipsoid", (0.66, 0.16, 0.22), (1.7, 1.7, 1.7)),
    ("lacrimal_r", "ellipsoid", (0.66, 0.16, 0.78), (1.7, 1.7, 1.7)),
    ("lens_l", "ellipsoid", (0.60, 0.13, 0.33), (1.4, 1.4, 1.4)),
    ("lens_r", "ellipsoid", (0.60, 0.13, 0.67), (1.4, 1.4, 1.4)),
    ("optic_chiasm", "ellipsoid", (0.70, 0.36, 0.50), (1.2, 1.4, 2.2)),
    ("optic_nerve_l", "ellipsoid", (0.66, 0.26, 0.39), (1.2, 2.4, 1.3)),
    ("optic_nerve_r", "ellipsoid", (0.66, 0.26, 0.61), (1.2, 2.4, 1.3)),
    ("pineal", "ellipsoid", (0.80, 0.56, 0.50), (1.3, 1.3, 1.3)),
    ("pituitary", "ellipsoid", (0.66, 0.48, 0.50), (1.6, 1.6, 1.6)),
]

SH_RADIUS_MIN = 1.0
SH_RADIUS_MAX = 3.0
MAX_PLACEMENT_RETRIES = 200


@dataclass(frozen=True)
class PhantomSpec:
    """Generation parameters; a pure function of (spec, case_seed) output."""

    grid_shape: tuple[int, int, int] = (64, 64, 64)
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    body_intensity: float = 100.0
    anchor_contrast: tuple[float, float] = (300.0, 500.0)
    mid_contrast: tuple[float, float] = (30.0, 80.0)
    sh_contrast: tuple[float, float] = (20.0, 50.0)
    noise_sigma: float = 5.0
    jitter_frac: float = 0.05
    size_jitter: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if any(n < 24 for n in self.grid_shape):
            raise PlacementError(f"grid {self.grid_shape} too small for 42 organs")
        if not (0.0 <= self.jitter_frac <= 0.20):
            raise PlacementError("jitter_frac must lie in [0, 0.2]")
        bands = [self.anchor_contrast, self.mid_contrast, self.sh_contrast]
        if not all(lo <= hi for lo, hi in bands):
            raise PlacementError("contrast bands must be (lo, hi) with lo <= hi")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "PhantomSpec":
        d = dict(d)
        for key in ("grid_shape", "spacing_mm", "anchor_contrast", "mid_contrast", "sh_contrast"):
            if key in d:
                d[key] = tuple(d[key])
        return PhantomSpec(**d)


@dataclass(frozen=True)
class PhantomCase:
    image: Volume3D
    truth: LabelMask
    centers: dict[int, tuple[int, int, int]] = field(repr=False)


def _ellipsoid_mask(shape, center, semi):
    """Voxels whose centers lie inside the ellipsoid (clipped to grid)."""
    zz, yy, xx = [np.arange(n, dtype=np.float64) for n in shape]
    dz = ((zz - center[0]) / semi[0]) ** 2
    dy = ((yy - center[1]) / semi[1]) ** 2
    dx = ((xx - center[2]) / semi[2]) ** 2
    return (dz[:, None, None] + dy[None, :, None] + dx[None, None, :]) <= 1.0


def _tube_mask(shape, center, radius_yx, half_len_z):
    zz, yy, xx = [np.arange(n, dtype=np.float64) for n in shape]
    inplane = ((yy - center[1]) / radius_yx[0]) ** 2
    inplane = inplane[:, None] + (((xx - center[2]) / radius_yx[1]) ** 2)[None, :]
    along = np.abs(zz - center[0]) <= half_len_z
    return along[:, None, None] & (inplane <= 1.0)[None, :, :]


def _stratum_templates():
    return [
        (Stratum.ANCHOR, _ANCHOR_TEMPLATES),
        (Stratum.MID_LEVEL, _MID_TEMPLATES),
        (Stratum.SMALL_HARD, _SH_TEMPLATES),
    ]


def generate_phantom(spec: PhantomSpec, case_seed: int) -> PhantomCase:
    """Generate one phantom case, deterministic for (spec, case_seed).

    All 42 registry organs are present exactly once; organs within a
    stratum never overlap, and no placement may erase a previously
    placed organ's center voxel or its last remaining voxels.
    """
    registry = canonical_registry()
    rng = np.random.default_rng([spec.seed & 0x7FFFFFFF, case_seed & 0x7FFFFFFF])
    shape = spec.grid_shape
    grid = np.array(shape, dtype=np.float64)

    labels = np.zeros(shape, dtype=np.uint8)
    centers: dict[int, tuple[int, int, int]] = {}
    contrast_of: dict[int, float] = {}
    bands = {
        Stratum.ANCHOR: spec.anchor_contrast,
        Stratum.MID_LEVEL: spec.mid_contrast,
        Stratum.SMALL_HARD: spec.sh_contrast,
    }
    name_to_id = {e.name: e.label_id for e in registry.entries}

    for stratum, templates in _stratum_templates():
        stratum_taken = np.zeros(shape, dtype=bool)
        lo, hi = bands[stratum]
        for name, kind, base_center, base_size in templates:
            label_id = name_to_id[name]
            contrast_of[label_id] = float(rng.uniform(lo, hi))
            placed = False
            for _ in range(MAX_PLACEMENT_RETRIES):
                jitter = rng.uniform(-spec.jitter_frac, spec.jitter_frac, size=3)
                center_f = (np.array(base_center) + jitter) * grid
                center = tuple(
                    int(np.clip(np.rint(c), 1, n - 2)) for c, n in zip(center_f, shape)
                )
                scale = float(rng.uniform(1.0 - spec.size_jitter, 1.0 + spec.size_jitter))
                if stratum is Stratum.SMALL_HARD:
                    semi = np.clip(
                        np.array(base_size) * scale, SH_RADIUS_MIN, SH_RADIUS_MAX
                    )
                else:
                    semi = np.maximum(np.array(base_size) * scale * grid, 1.0)
                if kind == "tube":
                    cand = _tube_mask(shape, center, (semi[0], semi[1]), semi[2])
                else:
                    cand = _ellipsoid_mask(shape, center, semi)
                if not cand[center]:
                    continue
                if (cand & stratum_taken).any():
                    continue
                if _erases_prior_organ(cand, labels, centers):
                    continue
                labels[cand] = label_id
                stratum_taken |= cand
                centers[label_id] = center
                placed = True
                break
            if not placed:
                raise PlacementError(
                    f"could not place {name} after {MAX_PLACEMENT_RETRIES} retries"
                )

    image = np.zeros(shape, dtype=np.float64)
    body_center = grid * np.array([0.5, 0.5, 0.5])
    body_semi = grid * np.array([0.49, 0.44, 0.42])
    body = _ellipsoid_mask(shape, body_center, body_semi)
    image[body] = spec.body_intensity
    for label_id, contrast in contrast_of.items():
        image[labels == label_id] = spec.body_intensity + contrast
    image += rng.normal(0.0, spec.noise_sigma, size=shape)

    return PhantomCase(
        image=Volume3D(image.astype(np.float32), spec.spacing_mm, kind="intensity"),
        truth=LabelMask(labels, spec.spacing_mm, registry),
        centers=centers,
    )


def _erases_prior_organ(cand, labels, centers):
    overlapped = np.unique(labels[cand])
    for lab in overlapped:
        if lab == 0:
            continue
        if cand[centers[lab]]:
            return True
        if not (labels == lab)[~cand].any():
            return True
    return False


def split_counts(n_cases: int, split: tuple[float, float, float]) -> tuple[int, int, int]:
    if abs(sum(split) - 1.0) > 1e-9 or any(f < 0 for f in split):
        raise SplitError(f"split fractions {split} must be non-negative and sum to 1")
    n_train = min(int(split[0] * n_cases + 0.5), n_cases)
    n_val = min(int(split[1] * n_cases + 0.5), n_cases - n_train)
    return n_train, n_val, n_cases - n_train - n_val


def make_dataset(
    spec: PhantomSpec,
    n_cases: int,
    split: tuple[float, float, float],
    out_dir: str | Path,
) -> dict:
    """Generate and write a dataset; returns the manifest dict.

    Layout: ``<out>/{train,val,test}/<case_id>.{json,raw}`` image plus
    ``<case_id>_mask.{json,raw}`` and a ``manifest.json`` at the root.
    """
    n_train, n_val, n_test = split_counts(n_cases, split)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {out_dir}: {e}") from e

    assignments = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    cases = []
    for i, part in enumerate(assignments):
        case_id = f"case_{i:04d}"
        case = generate_phantom(spec, case_seed=i)
        part_dir = out_dir / part
        part_dir.mkdir(parents=True, exist_ok=True)
        save_volume(case.image, part_dir / case_id)
        save_volume(case.truth, part_dir / f"{case_id}_mask")
        cases.append(
            {
                "id": case_id,
                "seed": i,
                "split": part,
                "centers": {str(k): list(v) for k, v in case.centers.items()},
            }
        )
    manifest = {
        "spec": spec.to_json(),
        "split": {"train": n_train, "val": n_val, "test": n_test},
        "cases": cases,
    }
    try:
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    except OSError as e:
        raise IoError(f"cannot write manifest: {e}") from e
    return manifest


@dataclass(frozen=True)
class LoadedCase:
    case_id: str
    image: Volume3D
    truth: LabelMask
    centers: dict[int, tuple[int, int, int]]


def load_dataset(data_dir: str | Path, part: str) -> list[LoadedCase]:
    """Load every case of one split part, ordered by case id."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise IoError(f"no manifest.json under {data_dir}")
    manifest = json.loads(manifest_path.read_text())
    out = []
    for entry in manifest["cases"]:
        if entry["split"] != part:
            continue
        base = data_dir / part / entry["id"]
        image = load_volume(base)
        truth = load_volume(data_dir / part / f"{entry['id']}_mask")
        centers = {int(k): tuple(v) for k, v in entry["centers"].items()}
        out.append(LoadedCase(entry["id"], image, truth, centers))
    return sorted(out, key=lambda c: c.case_id)


def synthetic_dose_grid(
    shape: tuple[int, int, int],
    spacing_mm: tuple[float, float, float],
    seed: int,
    peak_gy: float = 70.0,
    n_lobes: int = 3,
) -> Volume3D:
    """Smooth synthetic planning-dose field: a sum of 3D Gaussian lobes."""
    rng = np.random.default_rng(seed)
    zz, yy, xx = np.meshgrid(
        *[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"
    )
    dose = np.zeros(shape, dtype=np.float64)
    for _ in range(n_lobes):
        c = rng.uniform(0.25, 0.75, size=3) * np.array(shape)
        sig = rng.uniform(0.15, 0.35, size=3) * np.array(shape)
        amp = rng.uniform(0.4, 1.0)
        dose += amp * np.exp(
            -0.5 * (((zz - c[0]) / sig[0]) ** 2 + ((yy - c[1]) / sig[1]) ** 2 + ((xx - c[2]) / sig[2]) ** 2)
        )
    dose *= peak_gy / dose.max()
    return Volume3D(dose.astype(np.float32), spacing_mm, kind="dose_gy")
