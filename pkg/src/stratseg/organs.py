"""Canonical head-and-neck organ registry: 42 organs in three strata."""

from .volumes import OrganEntry, OrganRegistry, Stratum

_ANCHOR = [
    "brainstem",
    "cerebellum",
    "eye_l",
    "eye_r",
    "mandible_l",
    "mandible_r",
    "spinal_cord",
    "tmj_l",
    "tmj_r",
]

_MID_LEVEL = [
    "basal_ganglia_l",
    "basal_ganglia_r",
    "brachial_plexus_l",
    "brachial_plexus_r",
    "constrictor_inf",
    "constrictor_mid",
    "constrictor_sup",
    "epiglottis",
    "esophagus",
    "larynx_gs",
    "oral_cavity",
    "parotid_l",
    "parotid_r",
    "smg_l",
    "smg_r",
    "temporal_lobe_l",
    "temporal_lobe_r",
    "thyroid_l",
    "thyroid_r",
]

_SMALL_HARD = [
    "cochlea_l",
    "cochlea_r",
    "hypothalamus",
    "inner_ear_l",
    "inner_ear_r",
    "lacrimal_l",
    "lacrimal_r",
    "lens_l",
    "lens_r",
    "optic_chiasm",
    "optic_nerve_l",
    "optic_nerve_r",
    "pineal",
    "pituitary",
]


def canonical_registry() -> OrganRegistry:
    """The 42-organ registry: 9 anchor, 19 mid-level, 14 small & hard."""
    entries = []
    label = 1
    for names, stratum in (
        (_ANCHOR, Stratum.ANCHOR),
        (_MID_LEVEL, Stratum.MID_LEVEL),
        (_SMALL_HARD, Stratum.SMALL_HARD),
    ):
        for name in names:
            entries.append(OrganEntry(label, name, stratum))
            label += 1
    return OrganRegistry(tuple(entries))
