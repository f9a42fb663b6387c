"""Stratified organ-at-risk segmentation at desk scale.

Three processing branches (anchor, mid-level, small & hard) over a
searchable UNet backbone, exercised on synthetic phantoms, with a full
segmentation-metric and dosimetric evaluation suite.
"""

__version__ = "0.1.0"
