"""Exact dyadic toolkit for projections, multiplicities and entropy of planar fractal measures."""

from fraclab.dyadic import (
    DyadicCell,
    DyadicInterval,
    GridSet,
    ScaleLadder,
    ball_cells,
    covering_count,
    neighborhood,
)

__all__ = [
    "DyadicCell",
    "DyadicInterval",
    "GridSet",
    "ScaleLadder",
    "ball_cells",
    "covering_count",
    "neighborhood",
]
__version__ = "0.1.0"
