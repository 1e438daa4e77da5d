"""Topology invariants, complexity binning and grayness of raster designs.

The Euler number of a binary image is counted from 2x2 pixel
neighborhoods; together with the number of connected solid regions this
gives the number of interior holes (the genus), which is binned into
coarse complexity levels.  Solid pixels are 4-connected, void pixels
8-connected (the standard complementary pair).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_SOLID_STRUCTURE = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_VOID_STRUCTURE = np.ones((3, 3), dtype=bool)


def _as_binary(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("binary image must be a 2-D array")
    return (img > 0).astype(np.uint8)


@dataclass(frozen=True)
class ComplexityBinning:
    """Genus ranges per complexity level: inclusive upper bounds, last level open."""

    upper_bounds: tuple[int, ...]

    def __post_init__(self):
        bounds = tuple(self.upper_bounds)
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("binning bounds must be strictly increasing")
        object.__setattr__(self, "upper_bounds", bounds)

    @property
    def n_levels(self) -> int:
        return len(self.upper_bounds) + 1

    def level_of(self, genus_value: int) -> int:
        if genus_value < 0:
            raise ValueError("genus must be >= 0")
        for i, bound in enumerate(self.upper_bounds):
            if genus_value <= bound:
                return i + 1
        return self.n_levels


# Cantilever scheme: six levels, genus 0-5 / 6-10 / 11-15 / 16-20 / 21-24 / 25+.
CANTILEVER_BINNING = ComplexityBinning((5, 10, 15, 20, 24))
# Three-level scheme: genus 0-6 / 7-12 / 13+.
LBEAM_BINNING = ComplexityBinning((6, 12))


@dataclass(frozen=True)
class TopologySummary:
    """Euler number, both connectivity counts and the derived complexity level."""

    euler: int
    betti0: int
    genus: int
    diagonal_nodes: int
    complexity_level: int | None = None
    formula_mismatch: bool = False

    def __post_init__(self):
        if self.euler != self.betti0 - self.genus:
            raise ValueError("euler must equal betti0 - genus")
        if self.genus < 0:
            raise ValueError("genus must be >= 0")


def euler_number(img) -> tuple[float, int, int, int]:
    """Neighborhood-count Euler number of a binary image.

    The image is padded with one void ring and every 2x2 pixel
    neighborhood is classified by its number of solid pixels.  Returns
    (E, |A1|, |A3|, diagonal count) with E = (|A1| - |A3|) / 4; the
    diagonal count is the number of checkerboard neighborhoods, for which
    the plain formula is not exact.
    """
    a = np.pad(_as_binary(img), 1).astype(np.int32)
    q00 = a[:-1, :-1]
    q01 = a[:-1, 1:]
    q10 = a[1:, :-1]
    q11 = a[1:, 1:]
    count = q00 + q01 + q10 + q11
    a1 = int((count == 1).sum())
    a3 = int((count == 3).sum())
    diag = int(((count == 2) & (q00 == q11) & (q01 == q10)).sum())
    return (a1 - a3) / 4.0, a1, a3, diag


def betti0(img) -> int:
    """Number of 4-connected solid regions."""
    _, num = ndimage.label(_as_binary(img), structure=_SOLID_STRUCTURE)
    return int(num)


def count_holes(img) -> int:
    """Interior holes by flood fill: 8-connected void regions not touching the border."""
    void = np.pad(1 - _as_binary(img), 1, constant_values=1)
    _, num = ndimage.label(void, structure=_VOID_STRUCTURE)
    # The pad ring joins all outside void into a single border component.
    return int(num) - 1 if num else 0


def genus(img, binning: ComplexityBinning | None = None) -> TopologySummary:
    """Topology summary of a binary image.

    The genus comes from the neighborhood-count Euler number whenever no
    checkerboard neighborhood exists; otherwise (where that formula is not
    exact) it is recomputed by hole-counting flood fill and the summary is
    flagged.
    """
    e_plain, _, _, diag = euler_number(img)
    b0 = betti0(img)
    if diag == 0:
        b1 = int(round(b0 - e_plain))
    else:
        b1 = count_holes(img)
    mismatch = (b0 - b1) != e_plain
    if b1 < 0:
        b1 = count_holes(img)
        mismatch = True
    level = binning.level_of(b1) if binning is not None else None
    return TopologySummary(
        euler=b0 - b1,
        betti0=b0,
        genus=b1,
        diagonal_nodes=diag,
        complexity_level=level,
        formula_mismatch=mismatch,
    )


def complexity_level(genus_value: int, binning: ComplexityBinning) -> int:
    """Complexity level of one genus value under a binning scheme."""
    return binning.level_of(genus_value)


def m_nd(image) -> float:
    """Percentage grayness of a raster: 0 for pure 0/1 images, 100 for uniform 0.5."""
    rho = np.asarray(image, dtype=float)
    if rho.size == 0:
        raise ValueError("empty image")
    if rho.min() < 0.0 or rho.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    return float((4.0 * rho * (1.0 - rho)).mean() * 100.0)
