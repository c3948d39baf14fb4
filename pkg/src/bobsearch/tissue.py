"""Tissue segmentation at low magnification.

Pixels darker than an Otsu-derived luminance threshold count as tissue; the
raw mask is cleaned up with a morphological close and small-component
removal. Masks precompute an integral image so region tissue fractions are
O(1) queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .slide_io import Level, Region, RegionBoundsError

__all__ = [
    "SegParams",
    "TissueMask",
    "luminance",
    "otsu_threshold",
    "segment_tissue",
    "tissue_fraction",
    "load_mask_override",
]

_CLOSE_STRUCTURE = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SegParams:
    threshold_low: int | None = None  # clamp bounds applied to the Otsu threshold
    threshold_high: int | None = None
    close_iters: int = 1
    min_component_px: int = 32


@dataclass(eq=False)
class TissueMask:
    """Binary tissue map for one level; immutable once built."""

    magnification: float
    bits: np.ndarray  # bool (height, width)
    no_tissue: bool = False
    _integral: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        bits.flags.writeable = False
        self.bits = bits
        integral = np.zeros((bits.shape[0] + 1, bits.shape[1] + 1), dtype=np.int64)
        integral[1:, 1:] = np.cumsum(np.cumsum(bits, axis=0, dtype=np.int64), axis=1)
        self._integral = integral

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def true_count(self, x0: int, y0: int, x1: int, y1: int) -> int:
        """Count of tissue pixels in the half-open box [x0,x1) x [y0,y1)."""
        s = self._integral
        return int(s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0])

    def fraction(self) -> float:
        """Overall tissue fraction, O(1)."""
        return self.true_count(0, 0, self.width, self.height) / (self.width * self.height)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an RGB array, as float64 in [0, 255]."""
    arr = np.asarray(rgb, dtype=np.float64)
    return 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]


def otsu_threshold(hist: np.ndarray) -> int:
    """Threshold t maximizing between-class variance of classes [0,t) and [t,256).

    Depends only on the histogram; the lowest maximizing t wins ties.
    """
    hist = np.asarray(hist, dtype=np.float64)
    total = hist.sum()
    if total == 0:
        return 0
    p = hist / total
    bins = np.arange(hist.size)
    omega0 = np.cumsum(p)  # weight of [0, t] inclusive
    mu = np.cumsum(p * bins)
    mu_total = mu[-1]
    omega1 = 1.0 - omega0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_total * omega0 - mu) ** 2 / (omega0 * omega1)
    between[~np.isfinite(between)] = -1.0
    # between[i] scores the split {0..i} vs {i+1..}; threshold is i+1
    return int(np.argmax(between)) + 1


def segment_tissue(level: Level, params: SegParams = SegParams()) -> TissueMask:
    """Binary tissue mask for a level raster.

    A degenerate raster (all pixels identical) yields an all-false mask with
    the no_tissue flag set instead of an error.
    """
    raster = level.raster()
    lum = np.clip(np.rint(luminance(raster)), 0, 255).astype(np.uint8)

    if lum.max() == lum.min():
        empty = np.zeros(lum.shape, dtype=bool)
        return TissueMask(level.magnification, empty, no_tissue=True)

    hist = np.bincount(lum.ravel(), minlength=256)
    threshold = otsu_threshold(hist)
    if params.threshold_low is not None:
        threshold = max(threshold, params.threshold_low)
    if params.threshold_high is not None:
        threshold = min(threshold, params.threshold_high)

    mask = lum < threshold

    if params.close_iters > 0 and mask.any():
        # dilate then erode with outside treated as tissue, so closing never
        # removes true pixels at the borders
        dilated = ndimage.binary_dilation(
            mask, structure=_CLOSE_STRUCTURE, iterations=params.close_iters
        )
        mask = ndimage.binary_erosion(
            dilated,
            structure=_CLOSE_STRUCTURE,
            iterations=params.close_iters,
            border_value=1,
        )

    if params.min_component_px > 1 and mask.any():
        labels, n = ndimage.label(mask)
        if n:
            sizes = np.bincount(labels.ravel())
            keep = sizes >= params.min_component_px
            keep[0] = False
            mask = keep[labels]

    return TissueMask(level.magnification, mask, no_tissue=not mask.any())


def tissue_fraction(mask: TissueMask, region: Region) -> float:
    """Fraction of tissue pixels inside a region at the mask's magnification."""
    if region.level_magnification != mask.magnification:
        raise RegionBoundsError(
            f"region magnification {region.level_magnification:g} does not match "
            f"mask magnification {mask.magnification:g}"
        )
    x1 = region.x + region.size_px
    y1 = region.y + region.size_px
    if x1 > mask.width or y1 > mask.height:
        raise RegionBoundsError(
            f"region {region.size_px}px at ({region.x},{region.y}) exceeds mask "
            f"{mask.width}x{mask.height}"
        )
    return mask.true_count(region.x, region.y, x1, y1) / (region.size_px**2)


def load_mask_override(slide_root: Path, magnification: float) -> TissueMask | None:
    """Per-slide manual mask: `mask_<magnification>.png` beside the manifest.

    Nonzero pixels mark tissue. Returns None when no override exists.
    """
    path = Path(slide_root) / f"mask_{magnification:g}.png"
    if not path.is_file():
        return None
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    bits = arr > 0
    return TissueMask(magnification, bits, no_tissue=not bits.any())
