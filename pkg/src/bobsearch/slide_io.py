"""Portable pyramid-slide format: manifest loading and pixel region access.

A slide is a directory holding `manifest.json` plus one lossless RGB PNG per
pyramid level, listed in decreasing magnification. Pixels are loaded lazily
per level and cached; slides are immutable after opening, so concurrent
region reads are safe.
"""

from __future__ import annotations

import json
import math
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "MANIFEST_NAME",
    "SlideFormatError",
    "InsufficientPyramidError",
    "RegionBoundsError",
    "SlideLabels",
    "Level",
    "Region",
    "SlidePyramid",
    "normalize_label",
    "open_slide",
    "select_magnification",
    "read_region",
]

MANIFEST_NAME = "manifest.json"

# manifest-vs-file and level-geometry checks both allow rounding slack
DIMENSION_TOLERANCE_PX = 1

_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)
_WS_RE = re.compile(r"\s+")


class SlideFormatError(ValueError):
    """Slide directory or manifest does not satisfy the on-disk contract."""


class InsufficientPyramidError(SlideFormatError):
    """Slide has fewer than two pyramid levels and is rejected."""


class RegionBoundsError(ValueError):
    """Requested region falls outside the resolved level."""


def normalize_label(text: str | None) -> str | None:
    """Lowercase, strip punctuation, and collapse whitespace in a label."""
    if text is None:
        return None
    cleaned = _PUNCT_RE.sub(" ", text.lower())
    cleaned = _WS_RE.sub(" ", cleaned).strip()
    return cleaned or None


@dataclass(frozen=True)
class SlideLabels:
    """Normalized site/diagnosis annotations; used for validation only."""

    primary_site: str | None = None
    primary_diagnosis: str | None = None

    @classmethod
    def from_raw(cls, site: str | None, diagnosis: str | None) -> "SlideLabels":
        return cls(normalize_label(site), normalize_label(diagnosis))


@dataclass(eq=False)
class Level:
    """One pyramid level: magnification, dimensions, and lazily loaded pixels."""

    magnification: float
    width_px: int
    height_px: int
    path: Path | None = None
    _array: np.ndarray | None = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.magnification <= 0:
            raise SlideFormatError("magnification must be positive")
        if self.width_px < 1 or self.height_px < 1:
            raise SlideFormatError("level dimensions must be >= 1")

    @classmethod
    def from_array(cls, magnification: float, array: np.ndarray) -> "Level":
        """In-memory level, mainly for tests and transient pipelines."""
        arr = np.ascontiguousarray(array, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise SlideFormatError("level array must be HxWx3 uint8")
        level = cls(magnification, arr.shape[1], arr.shape[0])
        level._array = arr
        return level

    def raster(self) -> np.ndarray:
        """Full-level RGB array (height, width, 3), loaded once and cached."""
        if self._array is None:
            with self._lock:
                if self._array is None:
                    if self.path is None:
                        raise SlideFormatError("level has no backing image")
                    with Image.open(self.path) as img:
                        self._array = np.asarray(img.convert("RGB"), dtype=np.uint8)
        return self._array

    def release(self) -> None:
        """Drop the cached pixel array (reloaded on next access)."""
        if self.path is not None:
            with self._lock:
                self._array = None


@dataclass(frozen=True)
class Region:
    """Square pixel window on the level with the given magnification."""

    level_magnification: float
    x: int
    y: int
    size_px: int

    def __post_init__(self):
        if self.level_magnification <= 0:
            raise RegionBoundsError("region magnification must be positive")
        if self.x < 0 or self.y < 0:
            raise RegionBoundsError("region origin must be non-negative")
        if self.size_px < 1:
            raise RegionBoundsError("region size must be positive")


@dataclass(eq=False)
class SlidePyramid:
    """Multi-resolution slide: ordered levels plus identifying metadata."""

    slide_id: str
    levels: list[Level]
    metadata: SlideLabels = field(default_factory=SlideLabels)
    root: Path | None = None

    def level_for(self, magnification: float) -> Level:
        for level in self.levels:
            if math.isclose(level.magnification, magnification, rel_tol=1e-9):
                return level
        raise RegionBoundsError(f"no level at magnification {magnification:g}")

    def release(self) -> None:
        for level in self.levels:
            level.release()


def _check_level_geometry(levels: list[Level]) -> None:
    base = levels[0]
    prev_mag = None
    for level in levels:
        if prev_mag is not None and level.magnification >= prev_mag:
            raise SlideFormatError("levels must be in strictly decreasing magnification")
        prev_mag = level.magnification
        ratio = level.magnification / base.magnification
        expect_w = round(base.width_px * ratio)
        expect_h = round(base.height_px * ratio)
        if (
            abs(level.width_px - expect_w) > DIMENSION_TOLERANCE_PX
            or abs(level.height_px - expect_h) > DIMENSION_TOLERANCE_PX
        ):
            raise SlideFormatError(
                f"level {level.magnification:g}x dimensions "
                f"{level.width_px}x{level.height_px} inconsistent with base level "
                f"(expected ~{expect_w}x{expect_h})"
            )


def open_slide(path: str | Path) -> SlidePyramid:
    """Open a slide directory, validating the manifest against the image files.

    Pixel data is not decoded here; only image headers are read to verify
    dimensions (within +/-1 px of the manifest).
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise SlideFormatError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SlideFormatError(f"unreadable manifest: {exc}") from exc

    slide_id = manifest.get("slide_id")
    if not isinstance(slide_id, str) or not slide_id:
        raise SlideFormatError("manifest must declare a nonempty slide_id")
    raw_labels = manifest.get("labels") or {}
    labels = SlideLabels.from_raw(
        raw_labels.get("primary_site"), raw_labels.get("primary_diagnosis")
    )

    level_entries = manifest.get("levels")
    if not isinstance(level_entries, list) or not level_entries:
        raise SlideFormatError("manifest declares no levels")
    if len(level_entries) < 2:
        raise InsufficientPyramidError(
            f"insufficient pyramid: slide {slide_id!r} has only "
            f"{len(level_entries)} level(s)"
        )

    levels: list[Level] = []
    for entry in level_entries:
        img_path = root / entry["file"]
        if not img_path.is_file():
            raise SlideFormatError(f"missing level image: {img_path}")
        with Image.open(img_path) as img:
            actual_w, actual_h = img.size
        decl_w, decl_h = int(entry["width_px"]), int(entry["height_px"])
        if (
            abs(actual_w - decl_w) > DIMENSION_TOLERANCE_PX
            or abs(actual_h - decl_h) > DIMENSION_TOLERANCE_PX
        ):
            raise SlideFormatError(
                f"level image {img_path.name} is {actual_w}x{actual_h}, "
                f"manifest declares {decl_w}x{decl_h}"
            )
        levels.append(
            Level(
                magnification=float(entry["magnification"]),
                width_px=actual_w,
                height_px=actual_h,
                path=img_path,
            )
        )

    _check_level_geometry(levels)
    return SlidePyramid(slide_id=slide_id, levels=levels, metadata=labels, root=root)


def select_magnification(slide: SlidePyramid, target: float) -> Level:
    """Level whose magnification is nearest to target; ties go to the higher one."""
    if not slide.levels:
        raise SlideFormatError("slide has no levels")
    return min(
        slide.levels,
        key=lambda lv: (abs(lv.magnification - target), -lv.magnification),
    )


def read_region(slide: SlidePyramid, region: Region) -> np.ndarray:
    """Pixel-exact copy of a square region; no resampling.

    The region is resolved against the level with exactly the requested
    magnification and must lie fully inside it.
    """
    level = slide.level_for(region.level_magnification)
    if region.x + region.size_px > level.width_px or region.y + region.size_px > level.height_px:
        raise RegionBoundsError(
            f"region {region.size_px}px at ({region.x},{region.y}) exceeds level "
            f"{level.width_px}x{level.height_px}"
        )
    raster = level.raster()
    out = raster[region.y : region.y + region.size_px, region.x : region.x + region.size_px]
    return out.copy()
