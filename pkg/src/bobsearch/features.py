"""Patch feature extraction behind a pluggable boundary.

The built-in reference extractor ("ref-v1") is a deterministic handcrafted
256-dimensional descriptor; externally computed deep features can be imported
from a text table instead. Exactly one extractor (hence one dimensionality)
backs a whole index.

ref-v1 layout, L2-normalized as a whole (raw segment semantics below):

    [0, 32)    4x4 grid, per cell (luminance mean, luminance std) / 255
    [32, 80)   16-bin histogram per color channel (R|G|B), each L1-normalized
    [80, 208)  2x2 quadrants x 2 gradient-magnitude bands x 16 orientation
               bins; counts normalized per quadrant. Band 0 holds pixels with
               gradient magnitude <= 10 (a flat patch lands entirely there).
    [208, 256) 4x4 grid, per cell mean (R, G, B) / 255
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tissue import luminance

__all__ = [
    "FeatureVector",
    "ExtractorDescriptor",
    "FeatureFormatError",
    "REFERENCE_EXTRACTOR_ID",
    "REFERENCE_DIM",
    "extract_reference_features",
    "reference_descriptor_raw",
    "import_external_features",
    "write_external_features",
]

REFERENCE_EXTRACTOR_ID = "ref-v1"
REFERENCE_DIM = 256

_GRID = 4
_COLOR_BINS = 16
_QUADRANTS = 2
_ORIENT_BINS = 16
_MAG_BANDS = 2
_MAG_THRESHOLD = 10.0


class FeatureFormatError(ValueError):
    """External feature file violates the expected format."""


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Real-valued descriptor of one patch, tagged with its extractor."""

    values: np.ndarray
    extractor_id: str

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("feature vector must be a nonempty 1-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature vector contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.extractor_id == other.extractor_id and np.array_equal(
            self.values, other.values
        )


@dataclass(frozen=True)
class ExtractorDescriptor:
    extractor_id: str
    dim: int
    kind: str  # "built-in" | "external"


def _cell_bounds(size: int, parts: int) -> list[tuple[int, int]]:
    return [(i * size // parts, (i + 1) * size // parts) for i in range(parts)]


def reference_descriptor_raw(patch: np.ndarray) -> np.ndarray:
    """Unnormalized ref-v1 descriptor; see the module docstring for layout."""
    arr = np.asarray(patch)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square HxWx3 patch, got shape {arr.shape}")
    if arr.shape[0] < _GRID:
        raise ValueError(f"patch side must be >= {_GRID}")
    arr = arr.astype(np.float64)
    side = arr.shape[0]
    lum = luminance(arr)

    out = np.empty(REFERENCE_DIM, dtype=np.float64)
    pos = 0

    cells = _cell_bounds(side, _GRID)
    for y0, y1 in cells:
        for x0, x1 in cells:
            window = lum[y0:y1, x0:x1]
            out[pos] = window.mean() / 255.0
            out[pos + 1] = window.std() / 255.0
            pos += 2

    n_px = side * side
    scaled = (arr.astype(np.int64) * _COLOR_BINS) >> 8
    for c in range(3):
        counts = np.bincount(scaled[:, :, c].ravel(), minlength=_COLOR_BINS)
        out[pos : pos + _COLOR_BINS] = counts / n_px
        pos += _COLOR_BINS

    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    orient = np.arctan2(gy, gx)  # [-pi, pi]
    obin = np.clip(
        ((orient + np.pi) / (2 * np.pi) * _ORIENT_BINS).astype(np.int64), 0, _ORIENT_BINS - 1
    )
    band = (mag > _MAG_THRESHOLD).astype(np.int64)
    quads = _cell_bounds(side, _QUADRANTS)
    for y0, y1 in quads:
        for x0, x1 in quads:
            combined = (band[y0:y1, x0:x1] * _ORIENT_BINS + obin[y0:y1, x0:x1]).ravel()
            counts = np.bincount(combined, minlength=_MAG_BANDS * _ORIENT_BINS)
            out[pos : pos + _MAG_BANDS * _ORIENT_BINS] = counts / combined.size
            pos += _MAG_BANDS * _ORIENT_BINS

    for y0, y1 in cells:
        for x0, x1 in cells:
            out[pos : pos + 3] = arr[y0:y1, x0:x1].mean(axis=(0, 1)) / 255.0
            pos += 3

    assert pos == REFERENCE_DIM
    return out


def extract_reference_features(patch: np.ndarray) -> FeatureVector:
    """Deterministic 256-dim descriptor of a square RGB patch, L2-normalized."""
    raw = reference_descriptor_raw(patch)
    norm = math.sqrt(float(raw @ raw))
    if norm > 0:
        raw = raw / norm
    return FeatureVector(raw, REFERENCE_EXTRACTOR_ID)


extract_reference_features.extractor_id = REFERENCE_EXTRACTOR_ID


def import_external_features(
    path: str | Path, expected_extractor_id: str | None = None
) -> tuple[dict[tuple[str, int, int], FeatureVector], ExtractorDescriptor]:
    """Load externally computed features keyed by (slide_id, grid_x, grid_y).

    The file starts with `#extractor_id=<id> d=<int>` and has one row per
    patch: `slide_id grid_x grid_y v_1 ... v_d`, whitespace separated.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise FeatureFormatError("missing header line '#extractor_id=<id> d=<int>'")
        fields = dict(
            part.split("=", 1) for part in header[1:].split() if "=" in part
        )
        if "extractor_id" not in fields or "d" not in fields:
            raise FeatureFormatError(f"malformed header: {header!r}")
        extractor_id = fields["extractor_id"]
        dim = int(fields["d"])
        if dim < 2:
            raise FeatureFormatError("feature dimension must be >= 2")
        if expected_extractor_id is not None and extractor_id != expected_extractor_id:
            raise FeatureFormatError(
                f"extractor {extractor_id!r} does not match expected "
                f"{expected_extractor_id!r}"
            )

        table: dict[tuple[str, int, int], FeatureVector] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3 + dim:
                raise FeatureFormatError(
                    f"row {lineno}: expected {3 + dim} fields, got {len(parts)}"
                )
            key = (parts[0], int(parts[1]), int(parts[2]))
            values = np.array(parts[3:], dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise FeatureFormatError(f"row {lineno}: non-finite feature value")
            if key in table:
                raise FeatureFormatError(f"row {lineno}: duplicate patch key {key}")
            table[key] = FeatureVector(values, extractor_id)

    return table, ExtractorDescriptor(extractor_id, dim, "external")


def write_external_features(
    path: str | Path,
    extractor_id: str,
    rows: dict[tuple[str, int, int], np.ndarray],
) -> None:
    """Write a feature table in the import format (keys sorted for stability)."""
    keys = sorted(rows)
    dim = len(next(iter(rows.values()))) if rows else 0
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"#extractor_id={extractor_id} d={dim}\n")
        for key in keys:
            values = " ".join(repr(float(v)) for v in rows[key])
            fh.write(f"{key[0]} {key[1]} {key[2]} {values}\n")
