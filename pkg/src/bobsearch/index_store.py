"""Per-slide barcode-bunch indexing and the persistent archive format.

The archive file is a binary container: magic `BOB1`, version, a JSON header
carrying the indexing configuration, then per-slide records (id, labels,
patch refs, packed barcodes) and a trailing CRC32. The byte layout is
documented in docs/index-format.md; saving is canonical (slides sorted by
id), so equal indexes serialize to identical bytes.
"""

from __future__ import annotations

import io
import json
import logging
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .barcode import Barcode, BunchOfBarcodes, minmax_barcode, packed_size
from .features import FeatureVector, extract_reference_features
from .mosaic import (
    EmptySlideError,
    IndexingConfig,
    Mosaic,
    PatchRef,
    build_mosaic,
)
from .slide_io import (
    MANIFEST_NAME,
    Region,
    SlideFormatError,
    SlideLabels,
    SlidePyramid,
    normalize_label,
    open_slide,
    read_region,
    select_magnification,
)
from .tissue import SegParams, load_mask_override, segment_tissue

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "IndexFormatError",
    "IndexedSlide",
    "ArchiveIndex",
    "map_patch_window",
    "index_slide",
    "build_archive_index",
    "save_index",
    "load_index",
    "filter_by_site",
]

logger = logging.getLogger(__name__)

MAGIC = b"BOB1"
FORMAT_VERSION = 1

_ABSENT = 0xFFFF  # length sentinel for absent optional strings


class IndexFormatError(ValueError):
    """Archive file is not a readable BoB index (magic, version, CRC, size)."""


@dataclass(eq=False)
class IndexedSlide:
    """One slide's index entry: labels plus its bunch of barcodes."""

    slide_id: str
    labels: SlideLabels
    bob: BunchOfBarcodes
    mosaic: Mosaic | None = field(default=None, compare=False, repr=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, IndexedSlide):
            return NotImplemented
        return (
            self.slide_id == other.slide_id
            and self.labels == other.labels
            and self.bob == other.bob
        )


@dataclass(eq=False)
class ArchiveIndex:
    """Immutable archive-wide index; shared freely by concurrent searchers."""

    entries: dict[str, IndexedSlide]
    config: IndexingConfig
    extractor_id: str

    def __post_init__(self):
        lengths = {s.bob.length for s in self.entries.values()}
        if len(lengths) > 1:
            raise IndexFormatError(f"mixed barcode lengths in index: {sorted(lengths)}")

    @property
    def barcode_length(self) -> int:
        if not self.entries:
            raise IndexFormatError("empty index has no barcode length")
        return next(iter(self.entries.values())).bob.length

    def slide_ids(self) -> list[str]:
        return sorted(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ArchiveIndex):
            return NotImplemented
        return (
            self.entries == other.entries
            and self.config == other.config
            and self.extractor_id == other.extractor_id
        )


def map_patch_window(
    patch: PatchRef,
    clustering_magnification: float,
    level_width: int,
    level_height: int,
    s_l: int,
    s_h: int,
    level_magnification: float,
) -> tuple[int, int, bool]:
    """High-magnification window origin for a low-magnification patch.

    Scales the patch center by the magnification ratio and centers an
    s_h-sided window on it, clamping so the window stays inside the level.
    Returns (x, y, clamped).
    """
    if level_width < s_h or level_height < s_h:
        raise SlideFormatError(
            f"indexing level {level_width}x{level_height} smaller than patch side {s_h}"
        )
    scale = level_magnification / clustering_magnification
    cx = (patch.origin_x + s_l / 2.0) * scale
    cy = (patch.origin_y + s_l / 2.0) * scale
    x = int(round(cx - s_h / 2.0))
    y = int(round(cy - s_h / 2.0))
    clamped_x = min(max(x, 0), level_width - s_h)
    clamped_y = min(max(y, 0), level_height - s_h)
    return clamped_x, clamped_y, (clamped_x, clamped_y) != (x, y)


def index_slide(
    slide: SlidePyramid,
    cfg: IndexingConfig,
    extractor: Callable[[np.ndarray], FeatureVector] = extract_reference_features,
    *,
    external_features: dict[tuple[str, int, int], FeatureVector] | None = None,
    seg_params: SegParams = SegParams(),
    feature_sink: dict[tuple[str, int, int], np.ndarray] | None = None,
) -> IndexedSlide:
    """Segment, mosaic, and barcode one slide.

    With external_features set, vectors are looked up by patch key instead of
    extracting from pixels (the high-magnification level is never read).
    """
    c_level = select_magnification(slide, cfg.m_x_c)
    mask = None
    if slide.root is not None:
        mask = load_mask_override(slide.root, c_level.magnification)
    if mask is None:
        mask = segment_tissue(c_level, seg_params)

    mosaic = build_mosaic(slide, mask, cfg)

    idx_level = select_magnification(slide, cfg.m_x_idx)
    entries: list[tuple[PatchRef, Barcode]] = []
    n_clamped = 0
    for patch in mosaic.patches:
        key = (slide.slide_id, patch.grid_x, patch.grid_y)
        if external_features is not None:
            if key not in external_features:
                raise KeyError(f"no external features for patch {key}")
            fv = external_features[key]
        else:
            x, y, clamped = map_patch_window(
                patch,
                c_level.magnification,
                idx_level.width_px,
                idx_level.height_px,
                cfg.s_l,
                cfg.s_h,
                idx_level.magnification,
            )
            n_clamped += clamped
            raster = read_region(slide, Region(idx_level.magnification, x, y, cfg.s_h))
            fv = extractor(raster)
        if feature_sink is not None:
            feature_sink[key] = np.asarray(fv.values)
        entries.append((patch, minmax_barcode(fv)))

    if n_clamped:
        logger.info("slide %s: clamped %d patch window(s)", slide.slide_id, n_clamped)

    return IndexedSlide(
        slide_id=slide.slide_id,
        labels=slide.metadata,
        bob=BunchOfBarcodes(slide.slide_id, entries),
        mosaic=mosaic,
    )


def iter_slide_dirs(corpus_dir: str | Path) -> list[Path]:
    """Slide directories (those containing a manifest) under corpus_dir, sorted."""
    root = Path(corpus_dir)
    return sorted(p.parent for p in root.glob(f"*/{MANIFEST_NAME}"))


def build_archive_index(
    corpus_dir: str | Path,
    cfg: IndexingConfig,
    extractor: Callable[[np.ndarray], FeatureVector] = extract_reference_features,
    *,
    external_features: dict[tuple[str, int, int], FeatureVector] | None = None,
    extractor_id: str | None = None,
    seg_params: SegParams = SegParams(),
    workers: int = 1,
    strict: bool = False,
    feature_sink: dict[tuple[str, int, int], np.ndarray] | None = None,
) -> ArchiveIndex:
    """Index every slide directory under corpus_dir.

    Unusable slides (bad pyramid, no tissue) are skipped with a warning
    unless strict is set, mirroring archive-curation practice.
    """
    slide_dirs = iter_slide_dirs(corpus_dir)
    if not slide_dirs:
        raise SlideFormatError(f"no slide directories under {corpus_dir}")

    def one(slide_dir: Path) -> IndexedSlide | None:
        try:
            slide = open_slide(slide_dir)
            indexed = index_slide(
                slide,
                cfg,
                extractor,
                external_features=external_features,
                seg_params=seg_params,
                feature_sink=feature_sink,
            )
            slide.release()
            return indexed
        except (SlideFormatError, EmptySlideError) as exc:
            if strict:
                raise
            logger.warning("skipping %s: %s", slide_dir.name, exc)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, slide_dirs))
    else:
        results = [one(d) for d in slide_dirs]

    entries = {s.slide_id: s for s in results if s is not None}
    if not entries:
        raise EmptySlideError(f"no indexable slides under {corpus_dir}")

    if extractor_id is None:
        extractor_id = getattr(extractor, "extractor_id", "") or next(
            iter(entries.values())
        ).bob.entries[0][1].extractor_id
    return ArchiveIndex(entries=entries, config=cfg, extractor_id=extractor_id)


def _write_str(buf: io.BytesIO, text: str | None) -> None:
    if text is None:
        buf.write(struct.pack("<H", _ABSENT))
        return
    raw = text.encode("utf-8")
    if len(raw) >= _ABSENT:
        raise IndexFormatError(f"string too long to serialize ({len(raw)} bytes)")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexFormatError("truncated index file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def read_str(self) -> str | None:
        (n,) = self.unpack("<H")
        if n == _ABSENT:
            return None
        return self.take(n).decode("utf-8")


def save_index(index: ArchiveIndex, path: str | Path) -> None:
    """Serialize an archive index; equal indexes produce identical bytes."""
    if not index.entries:
        raise IndexFormatError("refusing to save an empty index")
    length = index.barcode_length
    nbytes = packed_size(length)

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    header = json.dumps(
        {
            "config": index.config.to_json(),
            "extractor_id": index.extractor_id,
            "barcode_length": length,
        },
        sort_keys=True,
    ).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)

    buf.write(struct.pack("<I", len(index.entries)))
    for slide_id in sorted(index.entries):
        slide = index.entries[slide_id]
        _write_str(buf, slide.slide_id)
        _write_str(buf, slide.labels.primary_site)
        _write_str(buf, slide.labels.primary_diagnosis)
        buf.write(struct.pack("<I", len(slide.bob.entries)))
        for ref, _ in slide.bob.entries:
            buf.write(
                struct.pack(
                    "<5i", ref.grid_x, ref.grid_y, ref.origin_x, ref.origin_y, ref.color_cluster
                )
            )
        for _, bc in slide.bob.entries:
            assert bc.packed.size == nbytes
            buf.write(bc.packed.tobytes())

    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(payload + struct.pack("<I", crc))


def load_index(path: str | Path) -> ArchiveIndex:
    """Load an archive index, verifying magic, version, and checksum."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 2 + 4:
        raise IndexFormatError("truncated index file")
    if data[: len(MAGIC)] != MAGIC:
        raise IndexFormatError(
            f"bad magic {data[:len(MAGIC)]!r}: not a supported index version"
        )
    crc_stored = struct.unpack("<I", data[-4:])[0]
    crc_actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if crc_stored != crc_actual:
        raise IndexFormatError("checksum failure: index file is corrupt")

    reader = _Reader(data[:-4])
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index version {version}")
    (header_len,) = reader.unpack("<I")
    header = json.loads(reader.take(header_len).decode("utf-8"))
    cfg = IndexingConfig.from_json(header["config"])
    extractor_id = header["extractor_id"]
    length = int(header["barcode_length"])
    nbytes = packed_size(length)

    (n_slides,) = reader.unpack("<I")
    entries: dict[str, IndexedSlide] = {}
    for _ in range(n_slides):
        slide_id = reader.read_str()
        if slide_id is None:
            raise IndexFormatError("slide record missing id")
        site = reader.read_str()
        diagnosis = reader.read_str()
        (n_patches,) = reader.unpack("<I")
        refs = []
        for _ in range(n_patches):
            gx, gy, ox, oy, cc = reader.unpack("<5i")
            refs.append(
                PatchRef(
                    slide_id=slide_id,
                    grid_x=gx,
                    grid_y=gy,
                    origin_x=ox,
                    origin_y=oy,
                    color_cluster=cc,
                )
            )
        bob_entries = []
        for ref in refs:
            packed = np.frombuffer(reader.take(nbytes), dtype=np.uint8)
            bob_entries.append((ref, Barcode(packed, length, extractor_id)))
        entries[slide_id] = IndexedSlide(
            slide_id=slide_id,
            labels=SlideLabels(primary_site=site, primary_diagnosis=diagnosis),
            bob=BunchOfBarcodes(slide_id, bob_entries),
        )
    if reader.pos != len(reader.data):
        raise IndexFormatError("trailing bytes after last slide record")

    return ArchiveIndex(entries=entries, config=cfg, extractor_id=extractor_id)


def filter_by_site(index: ArchiveIndex, site: str) -> list[str]:
    """Slide ids whose normalized primary site matches the normalized query."""
    wanted = normalize_label(site)
    return sorted(
        sid
        for sid, slide in index.entries.items()
        if slide.labels.primary_site is not None and slide.labels.primary_site == wanted
    )
