import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from bobsearch.barcode import Barcode, BunchOfBarcodes, pack_bits
from bobsearch.index_store import ArchiveIndex, IndexedSlide, build_archive_index
from bobsearch.mosaic import IndexingConfig, PatchRef
from bobsearch.slide_io import SlideLabels
from bobsearch.synthetic import default_corpus_spec, generate_synthetic_corpus

TEST_CONFIG = IndexingConfig(s_l=16, s_h=64)


@pytest.fixture
def tiny_config():
    return TEST_CONFIG


def write_slide_dir(
    root: Path,
    slide_id: str,
    levels: list[tuple[float, np.ndarray]],
    labels: dict | None = None,
    declared_sizes: list[tuple[int, int]] | None = None,
) -> Path:
    """Write a slide directory from (magnification, array) pairs.

    declared_sizes overrides the manifest dimensions (for tolerance tests).
    """
    slide_dir = root / slide_id
    slide_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (mag, arr) in enumerate(levels):
        name = f"level_{i:02d}.png"
        Image.fromarray(arr.astype(np.uint8), mode="RGB").save(slide_dir / name)
        if declared_sizes is not None:
            w, h = declared_sizes[i]
        else:
            h, w = arr.shape[:2]
        entries.append(
            {"magnification": mag, "width_px": w, "height_px": h, "file": name}
        )
    manifest = {
        "slide_id": slide_id,
        "labels": labels or {"primary_site": "site a", "primary_diagnosis": "class x"},
        "levels": entries,
    }
    (slide_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return slide_dir


def flat_pyramid(base: int, color=(200, 120, 140)) -> list[tuple[float, np.ndarray]]:
    """Uniform-color 3-level pyramid (20x/5x/1.25x) with base side `base`."""
    out = []
    for mag, factor in ((20.0, 1), (5.0, 4), (1.25, 16)):
        side = base // factor
        arr = np.zeros((side, side, 3), dtype=np.uint8)
        arr[:] = color
        out.append((mag, arr))
    return out


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """2 classes x 3 slides, 768px base level; shared across tests."""
    out = tmp_path_factory.mktemp("small-corpus")
    spec = default_corpus_spec(n_classes=2, slides_per_class=3, level0_size=768)
    slides = generate_synthetic_corpus(spec, 7, out)
    return out, spec, slides


@pytest.fixture(scope="session")
def small_index(small_corpus):
    corpus_dir, _, _ = small_corpus
    return build_archive_index(corpus_dir, TEST_CONFIG)


def make_bob(slide_id: str, bit_rows: np.ndarray) -> BunchOfBarcodes:
    """Bunch from a (n, L) array of bits; patch refs are synthesized."""
    rows = np.asarray(bit_rows, dtype=bool)
    entries = []
    for i, row in enumerate(rows):
        ref = PatchRef(
            slide_id=slide_id,
            grid_x=i,
            grid_y=0,
            origin_x=i * 10,
            origin_y=0,
            color_cluster=0,
        )
        entries.append((ref, Barcode(pack_bits(row), row.size)))
    return BunchOfBarcodes(slide_id, entries)


def make_fake_index(
    bobs: dict[str, BunchOfBarcodes],
    labels: dict[str, SlideLabels] | None = None,
    config: IndexingConfig = TEST_CONFIG,
    extractor_id: str = "fake",
) -> ArchiveIndex:
    labels = labels or {}
    entries = {
        sid: IndexedSlide(
            slide_id=sid,
            labels=labels.get(sid, SlideLabels()),
            bob=bob,
        )
        for sid, bob in bobs.items()
    }
    return ArchiveIndex(entries=entries, config=config, extractor_id=extractor_id)


def class_bit_rows(
    rng: np.random.Generator, prototype: np.ndarray, n_rows: int, flip: int
) -> np.ndarray:
    """Rows near a prototype barcode: each row flips `flip` random bits."""
    rows = np.tile(prototype, (n_rows, 1))
    for row in rows:
        idx = rng.choice(prototype.size, size=flip, replace=False)
        row[idx] = ~row[idx]
    return rows


def random_index(seed: int, n_slides: int = 4, length: int = 255) -> ArchiveIndex:
    """Structurally random archive index for serialization fuzzing."""
    from bobsearch.barcode import BunchOfBarcodes
    from bobsearch.barcode import packed_size

    rng = np.random.default_rng(seed)
    entries = {}
    for i in range(n_slides):
        sid = f"slide-{seed}-{i:02d}"
        n = int(rng.integers(1, 9))
        bob_entries = []
        for _ in range(n):
            ref = PatchRef(
                slide_id=sid,
                grid_x=int(rng.integers(0, 50)),
                grid_y=int(rng.integers(0, 50)),
                origin_x=int(rng.integers(0, 1000)),
                origin_y=int(rng.integers(0, 1000)),
                color_cluster=int(rng.integers(0, 9)),
            )
            packed = rng.integers(0, 256, size=packed_size(length), dtype=np.uint8)
            bob_entries.append((ref, Barcode(packed, length, "ref-v1")))
        labels = SlideLabels.from_raw(
            rng.choice(["Lung", "Brain", None]),
            rng.choice(["Class A", "Class B"]),
        )
        entries[sid] = IndexedSlide(sid, labels, BunchOfBarcodes(sid, bob_entries))
    return ArchiveIndex(entries=entries, config=TEST_CONFIG, extractor_id="ref-v1")
