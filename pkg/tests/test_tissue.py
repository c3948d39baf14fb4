"""Tissue segmentation and mask queries."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bobsearch.slide_io import Level, Region, RegionBoundsError, select_magnification
from bobsearch.tissue import (
    SegParams,
    TissueMask,
    load_mask_override,
    otsu_threshold,
    segment_tissue,
    tissue_fraction,
)


def level_from(arr: np.ndarray, magnification: float = 5.0) -> Level:
    return Level.from_array(magnification, arr)


class TestSegmentTissue:
    def test_all_white_is_background(self):
        arr = np.full((64, 64, 3), 255, dtype=np.uint8)
        mask = segment_tissue(level_from(arr))
        assert mask.no_tissue
        assert not mask.bits.any()
        assert mask.fraction() == 0.0

    def test_degenerate_gray_flagged_not_failed(self):
        arr = np.full((32, 32, 3), 128, dtype=np.uint8)
        mask = segment_tissue(level_from(arr))
        assert mask.no_tissue
        assert not mask.bits.any()

    def test_dark_blob_on_white(self):
        arr = np.full((100, 100, 3), 250, dtype=np.uint8)
        arr[20:80, 30:90] = 90
        mask = segment_tissue(level_from(arr), SegParams(min_component_px=4))
        frac = mask.fraction()
        assert 0.30 < frac < 0.42  # blob is 60x60 of 100x100 = 0.36
        assert mask.bits[50, 50]
        assert not mask.bits[0, 0]

    def test_matches_generated_fraction(self, small_corpus):
        _, spec, slides = small_corpus
        for slide in slides[:3]:
            level = select_magnification(slide, 5.0)
            mask = segment_tissue(level)
            assert mask.fraction() == pytest.approx(spec.tissue_fraction, abs=0.1)

    def test_deterministic(self, small_corpus):
        _, _, slides = small_corpus
        level = select_magnification(slides[0], 5.0)
        a = segment_tissue(level)
        b = segment_tissue(level)
        assert np.array_equal(a.bits, b.bits)

    def test_threshold_clamp(self):
        arr = np.full((50, 50, 3), 250, dtype=np.uint8)
        arr[:25] = 90
        # clamping the threshold below the dark mode suppresses everything
        mask = segment_tissue(level_from(arr), SegParams(threshold_high=50, close_iters=0))
        assert not mask.bits.any()


class TestOtsu:
    def brute_force(self, hist: np.ndarray) -> int:
        """Exhaustive between-class-variance maximization."""
        total = hist.sum()
        best_t, best_v = 0, -1.0
        for t in range(1, hist.size):
            w0 = hist[:t].sum() / total
            w1 = 1 - w0
            if w0 == 0 or w1 == 0:
                continue
            mu0 = (np.arange(t) * hist[:t]).sum() / hist[:t].sum()
            mu1 = (np.arange(t, hist.size) * hist[t:]).sum() / hist[t:].sum()
            v = w0 * w1 * (mu0 - mu1) ** 2
            if v > best_v + 1e-12:
                best_t, best_v = t, v
        return best_t

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        hist = rng.integers(0, 50, size=256)
        hist[rng.integers(0, 64)] += 500
        hist[rng.integers(128, 256)] += 500
        assert otsu_threshold(hist) == self.brute_force(hist)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        pixels = np.concatenate(
            [rng.integers(40, 90, 3000), rng.integers(200, 250, 5000)]
        ).astype(np.uint8)
        h1 = np.bincount(pixels, minlength=256)
        h2 = np.bincount(rng.permutation(pixels), minlength=256)
        assert otsu_threshold(h1) == otsu_threshold(h2)


class TestMorphologyProperties:
    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_close_grows_removal_shrinks(self, seed):
        rng = np.random.default_rng(seed)
        # bimodal image: dark speckle on white
        arr = np.full((60, 60, 3), 245, dtype=np.uint8)
        dark = rng.random((60, 60)) < 0.25
        arr[dark] = 70
        raw = segment_tissue(
            level_from(arr), SegParams(close_iters=0, min_component_px=1)
        )
        closed = segment_tissue(
            level_from(arr), SegParams(close_iters=1, min_component_px=1)
        )
        cleaned = segment_tissue(
            level_from(arr), SegParams(close_iters=1, min_component_px=5)
        )
        assert closed.bits.sum() >= raw.bits.sum()
        assert cleaned.bits.sum() <= closed.bits.sum()
        # closing is extensive: no original pixels lost
        assert (closed.bits | raw.bits).sum() == closed.bits.sum()


class TestTissueFraction:
    def test_all_true(self):
        mask = TissueMask(5.0, np.ones((20, 20), dtype=bool))
        assert tissue_fraction(mask, Region(5.0, 2, 2, 10)) == 1.0

    def test_all_false(self):
        mask = TissueMask(5.0, np.zeros((20, 20), dtype=bool))
        assert tissue_fraction(mask, Region(5.0, 0, 0, 20)) == 0.0

    def test_quarter(self):
        bits = np.zeros((4, 4), dtype=bool)
        bits[2, 2] = True
        mask = TissueMask(5.0, bits)
        assert tissue_fraction(mask, Region(5.0, 0, 0, 2)) == 0.0
        assert tissue_fraction(mask, Region(5.0, 1, 1, 2)) == 0.25

    def test_out_of_bounds(self):
        mask = TissueMask(5.0, np.ones((8, 8), dtype=bool))
        with pytest.raises(RegionBoundsError):
            tissue_fraction(mask, Region(5.0, 4, 4, 8))

    def test_magnification_mismatch(self):
        mask = TissueMask(5.0, np.ones((8, 8), dtype=bool))
        with pytest.raises(RegionBoundsError):
            tissue_fraction(mask, Region(20.0, 0, 0, 4))

    @given(st.integers(0, 2**32 - 1))
    def test_matches_direct_count(self, seed):
        rng = np.random.default_rng(seed)
        bits = rng.random((30, 40)) < 0.4
        mask = TissueMask(5.0, bits)
        x, y, s = rng.integers(0, 10), rng.integers(0, 10), int(rng.integers(1, 20))
        expected = bits[y : y + s, x : x + s].mean()
        assert tissue_fraction(mask, Region(5.0, int(x), int(y), s)) == expected


class TestMaskOverride:
    def test_roundtrip(self, tmp_path):
        from PIL import Image

        bits = np.zeros((16, 16), dtype=np.uint8)
        bits[4:12, 4:12] = 255
        Image.fromarray(bits, mode="L").save(tmp_path / "mask_5.png")
        mask = load_mask_override(tmp_path, 5.0)
        assert mask is not None
        assert mask.bits.sum() == 64

    def test_absent(self, tmp_path):
        assert load_mask_override(tmp_path, 5.0) is None
