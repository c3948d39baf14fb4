"""Reference feature extractor and external feature import."""

import itertools

import numpy as np
import pytest

from bobsearch.features import (
    REFERENCE_DIM,
    REFERENCE_EXTRACTOR_ID,
    FeatureFormatError,
    FeatureVector,
    extract_reference_features,
    import_external_features,
    reference_descriptor_raw,
    write_external_features,
)
from bobsearch.slide_io import Region, read_region, select_magnification
from bobsearch.tissue import luminance

from conftest import TEST_CONFIG


class TestReferenceExtractor:
    def test_dimension_and_id(self):
        patch = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)
        fv = extract_reference_features(patch)
        assert fv.dim == REFERENCE_DIM == 256
        assert fv.extractor_id == REFERENCE_EXTRACTOR_ID

    def test_unit_norm(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            patch = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
            fv = extract_reference_features(patch)
            assert np.linalg.norm(fv.values) == pytest.approx(1.0, abs=1e-6)

    def test_uniform_gray_patch(self):
        patch = np.full((64, 64, 3), 150, dtype=np.uint8)
        raw = reference_descriptor_raw(patch)
        # per-cell luminance std is zero
        assert np.allclose(raw[1:32:2], 0.0)
        # all gradient mass sits in the low-magnitude band
        for q in range(4):
            seg = raw[80 + q * 32 : 80 + (q + 1) * 32]
            assert seg[:16].sum() == pytest.approx(1.0)
            assert seg[16:].sum() == 0.0

    def test_determinism(self):
        patch = np.random.default_rng(2).integers(0, 256, (64, 64, 3), dtype=np.uint8)
        a = extract_reference_features(patch)
        b = extract_reference_features(patch)
        assert a == b

    def test_channel_permutation_permutes_color_histograms(self):
        rng = np.random.default_rng(3)
        patch = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        swapped = patch[:, :, [2, 1, 0]]  # R <-> B
        raw = reference_descriptor_raw(patch)
        raw_sw = reference_descriptor_raw(swapped)
        r_hist, g_hist, b_hist = raw[32:48], raw[48:64], raw[64:80]
        assert np.array_equal(raw_sw[32:48], b_hist)
        assert np.array_equal(raw_sw[48:64], g_hist)
        assert np.array_equal(raw_sw[64:80], r_hist)
        # luminance cells change exactly per the luma weights
        lum_sw = luminance(swapped.astype(np.float64))
        cell = lum_sw[0:16, 0:16]
        assert raw_sw[0] == pytest.approx(cell.mean() / 255.0)

    def test_wrong_raster_shape_rejected(self):
        with pytest.raises(ValueError):
            extract_reference_features(np.zeros((64, 32, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            extract_reference_features(np.zeros((64, 64), dtype=np.uint8))

    def test_distinct_classes_separate_statistically(self, small_corpus):
        _, spec, slides = small_corpus
        cfg = TEST_CONFIG
        by_class: dict[str, list[np.ndarray]] = {}
        for slide in slides:
            level = select_magnification(slide, cfg.m_x_idx)
            rng = np.random.default_rng(11)
            feats = []
            for _ in range(8):
                x = int(rng.integers(0, level.width_px - cfg.s_h))
                y = int(rng.integers(0, level.height_px - cfg.s_h))
                patch = read_region(slide, Region(level.magnification, x, y, cfg.s_h))
                feats.append(extract_reference_features(patch).values)
            by_class.setdefault(slide.metadata.primary_diagnosis, []).extend(feats)

        classes = sorted(by_class)
        same, cross = [], []
        for cls_name in classes:
            for a, b in itertools.combinations(by_class[cls_name], 2):
                same.append(np.linalg.norm(a - b))
        for a in by_class[classes[0]]:
            for b in by_class[classes[1]]:
                cross.append(np.linalg.norm(a - b))
        assert len(same) >= 100 and len(cross) >= 100
        assert np.mean(cross) > np.mean(same)


class TestFeatureVector:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            FeatureVector(np.array([1.0, np.inf]), "x")

    def test_equality(self):
        a = FeatureVector(np.array([1.0, 2.0]), "x")
        b = FeatureVector(np.array([1.0, 2.0]), "x")
        c = FeatureVector(np.array([1.0, 2.0]), "y")
        assert a == b
        assert a != c


class TestExternalImport:
    def write_table(self, path, rows, extractor_id="dense-ext", dim=None):
        lines = []
        for slide_id, gx, gy, values in rows:
            vals = " ".join(str(v) for v in values)
            lines.append(f"{slide_id} {gx} {gy} {vals}")
        d = dim if dim is not None else len(rows[0][3])
        path.write_text(f"#extractor_id={extractor_id} d={d}\n" + "\n".join(lines) + "\n")

    def test_load_counts(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [("s1", i, 0, rng.normal(size=16)) for i in range(70)]
        self.write_table(tmp_path / "f.feat", rows)
        table, desc = import_external_features(tmp_path / "f.feat")
        assert len(table) == 70
        assert desc.dim == 16
        assert desc.extractor_id == "dense-ext"
        assert desc.kind == "external"
        assert table[("s1", 3, 0)].dim == 16

    def test_mixed_dimension_rejected(self, tmp_path):
        rows = [("s1", 0, 0, [1.0] * 16), ("s1", 1, 0, [1.0] * 8)]
        self.write_table(tmp_path / "f.feat", rows, dim=16)
        with pytest.raises(FeatureFormatError, match="row 3"):
            import_external_features(tmp_path / "f.feat")

    def test_nan_rejected_with_row_number(self, tmp_path):
        rows = [("s1", 0, 0, [1.0] * 16), ("s1", 1, 0, [1.0] * 15 + [float("nan")])]
        self.write_table(tmp_path / "f.feat", rows)
        with pytest.raises(FeatureFormatError, match="row 3"):
            import_external_features(tmp_path / "f.feat")

    def test_extractor_mismatch(self, tmp_path):
        rows = [("s1", 0, 0, [1.0] * 4)]
        self.write_table(tmp_path / "f.feat", rows, extractor_id="a")
        with pytest.raises(FeatureFormatError, match="does not match"):
            import_external_features(tmp_path / "f.feat", expected_extractor_id="b")

    def test_missing_header(self, tmp_path):
        (tmp_path / "f.feat").write_text("s1 0 0 1.0 2.0\n")
        with pytest.raises(FeatureFormatError, match="header"):
            import_external_features(tmp_path / "f.feat")

    def test_write_read_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        rows = {("s1", i, j): rng.normal(size=8) for i in range(3) for j in range(2)}
        write_external_features(tmp_path / "out.feat", "ext-2", rows)
        table, desc = import_external_features(tmp_path / "out.feat")
        assert desc.extractor_id == "ext-2"
        assert set(table) == set(rows)
        for key in rows:
            assert np.array_equal(table[key].values, rows[key])
