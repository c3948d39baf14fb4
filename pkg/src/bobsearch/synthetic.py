"""Deterministic synthetic slide corpora for desk-scale evaluation.

Each class is a procedural texture family (base hue, stripe period, blob
density) rendered at the top magnification and box-downsampled into the
remaining pyramid levels. Slides mix textured "tissue" with a near-white
background so segmentation is exercised. The same (spec, seed) pair always
produces byte-identical files.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .slide_io import MANIFEST_NAME, SlidePyramid, open_slide

__all__ = [
    "TextureClass",
    "CorpusSpec",
    "CorpusSpecError",
    "generate_synthetic_corpus",
    "default_corpus_spec",
]


class CorpusSpecError(ValueError):
    """Corpus spec fails validation (no classes, no slides, bad fractions)."""


@dataclass(frozen=True)
class TextureClass:
    """One procedural texture family; name doubles as the diagnosis label."""

    name: str
    site: str
    base_hue: float  # [0, 1)
    stripe_period_px: float  # wavelength at the top magnification
    stripe_angle_deg: float  # class-fixed orientation (slides jitter slightly)
    blob_density: float  # dark blobs per 10^5 px^2 at the top magnification
    n_slides: int

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "site": self.site,
            "base_hue": self.base_hue,
            "stripe_period_px": self.stripe_period_px,
            "stripe_angle_deg": self.stripe_angle_deg,
            "blob_density": self.blob_density,
            "n_slides": self.n_slides,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TextureClass":
        return cls(
            name=data["name"],
            site=data["site"],
            base_hue=float(data["base_hue"]),
            stripe_period_px=float(data["stripe_period_px"]),
            stripe_angle_deg=float(data.get("stripe_angle_deg", 0.0)),
            blob_density=float(data["blob_density"]),
            n_slides=int(data["n_slides"]),
        )


@dataclass(frozen=True)
class CorpusSpec:
    """Full corpus description: classes, tissue coverage, pyramid geometry."""

    classes: tuple[TextureClass, ...]
    tissue_fraction: float = 0.55
    level0_width: int = 1536
    level0_height: int = 1536
    magnifications: tuple[float, ...] = (20.0, 5.0, 1.25)

    def validate(self) -> None:
        if len(self.classes) < 2:
            raise CorpusSpecError("corpus spec needs at least 2 classes")
        if any(c.n_slides < 1 for c in self.classes):
            raise CorpusSpecError("every class needs at least one slide")
        if len({c.name for c in self.classes}) != len(self.classes):
            raise CorpusSpecError("class names must be unique")
        if not 0.05 <= self.tissue_fraction <= 0.95:
            raise CorpusSpecError("tissue_fraction must be in [0.05, 0.95]")
        if len(self.magnifications) < 2:
            raise CorpusSpecError("need at least 2 pyramid levels")
        if list(self.magnifications) != sorted(self.magnifications, reverse=True):
            raise CorpusSpecError("magnifications must be strictly decreasing")
        base = self.magnifications[0]
        for mag in self.magnifications[1:]:
            factor = base / mag
            if abs(factor - round(factor)) > 1e-9:
                raise CorpusSpecError("downsample factors must be integral")
            f = round(factor)
            if self.level0_width % f or self.level0_height % f:
                raise CorpusSpecError(
                    f"level-0 size must be divisible by downsample factor {f}"
                )

    def to_json(self) -> dict:
        return {
            "classes": [c.to_json() for c in self.classes],
            "tissue_fraction": self.tissue_fraction,
            "level0_width": self.level0_width,
            "level0_height": self.level0_height,
            "magnifications": list(self.magnifications),
        }

    @classmethod
    def from_json(cls, data: dict) -> "CorpusSpec":
        return cls(
            classes=tuple(TextureClass.from_json(c) for c in data["classes"]),
            tissue_fraction=float(data.get("tissue_fraction", 0.55)),
            level0_width=int(data.get("level0_width", 1536)),
            level0_height=int(data.get("level0_height", 1536)),
            magnifications=tuple(float(m) for m in data.get("magnifications", (20.0, 5.0, 1.25))),
        )


# Hue / stripe / blob assignments spread far apart so texture families stay
# visually and statistically distinct.
_DEFAULT_FAMILIES = [
    ("magenta-coarse", 0.88, 48.0, 15.0, 3.0),
    ("teal-fine", 0.48, 12.0, 80.0, 10.0),
    ("amber-banded", 0.11, 28.0, 140.0, 1.0),
    ("violet-dense", 0.72, 18.0, 40.0, 20.0),
    ("olive-broad", 0.26, 64.0, 110.0, 6.0),
    ("crimson-tight", 0.97, 9.0, 65.0, 14.0),
]


def default_corpus_spec(
    n_classes: int = 4,
    slides_per_class: int = 10,
    level0_size: int = 1536,
    tissue_fraction: float = 0.55,
    sites: tuple[str, ...] = ("site alpha", "site beta"),
) -> CorpusSpec:
    """Separable corpus spec; classes are split evenly across the sites."""
    if n_classes > len(_DEFAULT_FAMILIES):
        raise CorpusSpecError(f"at most {len(_DEFAULT_FAMILIES)} default classes")
    classes = []
    for i in range(n_classes):
        name, hue, period, angle, blobs = _DEFAULT_FAMILIES[i]
        site = sites[i * len(sites) // n_classes]
        classes.append(
            TextureClass(
                name=name,
                site=site,
                base_hue=hue,
                stripe_period_px=period,
                stripe_angle_deg=angle,
                blob_density=blobs,
                n_slides=slides_per_class,
            )
        )
    return CorpusSpec(
        classes=tuple(classes),
        tissue_fraction=tissue_fraction,
        level0_width=level0_size,
        level0_height=level0_size,
    )


def _tissue_mask(rng: np.random.Generator, width: int, height: int, fraction: float) -> np.ndarray:
    """Smooth random blob mask with the requested true-pixel fraction."""
    coarse = rng.standard_normal((24, 24))
    fine = ndimage.zoom(coarse, (height / 24, width / 24), order=3, mode="nearest")
    fine = fine[:height, :width]
    threshold = np.quantile(fine, 1.0 - fraction)
    return fine >= threshold


def _render_tissue(
    rng: np.random.Generator, cls: TextureClass, width: int, height: int
) -> np.ndarray:
    base_rgb = (
        np.array(colorsys.hsv_to_rgb(cls.base_hue, 0.55, 0.62), dtype=np.float32) * 255.0
    )

    xs = np.arange(width, dtype=np.float32)[None, :]
    ys = np.arange(height, dtype=np.float32)[:, None]
    angle = np.deg2rad(cls.stripe_angle_deg) + rng.uniform(-0.05, 0.05)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(
        (2 * np.pi / cls.stripe_period_px) * (xs * np.cos(angle) + ys * np.sin(angle))
        + phase
    ).astype(np.float32)
    shade = 1.0 + 0.28 * wave  # stripe modulation of the base colour

    img = base_rgb[None, None, :] * shade[:, :, None]

    n_blobs = int(round(cls.blob_density * width * height / 1e5))
    for _ in range(n_blobs):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0, height)
        radius = rng.uniform(5.0, 16.0)
        x0, x1 = max(0, int(cx - radius) - 1), min(width, int(cx + radius) + 2)
        y0, y1 = max(0, int(cy - radius) - 1), min(height, int(cy + radius) + 2)
        if x0 >= x1 or y0 >= y1:
            continue
        wx = np.arange(x0, x1, dtype=np.float32)[None, :]
        wy = np.arange(y0, y1, dtype=np.float32)[:, None]
        d2 = (wx - cx) ** 2 + (wy - cy) ** 2
        drop = 70.0 * np.exp(-d2 / (2 * (radius / 2.0) ** 2))
        img[y0:y1, x0:x1, :] -= drop[:, :, None].astype(np.float32)

    img += rng.normal(0.0, 6.0, size=img.shape).astype(np.float32)
    return img


def _render_slide(rng: np.random.Generator, spec: CorpusSpec, cls: TextureClass) -> np.ndarray:
    w0, h0 = spec.level0_width, spec.level0_height
    base_mag = spec.magnifications[0]
    mask_mag = spec.magnifications[1]
    mask_factor = round(base_mag / mask_mag)

    mask_low = _tissue_mask(rng, w0 // mask_factor, h0 // mask_factor, spec.tissue_fraction)
    mask = np.kron(mask_low, np.ones((mask_factor, mask_factor), dtype=bool))

    img = _render_tissue(rng, cls, w0, h0)
    background = 248.0 + rng.normal(0.0, 3.0, size=(h0, w0, 3)).astype(np.float32)
    np.copyto(img, background, where=~mask[:, :, None])
    np.rint(img, out=img)
    np.clip(img, 0, 255, out=img)
    return img.astype(np.uint8)


def _downsample(arr: np.ndarray, factor: int) -> np.ndarray:
    h, w, _ = arr.shape
    view = arr.reshape(h // factor, factor, w // factor, factor, 3)
    mean = view.mean(axis=(1, 3), dtype=np.float32)
    return np.clip(np.rint(mean), 0, 255).astype(np.uint8)


def _write_slide(
    out_dir: Path, slide_id: str, cls: TextureClass, spec: CorpusSpec, level0: np.ndarray
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    base_mag = spec.magnifications[0]
    levels_meta = []
    for i, mag in enumerate(spec.magnifications):
        factor = round(base_mag / mag)
        arr = level0 if factor == 1 else _downsample(level0, factor)
        filename = f"level_{i:02d}.png"
        Image.fromarray(arr, mode="RGB").save(
            out_dir / filename, format="PNG", compress_level=3
        )
        levels_meta.append(
            {
                "magnification": mag,
                "width_px": arr.shape[1],
                "height_px": arr.shape[0],
                "file": filename,
            }
        )
    manifest = {
        "slide_id": slide_id,
        "labels": {"primary_site": cls.site, "primary_diagnosis": cls.name},
        "levels": levels_meta,
    }
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def generate_synthetic_corpus(
    spec: CorpusSpec, seed: int, out_dir: str | Path
) -> list[SlidePyramid]:
    """Write a labeled corpus under out_dir and return the opened slides.

    Slide directories are named after their ids; generation is reproducible
    byte-for-byte for a fixed (spec, seed).
    """
    spec.validate()
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    slides: list[SlidePyramid] = []
    slide_index = 0
    for cls in spec.classes:
        for i in range(cls.n_slides):
            slide_id = f"{cls.name}-{i:03d}"
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(slide_index,))
            )
            level0 = _render_slide(rng, spec, cls)
            slide_dir = root / slide_id
            _write_slide(slide_dir, slide_id, cls, spec, level0)
            slides.append(open_slide(slide_dir))
            slide_index += 1
    return slides
