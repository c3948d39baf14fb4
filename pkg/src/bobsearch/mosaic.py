"""Mosaic construction: dense low-magnification patching, color clustering,
and per-cluster spatial sampling.

A slide's mosaic is built in two k-means stages. First the RGB histograms of
all tissue patches are grouped into a fixed number of color clusters; then
the patch locations inside each color cluster are grouped into a number of
spatial clusters proportional to the mosaic fraction, and the patch nearest
each spatial centroid is kept. The union over all clusters is the mosaic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .slide_io import Level, Region, SlidePyramid, read_region, select_magnification
from .tissue import TissueMask

__all__ = [
    "KMeansParams",
    "KMeansResult",
    "IndexingConfig",
    "PatchRef",
    "Mosaic",
    "EmptySlideError",
    "dense_patch_grid",
    "rgb_histogram",
    "kmeans",
    "build_mosaic",
    "round_half_away",
    "expected_mosaic_size",
]


class EmptySlideError(ValueError):
    """Slide yields no usable tissue patches and cannot be indexed."""


@dataclass(frozen=True)
class KMeansParams:
    max_iters: int = 100
    rel_tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be > 0")


@dataclass(frozen=True)
class IndexingConfig:
    """Parameters controlling mosaic construction and patch indexing."""

    k_ch: int = 9  # number of color clusters
    p_m: float = 0.05  # fraction of patches kept in the mosaic
    m_x_c: float = 5.0  # clustering magnification
    m_x_idx: float = 20.0  # indexing magnification
    s_l: int = 250  # patch side at clustering magnification
    s_h: int = 1000  # patch side at indexing magnification
    hist_bins: int = 8  # histogram bins per color channel
    tissue_threshold: float = 0.5  # min tissue fraction for a grid patch
    kmeans: KMeansParams = field(default_factory=KMeansParams)

    def __post_init__(self):
        if self.k_ch < 1:
            raise ValueError("k_ch must be >= 1")
        if not 0 < self.p_m <= 1:
            raise ValueError("p_m must be in (0, 1]")
        if self.m_x_c <= 0 or self.m_x_idx <= 0:
            raise ValueError("magnifications must be positive")
        if self.s_l < 1 or self.s_h < 1:
            raise ValueError("patch sides must be positive")
        if self.hist_bins < 1:
            raise ValueError("hist_bins must be >= 1")
        if not 0 <= self.tissue_threshold <= 1:
            raise ValueError("tissue_threshold must be in [0, 1]")

    def to_json(self) -> dict:
        return {
            "k_ch": self.k_ch,
            "p_m": self.p_m,
            "m_x_c": self.m_x_c,
            "m_x_idx": self.m_x_idx,
            "s_l": self.s_l,
            "s_h": self.s_h,
            "hist_bins": self.hist_bins,
            "tissue_threshold": self.tissue_threshold,
            "kmeans": {
                "max_iters": self.kmeans.max_iters,
                "rel_tol": self.kmeans.rel_tol,
                "seed": self.kmeans.seed,
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "IndexingConfig":
        km = data.get("kmeans", {})
        return cls(
            k_ch=int(data.get("k_ch", 9)),
            p_m=float(data.get("p_m", 0.05)),
            m_x_c=float(data.get("m_x_c", 5.0)),
            m_x_idx=float(data.get("m_x_idx", 20.0)),
            s_l=int(data.get("s_l", 250)),
            s_h=int(data.get("s_h", 1000)),
            hist_bins=int(data.get("hist_bins", 8)),
            tissue_threshold=float(data.get("tissue_threshold", 0.5)),
            kmeans=KMeansParams(
                max_iters=int(km.get("max_iters", 100)),
                rel_tol=float(km.get("rel_tol", 1e-4)),
                seed=int(km.get("seed", 0)),
            ),
        )


@dataclass(frozen=True)
class PatchRef:
    """Reference to one grid patch at the clustering magnification."""

    slide_id: str
    grid_x: int
    grid_y: int
    origin_x: int
    origin_y: int
    color_cluster: int = -1


@dataclass
class Mosaic:
    """Selected patch subset representing a whole slide."""

    slide_id: str
    patches: list[PatchRef]
    config: IndexingConfig
    n_tissue_patches: int
    color_cluster_sizes: dict[int, int]


def round_half_away(x: float) -> int:
    """Round with halves away from zero (2.5 -> 3, -2.5 -> -3)."""
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def expected_mosaic_size(p_m: float, cluster_sizes: Sequence[int]) -> int:
    """Mosaic size implied by the nonempty color-cluster sizes."""
    return sum(max(1, round_half_away(p_m * size)) for size in cluster_sizes if size > 0)


def dense_patch_grid(
    level: Level,
    mask: TissueMask,
    s_l: int,
    *,
    slide_id: str = "",
    tissue_threshold: float = 0.5,
) -> list[PatchRef]:
    """Non-overlapping s_l x s_l grid over the level, keeping tissue patches.

    Partial patches at the right/bottom edges are discarded. A patch is kept
    when its tissue fraction meets the threshold. Returns an empty list when
    the level is smaller than one patch.
    """
    if level.magnification != mask.magnification:
        raise ValueError(
            f"level magnification {level.magnification:g} does not match "
            f"mask magnification {mask.magnification:g}"
        )
    if mask.width != level.width_px or mask.height != level.height_px:
        raise ValueError("mask dimensions do not match the level")

    n_cols = level.width_px // s_l
    n_rows = level.height_px // s_l
    area = s_l * s_l
    patches: list[PatchRef] = []
    for gy in range(n_rows):
        y0 = gy * s_l
        for gx in range(n_cols):
            x0 = gx * s_l
            frac = mask.true_count(x0, y0, x0 + s_l, y0 + s_l) / area
            if frac >= tissue_threshold:
                patches.append(
                    PatchRef(
                        slide_id=slide_id,
                        grid_x=gx,
                        grid_y=gy,
                        origin_x=x0,
                        origin_y=y0,
                    )
                )
    return patches


def rgb_histogram(patch: np.ndarray, bins: int = 8) -> np.ndarray:
    """Concatenated per-channel histograms (R|G|B), each summing to 1.

    Bins are uniform over [0, 255]; the result has length 3 * bins.
    """
    arr = np.asarray(patch)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("patch must be an HxWx3 array")
    n = arr.shape[0] * arr.shape[1]
    out = np.empty(3 * bins, dtype=np.float64)
    # map 0..255 to bin indices; bin width 256/bins keeps bins uniform
    scaled = (arr.astype(np.int64) * bins) >> 8
    for c in range(3):
        counts = np.bincount(scaled[:, :, c].ravel(), minlength=bins)
        out[c * bins : (c + 1) * bins] = counts / n
    return out


@dataclass
class KMeansResult:
    assignments: np.ndarray  # (n,) int cluster index per point
    centroids: np.ndarray  # (k, d); rows with counts == 0 are unused
    counts: np.ndarray  # (k,) points per cluster
    wcss: float
    n_iter: int
    wcss_history: list[float]


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            probs = closest / total
            pick = int(rng.choice(n, p=probs / probs.sum()))
        centroids[j] = points[pick]
        closest = np.minimum(closest, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans(
    points: Sequence[Sequence[float]] | np.ndarray, k: int, params: KMeansParams
) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding with a seeded RNG.

    Stops when the relative WCSS decrease falls below rel_tol or after
    max_iters. With n <= k each point becomes its own cluster. Clusters that
    empty out during iteration are reseeded to the point farthest from its
    current centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array of identical-length vectors")
    n, d = pts.shape
    if n < 1:
        raise ValueError("need at least one point")
    if k < 1:
        raise ValueError("k must be >= 1")

    if n <= k:
        assignments = np.arange(n, dtype=np.int64)
        centroids = np.zeros((k, d), dtype=np.float64)
        centroids[:n] = pts
        counts = np.zeros(k, dtype=np.int64)
        counts[:n] = 1
        return KMeansResult(assignments, centroids, counts, 0.0, 0, [0.0])

    rng = np.random.default_rng(params.seed)
    centroids = _kmeans_pp_init(pts, k, rng)

    assignments = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    prev_wcss = math.inf
    n_iter = 0
    for n_iter in range(1, params.max_iters + 1):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignments = d2.argmin(axis=1)
        own = d2[np.arange(n), assignments]

        # reseed empty clusters to the farthest point whose cluster can
        # spare it, so fixing one cluster never empties another
        counts = np.bincount(assignments, minlength=k)
        while True:
            empty = np.flatnonzero(counts == 0)
            if empty.size == 0:
                break
            j = int(empty[0])
            donors = np.flatnonzero(counts[assignments] > 1)
            far = int(donors[own[donors].argmax()]) if donors.size else int(own.argmax())
            counts[assignments[far]] -= 1
            assignments[far] = j
            counts[j] += 1
            centroids[j] = pts[far]
            own[far] = 0.0

        for j in range(k):
            if counts[j]:
                centroids[j] = pts[assignments == j].mean(axis=0)

        wcss = float(((pts - centroids[assignments]) ** 2).sum())
        history.append(wcss)
        if wcss == 0.0 or (math.isfinite(prev_wcss) and prev_wcss - wcss < params.rel_tol * prev_wcss):
            break
        prev_wcss = wcss

    counts = np.bincount(assignments, minlength=k)
    return KMeansResult(assignments, centroids, counts, history[-1], n_iter, history)


def _spatial_seed(base_seed: int, color_cluster: int) -> int:
    seq = np.random.SeedSequence(entropy=base_seed, spawn_key=(color_cluster,))
    return int(seq.generate_state(1)[0])


def build_mosaic(slide: SlidePyramid, mask: TissueMask, cfg: IndexingConfig) -> Mosaic:
    """Two-stage k-means mosaic of a slide (color clusters, then locations).

    Within each nonempty color cluster of size c, max(1, round(p_m * c))
    spatial clusters are formed over patch origins and the patch nearest each
    spatial centroid is selected (ties broken by lowest (grid_y, grid_x)).
    """
    level = select_magnification(slide, cfg.m_x_c)
    grid = dense_patch_grid(
        level,
        mask,
        cfg.s_l,
        slide_id=slide.slide_id,
        tissue_threshold=cfg.tissue_threshold,
    )
    if not grid:
        raise EmptySlideError(f"empty slide: {slide.slide_id!r} has no tissue patches")

    hists = np.stack(
        [
            rgb_histogram(
                read_region(
                    slide, Region(level.magnification, p.origin_x, p.origin_y, cfg.s_l)
                ),
                cfg.hist_bins,
            )
            for p in grid
        ]
    )
    color = kmeans(hists, cfg.k_ch, cfg.kmeans)

    origins = np.array([[p.origin_x, p.origin_y] for p in grid], dtype=np.float64)
    selected: list[PatchRef] = []
    cluster_sizes: dict[int, int] = {}
    for ci in range(cfg.k_ch):
        members = np.flatnonzero(color.assignments == ci)
        if members.size == 0:
            continue
        cluster_sizes[ci] = int(members.size)
        n_spatial = max(1, round_half_away(cfg.p_m * members.size))
        sub_params = replace(cfg.kmeans, seed=_spatial_seed(cfg.kmeans.seed, ci))
        spatial = kmeans(origins[members], n_spatial, sub_params)
        for si in range(n_spatial):
            group = members[spatial.assignments == si]
            if group.size == 0:
                continue
            dists = np.linalg.norm(origins[group] - spatial.centroids[si], axis=1)
            best = min(
                range(group.size),
                key=lambda i: (dists[i], grid[group[i]].grid_y, grid[group[i]].grid_x),
            )
            chosen = grid[group[best]]
            selected.append(replace(chosen, color_cluster=ci))

    return Mosaic(
        slide_id=slide.slide_id,
        patches=selected,
        config=cfg,
        n_tissue_patches=len(grid),
        color_cluster_sizes=cluster_sizes,
    )
