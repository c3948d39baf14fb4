"""Runtime query engine: scan-to-scan and patch-level Hamming search.

The slide-to-slide distance is the median over the query's barcodes of each
barcode's minimum Hamming distance to the target's bunch. It is not
commutative. Search is an exhaustive scan over the (optionally site-filtered)
archive; exactness keeps results oracle-checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .barcode import Barcode, BarcodeError, BunchOfBarcodes, hamming_matrix, hamming_to_many, stack_words
from .index_store import ArchiveIndex, IndexedSlide, filter_by_site
from .mosaic import PatchRef, round_half_away

__all__ = [
    "HORIZONTAL",
    "VERTICAL",
    "ScanQuery",
    "ScanMatch",
    "SearchResult",
    "PatchMatch",
    "PatchResult",
    "VoteDetail",
    "EmptyCandidateError",
    "lower_median",
    "scan_distance",
    "scan_minima",
    "scan_knn",
    "patch_knn",
    "classify_by_vote",
]

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


class EmptyCandidateError(ValueError):
    """No candidate slides remain after mode filtering and query exclusion."""


@dataclass(frozen=True)
class ScanQuery:
    """Slide-level query: whose bunch, which mode, and how many results."""

    query: Union[IndexedSlide, BunchOfBarcodes]
    mode: str = HORIZONTAL
    site: str | None = None
    k: int = 10
    mosaic_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (HORIZONTAL, VERTICAL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == VERTICAL and not self.site:
            raise ValueError("vertical mode requires a site")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.mosaic_fraction <= 1:
            raise ValueError("mosaic_fraction must be in (0, 1]")

    @property
    def bob(self) -> BunchOfBarcodes:
        return self.query.bob if isinstance(self.query, IndexedSlide) else self.query

    @property
    def slide_id(self) -> str:
        return self.bob.slide_id


@dataclass(frozen=True, eq=False)
class ScanMatch:
    slide_id: str
    distance: int
    minima: np.ndarray = field(repr=False)  # per-query-barcode minimum distances


@dataclass
class SearchResult:
    """Ranked slides by ascending scan distance; never contains the query."""

    query_slide_id: str
    mode: str
    site: str | None
    ranked: list[ScanMatch]


@dataclass(frozen=True)
class PatchMatch:
    slide_id: str
    patch: PatchRef
    distance: int


@dataclass
class PatchResult:
    ranked: list[PatchMatch]


def lower_median(values: np.ndarray) -> int:
    """Median of integer values; for even counts, the lower of the two middles."""
    arr = np.sort(np.asarray(values))
    if arr.size == 0:
        raise ValueError("median of empty sequence")
    return int(arr[(arr.size - 1) // 2])


def scan_minima(query_words: np.ndarray, target: BunchOfBarcodes) -> np.ndarray:
    """Per-query-barcode minimum Hamming distance into the target bunch."""
    return hamming_matrix(query_words, target.words()).min(axis=1)


def scan_distance(q: BunchOfBarcodes, t: BunchOfBarcodes) -> int:
    """Median of the minimum Hamming distances from q's barcodes into t."""
    if q.length != t.length:
        raise BarcodeError(f"barcode length mismatch: {q.length} != {t.length}")
    return lower_median(scan_minima(q.words(), t))


def _subsample_words(bob: BunchOfBarcodes, fraction: float, seed: int) -> np.ndarray:
    words = bob.words()
    if fraction >= 1.0:
        return words
    n = words.shape[0]
    m = max(1, round_half_away(fraction * n))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=m, replace=False))
    return words[keep]


def _candidate_ids(index: ArchiveIndex, mode: str, site: str | None, exclude: str) -> list[str]:
    if mode == VERTICAL:
        ids = filter_by_site(index, site or "")
    else:
        ids = index.slide_ids()
    return [sid for sid in ids if sid != exclude]


def scan_knn(query: ScanQuery, index: ArchiveIndex) -> SearchResult:
    """Top-k slides by scan distance, ties broken by slide id.

    With mosaic_fraction < 1, a seeded uniform subsample of the query's
    barcodes is used; results are deterministic given the seed.
    """
    qbob = query.bob
    if index.entries and qbob.length != index.barcode_length:
        raise BarcodeError(
            f"query barcode length {qbob.length} != index length {index.barcode_length}"
        )
    candidates = _candidate_ids(index, query.mode, query.site, qbob.slide_id)
    if not candidates:
        raise EmptyCandidateError(
            f"no candidates for mode={query.mode} site={query.site!r}"
        )

    qwords = _subsample_words(qbob, query.mosaic_fraction, query.seed)
    matches = []
    for sid in candidates:
        minima = scan_minima(qwords, index.entries[sid].bob)
        matches.append(ScanMatch(sid, lower_median(minima), minima))
    matches.sort(key=lambda m: (m.distance, m.slide_id))
    return SearchResult(
        query_slide_id=qbob.slide_id,
        mode=query.mode,
        site=query.site,
        ranked=matches[: query.k],
    )


def patch_knn(
    b: Barcode,
    index: ArchiveIndex,
    k: int,
    mode: str = HORIZONTAL,
    site: str | None = None,
) -> PatchResult:
    """Top-k patches by Hamming distance over all mode-filtered barcodes.

    Ties are broken by (slide_id, grid_y, grid_x).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if mode == VERTICAL and not site:
        raise ValueError("vertical mode requires a site")
    if not index.entries:
        raise EmptyCandidateError("index is empty")
    if b.length != index.barcode_length:
        raise BarcodeError(
            f"query barcode length {b.length} != index length {index.barcode_length}"
        )

    if mode == VERTICAL:
        ids = filter_by_site(index, site or "")
    else:
        ids = index.slide_ids()
    if not ids:
        raise EmptyCandidateError(f"no slides for site {site!r}")

    qwords = stack_words([b], b.length)[0]
    scored: list[PatchMatch] = []
    for sid in ids:
        bob = index.entries[sid].bob
        dists = hamming_to_many(qwords, bob.words())
        for (ref, _), dist in zip(bob.entries, dists):
            scored.append(PatchMatch(sid, ref, int(dist)))
    scored.sort(key=lambda m: (m.distance, m.slide_id, m.patch.grid_y, m.patch.grid_x))
    return PatchResult(ranked=scored[:k])


@dataclass
class VoteDetail:
    votes: dict[str, int]
    distance_sums: dict[str, int]
    considered: int  # number of results actually voting
    unanimous: bool
    short_ballot: bool  # fewer than the requested top-k candidates existed


def classify_by_vote(
    query: IndexedSlide, index: ArchiveIndex, site: str, top_k: int = 5
) -> tuple[str, VoteDetail]:
    """Majority vote over the top vertical search results' diagnoses.

    Ties are broken by the smallest summed distance among the tied labels,
    then lexicographically. When fewer than top_k candidates exist, the vote
    runs over the available ones and is flagged.
    """
    result = scan_knn(
        ScanQuery(query=query, mode=VERTICAL, site=site, k=top_k), index
    )
    votes: dict[str, int] = {}
    sums: dict[str, int] = {}
    for match in result.ranked:
        label = index.entries[match.slide_id].labels.primary_diagnosis or ""
        votes[label] = votes.get(label, 0) + 1
        sums[label] = sums.get(label, 0) + match.distance
    best = min(votes, key=lambda lab: (-votes[lab], sums[lab], lab))
    detail = VoteDetail(
        votes=votes,
        distance_sums=sums,
        considered=len(result.ranked),
        unanimous=len(votes) == 1,
        short_ballot=len(result.ranked) < top_k,
    )
    return best, detail
