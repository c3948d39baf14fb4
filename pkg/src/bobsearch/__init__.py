"""Content-based slide search engine over bunches of binary barcodes.

Slides are represented by a small mosaic of patches chosen with two-stage
k-means; each patch becomes a packed binary barcode via sign-of-difference
binarization of its feature vector, and retrieval is exhaustive Hamming
search with a median-of-minima slide distance.
"""

from .barcode import Barcode, BunchOfBarcodes, hamming, minmax_barcode
from .features import FeatureVector, extract_reference_features, import_external_features
from .index_store import (
    ArchiveIndex,
    IndexedSlide,
    build_archive_index,
    filter_by_site,
    index_slide,
    load_index,
    save_index,
)
from .mosaic import IndexingConfig, KMeansParams, Mosaic, PatchRef, build_mosaic, kmeans
from .search import (
    PatchResult,
    ScanQuery,
    SearchResult,
    classify_by_vote,
    patch_knn,
    scan_distance,
    scan_knn,
)
from .slide_io import (
    Region,
    SlideLabels,
    SlidePyramid,
    open_slide,
    read_region,
    select_magnification,
)
from .synthetic import CorpusSpec, TextureClass, default_corpus_spec, generate_synthetic_corpus
from .tissue import SegParams, TissueMask, segment_tissue, tissue_fraction

__version__ = "0.1.0"
