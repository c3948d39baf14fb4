"""Binary barcodes: sign-of-difference binarization and packed Hamming distance.

A barcode is the bit vector of signs of successive differences of a feature
vector (bit i = 1 iff f[i+1] - f[i] > 0), so a d-dimensional vector yields
d - 1 bits. Barcodes are stored bit-packed (little-endian bit order within
each byte, pad bits zero) and compared with XOR + population count, which is
the engine's hot path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .mosaic import PatchRef

__all__ = [
    "Barcode",
    "BunchOfBarcodes",
    "BarcodeError",
    "minmax_barcode",
    "hamming",
    "hamming_to_many",
    "hamming_matrix",
    "pack_bits",
    "unpack_bits",
    "packed_size",
    "stack_words",
]

_WORD_BYTES = 8  # distances are computed on uint64 views of the packed bytes

_HAS_BITWISE_COUNT = hasattr(np, "bitwise_count")
_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


class BarcodeError(ValueError):
    """Invalid barcode construction or incompatible barcode lengths."""


def packed_size(length: int) -> int:
    """Bytes needed to store `length` bits."""
    return (length + 7) // 8


def pack_bits(bits: np.ndarray | Sequence[int]) -> np.ndarray:
    """Pack a boolean bit sequence into bytes, little-endian bit order."""
    arr = np.asarray(bits, dtype=bool)
    if arr.ndim != 1:
        raise BarcodeError("bit sequence must be one-dimensional")
    return np.packbits(arr, bitorder="little")


def unpack_bits(packed: np.ndarray, length: int) -> np.ndarray:
    """Inverse of pack_bits; returns a boolean array of the given length."""
    return np.unpackbits(packed, count=length, bitorder="little").astype(bool)


@dataclass(frozen=True, eq=False)
class Barcode:
    """Fixed-length packed bit vector produced from one feature vector."""

    packed: np.ndarray  # uint8, packed_size(length) bytes, pad bits zero
    length: int
    extractor_id: str = ""

    def __post_init__(self):
        if self.length < 1:
            raise BarcodeError("barcode length must be >= 1")
        packed = np.array(self.packed, dtype=np.uint8)
        if packed.shape != (packed_size(self.length),):
            raise BarcodeError(
                f"expected {packed_size(self.length)} packed bytes for "
                f"length {self.length}, got shape {packed.shape}"
            )
        # zero the pad bits so XOR over whole bytes is exact
        tail = self.length % 8
        if tail:
            packed[-1] &= (1 << tail) - 1
        packed.flags.writeable = False
        object.__setattr__(self, "packed", packed)

    @classmethod
    def from_bits(cls, bits: np.ndarray | Sequence[int], extractor_id: str = "") -> "Barcode":
        arr = np.asarray(bits, dtype=bool)
        return cls(pack_bits(arr), len(arr), extractor_id)

    def bits(self) -> np.ndarray:
        return unpack_bits(self.packed, self.length)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Barcode):
            return NotImplemented
        return (
            self.length == other.length
            and self.extractor_id == other.extractor_id
            and bool(np.array_equal(self.packed, other.packed))
        )

    def __hash__(self):
        return hash((self.length, self.extractor_id, self.packed.tobytes()))


def minmax_barcode(f) -> Barcode:
    """Binarize a feature vector by the sign of its successive differences.

    Accepts a FeatureVector or any 1-D array of reals. Bit i is set iff
    f[i+1] - f[i] > 0; zero differences give 0. The result has d - 1 bits.
    """
    values = np.asarray(getattr(f, "values", f), dtype=np.float64)
    extractor_id = getattr(f, "extractor_id", "")
    if values.ndim != 1 or values.size < 2:
        raise BarcodeError("need a 1-D vector with at least 2 values")
    if not np.all(np.isfinite(values)):
        raise BarcodeError("feature vector contains non-finite values")
    bits = np.diff(values) > 0
    return Barcode(pack_bits(bits), values.size - 1, extractor_id)


def _words_size(length: int) -> int:
    return (packed_size(length) + _WORD_BYTES - 1) // _WORD_BYTES


def _to_words(packed: np.ndarray, length: int) -> np.ndarray:
    """View packed bytes as zero-padded uint64 words (little-endian)."""
    nbytes = _words_size(length) * _WORD_BYTES
    buf = np.zeros(nbytes, dtype=np.uint8)
    buf[: packed.size] = packed
    return buf.view("<u8")


def stack_words(barcodes: Iterable[Barcode], length: int) -> np.ndarray:
    """Stack barcodes into an (n, nwords) uint64 matrix for bulk distances."""
    rows = []
    for bc in barcodes:
        if bc.length != length:
            raise BarcodeError(f"barcode length {bc.length} != expected {length}")
        rows.append(_to_words(bc.packed, length))
    if not rows:
        return np.zeros((0, _words_size(length)), dtype=np.uint64)
    return np.stack(rows)


def _popcount(x: np.ndarray) -> np.ndarray:
    if _HAS_BITWISE_COUNT:
        return np.bitwise_count(x)
    return _POPCOUNT8[x.view(np.uint8)].reshape(*x.shape, _WORD_BYTES).sum(-1)


def hamming(a: Barcode, b: Barcode) -> int:
    """Number of differing bit positions between two equal-length barcodes."""
    if a.length != b.length:
        raise BarcodeError(f"length mismatch: {a.length} != {b.length}")
    return int(_popcount(np.bitwise_xor(a.packed, b.packed)).sum())


_SWAR_BYTE_MASK = np.uint32(0x00FF00FF)
_SWAR_HALF_MASK = np.uint32(0x0000FFFF)
_CHUNK_ROWS = 1 << 17


def _swar_row_sums(counts: np.ndarray) -> np.ndarray:
    """Row sums of a (m, w) uint8 count matrix, w % 4 == 0, via 32-bit lanes."""
    v = counts.view(np.uint32)
    v = (v & _SWAR_BYTE_MASK) + ((v >> np.uint32(8)) & _SWAR_BYTE_MASK)
    v = (v & _SWAR_HALF_MASK) + (v >> np.uint32(16))
    if v.shape[1] == 1:
        return v[:, 0].astype(np.int64)
    return v.sum(axis=1, dtype=np.int64)


def hamming_to_many(query_words: np.ndarray, words: np.ndarray) -> np.ndarray:
    """Distances from one barcode (word row) to each row of a word matrix.

    Large inputs take a fused chunked path (XOR, popcount, and byte-lane row
    sums through preallocated buffers) that stays cache-resident; the plain
    vectorized form is the fallback and the reference for it.
    """
    n, w = words.shape
    if not _HAS_BITWISE_COUNT or w % 4 or n < (1 << 12):
        return _popcount(np.bitwise_xor(words, query_words)).sum(axis=-1, dtype=np.int64)

    out = np.empty(n, dtype=np.int64)
    rows = min(_CHUNK_ROWS, n)
    xor_buf = np.empty((rows, w), dtype=np.uint64)
    count_buf = np.empty((rows, w), dtype=np.uint8)
    for i in range(0, n, rows):
        j = min(i + rows, n)
        m = j - i
        np.bitwise_xor(words[i:j], query_words, out=xor_buf[:m])
        np.bitwise_count(xor_buf[:m], out=count_buf[:m])
        out[i:j] = _swar_row_sums(count_buf[:m])
    return out


def hamming_matrix(words_a: np.ndarray, words_b: np.ndarray) -> np.ndarray:
    """All-pairs distances between two word matrices, shape (na, nb)."""
    x = np.bitwise_xor(words_a[:, None, :], words_b[None, :, :])
    return _popcount(x).sum(axis=-1, dtype=np.int64)


@dataclass(eq=False)
class BunchOfBarcodes:
    """All barcodes of one slide's mosaic, aligned with their patch refs."""

    slide_id: str
    entries: list[tuple["PatchRef", Barcode]]
    _words: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.entries:
            raise BarcodeError("bunch of barcodes must be nonempty")
        lengths = {bc.length for _, bc in self.entries}
        if len(lengths) != 1:
            raise BarcodeError(f"mixed barcode lengths in bunch: {sorted(lengths)}")

    @property
    def length(self) -> int:
        return self.entries[0][1].length

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def patches(self) -> list["PatchRef"]:
        return [ref for ref, _ in self.entries]

    @property
    def barcodes(self) -> list[Barcode]:
        return [bc for _, bc in self.entries]

    def words(self) -> np.ndarray:
        """Cached (n, nwords) uint64 matrix of all barcodes in entry order."""
        if self._words is None:
            self._words = stack_words(self.barcodes, self.length)
        return self._words

    def __eq__(self, other) -> bool:
        if not isinstance(other, BunchOfBarcodes):
            return NotImplemented
        return self.slide_id == other.slide_id and self.entries == other.entries
