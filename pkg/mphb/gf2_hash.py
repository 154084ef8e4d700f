"""
Key fingerprinting with tabulated random linear maps over GF(2)

A key of L bits is hashed to 128 bits by h'(x) = Ax where A is a random
128 x L bit matrix. A is split into blocks of 8 columns, each block is
tabulated for all 256 byte values, and h'(x) is the XOR of one lookup per
key byte. The 32 high bits of h'(x) select the bucket, the low 96 bits are
six 16-bit lanes feeding the per-bucket hash functions.

Fingerprints are held as Python ints one at a time, or as (n, 2) uint64
arrays ``[low 64 bits, high 64 bits]`` for whole blocks of keys.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Union

import mmh3
import numpy as np

from mphb.errors import InvalidKey, KeyTooLong

logger = logging.getLogger(__name__)

Fingerprint128 = int
KeyLike = Union[bytes, bytearray, memoryview, str]

FINGERPRINT_BITS = 128
CHUNK_BITS = 8
SIGMA = 1 << CHUNK_BITS
LANES = 6
LANE_BITS = 16
LANE_MAX = (1 << LANE_BITS) - 1

# bits 0 and 15 of every lane are forced to zero, bucket word untouched
LANE_MASK_LO = 0x7FFE_7FFE_7FFE_7FFE
LANE_MASK_HI = 0xFFFF_FFFF_7FFE_7FFE
LANE_MASK = (LANE_MASK_HI << 64) | LANE_MASK_LO

_MASK64 = (1 << 64) - 1

# _CHUNK_BITS[v, t] is bit t of byte v, most significant first
_CHUNK_BITS = ((np.arange(SIGMA)[:, None] >> (7 - np.arange(CHUNK_BITS))[None, :]) & 1).astype(bool)


def as_key_bytes(key: KeyLike) -> bytes:
    if isinstance(key, str):
        return key.encode("utf-8")
    return bytes(key)


def validate_key(key: bytes, max_key_bytes: int, position: Optional[int] = None) -> bytes:
    """
    Check the key invariants: 1 <= length <= max_key_bytes and no NUL byte

    Args:
        key: Raw key bytes
        max_key_bytes: Configured maximum key length
        position: 1-based position of the key in its source, for messages

    Returns:
        The key, unchanged
    """
    if not key:
        raise InvalidKey("empty key", position)
    if len(key) > max_key_bytes:
        raise KeyTooLong(len(key), max_key_bytes, position)
    if b"\x00" in key:
        raise InvalidKey("key contains a NUL byte", position)
    return key


def _tabulate(columns: np.ndarray) -> np.ndarray:
    """(chunks, 8, 2) column words -> (chunks, 256, 2) lookup tables"""
    selected = np.where(_CHUNK_BITS[None, :, :, None], columns[:, None, :, :], np.uint64(0))
    return np.bitwise_xor.reduce(selected, axis=2)


@dataclass(frozen=True, eq=False)
class LinearMapGF2:
    """Tabulated 128 x (8 * max_key_bytes) random matrix over GF(2)"""

    chunk_tables: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        self.chunk_tables.setflags(write=False)

    @property
    def max_key_bytes(self) -> int:
        return self.chunk_tables.shape[0]

    @classmethod
    def from_matrix(cls, matrix: Sequence[Sequence[int]]) -> "LinearMapGF2":
        """
        Tabulate an explicit 0/1 matrix with at most 128 rows

        Row j of the matrix produces fingerprint bit j; column i multiplies
        key bit i, counted from the most significant bit of the first byte.
        """
        rows = np.asarray(matrix, dtype=np.uint8)
        gamma, width = rows.shape
        if gamma > FINGERPRINT_BITS:
            raise ValueError(f"matrix has {gamma} rows, at most {FINGERPRINT_BITS} allowed")
        chunks = -(-width // CHUNK_BITS)
        columns = np.zeros((chunks, CHUNK_BITS, 2), dtype=np.uint64)
        for i in range(width):
            word = 0
            for j in np.flatnonzero(rows[:, i]):
                word |= 1 << int(j)
            columns[i // CHUNK_BITS, i % CHUNK_BITS] = (word & _MASK64, word >> 64)
        return cls(_tabulate(columns))

    def __eq__(self, other):
        if not isinstance(other, LinearMapGF2):
            return NotImplemented
        return np.array_equal(self.chunk_tables, other.chunk_tables)

    __hash__ = None


def sample_linear_map(rng_seed: int, max_key_bytes: int) -> LinearMapGF2:
    """
    Sample a random linear map and tabulate it per 8-bit chunk

    Rows of A that would set bit 0 or bit 15 of a lane are zeroed, so every
    fingerprint satisfies the lane masking invariant.

    Args:
        rng_seed: 64-bit seed; equal seeds give identical tables
        max_key_bytes: Longest key the map accepts

    Returns:
        LinearMapGF2 with max_key_bytes tables of 256 entries
    """
    if max_key_bytes < 1:
        raise ValueError("max_key_bytes must be at least 1")
    rng = np.random.default_rng(rng_seed)
    columns = rng.integers(
        0, np.iinfo(np.uint64).max, size=(max_key_bytes, CHUNK_BITS, 2),
        dtype=np.uint64, endpoint=True,
    )
    columns[..., 0] &= np.uint64(LANE_MASK_LO)
    columns[..., 1] &= np.uint64(LANE_MASK_HI)
    return LinearMapGF2(_tabulate(columns), rng_seed)


def fingerprint(linear_map: LinearMapGF2, key: KeyLike) -> Fingerprint128:
    """h'(x): XOR of one table lookup per key byte"""
    key = as_key_bytes(key)
    if len(key) > linear_map.max_key_bytes:
        raise KeyTooLong(len(key), linear_map.max_key_bytes)
    tables = linear_map.chunk_tables
    lo = hi = 0
    for chunk, value in enumerate(key):
        lo ^= int(tables[chunk, value, 0])
        hi ^= int(tables[chunk, value, 1])
    return (hi << 64) | lo


def pad_keys(keys: Sequence[bytes]) -> np.ndarray:
    """(n, longest key) uint8 matrix of zero-padded keys"""
    lengths = np.fromiter((len(k) for k in keys), dtype=np.int64, count=len(keys))
    width = int(lengths.max()) if len(keys) else 0
    padded = np.zeros((len(keys), width), dtype=np.uint8)
    if width:
        # boolean assignment fills row-major, the order of the joined bytes
        padded[np.arange(width)[None, :] < lengths[:, None]] = np.frombuffer(b"".join(keys), dtype=np.uint8)
    return padded


def fingerprint_block(linear_map: LinearMapGF2, keys: Sequence[bytes]) -> np.ndarray:
    """
    Fingerprint a block of keys at once

    Keys must already be validated; only the bytes actually present are
    looked up since padded zero chunks contribute the zero word.

    Returns:
        (n, 2) uint64 array of [low, high] fingerprint words
    """
    padded = pad_keys(keys)
    if padded.shape[1] > linear_map.max_key_bytes:
        raise KeyTooLong(padded.shape[1], linear_map.max_key_bytes)
    out = np.zeros((len(keys), 2), dtype=np.uint64)
    tables = linear_map.chunk_tables
    for chunk in range(padded.shape[1]):
        out ^= tables[chunk, padded[:, chunk]]
    return out


class HeuristicFingerprinter:
    """
    Table-free fingerprints from a seeded 128-bit MurmurHash3

    Produces 96 useful bits: a 64-bit body in bits 0..63 and the 32-bit
    bucket word in bits 96..127. Bits 64..95 are always zero, so these
    fingerprints travel as 12-byte records.
    """

    def __init__(self, seed: int):
        self.seed = seed & 0xFFFF_FFFF

    def fingerprint(self, key: KeyLike) -> Fingerprint128:
        value = mmh3.hash128(as_key_bytes(key), seed=self.seed, signed=False)
        return ((value >> 96) << 96) | (value & _MASK64)

    def fingerprint_block(self, keys: Iterable[bytes]) -> np.ndarray:
        values: List[int] = [mmh3.hash128(k, seed=self.seed, signed=False) for k in keys]
        out = np.zeros((len(values), 2), dtype=np.uint64)
        if values:
            out[:, 0] = np.fromiter((v & _MASK64 for v in values), dtype=np.uint64, count=len(values))
            out[:, 1] = np.fromiter(((v >> 96) << 32 for v in values), dtype=np.uint64, count=len(values))
        return out


def to_int(row: np.ndarray) -> Fingerprint128:
    """One (2,) uint64 row -> 128-bit int"""
    return (int(row[1]) << 64) | int(row[0])


def from_int(fp: Fingerprint128) -> np.ndarray:
    return np.array([fp & _MASK64, fp >> 64], dtype=np.uint64)


def bucket_index(fp: Fingerprint128, b: int) -> int:
    """h0(x) = h'(x)[96, 127] >> (32 - b)"""
    if not 1 <= b <= 32:
        raise ValueError(f"bucket bits must be in [1, 32], got {b}")
    return (fp >> 96) >> (32 - b)


def bucket_indices(fps: np.ndarray, b: int) -> np.ndarray:
    """Vectorised bucket_index over an (n, 2) fingerprint array; b = 0 maps all to 0"""
    if b == 0:
        return np.zeros(fps.shape[0], dtype=np.int64)
    return ((fps[:, 1] >> np.uint64(32)) >> np.uint64(32 - b)).astype(np.int64)


def lane(fp: Fingerprint128, j: int) -> int:
    """
    y_j(x) for table index j in 1..12

    Tables j and j + 6 share lane j, so indices 7..12 wrap onto lanes 1..6.
    """
    if not 1 <= j <= 2 * LANES:
        raise ValueError(f"lane index must be in [1, {2 * LANES}], got {j}")
    return (fp >> (LANE_BITS * ((j - 1) % LANES))) & LANE_MAX


def lanes(fps: np.ndarray) -> np.ndarray:
    """(n, 2) fingerprints -> (n, 6) uint16 lanes y_1..y_6"""
    words = np.ascontiguousarray(fps, dtype="<u8")
    return words.view("<u2").reshape(len(words), 8)[:, :LANES]
