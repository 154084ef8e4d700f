"""
Rank over bit vectors: cumulative counts every kappa bits plus a 2^16-entry
popcount table shared by every vector.
"""
from typing import List, Sequence

import numpy as np

WORD_BITS = 16

# number of set bits in every 16-bit value
POPCOUNT16 = np.unpackbits(
    np.arange(1 << WORD_BITS, dtype="<u2").view(np.uint8).reshape(-1, 2), axis=1
).sum(axis=1).astype(np.uint8)
POPCOUNT16.setflags(write=False)

_POPCOUNT: List[int] = POPCOUNT16.tolist()


def pack_bits(bits) -> np.ndarray:
    """0/1 sequence -> uint16 words, bit i stored at bit (i % 16) of word i // 16"""
    packed = np.packbits(np.asarray(bits, dtype=bool), bitorder="little")
    if packed.size % 2:
        packed = np.append(packed, np.uint8(0))
    return packed.view("<u2").astype(np.uint16)


def unpack_bits(words: np.ndarray, length: int) -> np.ndarray:
    """Inverse of pack_bits, as a uint8 array of 0/1"""
    raw = np.asarray(words, dtype="<u2").view(np.uint8)
    return np.unpackbits(raw, bitorder="little")[:length]


class RankedBitVector:
    """
    Bit vector of length m with samples[j] = number of 1s in bits[0 .. j*kappa)

    Immutable once built; queries are pure.
    """

    __slots__ = ("words", "length", "kappa", "samples", "_words", "_samples")

    def __init__(self, words: np.ndarray, length: int, kappa: int, samples: Sequence[int]):
        self.words = np.asarray(words, dtype=np.uint16)
        self.length = length
        self.kappa = kappa
        self.samples = np.asarray(samples, dtype=np.int64)
        self._words: List[int] = self.words.tolist()
        self._samples: List[int] = self.samples.tolist()

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, i: int) -> int:
        if not 0 <= i < self.length:
            raise IndexError(i)
        return (self._words[i >> 4] >> (i & 15)) & 1

    def __eq__(self, other):
        if not isinstance(other, RankedBitVector):
            return NotImplemented
        return (self.length == other.length and self.kappa == other.kappa
                and np.array_equal(self.words, other.words)
                and np.array_equal(self.samples, other.samples))

    __hash__ = None

    def __repr__(self):
        return f"<RankedBitVector m={self.length} kappa={self.kappa} ones={self.popcount()}>"

    def bits(self) -> np.ndarray:
        return unpack_bits(self.words, self.length)

    def popcount(self) -> int:
        return rank1(self, self.length)


def build_rank(bits, kappa: int) -> RankedBitVector:
    """
    Build a ranked vector in one linear pass

    Args:
        bits: Sequence of 0/1 values
        kappa: Sampling interval, at least 1

    Returns:
        RankedBitVector with samples at 0, kappa, 2*kappa, ... <= m
    """
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    flags = np.asarray(bits, dtype=np.int64)
    prefix = np.concatenate(([0], np.cumsum(flags)))
    samples = prefix[np.arange(0, flags.size + 1, kappa)]
    return RankedBitVector(pack_bits(flags), int(flags.size), kappa, samples)


def rank1(rv: RankedBitVector, i: int) -> int:
    """
    Number of 1s in positions 0 .. i-1

    Starts from the sample at or below i and adds at most ceil(kappa/16) + 1
    table lookups over 16-bit words.
    """
    if not 0 <= i <= rv.length:
        raise IndexError(f"rank position {i} outside [0, {rv.length}]")
    j = i // rv.kappa
    count = rv._samples[j]
    pos = j * rv.kappa
    words = rv._words
    while pos < i:
        offset = pos & 15
        take = min(WORD_BITS - offset, i - pos)
        count += _POPCOUNT[(words[pos >> 4] >> offset) & ((1 << take) - 1)]
        pos += take
    return count
