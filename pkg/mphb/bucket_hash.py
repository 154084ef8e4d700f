"""
Per-bucket hash pairs and the seed search

For a bucket i with seed s_i, the two functions of the internal algorithm
are rho(x, s_i, 0) and rho(x, s_i, 1) reduced modulo the bucket's vertex
range, where

    rho(x, s, d) = (sum_{j<=6} t_j[y_j(x) ^ d] + s * sum_{j<=6} t_{j+6}[y_j(x) ^ d]) mod p

Lane j indexes both t_j and t_{j+6}. Lane values have bit 0 clear, so
toggling it with d never collides two keys' indices.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Tuple, Union

import mmh3
import numpy as np

from mphb.errors import SeedSearchExhausted
from mphb.gf2_hash import LANES, Fingerprint128, lane, lanes

logger = logging.getLogger(__name__)

PRIME = 4294967291
TABLE_COUNT = 2 * LANES
TABLE_SIZE = 1 << 16
# lanes have bit 15 clear, so only the lower half of each table is ever read
REACHABLE_ENTRIES = 1 << 15
DEFAULT_MAX_ATTEMPTS = 1000

BucketSeed = int
HeuristicSeeds = Tuple[int, int]
SeedValue = Union[BucketSeed, HeuristicSeeds]
Pairs = Tuple[np.ndarray, np.ndarray]

_UNSALTED = np.arange(LANES)[None, :]
_SALTED = np.arange(LANES, TABLE_COUNT)[None, :]


@dataclass
class SeedSearchStats:
    """Attempt counters accumulated over many seed searches"""

    attempts: int = 0
    accepted: int = 0
    max_attempts_seen: int = 0

    def record(self, attempts: int, accepted: bool):
        self.attempts += attempts
        self.accepted += int(accepted)
        self.max_attempts_seen = max(self.max_attempts_seen, attempts)

    def merge(self, other: "SeedSearchStats"):
        self.attempts += other.attempts
        self.accepted += other.accepted
        self.max_attempts_seen = max(self.max_attempts_seen, other.max_attempts_seen)

    @property
    def mean_attempts(self) -> float:
        return self.attempts / self.accepted if self.accepted else 0.0

    @property
    def acyclic_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


@dataclass(frozen=True, eq=False)
class BucketHashTables:
    """The 2k tables t_1..t_12 of random values in [0, p)"""

    tables: np.ndarray
    prime: int = PRIME
    seed: Optional[int] = field(default=None)

    def __post_init__(self):
        if self.tables.shape != (TABLE_COUNT, TABLE_SIZE):
            raise ValueError(f"expected tables of shape {(TABLE_COUNT, TABLE_SIZE)}, got {self.tables.shape}")
        self.tables.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, BucketHashTables):
            return NotImplemented
        return self.prime == other.prime and np.array_equal(self.tables, other.tables)

    __hash__ = None

    # one 32-bit s per bucket
    seed_bytes = 4

    def draw_seed(self, rng: np.random.Generator) -> BucketSeed:
        """Uniform s in [1, p - 1]"""
        return int(rng.integers(1, self.prime))

    def pair(self, fp: Fingerprint128, seed: BucketSeed, tau: int) -> Tuple[int, int]:
        return hash_pair(self, fp, seed, tau)

    def pairs(self, fps: np.ndarray, seed: BucketSeed, tau: int) -> Pairs:
        return hash_pairs_block(self, lanes(fps), seed, tau)


def sample_bucket_tables(rng_seed: int) -> BucketHashTables:
    """Random tables; entries past the reachable range stay zero"""
    rng = np.random.default_rng(rng_seed)
    tables = np.zeros((TABLE_COUNT, TABLE_SIZE), dtype=np.uint64)
    tables[:, :REACHABLE_ENTRIES] = rng.integers(0, PRIME, size=(TABLE_COUNT, REACHABLE_ENTRIES), dtype=np.uint64)
    return BucketHashTables(tables, PRIME, rng_seed)


def rho(tables: BucketHashTables, fp: Fingerprint128, s: BucketSeed, delta: int) -> int:
    """
    Evaluate rho(x, s, delta) with exact integer arithmetic

    Args:
        tables: Bucket hash tables
        fp: Fingerprint of the key
        s: Bucket seed in [1, p)
        delta: 0 or 1

    Returns:
        Value in [0, p)
    """
    t = tables.tables
    unsalted = salted = 0
    for j in range(LANES):
        index = lane(fp, j + 1) ^ delta
        unsalted += int(t[j, index])
        salted += int(t[j + LANES, index])
    return (unsalted + s * salted) % tables.prime


def rho_block(tables: BucketHashTables, lane_values: np.ndarray, s, delta: int) -> np.ndarray:
    """
    Vectorised rho over (m, 6) lanes; s may be a scalar or one seed per row

    Sums are reduced mod p before the multiplication so that s * sum stays
    below 2^64.
    """
    prime = np.uint64(tables.prime)
    index = lane_values.astype(np.intp) ^ delta
    unsalted = tables.tables[_UNSALTED, index].sum(axis=1) % prime
    salted = tables.tables[_SALTED, index].sum(axis=1) % prime
    seeds = np.asarray(s, dtype=np.uint64)
    return (unsalted + (seeds * salted) % prime) % prime


def hash_pair(tables: BucketHashTables, fp: Fingerprint128, s: BucketSeed, tau: int) -> Tuple[int, int]:
    """(h_i1(x), h_i2(x)) = (rho(x, s, 0) mod tau, rho(x, s, 1) mod tau)"""
    if tau < 1:
        raise ValueError("tau must be at least 1")
    return rho(tables, fp, s, 0) % tau, rho(tables, fp, s, 1) % tau


def hash_pairs_block(tables: BucketHashTables, lane_values: np.ndarray, s, tau) -> Pairs:
    """hash_pair for many keys; tau may be a scalar or one range per row"""
    taus = np.asarray(tau, dtype=np.uint64)
    first = rho_block(tables, lane_values, s, 0) % taus
    second = rho_block(tables, lane_values, s, 1) % taus
    return first.astype(np.int64), second.astype(np.int64)


class HeuristicPairs:
    """
    Pair family from two seeded 32-bit MurmurHash3 evaluations

    Items are byte strings: 12-byte fingerprint records inside buckets, or
    raw keys for standalone functions.
    """

    seed_bytes = 8

    def draw_seed(self, rng: np.random.Generator) -> HeuristicSeeds:
        first, second = rng.integers(0, 1 << 32, size=2, dtype=np.uint64)
        return int(first), int(second)

    def pair(self, item: bytes, seeds: HeuristicSeeds, tau: int) -> Tuple[int, int]:
        return (mmh3.hash(item, seed=seeds[0], signed=False) % tau,
                mmh3.hash(item, seed=seeds[1], signed=False) % tau)

    def pairs(self, items: Sequence[bytes], seeds: HeuristicSeeds, tau: int) -> Pairs:
        first = np.fromiter((mmh3.hash(i, seed=seeds[0], signed=False) for i in items), dtype=np.int64, count=len(items))
        second = np.fromiter((mmh3.hash(i, seed=seeds[1], signed=False) for i in items), dtype=np.int64, count=len(items))
        return first % tau, second % tau


def find_seed(
    tables,
    bucket,
    tau: int,
    acceptor: Callable[[np.ndarray, np.ndarray], Any],
    rng: np.random.Generator,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    stats: Optional[SeedSearchStats] = None,
    bucket_index: Optional[int] = None,
) -> SeedValue:
    """
    Draw random seeds until the acceptor holds for the bucket's hash pairs

    Args:
        tables: Pair family (BucketHashTables or HeuristicPairs)
        bucket: Items of the bucket in the family's format
        tau: Vertex range per side
        acceptor: Predicate over the two arrays (h1, h2)
        rng: Random generator; drawing order is part of the determinism contract
        max_attempts: Attempts before giving up
        stats: Optional counters updated with the attempt count
        bucket_index: Bucket number used in error messages

    Returns:
        The first seed accepted
    """
    for attempt in range(1, max_attempts + 1):
        seed = tables.draw_seed(rng)
        first, second = tables.pairs(bucket, seed, tau)
        if acceptor(first, second):
            if stats is not None:
                stats.record(attempt, True)
            return seed
    if stats is not None:
        stats.record(max_attempts, False)
    logger.debug("seed search failed for bucket %s after %d attempts", bucket_index, max_attempts)
    raise SeedSearchExhausted(max_attempts, bucket_index)
