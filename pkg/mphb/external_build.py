"""
Two-step external-memory construction

Partitioning reads keys in blocks whose working set fits the memory budget,
clusters each block by bucket index and writes it to its own run file; the
last block stays in memory. Searching merges the runs bucket by bucket
through a min-heap keyed on bucket index, builds each bucket's function and
accumulates the offset array.

The global function is p(x) = p_i(x) + offset[i] with i = h0(x). PHF mode
composes bucket functions the same way with bases sum_{j<i} 2 * tau_j.
"""
import contextlib
import heapq
import logging
import math
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from mphb.bucket_hash import SeedSearchStats
from mphb.config import BuildConfig, Mode
from mphb.errors import BucketOverflow, DuplicateFingerprint, SeedSearchExhausted
from mphb.gf2_hash import as_key_bytes, bucket_indices, to_int, validate_key
from mphb.internal_mphf import BucketFunction, build_bucket_function, evaluate, vertex_ranges
from mphb.provider import derive_seeds, sample_provider

logger = logging.getLogger(__name__)

SPILL_PREFIX = "run-"
SPILL_SUFFIX = ".spill"
FINGERPRINT_BATCH = 4096

# per key in a partition block: the bytes object and its list slot, the
# fingerprints, bucket indices, sort order and the clustered copy
KEY_OVERHEAD = sys.getsizeof(b"") + 8 + 16 + 8 + 8 + 16
# per record in a run reader: decoded fingerprints and their bucket index
DECODED_RECORD_BYTES = 16 + 8

_END = object()

MIN_BUCKET_BITS = 6
MAX_BUCKET_BITS = 32

# (n, b) measured for ell = 256
BUCKET_BIT_ANCHORS: Tuple[Tuple[int, int], ...] = (
    (10_000, 6),
    (100_000, 9),
    (1_000_000, 13),
    (2_000_000, 14),
    (4_000_000, 15),
    (8_000_000, 16),
    (10_000_000, 16),
    (16_000_000, 17),
    (32_000_000, 18),
    (64_000_000, 19),
    (100_000_000, 20),
    (128_000_000, 20),
    (512_000_000, 22),
    (1_000_000_000, 23),
)

_REFERENCE_ELL = 256


def choose_bucket_bits(n: int, ell: int = _REFERENCE_ELL) -> int:
    """
    Default number of bucket bits for n keys

    Between anchors the value is the ceiling of a linear interpolation in
    log2(n); past the last anchor each doubling of n adds one bit. Smaller
    ell shifts the table by log2 of the change in ell / log2(ell).

    Args:
        n: Number of keys
        ell: Maximum bucket size

    Returns:
        b in [6, 32]
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    first_n, first_b = BUCKET_BIT_ANCHORS[0]
    last_n, last_b = BUCKET_BIT_ANCHORS[-1]
    if n <= first_n:
        b = first_b
    elif n >= last_n:
        b = last_b + math.ceil(round(math.log2(n / last_n), 9))
    else:
        b = first_b
        for (lo_n, lo_b), (hi_n, hi_b) in zip(BUCKET_BIT_ANCHORS, BUCKET_BIT_ANCHORS[1:]):
            if lo_n <= n <= hi_n:
                fraction = (math.log2(n) - math.log2(lo_n)) / (math.log2(hi_n) - math.log2(lo_n))
                b = math.ceil(round(lo_b + (hi_b - lo_b) * fraction, 9))
                break
    if ell != _REFERENCE_ELL:
        effective = max(ell, 2)
        shift = math.log2(_REFERENCE_ELL / math.log2(_REFERENCE_ELL)) - math.log2(effective / math.log2(effective))
        b += math.ceil(round(shift, 9))
    return min(max(b, MIN_BUCKET_BITS), MAX_BUCKET_BITS)


def count_keys(keys: Iterable) -> int:
    try:
        return len(keys)
    except TypeError:
        return sum(1 for _ in keys)


@dataclass
class SpillFileSet:
    """
    Bucket-clustered runs of fingerprints

    Every run file holds records in nondecreasing bucket order; the last
    block is kept in memory as ``retained`` instead of being written.
    """

    directory: Optional[Path]
    paths: List[Path]
    retained: Optional[np.ndarray]
    record_size: int
    bucket_bits: int
    bucket_sizes: np.ndarray
    n: int

    @property
    def runs(self) -> int:
        return len(self.paths) + (1 if self.retained is not None else 0)

    @property
    def total_bytes(self) -> int:
        return self.n * self.record_size

    def cleanup(self):
        for path in self.paths:
            path.unlink(missing_ok=True)
        if self.directory is not None:
            shutil.rmtree(self.directory, ignore_errors=True)


def key_cost(key: bytes) -> int:
    """Bytes one key occupies while its block is fingerprinted and clustered"""
    return len(key) + KEY_OVERHEAD


def _cluster(fps: np.ndarray, bucket_bits: int) -> Tuple[np.ndarray, np.ndarray]:
    """Indirect counting sort of one block on the bucket index"""
    buckets = bucket_indices(fps, bucket_bits)
    order = np.argsort(buckets, kind="stable")
    return fps[order], np.bincount(buckets, minlength=1 << bucket_bits)


def _fingerprint(provider, block: Sequence[bytes]) -> np.ndarray:
    fps = np.empty((len(block), 2), dtype=np.uint64)
    for start in range(0, len(block), FINGERPRINT_BATCH):
        fps[start:start + FINGERPRINT_BATCH] = provider.fingerprint_block(block[start:start + FINGERPRINT_BATCH])
    return fps


def _read_block(source, pending, budget: int, max_key_bytes: int, start: int) -> Tuple[List[bytes], object]:
    """
    Read keys until their partition cost would exceed the budget

    Args:
        source: Key iterator
        pending: First key of the block, already taken from source
        budget: Memory budget in bytes; a block always holds at least one key
        max_key_bytes: Key length limit
        start: 1-based position of ``pending``

    Returns:
        The block and the first key of the next block, or _END
    """
    block: List[bytes] = []
    used = 0
    key = pending
    while key is not _END:
        key = validate_key(as_key_bytes(key), max_key_bytes, start + len(block))
        cost = key_cost(key)
        if block and used + cost > budget:
            return block, key
        block.append(key)
        used += cost
        key = next(source, _END)
    return block, _END


def _write_run(path: Path, provider, fps: np.ndarray):
    with open(path, "wb") as handle:
        for start in range(0, len(fps), FINGERPRINT_BATCH):
            handle.write(provider.encode_records(fps[start:start + FINGERPRINT_BATCH]))


def partition_step(keys: Iterable, provider, config: BuildConfig, bucket_bits: int,
                   workdir: Optional[Path] = None) -> SpillFileSet:
    """
    Fingerprint and cluster keys into runs under the memory budget

    A block takes keys while the sum of their key_cost stays within
    config.memory. One key of lookahead decides whether a block is the
    last one, which stays in memory instead of going to a file.

    Args:
        keys: Key source; each key is validated with its 1-based position
        provider: Hash provider of this build attempt
        config: Supplies the memory budget and key length limit
        bucket_bits: b
        workdir: Directory for run files (defaults to config.resolved_workdir())

    Returns:
        SpillFileSet with one file per full block and the last block retained
    """
    source = iter(keys)
    pending = next(source, _END)
    sizes = np.zeros(1 << bucket_bits, dtype=np.int64)
    paths: List[Path] = []
    directory: Optional[Path] = None
    retained: Optional[np.ndarray] = None
    n = 0

    try:
        while pending is not _END:
            block, pending = _read_block(source, pending, config.memory, config.max_key_bytes, n + 1)
            n += len(block)
            clustered, counts = _cluster(_fingerprint(provider, block), bucket_bits)
            del block
            sizes += counts
            if pending is _END:
                retained = clustered
                break
            if directory is None:
                base = workdir or config.resolved_workdir()
                base.mkdir(parents=True, exist_ok=True)
                directory = Path(tempfile.mkdtemp(prefix="mphb-", dir=base))
            path = directory / f"{SPILL_PREFIX}{len(paths)}{SPILL_SUFFIX}"
            _write_run(path, provider, clustered)
            paths.append(path)
            logger.info("wrote run %d with %d fingerprints to %s", len(paths) - 1, len(clustered), path)
            del clustered
    except BaseException:
        if directory is not None:
            shutil.rmtree(directory, ignore_errors=True)
        raise

    logger.info("partitioned %d keys into %d runs (%d files)", n, len(paths) + (retained is not None), len(paths))
    return SpillFileSet(directory, paths, retained, provider.record_size, bucket_bits, sizes, n)


def merge_buffer_records(spill: SpillFileSet, memory: int) -> int:
    """
    Records per file buffer during the merge

    The retained block and its bucket indices come out of the budget first;
    the rest is split evenly over the run files.
    """
    retained = 0 if spill.retained is None else len(spill.retained) * DECODED_RECORD_BYTES
    files = max(len(spill.paths), 1)
    return max(1, (memory - retained) // files // (spill.record_size + DECODED_RECORD_BYTES))


class RunReader:
    """
    Buffered sequential reader over one run

    A file-backed run reads ``buffer_records`` records at a time and counts
    each refill as one seek; the retained run is a single in-memory buffer.
    """

    def __init__(self, index: int, provider, bucket_bits: int, buffer_records: int,
                 handle: Optional[BinaryIO] = None, block: Optional[np.ndarray] = None):
        self.index = index
        self.provider = provider
        self.bucket_bits = bucket_bits
        self.buffer_records = buffer_records
        self.handle = handle
        self.refills = 0
        self.fps = np.empty((0, 2), dtype=np.uint64)
        self.buckets = np.empty(0, dtype=np.int64)
        self.pos = 0
        if block is not None:
            self._load(block)
        else:
            self._fill()

    def _load(self, fps: np.ndarray):
        self.fps = fps
        self.buckets = bucket_indices(fps, self.bucket_bits)
        self.pos = 0

    def _fill(self) -> bool:
        if self.handle is None:
            return False
        data = self.handle.read(self.buffer_records * self.provider.record_size)
        if not data:
            self.handle.close()
            self.handle = None
            self._load(np.empty((0, 2), dtype=np.uint64))
            return False
        self.refills += 1
        self._load(self.provider.decode_records(data))
        return True

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.buckets) and self.handle is None

    def head_bucket(self) -> int:
        return int(self.buckets[self.pos])

    def drain(self, bucket: int) -> List[np.ndarray]:
        """All records of ``bucket`` from the current position on"""
        parts = []
        while self.pos < len(self.buckets) and self.buckets[self.pos] == bucket:
            end = int(np.searchsorted(self.buckets, bucket, side="right"))
            parts.append(self.fps[self.pos:end])
            self.pos = end
            if self.pos == len(self.buckets):
                self._fill()
        return parts

    def close(self):
        if self.handle is not None:
            self.handle.close()
            self.handle = None


def read_bucket(heap: List[Tuple[int, int]], readers: Sequence[RunReader]) -> np.ndarray:
    """
    Assemble the bucket at the top of the heap

    Pops every (bucket, run) entry for the smallest bucket index, drains the
    matching records from each run and pushes the run back keyed on its next
    bucket.

    Returns:
        (m, 2) fingerprints of the bucket
    """
    bucket = heap[0][0]
    parts = []
    while heap and heap[0][0] == bucket:
        _, run = heapq.heappop(heap)
        reader = readers[run]
        parts.extend(reader.drain(bucket))
        if not reader.exhausted:
            heapq.heappush(heap, (reader.head_bucket(), run))
    return np.concatenate(parts) if parts else np.empty((0, 2), dtype=np.uint64)


def _sorted_unique(fps: np.ndarray, bucket: int) -> np.ndarray:
    """Fingerprints in canonical order; identical fingerprints raise"""
    order = np.lexsort((fps[:, 0], fps[:, 1]))
    ordered = fps[order]
    same = np.all(ordered[1:] == ordered[:-1], axis=1)
    if same.any():
        raise DuplicateFingerprint(bucket, to_int(ordered[int(np.argmax(same))]))
    return ordered


class OffsetArray:
    """offsets[i] = number of keys in buckets 0 .. i-1, with offsets[2^b] = n"""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.int64)
        if self.values.ndim != 1 or self.values.size < 1 or self.values[0] != 0:
            raise ValueError("offsets must start at 0")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("offsets must be nondecreasing")
        self._values: List[int] = self.values.tolist()

    @classmethod
    def from_sizes(cls, sizes) -> "OffsetArray":
        sizes = np.asarray(sizes, dtype=np.int64)
        return cls(np.concatenate(([0], np.cumsum(sizes))))

    def __getitem__(self, i: int) -> int:
        return self._values[i]

    def __len__(self) -> int:
        return len(self._values) - 1

    def __eq__(self, other):
        if not isinstance(other, OffsetArray):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None

    @property
    def n(self) -> int:
        return self._values[-1]

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.values)


@dataclass(eq=False)
class PerfectHashFunction:
    """
    A built function: provider state, offsets and one descriptor per bucket

    MPHF values lie in [0, n); PHF values in [0, sum of 2 * tau_i).
    """

    provider: object
    bucket_bits: int
    mode: Mode
    epsilon_ppm: int
    kappa: int
    offsets: OffsetArray
    buckets: List[BucketFunction]
    bases: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.buckets) != 1 << self.bucket_bits:
            raise ValueError(f"expected {1 << self.bucket_bits} buckets, got {len(self.buckets)}")
        if self.mode is Mode.PHF:
            widths = 2 * vertex_ranges(self.offsets.sizes, self.epsilon_ppm)
            self.bases = np.concatenate(([0], np.cumsum(widths)))
        else:
            self.bases = self.offsets.values
        self._bases: List[int] = self.bases.tolist()

    @property
    def n(self) -> int:
        return self.offsets.n

    @property
    def range(self) -> int:
        return self._bases[-1]

    def base(self, bucket: int) -> int:
        return self._bases[bucket]

    def evaluate(self, key) -> int:
        return evaluate_global(self, key)

    def evaluate_many(self, keys: Sequence) -> np.ndarray:
        return evaluate_many(self, keys)

    def __eq__(self, other):
        if not isinstance(other, PerfectHashFunction):
            return NotImplemented
        return (self.provider == other.provider and self.bucket_bits == other.bucket_bits
                and self.mode == other.mode and self.epsilon_ppm == other.epsilon_ppm
                and self.kappa == other.kappa and self.offsets == other.offsets
                and self.buckets == other.buckets)

    __hash__ = None


def _clamp(f: PerfectHashFunction, value: int) -> int:
    return min(value, f.range - 1) if f.range else 0


def evaluate_global(f: PerfectHashFunction, key) -> int:
    """
    p(x) = p_i(x) + base[i] for i = h0(x)

    Any key gets a value in range; only build keys are guaranteed distinct.

    Raises:
        KeyTooLong: if the key is longer than the function's key length limit
    """
    bucket, item = f.provider.locate(key, f.bucket_bits)
    descriptor = f.buckets[bucket]
    if descriptor.n == 0:
        return _clamp(f, f.base(bucket))
    h1, h2 = f.provider.family.pair(item, descriptor.seed, descriptor.tau)
    return _clamp(f, f.base(bucket) + evaluate(descriptor, h1, h2))


def evaluate_many(f: PerfectHashFunction, keys: Sequence) -> np.ndarray:
    """
    Evaluate a batch of keys

    Fingerprints and hash pairs are computed per bucket group with numpy;
    phi and rank still run per key in MPHF mode.

    Returns:
        int64 array of values, in key order
    """
    buckets, items = f.provider.locate_many(keys, f.bucket_bits)
    out = np.zeros(len(buckets), dtype=np.int64)
    if not len(buckets):
        return out
    order = np.argsort(buckets, kind="stable")
    groups, starts = np.unique(buckets[order], return_index=True)
    ends = np.append(starts[1:], len(order))
    for bucket, start, end in zip(groups.tolist(), starts.tolist(), ends.tolist()):
        index = order[start:end]
        descriptor = f.buckets[bucket]
        base = f.base(bucket)
        if descriptor.n == 0:
            out[index] = base
            continue
        h1, h2 = f.provider.family.pairs(items[index], descriptor.seed, descriptor.tau)
        if descriptor.mode is Mode.PHF:
            t1 = descriptor.t1
            tau = descriptor.tau
            out[index] = base + np.where(t1[h1] ^ t1[tau + h2], tau + h2, h1)
        else:
            out[index] = [base + evaluate(descriptor, a, c) for a, c in zip(h1.tolist(), h2.tolist())]
    if f.range:
        np.minimum(out, f.range - 1, out=out)
    else:
        out[:] = 0
    return out


@dataclass
class BuildStats:
    """Counters and timings of one build"""

    n: int = 0
    bucket_bits: int = 0
    runs: int = 0
    spill_files: int = 0
    retained_run: bool = False
    buffer_bytes: int = 0
    seeks: int = 0
    seek_bound: float = 0.0
    partition_seconds: float = 0.0
    search_seconds: float = 0.0
    restarts: int = 0
    bucket_bit_increments: int = 0
    max_bucket_size: int = 0
    seed_search: SeedSearchStats = field(default_factory=SeedSearchStats)

    @property
    def total_seconds(self) -> float:
        return self.partition_seconds + self.search_seconds

    @property
    def mean_attempts(self) -> float:
        return self.seed_search.mean_attempts

    @property
    def acyclic_rate(self) -> float:
        return self.seed_search.acyclic_rate


def search_step(spill: SpillFileSet, provider, config: BuildConfig, search_seed: int = 0,
                stats: Optional[BuildStats] = None) -> PerfectHashFunction:
    """
    Merge the runs bucket by bucket and build every bucket function

    Args:
        spill: Output of partition_step
        provider: Provider the runs were fingerprinted with
        config: Build configuration
        search_seed: Root of the per-bucket seed streams
        stats: Optional BuildStats updated with I/O and seed-search counters

    Returns:
        PerfectHashFunction

    Raises:
        BucketOverflow: if some bucket holds more than ell keys
        DuplicateFingerprint: if two keys share a fingerprint
    """
    b = spill.bucket_bits
    sizes = spill.bucket_sizes
    if spill.n and int(sizes.max()) > config.ell:
        worst = int(np.argmax(sizes))
        raise BucketOverflow(worst, int(sizes[worst]), config.ell, b)

    record = spill.record_size
    buffer_records = merge_buffer_records(spill, config.memory)
    seed_stats = stats.seed_search if stats is not None else None
    empty = BucketFunction.empty(config.mode)
    buckets: List[BucketFunction] = []
    offsets = [0]
    readers: List[RunReader] = []
    with contextlib.ExitStack() as stack:
        for index, path in enumerate(spill.paths):
            handle = stack.enter_context(open(path, "rb"))
            readers.append(RunReader(index, provider, b, buffer_records, handle=handle))
        if spill.retained is not None:
            readers.append(RunReader(len(readers), provider, b, buffer_records, block=spill.retained))

        heap = [(r.head_bucket(), r.index) for r in readers if not r.exhausted]
        heapq.heapify(heap)
        for i in range(1 << b):
            if heap and heap[0][0] == i:
                fps = _sorted_unique(read_bucket(heap, readers), i)
                rng = np.random.default_rng([search_seed, i])
                descriptor = build_bucket_function(
                    provider.items(fps), provider.family, config, rng, seed_stats, i
                )
                logger.debug("bucket %d: %d keys, tau=%d", i, descriptor.n, descriptor.tau)
            else:
                descriptor = empty
            buckets.append(descriptor)
            offsets.append(offsets[-1] + descriptor.n)

    if stats is not None:
        stats.buffer_bytes = buffer_records * record
        stats.seeks = sum(r.refills for r in readers if r.index < len(spill.paths))
        stats.seek_bound = spill.total_bytes / stats.buffer_bytes
        stats.max_bucket_size = int(sizes.max()) if sizes.size else 0
    return PerfectHashFunction(
        provider=provider,
        bucket_bits=b,
        mode=config.mode,
        epsilon_ppm=config.epsilon_ppm,
        kappa=config.kappa,
        offsets=OffsetArray(offsets),
        buckets=buckets,
    )


@dataclass
class BuildResult:
    function: PerfectHashFunction
    stats: BuildStats


def find_colliding_positions(keys: Iterable, provider, fp: int, chunk: int = FINGERPRINT_BATCH) -> List[int]:
    """1-based positions of every key whose fingerprint equals fp"""
    lo, hi = np.uint64(fp & ((1 << 64) - 1)), np.uint64(fp >> 64)
    positions: List[int] = []
    source = iter(keys)
    seen = 0
    while True:
        block = [as_key_bytes(k) for _, k in zip(range(chunk), source)]
        if not block:
            return positions
        fps = provider.fingerprint_block(block)
        hits = np.flatnonzero((fps[:, 0] == lo) & (fps[:, 1] == hi))
        positions.extend(int(h) + seen + 1 for h in hits)
        seen += len(block)


def build(keys: Iterable, config: Optional[BuildConfig] = None) -> BuildResult:
    """
    Build a function over a key source with the retry policy

    A bucket overflow retries with one more bucket bit; a duplicate
    fingerprint or an exhausted seed search restarts with fresh provider
    seeds. Each is bounded by its configured limit, after which the error
    propagates; unresolved duplicates carry the positions of the
    colliding keys.

    Args:
        keys: Re-iterable key source (list, KeyFile, ...); one-shot iterators
            are materialised first
        config: Build configuration

    Returns:
        BuildResult with the function and its BuildStats
    """
    config = config or BuildConfig()
    if iter(keys) is keys:
        keys = list(keys)
    n = count_keys(keys)
    b = config.bucket_bits or choose_bucket_bits(max(n, 1), config.ell)
    stats = BuildStats(n=n)
    restart = 0

    while True:
        provider = sample_provider(config, restart)
        search_seed = derive_seeds(config.seed, restart)[2]
        started = time.perf_counter()
        spill = partition_step(keys, provider, config, b)
        stats.partition_seconds = time.perf_counter() - started
        stats.runs = spill.runs
        stats.spill_files = len(spill.paths)
        stats.retained_run = spill.retained is not None
        stats.bucket_bits = b
        started = time.perf_counter()
        try:
            function = search_step(spill, provider, config, search_seed, stats)
        except BucketOverflow as e:
            if stats.bucket_bit_increments >= config.max_bucket_bit_increments or b >= MAX_BUCKET_BITS:
                raise
            stats.bucket_bit_increments += 1
            b += 1
            logger.info("%s; retrying with b=%d", e, b)
            continue
        except (DuplicateFingerprint, SeedSearchExhausted) as e:
            if restart >= config.max_restarts:
                if isinstance(e, DuplicateFingerprint):
                    raise e.with_positions(find_colliding_positions(keys, provider, e.fingerprint)) from e
                raise
            restart += 1
            stats.restarts = restart
            logger.info("%s; restarting with fresh seeds (%d of %d)", e, restart, config.max_restarts)
            continue
        finally:
            stats.search_seconds = time.perf_counter() - started
            if not config.keep_spills:
                spill.cleanup()
        logger.info("built %s over %d keys with b=%d in %.2fs", config.mode.value, n, b, stats.total_seconds)
        return BuildResult(function, stats)
