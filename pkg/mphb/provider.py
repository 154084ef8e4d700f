"""
Hash providers: everything a pipeline stage needs to know about one hashing mode

A provider fingerprints key blocks, lays fingerprints out as spill records,
turns fingerprints into the items its pair family hashes, and reports the
bytes its fixed state occupies in a function image.
"""
import logging
from typing import Iterable, Sequence, Tuple

import numpy as np

from mphb.bucket_hash import REACHABLE_ENTRIES, TABLE_COUNT, BucketHashTables, HeuristicPairs, sample_bucket_tables
from mphb.config import BuildConfig, Provider
from mphb.errors import KeyTooLong
from mphb.gf2_hash import (
    SIGMA,
    Fingerprint128,
    HeuristicFingerprinter,
    LinearMapGF2,
    as_key_bytes,
    bucket_index,
    bucket_indices,
    fingerprint,
    fingerprint_block,
    from_int,
    sample_linear_map,
)

logger = logging.getLogger(__name__)

RECORD16 = np.dtype([("lo", "<u8"), ("hi", "<u8")])
RECORD12 = np.dtype([("lo", "<u8"), ("bucket", "<u4")])

# 32-bit table entries, reachable half only
BUCKET_TABLE_BYTES = TABLE_COUNT * REACHABLE_ENTRIES * 4


def derive_seeds(seed: int, restart: int) -> Tuple[int, int, int]:
    """(linear map seed, bucket table seed, seed-search seed) for one build attempt"""
    state = np.random.SeedSequence([seed, restart]).generate_state(3, dtype=np.uint64)
    return tuple(int(v) for v in state)


class ProvableProvider:
    """Tabulated GF(2) fingerprints and table-driven bucket pairs"""

    kind = Provider.PROVABLE
    record_size = RECORD16.itemsize

    def __init__(self, linear_map: LinearMapGF2, bucket_tables: BucketHashTables):
        self.linear_map = linear_map
        self.family = bucket_tables

    @property
    def max_key_bytes(self) -> int:
        return self.linear_map.max_key_bytes

    def fingerprint(self, key) -> Fingerprint128:
        return fingerprint(self.linear_map, key)

    def fingerprint_block(self, keys: Sequence[bytes]) -> np.ndarray:
        return fingerprint_block(self.linear_map, keys)

    def encode_records(self, fps: np.ndarray) -> bytes:
        return np.ascontiguousarray(fps, dtype="<u8").tobytes()

    def decode_records(self, data: bytes) -> np.ndarray:
        return np.frombuffer(data, dtype="<u8").reshape(-1, 2).astype(np.uint64)

    def items(self, fps: np.ndarray):
        return fps

    def item(self, fp: Fingerprint128):
        return fp

    def locate(self, key, b: int) -> Tuple[int, object]:
        fp = self.fingerprint(key)
        return bucket_index(fp, b), fp

    def locate_many(self, keys: Sequence[bytes], b: int) -> Tuple[np.ndarray, object]:
        fps = self.fingerprint_block([as_key_bytes(k) for k in keys])
        return bucket_indices(fps, b), fps

    def fixed_cost_bytes(self) -> int:
        return self.max_key_bytes * SIGMA * 16 + BUCKET_TABLE_BYTES

    def __eq__(self, other):
        if not isinstance(other, ProvableProvider):
            return NotImplemented
        return self.linear_map == other.linear_map and self.family == other.family

    __hash__ = None


class HeuristicProvider:
    """
    Fingerprints and bucket pairs from seeded MurmurHash3, no tables

    Spill records are 12 bytes: the 64-bit body and the 32-bit bucket word.
    """

    kind = Provider.HEURISTIC
    record_size = RECORD12.itemsize

    def __init__(self, seed: int, max_key_bytes: int):
        self.fingerprinter = HeuristicFingerprinter(seed)
        self.seed = self.fingerprinter.seed
        self.max_key_bytes = max_key_bytes
        self.family = HeuristicPairs()

    def _check(self, key: bytes) -> bytes:
        if len(key) > self.max_key_bytes:
            raise KeyTooLong(len(key), self.max_key_bytes)
        return key

    def fingerprint(self, key) -> Fingerprint128:
        return self.fingerprinter.fingerprint(self._check(as_key_bytes(key)))

    def fingerprint_block(self, keys: Sequence[bytes]) -> np.ndarray:
        return self.fingerprinter.fingerprint_block(keys)

    def encode_records(self, fps: np.ndarray) -> bytes:
        records = np.empty(len(fps), dtype=RECORD12)
        records["lo"] = fps[:, 0]
        records["bucket"] = fps[:, 1] >> np.uint64(32)
        return records.tobytes()

    def decode_records(self, data: bytes) -> np.ndarray:
        records = np.frombuffer(data, dtype=RECORD12)
        fps = np.empty((len(records), 2), dtype=np.uint64)
        fps[:, 0] = records["lo"]
        fps[:, 1] = records["bucket"].astype(np.uint64) << np.uint64(32)
        return fps

    def items(self, fps: np.ndarray) -> np.ndarray:
        """12-byte records as an object array of bytes"""
        raw = self.encode_records(fps)
        size = self.record_size
        items = np.empty(len(fps), dtype=object)
        items[:] = [raw[i:i + size] for i in range(0, len(raw), size)]
        return items

    def item(self, fp: Fingerprint128) -> bytes:
        return self.encode_records(from_int(fp)[None, :])

    def locate(self, key, b: int) -> Tuple[int, object]:
        fp = self.fingerprint(key)
        return bucket_index(fp, b), self.item(fp)

    def locate_many(self, keys: Sequence[bytes], b: int) -> Tuple[np.ndarray, object]:
        fps = self.fingerprint_block([self._check(as_key_bytes(k)) for k in keys])
        return bucket_indices(fps, b), self.items(fps)

    def fixed_cost_bytes(self) -> int:
        return 4

    def __eq__(self, other):
        if not isinstance(other, HeuristicProvider):
            return NotImplemented
        return type(self) is type(other) and self.seed == other.seed and self.max_key_bytes == other.max_key_bytes

    __hash__ = None


class StandaloneProvider(HeuristicProvider):
    """Single-bucket functions hashing raw key bytes directly"""

    def __init__(self, max_key_bytes: int = 1 << 16):
        super().__init__(0, max_key_bytes)

    def locate(self, key, b: int) -> Tuple[int, object]:
        return 0, self._check(as_key_bytes(key))

    def locate_many(self, keys: Iterable, b: int) -> Tuple[np.ndarray, object]:
        raw = [self._check(as_key_bytes(k)) for k in keys]
        items = np.empty(len(raw), dtype=object)
        items[:] = raw
        return np.zeros(len(raw), dtype=np.int64), items

    def fixed_cost_bytes(self) -> int:
        return 0


def sample_provider(config: BuildConfig, restart: int = 0):
    """
    Draw a fresh provider for one build attempt

    All randomness derives from (config.seed, restart), so a restarted build
    is reproducible too.
    """
    map_seed, tables_seed, _ = derive_seeds(config.seed, restart)
    if config.provider is Provider.HEURISTIC:
        return HeuristicProvider(map_seed & 0xFFFF_FFFF, config.max_key_bytes)
    logger.debug("sampling linear map (%d chunks) and bucket tables", config.max_key_bytes)
    return ProvableProvider(sample_linear_map(map_seed, config.max_key_bytes), sample_bucket_tables(tables_seed))
