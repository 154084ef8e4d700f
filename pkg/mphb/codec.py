"""
Function image format

    header      32 bytes: magic, version, mode, provider, b, n, epsilon (ppm), kappa, L_max
    provider    provable: chunk tables then the reachable half of the bucket tables
                heuristic: 32-bit fingerprint seed; standalone (b = 0): empty
    offsets     2^b entries of w bytes, w from n; absent when n = 0
    buckets     per nonempty bucket, byte aligned: seed, then
                MPHF: T2 (2 tau bits) + T1' (n_i bits) packed together, then rank samples
                PHF:  T1 (2 tau bits)

Everything is little-endian and bit vectors are packed LSB-first. Bucket
sizes and tau are implied by the offsets. docs/FORMAT.md has the details.
"""
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, List, Tuple, Union

import numpy as np

from mphb.bucket_hash import PRIME, REACHABLE_ENTRIES, TABLE_COUNT, TABLE_SIZE, BucketHashTables
from mphb.config import Mode, Provider
from mphb.errors import FormatError
from mphb.external_build import OffsetArray, PerfectHashFunction
from mphb.gf2_hash import SIGMA, LinearMapGF2
from mphb.internal_mphf import BucketFunction, vertex_range
from mphb.provider import HeuristicProvider, ProvableProvider, StandaloneProvider
from mphb.rank import build_rank

logger = logging.getLogger(__name__)

MAGIC = b"MPHB"
VERSION = 1
HEADER = struct.Struct("<4sHBBB3xQIII")

# provable images are dominated by their tables below this many keys
SMALL_SET_KEYS = 16_000_000

_MODES = {Mode.MPHF: 0, Mode.PHF: 1}
_PROVIDERS = {Provider.PROVABLE: 0, Provider.HEURISTIC: 1}


@dataclass(frozen=True)
class SizeReport:
    """Byte counts of an encoded image"""

    n: int
    total_bytes: int
    header_bytes: int
    provider_bytes: int
    offsets_bytes: int
    buckets_bytes: int
    provable: bool

    @property
    def bits_per_key(self) -> float:
        """Excluding the provider's fixed tables"""
        return (self.total_bytes - self.provider_bytes) * 8 / self.n if self.n else 0.0

    @property
    def bits_per_key_total(self) -> float:
        return self.total_bytes * 8 / self.n if self.n else 0.0

    @property
    def small_set_warning(self) -> bool:
        return self.provable and self.n < SMALL_SET_KEYS


def offset_width(n: int) -> int:
    """Bytes per offset entry: ceil(log2(n + 1)) bits rounded up to 8/16/32/64; 0 for n = 0"""
    if n == 0:
        return 0
    bits = n.bit_length()
    for width in (1, 2, 4, 8):
        if bits <= 8 * width:
            return width
    raise ValueError(f"{n} keys do not fit a 64-bit offset")


def sample_bits(bucket_bits: int, kappa: int, n: int) -> int:
    """
    Width of a stored rank sample

    External images use 8 bits (counts modulo 256) while kappa < 256, else
    32; standalone images use just enough bits for n.
    """
    if bucket_bits == 0:
        return max(1, n.bit_length())
    return 8 if kappa < 256 else 32


def pack_fields(values: np.ndarray, width: int) -> bytes:
    """Values modulo 2^width as width-bit fields, LSB-first, padded to a byte"""
    values = np.asarray(values, dtype=np.uint64)
    fields = (values[:, None] >> np.arange(width, dtype=np.uint64)[None, :]) & np.uint64(1)
    return np.packbits(fields.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_fields(raw: np.ndarray, count: int, width: int) -> np.ndarray:
    bits = np.unpackbits(raw, bitorder="little")[:count * width].reshape(count, width).astype(np.int64)
    return (bits << np.arange(width, dtype=np.int64)[None, :]).sum(axis=1)


def unwrap(stored: np.ndarray, width: int) -> np.ndarray:
    """Recover monotone counts from values stored modulo 2^width"""
    steps = np.diff(np.concatenate(([0], np.asarray(stored, dtype=np.int64)))) % (1 << width)
    return np.cumsum(steps)


def stored_samples(tau: int, kappa: int) -> int:
    """Samples j = 1 .. (2 tau - 1) // kappa are stored; 0 and a final full count are implied"""
    return (2 * tau - 1) // kappa if tau else 0


def _seed_bytes(seed, provider: Provider) -> bytes:
    if provider is Provider.PROVABLE:
        return struct.pack("<I", seed)
    return struct.pack("<II", *seed)


def _encode_provider(f: PerfectHashFunction) -> bytes:
    provider = f.provider
    if isinstance(provider, ProvableProvider):
        tables = provider.linear_map.chunk_tables.astype("<u8").tobytes()
        reachable = provider.family.tables[:, :REACHABLE_ENTRIES].astype("<u4").tobytes()
        return tables + reachable
    if f.bucket_bits == 0:
        return b""
    return struct.pack("<I", provider.seed)


def _encode_bucket(descriptor: BucketFunction, provider: Provider, kappa: int, width: int) -> bytes:
    if descriptor.mode is Mode.PHF:
        bits = descriptor.t1
        samples = b""
    else:
        bits = np.concatenate((descriptor.t2.bits(), descriptor.t1c))
        count = stored_samples(descriptor.tau, kappa)
        samples = pack_fields(descriptor.t2.samples[1:1 + count], width)
    packed = np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()
    return _seed_bytes(descriptor.seed, provider) + packed + samples


def encode(f: PerfectHashFunction, sink: BinaryIO) -> SizeReport:
    """
    Write the image of f

    Args:
        f: Built function
        sink: Binary stream

    Returns:
        SizeReport of the bytes written
    """
    provider_kind = f.provider.kind
    n = f.n
    header = HEADER.pack(
        MAGIC, VERSION, _MODES[f.mode], _PROVIDERS[provider_kind], f.bucket_bits,
        n, f.epsilon_ppm, f.kappa, f.provider.max_key_bytes,
    )
    provider_section = _encode_provider(f)
    width = offset_width(n)
    offsets_section = f.offsets.values[:-1].astype(f"<u{width}").tobytes() if width else b""
    sink.write(header)
    sink.write(provider_section)
    sink.write(offsets_section)

    samples = sample_bits(f.bucket_bits, f.kappa, n)
    buckets_bytes = 0
    chunk: List[bytes] = []
    for descriptor in f.buckets:
        if descriptor.n == 0:
            continue
        chunk.append(_encode_bucket(descriptor, provider_kind, f.kappa, samples))
        if len(chunk) >= 4096:
            data = b"".join(chunk)
            sink.write(data)
            buckets_bytes += len(data)
            chunk.clear()
    data = b"".join(chunk)
    sink.write(data)
    buckets_bytes += len(data)

    report = SizeReport(
        n=n,
        total_bytes=len(header) + len(provider_section) + len(offsets_section) + buckets_bytes,
        header_bytes=len(header),
        provider_bytes=len(provider_section),
        offsets_bytes=len(offsets_section),
        buckets_bytes=buckets_bytes,
        provable=provider_kind is Provider.PROVABLE,
    )
    logger.debug("encoded %d bytes (%.4f bits/key)", report.total_bytes, report.bits_per_key)
    return report


def size_report(f: PerfectHashFunction) -> SizeReport:
    return encode(f, io.BytesIO())


def encode_to_path(f: PerfectHashFunction, path: Union[str, Path]) -> SizeReport:
    with open(path, "wb") as sink:
        return encode(f, sink)


class _Reader:
    """Cursor over image bytes; every short read is a FormatError at its offset"""

    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, size: int, what: str) -> memoryview:
        if self.pos + size > len(self.data):
            raise FormatError(f"truncated {what}: need {size} bytes, {len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        dt = np.dtype(dtype)
        if count == 0:
            return np.empty(0, dtype=dt)
        return np.frombuffer(self.take(dt.itemsize * count, what), dtype=dt)


def _decode_header(reader: _Reader) -> Tuple:
    found = bytes(reader.data[:len(MAGIC)])
    if found != MAGIC:
        raise FormatError(f"bad magic {found!r}, expected {MAGIC!r}", 0)
    raw = reader.take(HEADER.size, "header")
    _, version, mode, provider, b, n, epsilon_ppm, kappa, max_key_bytes = HEADER.unpack(raw)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}, expected {VERSION}", 4)
    modes = {v: k for k, v in _MODES.items()}
    providers = {v: k for k, v in _PROVIDERS.items()}
    if mode not in modes:
        raise FormatError(f"unknown mode {mode}", 6)
    if provider not in providers:
        raise FormatError(f"unknown provider {provider}", 7)
    if b > 32 or (b == 0 and providers[provider] is Provider.PROVABLE):
        raise FormatError(f"invalid bucket bits {b}", 8)
    if kappa < 1 or max_key_bytes < 1:
        raise FormatError("kappa and key length must be positive", 24)
    return modes[mode], providers[provider], b, n, epsilon_ppm, kappa, max_key_bytes


def _decode_provider(reader: _Reader, provider: Provider, b: int, max_key_bytes: int):
    if provider is Provider.HEURISTIC:
        if b == 0:
            return StandaloneProvider(max_key_bytes)
        seed = int(reader.array("<u4", 1, "provider seed")[0])
        return HeuristicProvider(seed, max_key_bytes)
    chunk_tables = reader.array("<u8", max_key_bytes * SIGMA * 2, "linear map tables")
    start = reader.pos
    reachable = reader.array("<u4", TABLE_COUNT * REACHABLE_ENTRIES, "bucket tables")
    if np.any(reachable >= PRIME):
        raise FormatError("bucket table entry out of range", start)
    tables = np.zeros((TABLE_COUNT, TABLE_SIZE), dtype=np.uint64)
    tables[:, :REACHABLE_ENTRIES] = reachable.reshape(TABLE_COUNT, REACHABLE_ENTRIES)
    linear_map = LinearMapGF2(chunk_tables.reshape(max_key_bytes, SIGMA, 2).astype(np.uint64))
    return ProvableProvider(linear_map, BucketHashTables(tables))


def _decode_offsets(reader: _Reader, n: int, b: int) -> OffsetArray:
    width = offset_width(n)
    if not width:
        return OffsetArray(np.zeros((1 << b) + 1, dtype=np.int64))
    start = reader.pos
    values = reader.array(f"<u{width}", 1 << b, "offsets").astype(np.int64)
    if values[0] != 0 or np.any(np.diff(values) < 0) or values[-1] > n:
        raise FormatError("offsets are not nondecreasing prefix sums", start)
    return OffsetArray(np.append(values, n))


def _decode_bucket(reader: _Reader, size: int, mode: Mode, provider: Provider,
                   epsilon_ppm: int, kappa: int, width: int) -> BucketFunction:
    start = reader.pos
    if provider is Provider.PROVABLE:
        seed = int(reader.array("<u4", 1, "bucket seed")[0])
        if not 1 <= seed < PRIME:
            raise FormatError(f"bucket seed {seed} out of range", start)
    else:
        first, second = reader.array("<u4", 2, "bucket seeds").tolist()
        seed = (first, second)
    tau = vertex_range(size, epsilon_ppm)
    nbits = 2 * tau + (size if mode is Mode.MPHF else 0)
    bits_at = reader.pos
    raw = reader.array("u1", -(-nbits // 8), "bucket bits")
    unpacked = np.unpackbits(raw, bitorder="little")
    if unpacked[nbits:].any():
        raise FormatError("nonzero padding bits", bits_at)
    bits = unpacked[:nbits]
    if mode is Mode.PHF:
        return BucketFunction(seed, tau, size, mode, t1=bits.copy())

    t2_bits = bits[:2 * tau]
    if int(t2_bits.sum()) != size:
        raise FormatError(f"T2 has {int(t2_bits.sum())} set bits for a bucket of {size}", bits_at)
    t2 = build_rank(t2_bits, kappa)
    count = stored_samples(tau, kappa)
    samples_at = reader.pos
    raw_samples = reader.array("u1", -(-count * width // 8), "rank samples")
    stored = unwrap(unpack_fields(raw_samples, count, width), width)
    if not np.array_equal(stored, t2.samples[1:1 + count]):
        raise FormatError("rank samples do not match T2", samples_at)
    return BucketFunction(seed, tau, size, mode, t2=t2, t1c=bits[2 * tau:].copy())


def decode(source: Union[bytes, bytearray, BinaryIO]) -> PerfectHashFunction:
    """
    Read an image back

    Args:
        source: Image bytes or a binary stream positioned at the image

    Returns:
        PerfectHashFunction evaluating identically to the encoded one

    Raises:
        FormatError: on foreign magic, unknown version, truncation or
            inconsistent sections, with the byte offset of the problem
    """
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    reader = _Reader(data)
    mode, provider_kind, b, n, epsilon_ppm, kappa, max_key_bytes = _decode_header(reader)
    provider = _decode_provider(reader, provider_kind, b, max_key_bytes)
    offsets = _decode_offsets(reader, n, b)
    width = sample_bits(b, kappa, n)
    empty = BucketFunction.empty(mode)
    buckets = []
    for size in offsets.sizes.tolist():
        if size == 0:
            buckets.append(empty)
        else:
            buckets.append(_decode_bucket(reader, size, mode, provider_kind, epsilon_ppm, kappa, width))
    if reader.pos != len(reader.data):
        raise FormatError(f"{len(reader.data) - reader.pos} trailing bytes", reader.pos)
    return PerfectHashFunction(
        provider=provider,
        bucket_bits=b,
        mode=mode,
        epsilon_ppm=epsilon_ppm,
        kappa=kappa,
        offsets=offsets,
        buckets=buckets,
    )


def decode_from_path(path: Union[str, Path]) -> PerfectHashFunction:
    with open(path, "rb") as source:
        return decode(source)
