"""
mphb: perfect and minimal perfect hash functions for static key sets

Keys are fingerprinted, partitioned into small buckets on disk under a
memory budget and each bucket gets its own function built from a random
acyclic bipartite graph. Typical functions take 2 to 4 bits per key.
"""
__version__ = "0.1.0"

from mphb.config import BuildConfig, Mode, Provider, get_config  # noqa: E402
from mphb.errors import (  # noqa: E402
    BucketOverflow,
    ConfigError,
    DuplicateFingerprint,
    FormatError,
    InvalidKey,
    KeyTooLong,
    ModeMismatch,
    MphbError,
    SeedSearchExhausted,
    VerificationFailed,
)
from mphb.external_build import BuildResult, BuildStats, PerfectHashFunction, build  # noqa: E402
from mphb.internal_mphf import build_standalone  # noqa: E402
from mphb.codec import SizeReport, decode, decode_from_path, encode, encode_to_path  # noqa: E402

__all__ = [
    "BucketOverflow",
    "BuildConfig",
    "BuildResult",
    "BuildStats",
    "ConfigError",
    "DuplicateFingerprint",
    "FormatError",
    "InvalidKey",
    "KeyTooLong",
    "Mode",
    "ModeMismatch",
    "MphbError",
    "PerfectHashFunction",
    "Provider",
    "SeedSearchExhausted",
    "SizeReport",
    "VerificationFailed",
    "build",
    "build_standalone",
    "decode",
    "decode_from_path",
    "encode",
    "encode_to_path",
    "get_config",
]
