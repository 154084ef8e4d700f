"""Build configuration, named profiles and YAML loading"""
import os
import re
import tempfile
from dataclasses import dataclass, fields, replace as dataclass_replace
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import yaml

from mphb.errors import ConfigError

MIB = 1 << 20

# 16 full buckets of 16-byte fingerprints
MIN_MEMORY_BYTES = 16 * 256 * 16

DEFAULT_MEMORY = 200 * MIB
DEFAULT_ELL = 256
DEFAULT_EPSILON = 0.045
DEFAULT_KAPPA = 128
DEFAULT_MAX_KEY_BYTES = 65

WORKDIR_ENV = "MPHB_WORKDIR"

_SIZE_PATTERN = re.compile(r"^\s*(\d+)\s*([KMG]?)(I?B)?\s*$", re.IGNORECASE)
_SIZE_UNITS = {"": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30}


class Mode(str, Enum):
    """Function kind: minimal (range n) or plain perfect (range sum of 2*tau)"""
    MPHF = "mphf"
    PHF = "phf"


class Provider(str, Enum):
    """Hash family used for fingerprints and per-bucket pairs"""
    PROVABLE = "provable"
    HEURISTIC = "heuristic"


def parse_size(value: Union[int, str]) -> int:
    """
    Parse a byte count such as 200M, 64KiB or 1048576

    Args:
        value: Integer or string with an optional K/M/G suffix (binary multiples)

    Returns:
        Number of bytes
    """
    if isinstance(value, bool):
        raise ConfigError(f"not a size: {value!r}")
    if isinstance(value, int):
        return value
    match = _SIZE_PATTERN.match(str(value))
    if not match:
        raise ConfigError(f"not a size: {value!r}")
    return int(match.group(1)) * _SIZE_UNITS[match.group(2).upper()]


@dataclass(frozen=True)
class BuildConfig:
    """Parameters of one build; validated on construction"""

    memory: int = DEFAULT_MEMORY
    ell: int = DEFAULT_ELL
    bucket_bits: Optional[int] = None
    epsilon: float = DEFAULT_EPSILON
    kappa: int = DEFAULT_KAPPA
    mode: Mode = Mode.MPHF
    provider: Provider = Provider.PROVABLE
    max_key_bytes: int = DEFAULT_MAX_KEY_BYTES
    workdir: Optional[str] = None
    seed: int = 0
    keep_spills: bool = False
    max_seed_attempts: int = 1000
    max_restarts: int = 3
    max_bucket_bit_increments: int = 3

    def __post_init__(self):
        # Enum coercion keeps YAML and CLI strings usable
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}", "mode")
        try:
            object.__setattr__(self, "provider", Provider(self.provider))
        except ValueError:
            raise ConfigError(f"unknown provider {self.provider!r}", "provider")
        object.__setattr__(self, "memory", parse_size(self.memory))
        self._validate()

    def _validate(self):
        if self.memory < MIN_MEMORY_BYTES:
            raise ConfigError(
                f"{self.memory} bytes is below the floor of {MIN_MEMORY_BYTES} bytes",
                "memory",
            )
        ell_cap = 256 if self.provider is Provider.PROVABLE else 1 << 16
        if not 1 <= self.ell <= ell_cap:
            raise ConfigError(f"must be in [1, {ell_cap}]", "ell")
        if self.bucket_bits is not None and not 1 <= self.bucket_bits <= 32:
            raise ConfigError("must be in [1, 32] or auto", "bucket_bits")
        if not 0 < self.epsilon <= 10:
            raise ConfigError("must be in (0, 10]", "epsilon")
        if self.epsilon_ppm < 1:
            raise ConfigError("resolution is one part per million", "epsilon")
        if self.kappa < 1:
            raise ConfigError("must be at least 1", "kappa")
        if not 1 <= self.max_key_bytes <= 4096:
            raise ConfigError("must be in [1, 4096]", "max_key_bytes")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("must be an unsigned 64-bit integer", "seed")
        if self.max_seed_attempts < 1:
            raise ConfigError("must be at least 1", "max_seed_attempts")

    @property
    def epsilon_ppm(self) -> int:
        """epsilon in parts per million, so that tau is computed exactly"""
        try:
            return int(Decimal(str(self.epsilon)) * 1_000_000)
        except InvalidOperation:
            raise ConfigError(f"not a number: {self.epsilon!r}", "epsilon")

    def resolved_workdir(self) -> Path:
        """Spill directory: explicit setting, then $MPHB_WORKDIR, then the temp dir"""
        chosen = self.workdir or os.environ.get(WORKDIR_ENV) or tempfile.gettempdir()
        return Path(chosen)

    def replace(self, **changes) -> "BuildConfig":
        return dataclass_replace(self, **changes)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any], base: Optional["BuildConfig"] = None) -> "BuildConfig":
        """
        Build a configuration from a mapping of field names

        Args:
            mapping: Field values; unknown keys are rejected
            base: Configuration supplying the values not in mapping

        Returns:
            Validated configuration
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        values = dict(mapping)
        if values.get("bucket_bits") == "auto":
            values["bucket_bits"] = None
        return (base or cls()).replace(**values)

    @classmethod
    def from_yaml(cls, path: Union[str, Path], base: Optional["BuildConfig"] = None) -> "BuildConfig":
        """Load a configuration file; an empty document yields the base configuration"""
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = yaml.safe_load(handle)
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}")
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: root element must be a mapping")
        return cls.from_mapping(data, base)


class DefaultConfig(BuildConfig):
    """Parameters used for the published measurements"""


class HeuristicConfig(BuildConfig):
    """Table-free hashing; faster, without a proof for every key set"""

    def __init__(self, **kwargs):
        kwargs.setdefault("provider", Provider.HEURISTIC)
        super().__init__(**kwargs)


class TestingConfig(BuildConfig):
    """Small memory budget so that even tiny key sets spill to several runs"""

    __test__ = False

    def __init__(self, **kwargs):
        kwargs.setdefault("memory", MIN_MEMORY_BYTES)
        kwargs.setdefault("seed", 20070101)
        super().__init__(**kwargs)


config: Dict[str, type] = {
    "default": DefaultConfig,
    "heuristic": HeuristicConfig,
    "testing": TestingConfig,
}


def get_config(name: Optional[str] = None, **overrides) -> BuildConfig:
    """Instantiate a named profile, applying field overrides"""
    profile = config.get(name or "default")
    if profile is None:
        raise ConfigError(f"unknown profile {name!r}; choose from {', '.join(sorted(config))}")
    return profile(**overrides)
