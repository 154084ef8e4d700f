"""
Pytest configuration and fixtures for mphb
"""
import numpy as np
import pytest
from click.testing import CliRunner

from mphb.config import BuildConfig, Mode, Provider, TestingConfig
from mphb.external_build import build
from mphb.internal_mphf import build_standalone


def make_keys(count, seed=7):
    """Distinct NUL-free keys of 4 to 40 bytes"""
    rng = np.random.default_rng(seed)
    keys = set()
    while len(keys) < count:
        length = int(rng.integers(4, 41))
        keys.add(bytes(rng.integers(1, 256, size=length, dtype=np.uint8).tolist()))
    return sorted(keys)


@pytest.fixture(scope="session")
def keys():
    """2000 distinct random keys"""
    return make_keys(2000)


@pytest.fixture
def tmp_workdir(tmp_path):
    """Directory for run files"""
    workdir = tmp_path / "spill"
    workdir.mkdir()
    return workdir


@pytest.fixture
def testing_config(tmp_workdir):
    """Memory at the floor so that a few thousand keys spill to several runs"""
    return TestingConfig(workdir=str(tmp_workdir))


@pytest.fixture
def default_config(tmp_workdir):
    return BuildConfig(workdir=str(tmp_workdir))


@pytest.fixture(scope="session")
def built(tmp_path_factory):
    """One small external build per (mode, provider), shared by the session"""
    workdir = tmp_path_factory.mktemp("built")
    key_set = make_keys(3000, seed=11)
    functions = {}
    for mode in Mode:
        for provider in Provider:
            config = TestingConfig(workdir=str(workdir), mode=mode, provider=provider)
            functions[mode, provider] = build(key_set, config).function
    return key_set, functions


@pytest.fixture(scope="session")
def standalone():
    """Standalone functions over 500 keys, per mode"""
    key_set = make_keys(500, seed=13)
    return key_set, {
        mode: build_standalone(key_set, BuildConfig(provider=Provider.HEURISTIC, mode=mode, seed=5))
        for mode in Mode
    }


@pytest.fixture
def runner():
    """Create test CLI runner"""
    return CliRunner()
