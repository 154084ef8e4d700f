"""
Large-n tests: correctness, space, bucket balance, memory and scaling
"""
import io
import tracemalloc

import numpy as np
import pytest

from mphb.cli import generate_keys, run_bench
from mphb.codec import decode, encode, size_report
from mphb.config import BuildConfig, Mode
from mphb.external_build import build, choose_bucket_bits

pytestmark = pytest.mark.slow


class GeneratedKeys:
    """Re-iterable URL-like keys, created while they are read"""

    def __init__(self, count):
        self.count = count

    def __len__(self):
        return self.count

    def __iter__(self):
        return (b"http://example.org/item/%d" % i for i in range(self.count))


def image(f) -> bytes:
    sink = io.BytesIO()
    encode(f, sink)
    return sink.getvalue()


@pytest.fixture(scope="module")
def scale_builds(tmp_path_factory):
    """Provable MPHF and PHF builds at 10^5 and 10^6 keys"""
    workdir = tmp_path_factory.mktemp("scale")
    builds = {}
    for n in (100_000, 1_000_000):
        keys = list(GeneratedKeys(n))
        for mode in Mode:
            builds[n, mode] = keys, build(keys, BuildConfig(mode=mode, workdir=str(workdir)))
    return builds


class TestCorrectnessAtScale:
    """Test exact bijection and codec round trips on large key sets"""

    @pytest.mark.parametrize("n", [100_000, 1_000_000])
    def test_mphf_is_a_bijection(self, scale_builds, n):
        keys, result = scale_builds[n, Mode.MPHF]
        values = result.function.evaluate_many(keys)
        assert np.array_equal(np.sort(values), np.arange(n))

    @pytest.mark.parametrize("n", [100_000, 1_000_000])
    def test_phf_is_injective(self, scale_builds, n):
        keys, result = scale_builds[n, Mode.PHF]
        values = result.function.evaluate_many(keys)
        assert np.unique(values).size == n
        assert values.max() < result.function.range

    @pytest.mark.parametrize("n", [100_000, 1_000_000])
    def test_round_trip(self, scale_builds, n):
        for mode in Mode:
            keys, result = scale_builds[n, mode]
            decoded = decode(image(result.function))
            assert np.array_equal(decoded.evaluate_many(keys), result.function.evaluate_many(keys))


class TestSpaceAtScale:
    """Test bits per key of a 10^6-key external build, tables excluded"""

    @pytest.mark.parametrize("mode,low,high", [(Mode.MPHF, 3.5, 4.1), (Mode.PHF, 2.4, 2.9)])
    def test_bits_per_key(self, scale_builds, mode, low, high):
        _, result = scale_builds[1_000_000, mode]
        assert result.function.bucket_bits == 13
        assert low <= size_report(result.function).bits_per_key <= high


class TestBucketBalance:
    """Test the default bucket bits against the bucket size limit"""

    @pytest.mark.parametrize("n", [100_000, 1_000_000, 10_000_000])
    def test_largest_bucket_fits(self, n):
        """Test max bucket size <= 256 for uniform bucket words in at least 9 of 10 trials"""
        b = choose_bucket_bits(n)
        fits = 0
        for trial in range(10):
            words = np.random.default_rng([n, trial]).integers(0, 1 << 32, n, dtype=np.uint64)
            buckets = (words >> np.uint64(32 - b)).astype(np.int64)
            fits += int(np.bincount(buckets, minlength=1 << b).max() <= 256)
        assert fits >= 9

    def test_real_keys_need_no_retry(self, scale_builds):
        for n in (100_000, 1_000_000):
            _, result = scale_builds[n, Mode.MPHF]
            assert result.stats.bucket_bit_increments == 0
            assert result.stats.max_bucket_size <= 256

    def test_too_few_bits_retry(self, tmp_path):
        """Test that starting two bits short recovers through overflow retries"""
        keys = list(GeneratedKeys(100_000))
        config = BuildConfig(bucket_bits=choose_bucket_bits(100_000) - 2, workdir=str(tmp_path))
        result = build(keys, config)
        assert result.stats.bucket_bit_increments >= 1
        assert np.array_equal(np.sort(result.function.evaluate_many(keys)), np.arange(100_000))


class TestMemoryBound:
    """Test that the memory budget bounds the build and never changes its output"""

    def test_small_budget(self, tmp_path):
        keys = GeneratedKeys(1_000_000)
        config = BuildConfig(memory="4M", workdir=str(tmp_path))
        tracemalloc.start()
        try:
            small = build(keys, config)
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
        large = build(keys, config.replace(memory="512M"))
        assert small.stats.spill_files >= 2
        assert large.stats.spill_files == 0
        assert peak <= config.memory + (64 << 20)
        assert image(small.function) == image(large.function)


class TestScaling:
    """Test that build time grows linearly with n"""

    def test_doubling_n_doubles_time(self, tmp_path):
        sizes = [1 << 17, 1 << 18, 1 << 19]
        keys = generate_keys(sizes[-1], 3)
        rows = run_bench(keys, sizes, 2, BuildConfig(workdir=str(tmp_path)))
        best = {n: min((r for r in rows if r.n == n), key=lambda r: r.total_s) for n in sizes}
        for small, large in zip(sizes, sizes[1:]):
            assert 1.7 <= best[large].total_s / best[small].total_s <= 2.4
        shares = [best[n].partition_s / best[n].total_s for n in sizes]
        assert all(r.partition_s > 0 and r.search_s > 0 for r in rows)
        assert max(shares) - min(shares) <= 0.15
