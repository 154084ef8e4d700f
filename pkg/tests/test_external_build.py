"""
Tests for partitioning, searching and the global function
"""
import heapq
import io
import tracemalloc

import numpy as np
import pytest

from mphb import external_build
from mphb.codec import encode
from mphb.config import BuildConfig, Mode, Provider, TestingConfig
from mphb.errors import BucketOverflow, DuplicateFingerprint, InvalidKey
from mphb.external_build import (
    BuildStats,
    OffsetArray,
    RunReader,
    build,
    choose_bucket_bits,
    find_colliding_positions,
    key_cost,
    merge_buffer_records,
    partition_step,
    read_bucket,
    search_step,
)
from mphb.gf2_hash import bucket_indices
from mphb.provider import sample_provider

from tests.conftest import make_keys


def assert_minimal(f, keys):
    values = f.evaluate_many(keys)
    assert sorted(values.tolist()) == list(range(len(keys)))


def image(f) -> bytes:
    sink = io.BytesIO()
    encode(f, sink)
    return sink.getvalue()


def expected_blocks(keys, memory):
    """Block lengths under the per-key partition cost"""
    blocks, used = [0], 0
    for key in keys:
        cost = key_cost(key)
        if blocks[-1] and used + cost > memory:
            blocks.append(0)
            used = 0
        blocks[-1] += 1
        used += cost
    return blocks


@pytest.fixture(scope="module")
def many_keys():
    """10^4 keys: many runs at the memory floor"""
    return make_keys(10_000, seed=17)


@pytest.fixture(scope="module")
def blocks(many_keys):
    return expected_blocks(many_keys, TestingConfig().memory)


@pytest.mark.unit
class TestChooseBucketBits:
    """Test the default number of bucket bits"""

    @pytest.mark.parametrize("n,b", [
        (1, 6), (10_000, 6), (100_000, 9), (1_000_000, 13), (2_000_000, 14), (8_000_000, 16),
        (10_000_000, 16), (100_000_000, 20), (512_000_000, 22), (1_000_000_000, 23),
    ])
    def test_anchors(self, n, b):
        assert choose_bucket_bits(n) == b

    def test_monotone(self):
        values = [choose_bucket_bits(n) for n in np.geomspace(1, 1e11, 200).astype(np.int64).tolist()]
        assert values == sorted(values)

    def test_beyond_last_anchor(self):
        assert choose_bucket_bits(2_000_000_000) == 24
        assert choose_bucket_bits(10 ** 15) == 32

    def test_smaller_ell_adds_bits(self):
        assert choose_bucket_bits(1_000_000, ell=64) > choose_bucket_bits(1_000_000)

    def test_invalid(self):
        with pytest.raises(ValueError):
            choose_bucket_bits(0)


@pytest.mark.unit
class TestPartitionStep:
    """Test run files"""

    def test_runs_and_retained_block(self, many_keys, blocks, testing_config, tmp_workdir):
        provider = sample_provider(testing_config)
        spill = partition_step(many_keys, provider, testing_config, 6)
        try:
            assert len(blocks) > 3
            assert len(spill.paths) == len(blocks) - 1
            assert spill.runs == len(blocks)
            assert spill.retained is not None and len(spill.retained) == blocks[-1]
            assert int(spill.bucket_sizes.sum()) == spill.n == 10_000
            assert all(p.parent.parent == tmp_workdir for p in spill.paths)
            assert [p.name for p in spill.paths[:2]] == ["run-0.spill", "run-1.spill"]
        finally:
            spill.cleanup()
        assert not any(tmp_workdir.iterdir())

    def test_runs_are_clustered(self, many_keys, blocks, testing_config):
        """Test that every run file is in nondecreasing bucket order"""
        provider = sample_provider(testing_config)
        spill = partition_step(many_keys, provider, testing_config, 8)
        try:
            for path, length in zip(spill.paths, blocks):
                fps = provider.decode_records(path.read_bytes())
                assert len(fps) == length
                assert (np.diff(bucket_indices(fps, 8)) >= 0).all()
            assert (np.diff(bucket_indices(spill.retained, 8)) >= 0).all()
        finally:
            spill.cleanup()

    def test_blocks_fit_the_budget(self, many_keys, blocks, testing_config):
        """Test that no block's working set exceeds the memory budget"""
        start = 0
        for length in blocks:
            assert sum(key_cost(k) for k in many_keys[start:start + length]) <= testing_config.memory
            start += length

    def test_heuristic_records_are_twelve_bytes(self, many_keys, blocks, tmp_workdir):
        config = TestingConfig(provider=Provider.HEURISTIC, workdir=str(tmp_workdir))
        provider = sample_provider(config)
        spill = partition_step(many_keys, provider, config, 6)
        try:
            assert spill.paths[0].stat().st_size == blocks[0] * 12
        finally:
            spill.cleanup()

    def test_oversized_budget_keeps_one_block(self, testing_config):
        keys = make_keys(3000)
        config = testing_config.replace(memory="8M")
        spill = partition_step(keys, sample_provider(config), config, 6)
        assert spill.paths == [] and len(spill.retained) == 3000

    @pytest.mark.integration
    @pytest.mark.parametrize("provider", list(Provider))
    def test_peak_memory_follows_the_budget(self, provider, tmp_workdir):
        """Test that partitioning 10^5 fresh 61-byte keys stays within the memory budget"""
        config = BuildConfig(memory="2M", provider=provider, workdir=str(tmp_workdir))
        hash_provider = sample_provider(config)
        source = (b"%061d" % i for i in range(100_000))
        tracemalloc.start()
        try:
            spill = partition_step(source, hash_provider, config, 10)
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
        try:
            assert len(spill.paths) >= 2
            assert peak <= config.memory + (1 << 20)
        finally:
            spill.cleanup()

    def test_small_set_writes_no_files(self, testing_config):
        """Test that a single block stays in memory"""
        provider = sample_provider(testing_config)
        spill = partition_step(make_keys(100), provider, testing_config, 6)
        assert spill.paths == [] and spill.directory is None
        assert spill.runs == 1

    def test_no_keys(self, testing_config):
        spill = partition_step([], sample_provider(testing_config), testing_config, 6)
        assert spill.runs == 0 and spill.n == 0

    def test_invalid_key_removes_runs(self, many_keys, testing_config, tmp_workdir):
        keys = list(many_keys)
        keys[9000] = b"bad\x00key"
        with pytest.raises(InvalidKey, match="key 9001"):
            partition_step(keys, sample_provider(testing_config), testing_config, 6)
        assert not any(tmp_workdir.iterdir())


@pytest.mark.unit
class TestSearchStep:
    """Test the merge of runs into bucket functions"""

    def test_read_bucket_merges_runs(self, many_keys, testing_config):
        provider = sample_provider(testing_config)
        spill = partition_step(many_keys, provider, testing_config, 6)
        readers = [RunReader(i, provider, 6, 500, handle=open(p, "rb")) for i, p in enumerate(spill.paths)]
        readers.append(RunReader(len(readers), provider, 6, 500, block=spill.retained))
        try:
            heap = [(r.head_bucket(), r.index) for r in readers]
            heapq.heapify(heap)
            first = read_bucket(heap, readers)
            assert len(first) == spill.bucket_sizes[0]
            assert (bucket_indices(first, 6) == 0).all()
            assert all(bucket > 0 for bucket, _ in heap)
        finally:
            for reader in readers:
                reader.close()
            spill.cleanup()

    def test_bijection_and_offsets(self, many_keys, testing_config):
        provider = sample_provider(testing_config)
        spill = partition_step(many_keys, provider, testing_config, 7)
        stats = BuildStats()
        try:
            f = search_step(spill, provider, testing_config, 5, stats)
        finally:
            spill.cleanup()
        assert f.offsets.sizes.tolist() == spill.bucket_sizes.tolist()
        assert f.offsets[1 << 7] == 10_000
        assert_minimal(f, many_keys)
        assert stats.seeks <= stats.seek_bound + spill.runs

    def test_overflow(self, testing_config):
        provider = sample_provider(testing_config)
        spill = partition_step(make_keys(600), provider, testing_config, 1)
        with pytest.raises(BucketOverflow) as info:
            search_step(spill, provider, testing_config)
        assert info.value.size > 256 and info.value.bucket_bits == 1

    def test_merge_buffers_fit_the_budget(self, many_keys, testing_config):
        """Test that the retained block and every file buffer fit the budget together"""
        provider = sample_provider(testing_config)
        spill = partition_step(many_keys, provider, testing_config, 6)
        try:
            records = merge_buffer_records(spill, testing_config.memory)
            decoded = spill.record_size + 16 + 8
            retained = len(spill.retained) * (16 + 8)
            assert records >= 1
            assert retained + len(spill.paths) * records * decoded <= testing_config.memory
        finally:
            spill.cleanup()

    def test_failed_open_closes_earlier_runs(self, many_keys, testing_config, monkeypatch):
        """Test that run files opened before a failing one are closed"""
        provider = sample_provider(testing_config)
        spill = partition_step(many_keys, provider, testing_config, 6)
        spill.paths[-1].unlink()
        handles = []

        def recording_open(path, mode="r"):
            handle = open(path, mode)
            handles.append(handle)
            return handle

        monkeypatch.setattr(external_build, "open", recording_open, raising=False)
        try:
            with pytest.raises(FileNotFoundError):
                search_step(spill, provider, testing_config)
        finally:
            spill.cleanup()
        assert len(handles) == len(spill.paths) - 1
        assert all(h.closed for h in handles)


@pytest.mark.integration
class TestBuild:
    """Test the full two-step build"""

    @pytest.mark.parametrize("provider", list(Provider))
    def test_minimal(self, many_keys, blocks, tmp_workdir, provider):
        result = build(many_keys, TestingConfig(provider=provider, workdir=str(tmp_workdir)))
        assert_minimal(result.function, many_keys)
        assert result.stats.runs == len(blocks)
        assert result.stats.restarts == 0
        assert not any(tmp_workdir.iterdir())

    def test_single_and_batch_agree(self, built):
        keys, functions = built
        for f in functions.values():
            assert f.evaluate_many(keys[:300]).tolist() == [f.evaluate(k) for k in keys[:300]]

    def test_phf_values(self, built):
        keys, functions = built
        for provider in Provider:
            f = functions[Mode.PHF, provider]
            values = f.evaluate_many(keys)
            assert len(set(values.tolist())) == len(keys)
            assert values.max() < f.range
            assert f.range == int(f.bases[-1])

    def test_non_member_in_range(self, built):
        keys, functions = built
        strangers = [b"not-a-member-%d" % i for i in range(500)]
        for f in functions.values():
            values = f.evaluate_many(strangers)
            assert values.min() >= 0 and values.max() < f.range

    def test_single_key(self, testing_config):
        f = build([b"lonely"], testing_config).function
        assert f.evaluate(b"lonely") == 0

    def test_no_keys(self, testing_config):
        result = build([], testing_config)
        assert result.function.n == 0
        assert result.function.evaluate(b"x") == 0

    def test_memory_does_not_change_the_function(self, many_keys, tmp_workdir):
        """Test that the memory budget only changes the I/O pattern"""
        small = build(many_keys, TestingConfig(workdir=str(tmp_workdir)))
        large = build(many_keys, TestingConfig(workdir=str(tmp_workdir), memory="8M"))
        assert small.stats.spill_files >= 2 and large.stats.spill_files == 0
        assert image(small.function) == image(large.function)

    def test_generator_source(self, testing_config):
        keys = make_keys(500)
        f = build((k for k in keys), testing_config).function
        assert_minimal(f, keys)

    def test_overflow_retries_with_more_bits(self, testing_config):
        keys = make_keys(1000)
        result = build(keys, testing_config.replace(bucket_bits=1))
        assert result.stats.bucket_bit_increments >= 1
        assert result.function.bucket_bits == 1 + result.stats.bucket_bit_increments
        assert_minimal(result.function, keys)

    def test_overflow_gives_up(self, testing_config):
        config = testing_config.replace(bucket_bits=1, max_bucket_bit_increments=0)
        with pytest.raises(BucketOverflow):
            build(make_keys(1000), config)

    def test_duplicates_are_reported(self, testing_config):
        keys = make_keys(200)
        keys.append(keys[5])
        with pytest.raises(DuplicateFingerprint) as info:
            build(keys, testing_config)
        assert info.value.positions == (6, 201)

    def test_keep_spills(self, many_keys, blocks, tmp_workdir):
        build(many_keys, TestingConfig(workdir=str(tmp_workdir), keep_spills=True))
        assert len(list(tmp_workdir.glob("mphb-*/run-*.spill"))) == len(blocks) - 1

    def test_stats(self, many_keys, blocks, testing_config):
        stats = build(many_keys, testing_config).stats
        assert stats.n == 10_000
        assert stats.bucket_bits == 6
        assert stats.spill_files == len(blocks) - 1 and stats.retained_run
        assert stats.max_bucket_size <= 256
        assert stats.seed_search.accepted == 64
        assert stats.total_seconds >= stats.search_seconds

    def test_deterministic(self, testing_config):
        keys = make_keys(800)
        assert build(keys, testing_config).function == build(keys, testing_config).function
        other = testing_config.replace(seed=testing_config.seed + 1)
        assert build(keys, testing_config).function != build(keys, other).function


@pytest.mark.unit
class TestOffsetArray:
    """Test prefix sums of bucket sizes"""

    def test_from_sizes(self):
        offsets = OffsetArray.from_sizes([3, 0, 2, 0])
        assert offsets.values.tolist() == [0, 3, 3, 5, 5]
        assert len(offsets) == 4 and offsets.n == 5
        assert offsets.sizes.tolist() == [3, 0, 2, 0]

    def test_all_in_one_bucket(self):
        assert OffsetArray.from_sizes([7, 0, 0]).values.tolist() == [0, 7, 7, 7]

    def test_rejects_decreasing(self):
        with pytest.raises(ValueError):
            OffsetArray([0, 3, 2])
        with pytest.raises(ValueError):
            OffsetArray([1, 3])


def test_find_colliding_positions(testing_config):
    """Test the rescan that locates duplicate keys"""
    provider = sample_provider(testing_config)
    keys = [b"a", b"b", b"a", b"c", b"a"]
    fp = provider.fingerprint(b"a")
    assert find_colliding_positions(keys, provider, fp, chunk=2) == [1, 3, 5]


def test_build_default_config_is_valid():
    assert BuildConfig().mode is Mode.MPHF
