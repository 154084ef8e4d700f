"""
Command-line front end: build, query, verify, bench, info

Keys are raw bytes, one per line, split on 0x0A only.
"""
import csv
import functools
import logging
import re
import sys
from pathlib import Path
from typing import BinaryIO, Iterator, List, Optional, Sequence

import click
import numpy as np

from mphb import __version__
from mphb.codec import decode_from_path, encode_to_path, offset_width, sample_bits, size_report
from mphb.config import BuildConfig, Mode, Provider, get_config
from mphb.errors import (
    EXIT_VERIFY_FAILED,
    ConfigError,
    ModeMismatch,
    MphbError,
    VerificationFailed,
    describe,
    exit_status,
    register_error_handlers,
)
from mphb.external_build import PerfectHashFunction, build
from mphb.report import CSV_COLUMNS, BenchRow, render_bench_report, render_summary

logger = logging.getLogger(__name__)

EVAL_BATCH = 1 << 16

_COUNT_PATTERN = re.compile(r"^\s*(\d+)\s*([KMG]?)\s*$", re.IGNORECASE)
_COUNT_UNITS = {"": 1, "K": 10 ** 3, "M": 10 ** 6, "G": 10 ** 9}


class KeyFile:
    """
    Newline-delimited keys read lazily from a file

    Re-iterable, so the build can rescan it to locate duplicate keys.
    """

    def __init__(self, path, limit: Optional[int] = None):
        self.path = Path(path)
        self.limit = limit
        self._count: Optional[int] = None

    def __iter__(self) -> Iterator[bytes]:
        with open(self.path, "rb") as handle:
            yield from read_lines(handle, self.limit)

    def __len__(self) -> int:
        if self._count is None:
            self._count = sum(1 for _ in self)
        return self._count


def read_lines(handle: BinaryIO, limit: Optional[int] = None) -> Iterator[bytes]:
    """Lines without their trailing 0x0A; a final line without newline counts too"""
    for count, line in enumerate(handle):
        if limit is not None and count >= limit:
            return
        yield line[:-1] if line.endswith(b"\n") else line


def parse_count(value: str) -> int:
    """Key count with an optional decimal K/M/G suffix: 1M = 10^6"""
    match = _COUNT_PATTERN.match(value)
    if not match:
        raise ConfigError(f"not a key count: {value!r}", "sizes")
    return int(match.group(1)) * _COUNT_UNITS[match.group(2).upper()]


def generate_keys(count: int, seed: int) -> List[bytes]:
    """Distinct URL-like keys, deterministic in seed"""
    rng = np.random.default_rng(seed)
    hosts = rng.integers(0, 1 << 20, size=count)
    paths = rng.integers(0, 1 << 62, size=count, dtype=np.int64)
    return [
        b"http://www.host%05x.example/%d/page-%016x" % (host, index, path)
        for index, (host, path) in enumerate(zip(hosts.tolist(), paths.tolist()))
    ]


def handle_errors(func):
    """Turn library errors into a one-line message and the mapped exit status"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (MphbError, OSError) as e:
            click.echo(describe(e), err=True)
            sys.exit(exit_status(e))

    return wrapper


def resolve_config(profile: Optional[str], config_file: Optional[str], **flags) -> BuildConfig:
    """Profile, then YAML file, then explicitly given flags"""
    config = get_config(profile)
    if config_file:
        config = BuildConfig.from_yaml(config_file, config)
    overrides = {name: value for name, value in flags.items() if value is not None}
    if "bucket_bits" in overrides:
        bits = overrides["bucket_bits"]
        if bits == "auto":
            overrides["bucket_bits"] = None
        else:
            try:
                overrides["bucket_bits"] = int(bits)
            except ValueError:
                raise ConfigError(f"expected an integer or auto, got {bits!r}", "bucket_bits")
    return BuildConfig.from_mapping(overrides, config)


def evaluate_keys(f: PerfectHashFunction, keys) -> Iterator[np.ndarray]:
    batch: List[bytes] = []
    for key in keys:
        batch.append(key)
        if len(batch) == EVAL_BATCH:
            yield f.evaluate_many(batch)
            batch = []
    if batch:
        yield f.evaluate_many(batch)


def check_function(f: PerfectHashFunction, keys) -> int:
    """
    Check that f hashes keys perfectly

    MPHF: values form exactly {0 .. n-1}; PHF: values distinct and in range.

    Returns:
        Number of keys checked

    Raises:
        VerificationFailed: naming the first offending key
    """
    seen = np.zeros(max(f.range, 1), dtype=bool)
    position = 0
    for values in evaluate_keys(f, keys):
        if values.size and (values.min() < 0 or values.max() >= f.range):
            bad = int(np.flatnonzero((values < 0) | (values >= f.range))[0])
            raise VerificationFailed(f"value {int(values[bad])} outside [0, {f.range})", position + bad + 1)
        for offset, value in enumerate(values.tolist()):
            if seen[value]:
                raise VerificationFailed(f"value {value} repeated", position + offset + 1)
            seen[value] = True
        position += values.size
    if f.mode is Mode.MPHF and position != f.n:
        raise VerificationFailed(f"{position} keys given for a function over {f.n} keys")
    return position


_build_options = [
    click.option("--mode", type=click.Choice([m.value for m in Mode]), default=None, help="Function kind (default mphf)"),
    click.option("--provider", type=click.Choice([p.value for p in Provider]), default=None,
                 help="Hash provider (default provable)"),
    click.option("--memory", default=None, help="Memory budget, e.g. 200M (default 200M)"),
    click.option("--workdir", type=click.Path(file_okay=False), default=None,
                 help="Directory for run files (default $MPHB_WORKDIR or the temp dir)"),
    click.option("--seed", type=int, default=None, help="Seed of all random choices"),
    click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), default=None,
                 help="YAML configuration file"),
    click.option("--profile", default=None, help="Named configuration profile"),
]


def build_options(func):
    for option in reversed(_build_options):
        func = option(func)
    return func


@click.group()
@click.version_option(__version__, prog_name="mphb")
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for per-bucket detail")
def cli(verbose: int):
    """Perfect and minimal perfect hash functions for large static key sets"""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger("mphb").setLevel(level)
    register_error_handlers()


@cli.command("build")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Key file")
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False), help="Function image to write")
@build_options
@click.option("--bucket-bits", default=None, help="auto or a number of bucket bits")
@click.option("--epsilon", type=float, default=None, help="Graph sparsity (default 0.045)")
@click.option("--kappa", type=int, default=None, help="Rank sampling interval (default 128)")
@click.option("--keep-spills", is_flag=True, help="Keep run files after the build")
@handle_errors
def build_command(input_path, output_path, mode, provider, memory, workdir, seed, config_file, profile,
                  bucket_bits, epsilon, kappa, keep_spills):
    """Build a function over the keys of INPUT"""
    config = resolve_config(
        profile, config_file, mode=mode, provider=provider, memory=memory, workdir=workdir, seed=seed,
        bucket_bits=bucket_bits, epsilon=epsilon, kappa=kappa, keep_spills=True if keep_spills else None,
    )
    result = build(KeyFile(input_path), config)
    size = encode_to_path(result.function, output_path)
    if size.small_set_warning:
        logger.warning("lookup tables take %d of %d bytes; the table-free provider suits fewer than "
                       "16 million keys better", size.provider_bytes, size.total_bytes)
    click.echo(render_summary(result.stats, size, config.mode.value, config.provider.value))


@cli.command("query")
@click.option("--function", "function_path", required=True, type=click.Path(exists=True, dir_okay=False))
@handle_errors
def query_command(function_path):
    """Print the value of every key read from stdin"""
    f = decode_from_path(function_path)
    stream = click.get_binary_stream("stdin")
    for values in evaluate_keys(f, read_lines(stream)):
        click.echo("\n".join(str(v) for v in values.tolist()))


@cli.command("verify")
@click.option("--function", "function_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice([m.value for m in Mode]), default=None,
              help="Fail unless the function has this mode")
@handle_errors
def verify_command(function_path, input_path, mode):
    """Check that the function hashes INPUT perfectly; prints PASS or FAIL"""
    f = decode_from_path(function_path)
    if mode is not None and Mode(mode) is not f.mode:
        raise ModeMismatch(f"function is {f.mode.value}, expected {mode}")
    try:
        count = check_function(f, KeyFile(input_path))
    except VerificationFailed as e:
        click.echo(f"FAIL {e}")
        sys.exit(EXIT_VERIFY_FAILED)
    click.echo(f"PASS {count} keys, {f.mode.value}, range {f.range}")


@cli.command("info")
@click.option("--function", "function_path", required=True, type=click.Path(exists=True, dir_okay=False))
@handle_errors
def info_command(function_path):
    """Describe a function image"""
    f = decode_from_path(function_path)
    size = size_report(f)
    rows = [
        ("mode", f.mode.value),
        ("provider", f.provider.kind.value),
        ("keys", f.n),
        ("range", f.range),
        ("bucket bits", f.bucket_bits),
        ("epsilon (ppm)", f.epsilon_ppm),
        ("kappa", f.kappa),
        ("max key bytes", f.provider.max_key_bytes),
        ("offset width", offset_width(f.n)),
        ("sample bits", sample_bits(f.bucket_bits, f.kappa, f.n)),
        ("total bytes", size.total_bytes),
        ("header bytes", size.header_bytes),
        ("provider bytes", size.provider_bytes),
        ("offsets bytes", size.offsets_bytes),
        ("bucket bytes", size.buckets_bytes),
        ("bits/key", f"{size.bits_per_key:.4f}"),
        ("bits/key with tables", f"{size.bits_per_key_total:.4f}"),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        click.echo(f"{name:<{width}}  {value}")


def _bench_keys(input_path: Optional[str], largest: int, seed: int) -> List[bytes]:
    if input_path is None:
        return generate_keys(largest, seed)
    keys = list(KeyFile(input_path, largest))
    if len(keys) < largest:
        raise ConfigError(f"{input_path} has {len(keys)} keys, {largest} needed", "sizes")
    return keys


def run_bench(keys: Sequence[bytes], sizes: Sequence[int], trials: int, config: BuildConfig) -> List[BenchRow]:
    """Build every size `trials` times with seeds config.seed, config.seed + 1, ..."""
    rows: List[BenchRow] = []
    for n in sizes:
        for trial in range(1, trials + 1):
            result = build(keys[:n], config.replace(seed=config.seed + trial - 1))
            stats = result.stats
            size = size_report(result.function)
            rows.append(BenchRow(
                n=n,
                trial=trial,
                partition_s=stats.partition_seconds,
                search_s=stats.search_seconds,
                total_s=stats.total_seconds,
                bits_per_key=size.bits_per_key,
                mean_attempts=stats.mean_attempts,
                acyclic_rate=stats.acyclic_rate,
            ))
            logger.info("n=%d trial %d: %.3fs", n, trial, stats.total_seconds)
    return rows


@cli.command("bench")
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Key file; random URL-like keys when omitted")
@click.option("--sizes", required=True, help="Comma-separated key counts, e.g. 1M,2M,4M")
@click.option("--trials", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="CSV output (default stdout)")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None, help="Markdown report output")
@build_options
@handle_errors
def bench_command(input_path, sizes, trials, csv_path, report_path, mode, provider, memory, workdir, seed,
                  config_file, profile):
    """Time builds over growing key counts"""
    config = resolve_config(profile, config_file, mode=mode, provider=provider, memory=memory,
                            workdir=workdir, seed=seed)
    counts = [parse_count(s) for s in sizes.split(",") if s.strip()]
    if not counts or min(counts) < 1:
        raise ConfigError("at least one positive size is required", "sizes")
    keys = _bench_keys(input_path, max(counts), config.seed)
    rows = run_bench(keys, counts, trials, config)

    handle = open(csv_path, "w", newline="", encoding="utf-8") if csv_path else None
    try:
        writer = csv.writer(handle or click.get_text_stream("stdout"), lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(row.as_csv() for row in rows)
    finally:
        if handle is not None:
            handle.close()
    if report_path:
        Path(report_path).write_text(render_bench_report(rows, config.mode.value, config.provider.value),
                                     encoding="utf-8")


def main():
    cli(prog_name="mphb")


if __name__ == "__main__":
    main()
