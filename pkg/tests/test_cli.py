"""
Tests for the mphb command line
"""
import csv
import io
import re

import pytest

from mphb.cli import KeyFile, cli, generate_keys, parse_count, read_lines
from mphb.codec import decode_from_path
from mphb.errors import ConfigError


def write_keys(path, keys):
    path.write_bytes(b"".join(k + b"\n" for k in keys))
    return path


@pytest.fixture
def key_file(tmp_path):
    return write_keys(tmp_path / "keys.txt", generate_keys(1500, 1))


@pytest.fixture
def build_args(tmp_path, tmp_workdir):
    def args(key_path, output, *extra):
        return ["build", "--input", str(key_path), "--output", str(output), "--profile", "testing",
                "--workdir", str(tmp_workdir), *extra]
    return args


def summary_fields(output):
    line = next(line for line in output.splitlines() if line.startswith("mphb-summary"))
    return dict(item.split("=") for item in line.split()[2:])


@pytest.mark.unit
class TestKeyInput:
    """Test key reading helpers"""

    def test_read_lines(self):
        handle = io.BytesIO(b"a\nb\r\n\nlast")
        assert list(read_lines(handle)) == [b"a", b"b\r", b"", b"last"]

    def test_limit(self):
        assert list(read_lines(io.BytesIO(b"1\n2\n3\n"), 2)) == [b"1", b"2"]

    def test_key_file_is_reiterable(self, key_file):
        keys = KeyFile(key_file)
        assert len(keys) == 1500
        assert list(keys) == list(keys)

    def test_parse_count(self):
        assert parse_count("1M") == 10 ** 6
        assert parse_count("250k") == 250_000
        assert parse_count("42") == 42
        with pytest.raises(ConfigError):
            parse_count("1.5M")

    def test_generated_keys(self):
        keys = generate_keys(1000, 3)
        assert len(set(keys)) == 1000
        assert keys == generate_keys(1000, 3)
        assert all(b"\n" not in k and b"\x00" not in k and len(k) <= 65 for k in keys)


@pytest.mark.integration
class TestBuildCommand:
    """Test mphb build"""

    def test_build_and_verify(self, runner, key_file, tmp_path, build_args):
        output = tmp_path / "f.mphb"
        result = runner.invoke(cli, build_args(key_file, output, "--provider", "heuristic"))
        assert result.exit_code == 0, result.output
        fields = summary_fields(result.output)
        assert fields["n"] == "1500" and fields["mode"] == "mphf" and fields["provider"] == "heuristic"
        f = decode_from_path(output)
        expected = (output.stat().st_size - f.provider.fixed_cost_bytes()) * 8 / 1500
        assert fields["bits_per_key"] == f"{expected:.4f}"
        assert fields["bits_per_key_total"] == f"{output.stat().st_size * 8 / 1500:.4f}"

        result = runner.invoke(cli, ["verify", "--function", str(output), "--input", str(key_file)])
        assert result.exit_code == 0, result.output
        assert result.output.strip() == "PASS 1500 keys, mphf, range 1500"

    def test_provable_phf(self, runner, key_file, tmp_path, build_args):
        output = tmp_path / "f.mphb"
        result = runner.invoke(cli, build_args(key_file, output, "--mode", "phf"))
        assert result.exit_code == 0, result.output
        f = decode_from_path(output)
        result = runner.invoke(cli, ["verify", "--function", str(output), "--input", str(key_file),
                                     "--mode", "phf"])
        assert result.output.strip() == f"PASS 1500 keys, phf, range {f.range}"

    def test_options_reach_the_function(self, runner, key_file, tmp_path, build_args):
        output = tmp_path / "f.mphb"
        result = runner.invoke(cli, build_args(key_file, output, "--provider", "heuristic", "--bucket-bits", "4",
                                               "--epsilon", "0.1", "--kappa", "64", "--seed", "9"))
        assert result.exit_code == 0, result.output
        f = decode_from_path(output)
        assert (f.bucket_bits, f.epsilon_ppm, f.kappa) == (4, 100_000, 64)

    def test_yaml_config(self, runner, key_file, tmp_path, build_args):
        config = tmp_path / "build.yaml"
        config.write_text("provider: heuristic\nmode: phf\n", encoding="utf-8")
        output = tmp_path / "f.mphb"
        result = runner.invoke(cli, build_args(key_file, output, "--config", str(config), "--mode", "mphf"))
        assert result.exit_code == 0, result.output
        f = decode_from_path(output)
        assert f.provider.kind.value == "heuristic"
        assert f.mode.value == "mphf"

    def test_duplicate_line(self, runner, tmp_path, build_args):
        keys = generate_keys(300, 1)
        key_path = write_keys(tmp_path / "dup.txt", keys + [keys[10]])
        result = runner.invoke(cli, build_args(key_path, tmp_path / "f.mphb", "--provider", "heuristic"))
        assert result.exit_code == 2
        assert "duplicate fingerprint" in result.output
        assert "for keys 11, 301" in result.output

    def test_memory_floor(self, runner, key_file, tmp_path, build_args):
        result = runner.invoke(cli, build_args(key_file, tmp_path / "f.mphb", "--memory", "1K"))
        assert result.exit_code == 1
        assert "65536" in result.output

    def test_empty_key(self, runner, tmp_path, build_args):
        key_path = tmp_path / "gap.txt"
        key_path.write_bytes(b"a\n\nb\n")
        result = runner.invoke(cli, build_args(key_path, tmp_path / "f.mphb", "--provider", "heuristic"))
        assert result.exit_code == 1
        assert "key 2: empty key" in result.output

    def test_unknown_profile(self, runner, key_file, tmp_path):
        result = runner.invoke(cli, ["build", "--input", str(key_file), "--output", str(tmp_path / "f"),
                                     "--profile", "nonsense"])
        assert result.exit_code == 1
        assert "unknown profile" in result.output


@pytest.mark.integration
class TestQueryVerifyInfo:
    """Test the commands that read a function image"""

    @pytest.fixture
    def function_path(self, runner, key_file, tmp_path, build_args):
        output = tmp_path / "f.mphb"
        result = runner.invoke(cli, build_args(key_file, output, "--provider", "heuristic"))
        assert result.exit_code == 0, result.output
        return output

    def test_query(self, runner, function_path, key_file):
        result = runner.invoke(cli, ["query", "--function", str(function_path)], input=key_file.read_bytes())
        assert result.exit_code == 0, result.output
        values = [int(v) for v in result.output.split()]
        assert sorted(values) == list(range(1500))

    def test_query_unknown_key(self, runner, function_path):
        result = runner.invoke(cli, ["query", "--function", str(function_path)], input=b"no such key\n")
        assert result.exit_code == 0
        assert 0 <= int(result.output.strip()) < 1500

    def test_verify_wrong_keys(self, runner, function_path, tmp_path):
        other = write_keys(tmp_path / "other.txt", generate_keys(1500, 99))
        result = runner.invoke(cli, ["verify", "--function", str(function_path), "--input", str(other)])
        assert result.exit_code == 3
        assert result.output.startswith("FAIL")

    def test_verify_too_few_keys(self, runner, function_path, tmp_path):
        fewer = write_keys(tmp_path / "fewer.txt", generate_keys(1500, 1)[:1000])
        result = runner.invoke(cli, ["verify", "--function", str(function_path), "--input", str(fewer)])
        assert result.exit_code == 3
        assert "1000 keys given" in result.output

    def test_mode_mismatch(self, runner, function_path, key_file):
        result = runner.invoke(cli, ["verify", "--function", str(function_path), "--input", str(key_file),
                                     "--mode", "phf"])
        assert result.exit_code == 1
        assert "function is mphf" in result.output

    def test_not_a_function(self, runner, key_file):
        result = runner.invoke(cli, ["info", "--function", str(key_file)])
        assert result.exit_code == 1
        assert "bad magic" in result.output

    def test_info(self, runner, function_path):
        result = runner.invoke(cli, ["info", "--function", str(function_path)])
        assert result.exit_code == 0, result.output
        rows = dict(re.split(r"\s{2,}", line, maxsplit=1) for line in result.output.splitlines())
        assert rows["mode"] == "mphf"
        assert rows["keys"] == "1500"
        assert rows["provider"] == "heuristic"
        assert rows["bucket bits"] == "6"


@pytest.mark.integration
class TestBenchCommand:
    """Test mphb bench"""

    def test_csv_to_stdout(self, runner, tmp_workdir):
        result = runner.invoke(cli, ["bench", "--sizes", "200,400", "--trials", "2", "--profile", "testing",
                                     "--provider", "heuristic", "--workdir", str(tmp_workdir)])
        assert result.exit_code == 0, result.output
        lines = [line for line in result.output.splitlines() if line.startswith(("n,", "200,", "400,"))]
        rows = list(csv.DictReader(lines))
        assert [(r["n"], r["trial"]) for r in rows] == [("200", "1"), ("200", "2"), ("400", "1"), ("400", "2")]
        assert all(float(r["mean_attempts"]) >= 1 for r in rows)

    def test_csv_and_report_files(self, runner, tmp_path, tmp_workdir):
        key_path = write_keys(tmp_path / "keys.txt", generate_keys(600, 2))
        csv_path = tmp_path / "bench.csv"
        report_path = tmp_path / "bench.md"
        result = runner.invoke(cli, ["bench", "--input", str(key_path), "--sizes", "300,600", "--profile", "testing",
                                     "--provider", "heuristic", "--workdir", str(tmp_workdir),
                                     "--csv", str(csv_path), "--report", str(report_path)])
        assert result.exit_code == 0, result.output
        with open(csv_path, newline="", encoding="utf-8") as handle:
            assert len(list(csv.DictReader(handle))) == 2
        assert "| 600 |" in report_path.read_text(encoding="utf-8")

    def test_not_enough_keys(self, runner, tmp_path):
        key_path = write_keys(tmp_path / "keys.txt", generate_keys(10, 2))
        result = runner.invoke(cli, ["bench", "--input", str(key_path), "--sizes", "100"])
        assert result.exit_code == 1
        assert "10 keys, 100 needed" in result.output
