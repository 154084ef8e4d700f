"""
Build summary line and benchmark report, rendered from Jinja2 templates
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from jinja2 import Environment, PackageLoader, StrictUndefined, TemplateError

from mphb.codec import SizeReport
from mphb.external_build import BuildStats

logger = logging.getLogger(__name__)

SUMMARY_TEMPLATE = "summary.txt.j2"
BENCH_TEMPLATE = "bench_report.md.j2"
SUMMARY_PREFIX = "mphb-summary v1"

CSV_COLUMNS = ("n", "trial", "partition_s", "search_s", "total_s", "bits_per_key", "mean_attempts", "acyclic_rate")


@dataclass(frozen=True)
class BenchRow:
    """One build of a benchmark; field order is the CSV column order"""

    n: int
    trial: int
    partition_s: float
    search_s: float
    total_s: float
    bits_per_key: float
    mean_attempts: float
    acyclic_rate: float

    def as_csv(self) -> List[str]:
        return [
            str(self.n), str(self.trial),
            f"{self.partition_s:.6f}", f"{self.search_s:.6f}", f"{self.total_s:.6f}",
            f"{self.bits_per_key:.6f}", f"{self.mean_attempts:.6f}", f"{self.acyclic_rate:.6f}",
        ]


@dataclass(frozen=True)
class BenchGroup:
    """All trials of one size, aggregated"""

    n: int
    trials: int
    partition: Tuple[float, float]
    search: Tuple[float, float]
    total: Tuple[float, float]
    ratio: Optional[float]
    partition_share: float
    bits_per_key: float
    mean_attempts: float
    acyclic_rate: float


def _mean_sd(values: Sequence[float]) -> Tuple[float, float]:
    data = np.asarray(values, dtype=float)
    sd = float(data.std(ddof=1)) if data.size > 1 else 0.0
    return float(data.mean()), sd


def aggregate(rows: Sequence[BenchRow]) -> List[BenchGroup]:
    """Group rows by n in increasing order with means and standard deviations"""
    groups: List[BenchGroup] = []
    previous_total: Optional[float] = None
    for n in sorted({row.n for row in rows}):
        trials = [row for row in rows if row.n == n]
        total = _mean_sd([r.total_s for r in trials])
        partition = _mean_sd([r.partition_s for r in trials])
        groups.append(BenchGroup(
            n=n,
            trials=len(trials),
            partition=partition,
            search=_mean_sd([r.search_s for r in trials]),
            total=total,
            ratio=total[0] / previous_total if previous_total else None,
            partition_share=partition[0] / total[0] if total[0] else 0.0,
            bits_per_key=float(np.mean([r.bits_per_key for r in trials])),
            mean_attempts=float(np.mean([r.mean_attempts for r in trials])),
            acyclic_rate=float(np.mean([r.acyclic_rate for r in trials])),
        ))
        previous_total = total[0]
    return groups


class ReportRenderer:
    """Renders the packaged templates"""

    def __init__(self):
        self.env = Environment(
            loader=PackageLoader("mphb", "templates"),
            trim_blocks=True,
            lstrip_blocks=True,
            undefined=StrictUndefined,
        )

        self.env.filters['fixed'] = self._fixed
        self.env.filters['spread'] = self._spread
        self.env.filters['percent'] = self._percent
        self.env.filters['thousands'] = self._thousands

    @staticmethod
    def _fixed(value: float, digits: int = 3) -> str:
        return f"{value:.{digits}f}"

    @staticmethod
    def _spread(pair: Tuple[float, float]) -> str:
        mean, sd = pair
        return f"{mean:.3f} ± {sd:.3f}"

    @staticmethod
    def _percent(value: float) -> str:
        return f"{100 * value:.1f}%"

    @staticmethod
    def _thousands(value: int) -> str:
        return f"{value:,}"

    def render_summary(self, stats: BuildStats, size: SizeReport, mode: str, provider: str) -> str:
        """
        One-line machine-readable build summary

        Args:
            stats: BuildStats of the build
            size: SizeReport of the encoded function
            mode: Mode value ("mphf" or "phf")
            provider: Provider value

        Returns:
            The summary line without trailing newline
        """
        template = self.env.get_template(SUMMARY_TEMPLATE)
        return template.render(stats=stats, size=size, mode=mode, provider=provider).strip()

    def render_bench_report(self, rows: Sequence[BenchRow], mode: str, provider: str) -> str:
        groups = aggregate(rows)
        trials = max((g.trials for g in groups), default=0)
        template = self.env.get_template(BENCH_TEMPLATE)
        return template.render(rows=groups, trials=trials, mode=mode, provider=provider)


_renderer: Optional[ReportRenderer] = None


def _default() -> ReportRenderer:
    global _renderer
    if _renderer is None:
        _renderer = ReportRenderer()
    return _renderer


def render_summary(stats: BuildStats, size: SizeReport, mode: str, provider: str) -> str:
    return _default().render_summary(stats, size, mode, provider)


def render_bench_report(rows: Sequence[BenchRow], mode: str = "mphf", provider: str = "provable") -> str:
    return _default().render_bench_report(rows, mode, provider)


def _sample_context() -> Dict[str, Any]:
    stats = BuildStats(n=1000, bucket_bits=6, runs=2, spill_files=1, retained_run=True,
                       seeks=3, partition_seconds=0.25, search_seconds=0.5)
    size = SizeReport(n=1000, total_bytes=600, header_bytes=32, provider_bytes=4,
                      offsets_bytes=128, buckets_bytes=436, provable=False)
    rows = [
        BenchRow(1000, 1, 0.2, 0.3, 0.5, 3.9, 3.1, 0.32),
        BenchRow(1000, 2, 0.22, 0.31, 0.53, 3.9, 2.9, 0.34),
        BenchRow(2000, 1, 0.41, 0.6, 1.01, 3.8, 3.0, 0.33),
    ]
    return {"stats": stats, "size": size, "rows": rows}


def validate_templates() -> List[str]:
    """
    Render every template with sample data

    Returns:
        List of problems; empty when all templates render as expected
    """
    problems: List[str] = []
    sample = _sample_context()
    renderer = ReportRenderer()
    try:
        line = renderer.render_summary(sample["stats"], sample["size"], "mphf", "heuristic")
        if "\n" in line:
            problems.append(f"{SUMMARY_TEMPLATE}: summary spans several lines")
        if not line.startswith(SUMMARY_PREFIX):
            problems.append(f"{SUMMARY_TEMPLATE}: summary does not start with {SUMMARY_PREFIX!r}")
    except TemplateError as e:
        problems.append(f"{SUMMARY_TEMPLATE}: {e}")
    try:
        text = renderer.render_bench_report(sample["rows"], "mphf", "heuristic")
        if text.count("\n| ") < 3:
            problems.append(f"{BENCH_TEMPLATE}: expected a header and one row per size")
    except TemplateError as e:
        problems.append(f"{BENCH_TEMPLATE}: {e}")
    for problem in problems:
        logger.warning("template problem: %s", problem)
    return problems
