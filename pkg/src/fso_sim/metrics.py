"""Per-run counters and per-cell aggregation over seeds."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, fields
from typing import Iterable, Optional

from .config import StrategyKind
from .protocol import Outcome
from .strategies import RequestOutcome

NA = "NA"


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class RunMetrics:
    strategy: StrategyKind
    seed: int
    threshold_ticks: int
    n_individuals: int
    requests_total: int = 0
    treated: int = 0
    deaths: int = 0
    censored: int = 0
    avg_qt_ticks: float = math.nan
    sons_inter: int = 0
    sons_infra: int = 0
    to_failures: int = 0

    @property
    def key(self) -> tuple:
        return (self.strategy, self.threshold_ticks, self.n_individuals)


class MetricsAccumulator:
    def __init__(self, strategy: StrategyKind, seed: int, threshold_ticks: int, n_individuals: int):
        self.strategy = strategy
        self.seed = seed
        self.threshold_ticks = threshold_ticks
        self.n_individuals = n_individuals
        self.seen: set = set()
        self.treated = self.deaths = self.censored = 0
        self.qt_sum = 0
        self.sons_inter = self.sons_infra = 0
        self.to_failures = 0

    def record(self, rec) -> MetricsAccumulator:
        if rec.id in self.seen:
            raise MetricsError(f"request {rec.id} recorded twice")
        self.seen.add(rec.id)
        if rec.outcome is RequestOutcome.TREATED:
            self.treated += 1
            self.qt_sum += rec.qt
        elif rec.outcome is RequestOutcome.DIED:
            self.deaths += 1
        else:
            self.censored += 1
        if self.strategy is StrategyKind.FSO and rec.escalation is not None:
            if rec.inter_community_son:
                self.sons_inter += 1
            elif rec.escalation.outcome is Outcome.RESOLVED_LOCALLY:
                self.sons_infra += 1
        if self.strategy is StrategyKind.TRADITIONAL:
            self.to_failures += rec.failures
        return self

    def result(self) -> RunMetrics:
        return RunMetrics(
            strategy=self.strategy,
            seed=self.seed,
            threshold_ticks=self.threshold_ticks,
            n_individuals=self.n_individuals,
            requests_total=len(self.seen),
            treated=self.treated,
            deaths=self.deaths,
            censored=self.censored,
            avg_qt_ticks=self.qt_sum / self.treated if self.treated else math.nan,
            sons_inter=self.sons_inter,
            sons_infra=self.sons_infra,
            to_failures=self.to_failures,
        )


def record(rec, sink: MetricsAccumulator) -> MetricsAccumulator:
    return sink.record(rec)


def collect(world) -> RunMetrics:
    cfg = world.config
    acc = MetricsAccumulator(cfg.strategy, world.seed, cfg.threshold_ticks, cfg.n_individuals)
    for rec in world.requests:
        acc.record(rec)
    return acc.result()


AGGREGATED = ("deaths", "avg_qt_ticks", "sons_inter", "to_failures")


@dataclass(frozen=True)
class SummaryRow:
    strategy: StrategyKind
    threshold_ticks: int
    n_individuals: int
    runs: int
    deaths_mean: float
    deaths_std: float
    avg_qt_ticks_mean: float
    avg_qt_ticks_std: float
    sons_inter_mean: float
    sons_inter_std: float
    to_failures_mean: float
    to_failures_std: float

    @property
    def key(self) -> tuple:
        return (self.strategy, self.threshold_ticks, self.n_individuals)


def _mean_std(values: list) -> tuple:
    values = [v for v in values if not math.isnan(v)]
    if not values:
        return math.nan, math.nan
    mean = math.fsum(values) / len(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def _summarize(key: tuple, runs: list) -> SummaryRow:
    if not runs:
        raise MetricsError(f"empty group {key}")
    # sort so float sums do not depend on input order
    runs = sorted(runs, key=lambda r: r.seed)
    stats = {}
    for name in AGGREGATED:
        mean, std = _mean_std([float(getattr(r, name)) for r in runs])
        stats[f"{name}_mean"], stats[f"{name}_std"] = mean, std
    strategy, threshold, n = key
    return SummaryRow(strategy, threshold, n, len(runs), **stats)


def aggregate(runs: Iterable[RunMetrics], group_by: Optional[list] = None) -> list:
    """One summary row per (strategy, threshold, population), mean and sample stddev over seeds.

    ``group_by`` optionally fixes the output keys (and their order); a listed
    key with no runs is an error.
    """
    groups: dict = {}
    for r in runs:
        groups.setdefault(r.key, []).append(r)
    order = group_by if group_by is not None else sorted(
        groups, key=lambda k: (list(StrategyKind).index(k[0]), k[1], k[2])
    )
    return [_summarize(k, groups.get(k, [])) for k in order]


RUN_FIELDS = tuple(f.name for f in fields(RunMetrics))
