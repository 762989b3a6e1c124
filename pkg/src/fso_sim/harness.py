"""Experiment grid: config parsing, execution, CSV and plot-table output."""

from __future__ import annotations

import configparser
import csv
import io
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .config import WORLD_KEYS, ConfigError, StrategyKind, WorldConfig
from .events import EventLog
from .metrics import NA, RUN_FIELDS, RunMetrics, SummaryRow, aggregate

RESULT_COLUMNS = (
    "run_id", "strategy", "seed", "threshold_ticks", "n_individuals", "requests_total", "treated",
    "deaths", "censored", "avg_qt_ticks", "sons_inter", "sons_infra", "to_failures",
)
SUMMARY_COLUMNS = (
    "strategy", "threshold_ticks", "n_individuals", "runs",
    "deaths_mean", "deaths_std", "avg_qt_ticks_mean", "avg_qt_ticks_std",
    "sons_inter_mean", "sons_inter_std", "to_failures_mean", "to_failures_std",
)
PLOT_METRICS = (("deaths", "deaths_mean"), ("avg_qt", "avg_qt_ticks_mean"),
                ("sons_inter", "sons_inter_mean"), ("to_failures", "to_failures_mean"))

DEFAULT_STRATEGIES = tuple(StrategyKind)
DEFAULT_THRESHOLDS = (150, 200, 250)
DEFAULT_POPULATIONS = (60, 80, 100, 120, 140)

GRID_KEYS = ("strategies", "thresholds", "populations", "repetitions", "master_seed")
# grid axes, not per-world settings
_AXIS_KEYS = ("strategy", "threshold_ticks", "n_individuals")


class GridError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentGrid:
    strategies: tuple = DEFAULT_STRATEGIES
    thresholds: tuple = DEFAULT_THRESHOLDS
    populations: tuple = DEFAULT_POPULATIONS
    repetitions: int = 5
    master_seed: int = 1
    world: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.strategies) * len(self.thresholds) * len(self.populations) * self.repetitions

    def base_config(self) -> WorldConfig:
        return WorldConfig(**self.world)

    def cells(self) -> list:
        """(strategy, threshold, population, seed) in output order."""
        return [
            (s, t, n, self.master_seed + rep)
            for s in self.strategies
            for t in self.thresholds
            for n in self.populations
            for rep in range(self.repetitions)
        ]

    def config_for(self, strategy: StrategyKind, threshold: int, population: int) -> WorldConfig:
        return self.base_config().with_(strategy=strategy, threshold_ticks=threshold, n_individuals=population)


def _key_line(text: str, key: str) -> Optional[int]:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*[=:]")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    return None


def _int_list(raw: str, key: str) -> tuple:
    try:
        return tuple(int(v) for v in re.split(r"[,\s]+", raw.strip()) if v)
    except ValueError:
        raise ConfigError(key, f"expected integers, got {raw!r}") from None


def _coerce(key: str, raw: str):
    typ = WORLD_KEYS[key]
    try:
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ}") from None
    raise ConfigError(key, "not settable from a config file")


def parse_config_text(text: str) -> ExperimentGrid:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    # section-less keys at the top of the file are allowed
    try:
        parser.read_string("[__top__]\n" + text)
    except configparser.ParsingError as exc:
        # line numbers shift by one for the injected header
        lineno, line = exc.errors[0]
        raise ConfigError(f"line {lineno - 1}", f"parse error: cannot read {line.strip()!r}") from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f"line {lineno - 1}" if lineno else "config"
        raise ConfigError(where, f"parse error: {getattr(exc, 'message', exc)}") from None

    grid_raw, world_raw = {}, {}
    for section in parser.sections():
        if section not in ("__top__", "grid", "world"):
            raise ConfigError(section, "unknown section (expected [grid] or [world])")
        for key, raw in parser.items(section):
            where = _key_line(text, key)
            label = f"{key} (line {where})" if where else key
            if key in GRID_KEYS and section in ("__top__", "grid"):
                grid_raw[key] = (raw, label)
            elif key in WORLD_KEYS and key not in _AXIS_KEYS and section in ("__top__", "world"):
                world_raw[key] = (raw, label)
            else:
                raise ConfigError(label, f"unknown key in [{section.strip('_')}]")

    kwargs = {}
    for key, (raw, label) in grid_raw.items():
        try:
            if key == "strategies":
                kwargs[key] = tuple(StrategyKind.parse(v) for v in re.split(r"[,\s]+", raw.strip()) if v)
            elif key in ("thresholds", "populations"):
                kwargs[key] = _int_list(raw, key)
            else:
                kwargs[key] = int(raw)
        except (ConfigError, ValueError) as exc:
            raise ConfigError(label, str(exc)) from None
    world = {}
    for key, (raw, label) in world_raw.items():
        try:
            world[key] = _coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(label, str(exc)) from None
        try:
            WorldConfig(**{key: world[key]}).validate()
        except ConfigError as exc:
            raise ConfigError(label, str(exc).split(": ", 1)[-1]) from None
    grid = ExperimentGrid(world=world, **kwargs)
    validate_grid(grid)
    return grid


def validate_grid(grid: ExperimentGrid) -> ExperimentGrid:
    if not grid.strategies:
        raise ConfigError("strategies", "at least one strategy is required")
    if not grid.thresholds or any(t < 0 for t in grid.thresholds):
        raise ConfigError("thresholds", "need one or more thresholds >= 0")
    if not grid.populations or any(n < 0 for n in grid.populations):
        raise ConfigError("populations", "need one or more populations >= 0")
    if grid.repetitions < 1:
        raise ConfigError("repetitions", "must be >= 1")
    if not 0 <= grid.master_seed < 2**64:
        raise ConfigError("master_seed", "must be an unsigned 64-bit integer")
    grid.base_config().validate()
    return grid


def parse_config(path) -> ExperimentGrid:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def run_id(strategy: StrategyKind, threshold: int, population: int, seed: int) -> str:
    return f"{strategy.value}-t{threshold}-n{population}-s{seed}"


def _run_cell(job: tuple) -> tuple:
    from .engine import run

    strategy, threshold, population, seed, world, with_log = job
    config = WorldConfig(**world).with_(strategy=strategy, threshold_ticks=threshold, n_individuals=population)
    log = EventLog() if with_log else None
    try:
        metrics = run(config, seed, log=log)
    except Exception as exc:
        raise GridError(f"cell {run_id(strategy, threshold, population, seed)} failed: {exc!r}") from exc
    return metrics, (log.lines if log else None)


def run_grid(
    grid: ExperimentGrid,
    parallelism: int = 1,
    results_path=None,
    summary_path=None,
    log_path=None,
) -> tuple:
    """Run every cell; outputs follow grid order whatever the scheduling."""
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")
    validate_grid(grid)
    jobs = [(s, t, n, seed, dict(grid.world), log_path is not None) for s, t, n, seed in grid.cells()]
    if parallelism == 1 or len(jobs) <= 1:
        outputs = [_run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outputs = list(pool.map(_run_cell, jobs, chunksize=1))
    runs = [m for m, _ in outputs]
    keys = [(s, t, n) for s in grid.strategies for t in grid.thresholds for n in grid.populations]
    summary = aggregate(runs, group_by=keys)
    if results_path is not None:
        Path(results_path).write_text(results_csv(runs))
    if summary_path is not None:
        Path(summary_path).write_text(summary_csv(summary))
    if log_path is not None:
        with open(log_path, "w") as fh:
            for m, lines in outputs:
                fh.write(f"# run {run_id(m.strategy, m.threshold_ticks, m.n_individuals, m.seed)}\n")
                fh.writelines(line + "\n" for line in lines)
    return runs, summary


def fmt(value) -> str:
    if isinstance(value, StrategyKind):
        return value.value
    if isinstance(value, float):
        return NA if math.isnan(value) else f"{value:.6f}"
    return str(value)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def results_csv(runs: list) -> str:
    rows = []
    for m in runs:
        rid = run_id(m.strategy, m.threshold_ticks, m.n_individuals, m.seed)
        rows.append([rid, *(fmt(getattr(m, c)) for c in RESULT_COLUMNS[1:])])
    return _csv(RESULT_COLUMNS, rows)


def summary_csv(rows: list) -> str:
    return _csv(SUMMARY_COLUMNS, [[fmt(getattr(r, c)) for c in SUMMARY_COLUMNS] for r in rows])


def _num(raw: str) -> float:
    return math.nan if raw == NA else float(raw)


def read_results_csv(path) -> list:
    with open(path, newline="") as fh:
        return [
            RunMetrics(**{
                k: (StrategyKind(v) if k == "strategy" else _num(v) if k == "avg_qt_ticks" else int(v))
                for k, v in row.items() if k in RUN_FIELDS
            })
            for row in csv.DictReader(fh)
        ]


def read_summary_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(SummaryRow(
                strategy=StrategyKind(row["strategy"]),
                threshold_ticks=int(row["threshold_ticks"]),
                n_individuals=int(row["n_individuals"]),
                runs=int(row["runs"]),
                **{c: _num(row[c]) for c in SUMMARY_COLUMNS[4:]},
            ))
    return rows


def emit_plot_data(rows: list, outdir, strategies=DEFAULT_STRATEGIES) -> list:
    """Write one whitespace-separated table per threshold: ``threshold_<T>.dat``."""
    if not rows:
        raise ValueError("no summary rows to plot")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    by_key = {r.key: r for r in rows}
    header = ["population"] + [f"{s.value}_{name}" for s in strategies for name, _ in PLOT_METRICS]
    paths = []
    for threshold in sorted({r.threshold_ticks for r in rows}):
        lines = [" ".join(header)]
        for n in sorted({r.n_individuals for r in rows if r.threshold_ticks == threshold}):
            cols = [str(n)]
            for s in strategies:
                r = by_key.get((s, threshold, n))
                cols.extend(NA if r is None else fmt(float(getattr(r, attr))) for _, attr in PLOT_METRICS)
            lines.append(" ".join(cols))
        path = outdir / f"threshold_{threshold}.dat"
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths
