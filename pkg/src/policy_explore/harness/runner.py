"""Cell execution, CSV output, summaries and grid-search tuning."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import logging
import math
import os
import statistics
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..exceptions import ConfigError
from .config import ExperimentConfig
from .presets import Cell, get_preset, make_row, run_cell

log = logging.getLogger(__name__)

WORKERS_ENV = "POLICY_EXPLORE_WORKERS"
CSV_COLUMNS = ["preset", "algorithm", "seed", "env_params", "hyperparams",
               "checkpoint_env_steps", "metric_name", "metric_value"]


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


@dataclass
class CellResult:
    cell: Cell
    rows: list = field(default_factory=list)
    error: str | None = None


def _guarded(cell: Cell) -> CellResult:
    try:
        rows = run_cell(cell)
    except Exception as exc:  # a failed cell must not take the sweep down
        detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        return CellResult(cell, [make_row(cell, 0, "error", 1.0)], detail)
    bad = [r for r in rows if not math.isfinite(r[7])]
    if bad:
        return CellResult(cell, [make_row(cell, 0, "error", 1.0)], f"non-finite metric {bad[0][6]}")
    return CellResult(cell, rows)


def execute(cells: list[Cell], workers: int | None = None) -> list[CellResult]:
    """Run cells, serially or in a process pool; results come back in cell order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(cells) <= 1:
        results = []
        for i, cell in enumerate(cells):
            log.info("cell %d/%d %s %s seed=%d", i + 1, len(cells), cell.algorithm, cell.cell_key, cell.seed)
            results.append(_guarded(cell))
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_guarded, cells, chunksize=1))


def sort_rows(rows):
    return sorted(rows, key=lambda r: (r[0], r[1], r[2], r[5], r[3], r[4], r[6], r[7]))


def write_csv(rows, path, timestamp: bool = True) -> None:
    buf = io.StringIO()
    if timestamp:
        buf.write(f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}\r\n")
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)
    for r in sort_rows(rows):
        writer.writerow([r[0], r[1], r[2], r[3], r[4], r[5], r[6], repr(float(r[7]))])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path) -> list[tuple]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if header != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    return [(r[0], r[1], int(r[2]), r[3], r[4], int(r[5]), r[6], float(r[7])) for r in reader]


def final_values(rows) -> dict:
    """``{(algorithm, env_params, metric): {seed: value at the last checkpoint}}``."""
    last = {}
    for r in rows:
        key = (r[1], r[3], r[6], r[2])
        if key not in last or r[5] >= last[key][0]:
            last[key] = (r[5], r[7])
    out = defaultdict(dict)
    for (alg, env, metric, seed), (_, value) in last.items():
        out[(alg, env, metric)][seed] = value
    return dict(out)


@dataclass
class SummaryLine:
    algorithm: str
    env_params: str
    metric: str
    n: int
    mean: float
    se: float
    median: float


def summarize(rows) -> list[SummaryLine]:
    """Mean +- standard error (sample std / sqrt(n)) and median over seeds at the final checkpoint."""
    out = []
    for (alg, env, metric), per_seed in sorted(final_values(rows).items()):
        vals = [per_seed[s] for s in sorted(per_seed)]
        n = len(vals)
        mean = statistics.fmean(vals)
        se = statistics.stdev(vals) / math.sqrt(n) if n > 1 else 0.0
        out.append(SummaryLine(alg, env, metric, n, mean, se, statistics.median(vals)))
    return out


def format_summary(lines: list[SummaryLine]) -> str:
    header = f"{'algorithm':<18} {'metric':<24} {'n':>3} {'mean':>12} {'+-se':>11} {'median':>12}  env"
    body = [f"{s.algorithm:<18} {s.metric:<24} {s.n:>3} {s.mean:>12.5g} {s.se:>11.3g} {s.median:>12.5g}  {s.env_params}"
            for s in lines]
    return "\n".join([header] + body)


@dataclass
class RunOutcome:
    rows: list
    failures: list[CellResult]
    summary: list[SummaryLine]


def run_preset(cfg: ExperimentConfig, out_path=None, *, workers: int | None = None,
               timestamp: bool = True) -> RunOutcome:
    """Run every (algorithm x env point x seed) cell of ``cfg`` and write the CSV."""
    preset = get_preset(cfg.preset)
    cells = preset.cells(cfg)
    results = execute(cells, workers)
    rows = [r for res in results for r in res.rows]
    failures = [res for res in results if res.error is not None]
    for res in failures:
        log.error("cell failed: %s %s seed=%d: %s", res.cell.algorithm, res.cell.cell_key, res.cell.seed, res.error)
    ok_rows = [r for r in rows if r[6] != "error"]
    summary = summarize(ok_rows)
    if out_path is not None:
        write_csv(rows, out_path, timestamp=timestamp)
        summary_path = Path(out_path).with_suffix(".summary.csv")
        with open(summary_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["algorithm", "env_params", "metric_name", "n_seeds", "mean", "standard_error", "median"])
            for s in summary:
                w.writerow([s.algorithm, s.env_params, s.metric, s.n, repr(s.mean), repr(s.se), repr(s.median)])
    return RunOutcome(rows, failures, summary)


@dataclass
class TuneResult:
    best: dict                    # {algorithm: {cell_key: params}}
    scores: dict                  # {(algorithm, cell_key): [(params, mean score), ...]} in grid order


def tune(cfg: ExperimentConfig, *, workers: int | None = None) -> TuneResult:
    """Grid search on the tuning seeds; best mean score per (algorithm, env point).

    Ties go to the earlier grid point.  Failed or divergent runs score +inf.
    """
    preset = get_preset(cfg.preset)
    plan = []
    for alg in cfg.algorithms:
        grid = cfg.grid_for(alg)
        for point in cfg.env_points():
            key = cfg.cell_key(point)
            base = cfg.hyperparams_for(alg, key)
            for gi, params in enumerate(grid):
                hp = dict(base, **params)
                for seed in cfg.tuning_seeds:
                    plan.append(((alg, key, gi), Cell(cfg.preset.value, alg, int(seed), key, dict(point), hp,
                                                     dict(cfg.budget), dict(cfg.options))))
    results = execute([c for _, c in plan], workers)
    acc = defaultdict(list)
    for (tag, cell), res in zip(plan, results):
        if res.error is not None:
            score = math.inf
        else:
            score = preset.score(cell, res.rows)
            score = math.inf if score is None or not math.isfinite(score) else score
        acc[tag].append(score)
    best, scores = {}, {}
    for alg in cfg.algorithms:
        grid = cfg.grid_for(alg)
        for point in cfg.env_points():
            key = cfg.cell_key(point)
            table = []
            for gi, params in enumerate(grid):
                vals = acc[(alg, key, gi)]
                table.append((params, math.fsum(vals) / len(vals)))
            scores[(alg, key)] = table
            winner = min(range(len(table)), key=lambda i: (table[i][1], i))
            best.setdefault(alg, {})[key] = dict(table[winner][0])
    return TuneResult(best, scores)
