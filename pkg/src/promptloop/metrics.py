"""Score aggregation and report rendering.

Relative improvement (``delta_pct``) is the mean over backbones of the
per-backbone relative improvement ``100 * (score_b - baseline_b) / baseline_b``,
not the relative improvement of the row means. Means are rounded to three
decimals and ``delta_pct`` to one.

Standard errors use the sample standard deviation (``ddof=1``) divided by
``sqrt(n_seeds)``; a single seed has standard error 0.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Score
from .errors import InvalidArgumentError

TABLE_COLUMNS = ("method", "backbone", "score", "mean", "delta_pct")
CURVE_COLUMNS = ("epoch", "mean", "stderr", "n_seeds")
STDERR_NOTE = "stderr = sample standard deviation (n-1) / sqrt(n_seeds)"


@dataclass(frozen=True)
class MethodRow:
    name: str
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.scores:
            raise InvalidArgumentError(f"row {self.name!r} has no scores")
        if any(not 0.0 <= s <= 1.0 for s in self.scores):
            raise InvalidArgumentError(f"row {self.name!r} has scores outside [0, 1]")


@dataclass(frozen=True)
class TableRow:
    name: str
    scores: tuple[float, ...]
    mean: float
    delta_pct: float
    raw_mean: float
    raw_delta_pct: float


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    mean: float
    stderr: float
    n_seeds: int


def functional_accuracy(results: Sequence[bool]) -> float:
    if not results:
        raise InvalidArgumentError("need at least one result")
    return sum(bool(r) for r in results) / len(results)


def success_rate(scores: Sequence[Score]) -> float:
    if not scores:
        raise InvalidArgumentError("need at least one score")
    if any(s.kind != "success_binary" for s in scores):
        raise InvalidArgumentError("success rate needs success_binary scores")
    return sum(s.value for s in scores) / len(scores)


def mean_delta_table(rows: Sequence[MethodRow],
                     baseline: MethodRow | float) -> list[TableRow]:
    out = []
    for row in rows:
        scores = np.asarray(row.scores, dtype=float)
        if isinstance(baseline, MethodRow):
            base = np.asarray(baseline.scores, dtype=float)
            if base.shape != scores.shape:
                raise InvalidArgumentError(
                    f"row {row.name!r} has {scores.size} scores, baseline has {base.size}")
        else:
            base = np.full_like(scores, float(baseline))
        if np.any(base == 0):
            raise InvalidArgumentError("baseline contains a zero score")
        raw_mean = float(scores.mean())
        raw_delta = float(np.mean(100.0 * (scores - base) / base))
        out.append(TableRow(row.name, tuple(row.scores), round(raw_mean, 3),
                            round(raw_delta, 1), raw_mean, raw_delta))
    return out


def aggregate_seeds(runs: Sequence) -> list[CurvePoint]:
    """Per-epoch mean and standard error across runs that share one config."""
    if not runs:
        return []
    hashes = {r.config_hash for r in runs}
    if len(hashes) > 1:
        raise InvalidArgumentError("runs were produced by different configs")
    by_epoch: dict[int, list[float]] = defaultdict(list)
    for run in runs:
        for epoch, value in run.training_curve:
            by_epoch[epoch].append(value)
    points = []
    for epoch in sorted(by_epoch):
        values = np.asarray(by_epoch[epoch])
        stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
        points.append(CurvePoint(epoch, float(values.mean()), stderr, int(values.size)))
    return points


def method_label(config: dict) -> str:
    label = config.get("feedback_style", "?")
    if config.get("rewrite_mode") == "replay":
        label += "+replay"
    return label


def rows_from_runs(runs: Sequence) -> tuple[list[MethodRow], float | None]:
    """One single-column row per config (final-epoch mean) and the epoch-0 mean baseline."""
    groups: dict[str, list] = defaultdict(list)
    for run in runs:
        groups[run.config_hash].append(run)
    rows = []
    starts = []
    for group in groups.values():
        curve = aggregate_seeds(group)
        if curve:
            rows.append(MethodRow(method_label(group[0].config), (curve[-1].mean,)))
            starts.append(curve[0].mean)
    baseline = float(np.mean(starts)) if starts else None
    return rows, baseline


def _table_rows(rows: Sequence[MethodRow], baseline) -> list[tuple[MethodRow, TableRow | None]]:
    try:
        table = mean_delta_table(rows, baseline) if baseline is not None else None
    except InvalidArgumentError:
        table = None
    return [(row, table[i] if table else None) for i, row in enumerate(rows)]


def render_report(runs: Sequence, fmt: str = "table_text", *,
                  rows: Sequence[MethodRow] | None = None,
                  baseline: MethodRow | float | None = None,
                  backbones: Sequence[str] | None = None) -> dict[str, str]:
    """Render the Mean/delta table and the per-epoch curve.

    Returns ``{"report.txt": ...}`` for ``table_text`` and
    ``{"table.csv": ..., "curve.csv": ...}`` for ``csv``. Without explicit
    ``rows`` the table is derived from ``runs`` (one row per config).
    """
    if rows is None:
        rows, derived = rows_from_runs(runs)
        if baseline is None:
            baseline = derived
    groups: dict[str, list] = defaultdict(list)
    for run in runs:
        groups[run.config_hash].append(run)
    curves = [(method_label(g[0].config), aggregate_seeds(g)) for g in groups.values()]
    table = _table_rows(rows, baseline)

    if fmt == "csv":
        return {"table.csv": _table_csv(table, backbones), "curve.csv": _curve_csv(curves)}
    if fmt == "table_text":
        return {"report.txt": _table_text(table, backbones) + "\n\n" + _curve_text(curves)
                + f"\n\n{STDERR_NOTE}\n"}
    raise InvalidArgumentError(f"unknown report format {fmt!r}")


def _backbone_names(n: int, backbones: Sequence[str] | None) -> list[str]:
    if backbones is not None and len(backbones) == n:
        return list(backbones)
    return [f"b{i}" for i in range(1, n + 1)]


def _fmt(x: float | None, digits: int) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def _table_csv(table, backbones) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row, t in table:
        for name, score in zip(_backbone_names(len(row.scores), backbones), row.scores):
            writer.writerow([row.name, name, f"{score:.3f}",
                             _fmt(t.mean if t else float(np.mean(row.scores)), 3),
                             _fmt(t.delta_pct if t else None, 1)])
    return buf.getvalue()


def _curve_csv(curves) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    # a single config keeps the documented four columns
    multi = len(curves) > 1
    writer.writerow((("method",) if multi else ()) + CURVE_COLUMNS)
    for label, points in curves:
        for p in points:
            writer.writerow(([label] if multi else [])
                            + [p.epoch, f"{p.mean:.6f}", f"{p.stderr:.6f}", p.n_seeds])
    return buf.getvalue()


def _table_text(table, backbones) -> str:
    if not table:
        return "(no method rows)"
    n = len(table[0][0].scores)
    names = _backbone_names(n, backbones)
    width = max(len("method"), *(len(r.name) for r, _ in table))
    header = f"{'method':<{width}}  " + "  ".join(f"{b:>9}" for b in names) \
        + f"  {'Mean':>7}  {'Delta%':>7}"
    lines = [header, "-" * len(header)]
    for row, t in table:
        cells = "  ".join(f"{s:>9.3f}" for s in row.scores)
        mean = t.mean if t else float(np.mean(row.scores))
        delta = f"{t.delta_pct:>7.1f}" if t else f"{'-':>7}"
        lines.append(f"{row.name:<{width}}  {cells}  {mean:>7.3f}  {delta}")
    return "\n".join(lines)


def _curve_text(curves: Iterable) -> str:
    lines = [f"{'method':<16}{'epoch':>6}{'mean':>10}{'stderr':>10}{'n_seeds':>9}"]
    for label, points in curves:
        for p in points:
            lines.append(f"{label:<16}{p.epoch:>6}{p.mean:>10.4f}{p.stderr:>10.4f}{p.n_seeds:>9}")
    return "\n".join(lines)
