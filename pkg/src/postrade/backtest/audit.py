"""Independent re-check of a decision log.

The auditor trusts nothing the engine computed except the logged positions
and prices: it re-derives every step return, the equity curve and the
metric report, and checks the cap and shorting rules line by line.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable

from ..env import DIRECTION_CODES, build_equity_curve
from ..errors import DataError
from ..metrics import MetricReport, compute_report
from .engine import BacktestResult, exposure_of


@dataclass
class AuditReport:
    violations: list[str] = field(default_factory=list)
    results: dict[str, BacktestResult] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations


def read_decisions(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"decision log not found: {path}")
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except ValueError as exc:
                    raise DataError(f"{path}: line {lineno}: {exc}") from None
    return out


def _check_rows(label: str, rows: list[dict], allow_short: bool) -> list[str]:
    bad = []
    position = 0
    for i, row in enumerate(rows):
        where = f"{label}[{i}] {row['date']}"
        if row["executed_quantity"] > row["maxcvar"]:
            bad.append(f"{where}: executed {row['executed_quantity']} > maxcvar {row['maxcvar']}")
        if row["executed_quantity"] > row["quantity"]:
            bad.append(f"{where}: executed {row['executed_quantity']} > requested {row['quantity']}")
        position += DIRECTION_CODES[row["direction"]] * row["executed_quantity"]
        if position != row["position_after"]:
            bad.append(f"{where}: position {row['position_after']} does not follow from the orders ({position})")
        if not allow_short and row["position_after"] < 0:
            bad.append(f"{where}: negative position {row['position_after']} with shorting off")
    return bad


def rebuild(
    rows: list[dict],
    initial_equity: float,
    risk_free_daily: float = 0.0,
    alpha: float = 0.95,
    sharpe_periods: int | None = None,
) -> tuple[list[float], BacktestResult]:
    """Recompute step returns, equity, exposure and the report for one label."""
    if not rows:
        raise DataError("cannot rebuild a run from an empty log")
    label = rows[0]["label"]
    scale = rows[0]["position_scale"]
    returns, exposure = [], []
    pnl = 0.0
    for row in rows:
        exposure.append(exposure_of(row["position_after"], row["price"], initial_equity + pnl))
        r = row["position_after"] / scale * math.log(row["next_price"] / row["price"])
        returns.append(r)
        pnl += row["position_after"] * (row["next_price"] - row["price"])
    dates = [date.fromisoformat(r["date"]) for r in rows] + [date.fromisoformat(rows[-1]["next_date"])]
    equity = build_equity_curve(returns, initial_equity, dates)
    report = compute_report(returns, equity, risk_free_daily, alpha, sharpe_periods)
    return returns, BacktestResult(label, rows, [], equity, exposure, report, scale)


def audit(
    records: Iterable[dict],
    initial_equity: float,
    allow_short: bool = False,
    risk_free_daily: float = 0.0,
    alpha: float = 0.95,
    sharpe_periods: int | None = None,
) -> AuditReport:
    """Check every label in a decision log and rebuild its result."""
    by_label: dict[str, list[dict]] = {}
    for rec in records:
        by_label.setdefault(rec["label"], []).append(rec)
    out = AuditReport()
    for label, rows in by_label.items():
        out.violations.extend(_check_rows(label, rows, allow_short))
        returns, result = rebuild(rows, initial_equity, risk_free_daily, alpha, sharpe_periods)
        for i, (row, r) in enumerate(zip(rows, returns)):
            if row["r_t"] != r:
                out.violations.append(f"{label}[{i}] {row['date']}: logged r_t {row['r_t']!r} != recomputed {r!r}")
        out.results[label] = result
    return out


def reports_match(a: MetricReport, b: MetricReport) -> bool:
    from .report import format_json

    return format_json(a.to_dict()) == format_json(b.to_dict())
