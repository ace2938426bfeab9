"""
Report artifacts: ``report.json``, ``decisions.jsonl``, ``returns.svg`` and
``exposure.svg``.

``report.json`` is written by a small emitter with a fixed key order and six
decimal floats so that identical runs give identical bytes on any platform.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Any, Sequence

from ..errors import DataError
from .engine import BacktestResult

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
FILE_NAMES = ("report.json", "decisions.jsonl", "returns.svg", "exposure.svg")


def _scalar(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return "null"
        text = f"{value:.6f}"
        return "0.000000" if text == "-0.000000" else text
    if isinstance(value, date):
        return json.dumps(value.isoformat())
    return json.dumps(str(value), ensure_ascii=False)


def format_json(obj: Any, indent: int = 0) -> str:
    """Deterministic JSON: insertion key order, two-space indent, ``%.6f`` floats."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = ",\n".join(f"{inner}{json.dumps(str(k))}: {format_json(v, indent + 1)}" for k, v in obj.items())
        return "{\n" + body + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(format_json(v, indent + 1) for v in obj) + "]"
    return _scalar(obj)


def result_entry(result: BacktestResult) -> dict:
    entry = {"position_scale": result.position_scale}
    entry.update(result.report.to_dict())
    entry["final_position"] = result.decisions[-1]["position_after"] if result.decisions else 0
    return entry


def build_report(results: Sequence[BacktestResult], symbol: str, initial_equity: float) -> dict:
    first = results[0].equity.dates
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "symbol": symbol,
        "test_range": {"start": first[0], "end": first[-1]},
        "initial_equity": float(initial_equity),
        "results": {r.label: result_entry(r) for r in results},
    }


@dataclass(frozen=True)
class Event:
    date: date
    label: str


def load_events(path: str | Path | None) -> list[Event]:
    if path is None:
        return []
    path = Path(path)
    if not path.exists():
        raise DataError(f"events file not found: {path}")
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        for n, row in enumerate(csv.DictReader(fh), start=1):
            try:
                out.append(Event(date.fromisoformat(row["date"].strip()), (row.get("label") or "").strip()))
            except (KeyError, ValueError, AttributeError) as exc:
                raise DataError(f"{path}: row {n}: {exc}") from None
    return out


def _plot(path: Path, series: list[tuple[str, list[date], list[float]]], ylabel: str, title: str,
          events: Sequence[Event]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "postrade", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(9, 4.5))
        for label, xs, ys in series:
            ax.plot(xs, ys, label=label, linewidth=1.4)
        lo = min((xs[0] for _, xs, _ in series if xs), default=None)
        hi = max((xs[-1] for _, xs, _ in series if xs), default=None)
        for ev in events:
            if lo is not None and lo <= ev.date <= hi:
                ax.axvline(ev.date, color="grey", linestyle="--", linewidth=0.8)
                ax.annotate(ev.label, (ev.date, 1.0), xycoords=("data", "axes fraction"), rotation=90,
                            va="top", ha="right", fontsize=7, color="grey")
        ax.set_title(title)
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        ax.legend(loc="best", fontsize=8)
        fig.autofmt_xdate()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit_report(
    results: Sequence[BacktestResult],
    out_dir: str | Path,
    symbol: str,
    initial_equity: float,
    events: Sequence[Event] = (),
) -> dict[str, Path]:
    """Write the four report files and return their paths by name."""
    if not results:
        raise ValueError("emit_report needs at least one result")
    labels = [r.label for r in results]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate result labels {labels}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / name for name in FILE_NAMES}
        paths["report.json"].write_text(format_json(build_report(results, symbol, initial_equity)) + "\n",
                                        encoding="utf-8")
        with paths["decisions.jsonl"].open("w", encoding="utf-8") as fh:
            for r in results:
                for rec in r.decisions:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        curves = [(r.label, list(r.equity.dates),
                   [100.0 * math.log(v / initial_equity) for v in r.equity.values]) for r in results]
        _plot(paths["returns.svg"], curves, "cumulative log return (%)", f"{symbol}: cumulative return", events)
        exposures = [(r.label, list(r.equity.dates[: len(r.exposure)]),
                      [math.nan if e is None else e for e in r.exposure]) for r in results]
        _plot(paths["exposure.svg"], exposures, "|position| x price / equity", f"{symbol}: exposure", events)
    except OSError as exc:
        raise DataError(f"cannot write report to {out}: {exc}") from None
    logger.info("report written to %s", out)
    return paths
