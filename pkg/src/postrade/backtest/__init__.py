"""Backtest orchestration: configuration, day loops, baselines, reports and the CLI."""

from .config import RunConfig, load_config
from .engine import BacktestResult, Market, load_market, run_backtest, run_baseline, run_compare, run_test, run_train
from .indicators import macd, rsi
from .report import emit_report

__all__ = [
    "BacktestResult",
    "Market",
    "RunConfig",
    "emit_report",
    "load_config",
    "load_market",
    "macd",
    "rsi",
    "run_backtest",
    "run_baseline",
    "run_compare",
    "run_test",
    "run_train",
]
