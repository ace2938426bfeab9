"""
Run configuration: one TOML file plus command-line overrides.

Precedence is flags > file > defaults. Relative data paths resolve against
the directory containing the config file.

Example::

    symbol = "TSLA"
    seed = 7
    initial_equity = 100000.0

    [data]
    prices = "prices.csv"
    news = "news.jsonl"        # company and macro items, told apart by `scope`
    filings = "filings.jsonl"
    events = "events.csv"      # optional: date,label markers for the plots

    [train]
    start = 2024-01-02
    end = 2025-02-28

    [test]
    start = 2025-03-03
    end = 2025-04-30

    [risk]
    alpha = 0.95
    window = 60
    budget = 0.10

    [provider]
    mode = "stub"
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, is_dataclass
from datetime import date
from pathlib import Path
from typing import Any

import numpy as np

from ..agents.provider import ProviderConfig
from ..errors import ConfigError
from ..memory import MemoryConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class DataConfig:
    prices: str = "prices.csv"
    news: str | None = None
    filings: str | None = None
    events: str | None = None
    strict: bool = True


@dataclass
class DateRange:
    start: date | None = None
    end: date | None = None

    def contains(self, d: date) -> bool:
        return (self.start is None or d >= self.start) and (self.end is None or d <= self.end)


@dataclass
class RiskConfig:
    alpha: float = 0.95
    window: int = 60
    budget: float = 0.10
    floor_limit: int = 1


@dataclass
class RunConfig:
    symbol: str = "ASSET"
    seed: int = 0
    initial_equity: float = 100_000.0
    horizons: tuple[int, int, int] = (1, 7, 30)
    allow_short: bool = False
    lot_size: int = 1
    position_scale: float | str = "auto"
    reward_normalize: bool = False
    risk_free_daily: float = 0.0
    sharpe_periods: int | None = None
    max_gap_days: int = 4
    batch_size: int = 4
    analysis_workers: int = 1
    quantity_fallback: str = "min-lot"
    baselines: tuple[str, ...] = ("buy-hold", "random", "macd", "rsi")
    macd: tuple[int, int, int] = (12, 26, 9)
    rsi_period: int = 14
    output_dir: str = "out"
    data: DataConfig = field(default_factory=DataConfig)
    train: DateRange = field(default_factory=DateRange)
    test: DateRange = field(default_factory=DateRange)
    risk: RiskConfig = field(default_factory=RiskConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    base_dir: Path = field(default_factory=Path.cwd)

    def validate(self) -> None:
        tr, te = self.train, self.test
        if tr.start and tr.end and tr.start > tr.end:
            raise ConfigError("train range is empty")
        if te.start and te.end and te.start > te.end:
            raise ConfigError("test range is empty")
        if tr.end and te.start and tr.end >= te.start:
            raise ConfigError("train range must end before the test range starts")
        if not 0 < self.risk.alpha < 1:
            raise ConfigError("risk.alpha must lie in (0, 1)")
        if not 0 < self.risk.budget <= 1:
            raise ConfigError("risk.budget must lie in (0, 1]")
        if self.initial_equity <= 0:
            raise ConfigError("initial_equity must be positive")
        if self.quantity_fallback not in ("min-lot", "clamp"):
            raise ConfigError("quantity_fallback must be 'min-lot' or 'clamp'")
        if self.position_scale != "auto" and not float(self.position_scale) > 0:
            raise ConfigError("position_scale must be 'auto' or a positive number")
        unknown = set(self.baselines) - {"buy-hold", "random", "macd", "rsi"}
        if unknown:
            raise ConfigError(f"unknown baselines {sorted(unknown)}")
        self.provider.validate()

    def rng(self) -> np.random.Generator:
        """Fresh generator for the run's seed; every random draw comes from one of these."""
        return np.random.default_rng(self.seed)

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


def _coerce(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        key = key.replace("-", "_")
        if key not in names:
            raise ConfigError(f"unknown config key {where + '.' if where else ''}{key}")
        default = getattr(cls(), key) if key != "base_dir" else None
        if is_dataclass(default):
            if isinstance(default, MemoryConfig):
                value = MemoryConfig.from_dict(value)
            else:
                value = _coerce(type(default), value, key)
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        elif isinstance(value, str) and key in ("start", "end"):
            value = date.fromisoformat(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a TOML config (optional) and apply dotted-key overrides."""
    raw: dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.resolve().parent
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    cfg = _coerce(RunConfig, raw, "")
    cfg.base_dir = base
    cfg.validate()
    return cfg
