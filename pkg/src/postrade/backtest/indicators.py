"""Technical indicators behind the rule-based baselines.

Both indicators are causal: the value at index ``t`` uses ``prices[0..t]``
only, so computing them once over a full history and reading day ``t`` is
equivalent to recomputing them every day.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DataError


def ema(prices: Sequence[float], period: int) -> np.ndarray:
    """Exponential moving average seeded with the simple mean of the first ``period`` values.

    Entries before index ``period - 1`` are NaN.
    """
    x = np.asarray(prices, dtype=float)
    out = np.full(x.size, np.nan)
    if period < 1 or x.size < period:
        return out
    k = 2.0 / (period + 1)
    out[period - 1] = x[:period].mean()
    for i in range(period, x.size):
        out[i] = x[i] * k + out[i - 1] * (1 - k)
    return out


@dataclass(frozen=True)
class MacdResult:
    line: np.ndarray
    signal_line: np.ndarray
    signal: np.ndarray  # int8 in {-1, 0, 1}


def macd(prices: Sequence[float], fast: int = 12, slow: int = 26, signal: int = 9) -> MacdResult:
    """MACD crossover signal: +1 when the MACD line crosses above its signal line, -1 below.

    Raises:
        DataError: if the series has ``slow + signal`` points or fewer.
    """
    if not 0 < fast < slow or signal < 1:
        raise ValueError(f"need 0 < fast < slow and signal >= 1, got ({fast}, {slow}, {signal})")
    x = np.asarray(prices, dtype=float)
    if x.size <= slow + signal:
        raise DataError(f"macd({fast},{slow},{signal}) needs more than {slow + signal} prices, got {x.size}")
    line = ema(x, fast) - ema(x, slow)
    start = slow - 1
    sig = np.full(x.size, np.nan)
    sig[start:] = ema(line[start:], signal)
    out = np.zeros(x.size, dtype=np.int8)
    diff = line - sig
    for t in range(start + signal, x.size):
        prev, cur = diff[t - 1], diff[t]
        if prev <= 0 < cur:
            out[t] = 1
        elif prev >= 0 > cur:
            out[t] = -1
    return MacdResult(line, sig, out)


@dataclass(frozen=True)
class RsiResult:
    values: np.ndarray  # NaN during warm-up
    signal: np.ndarray


def rsi(prices: Sequence[float], period: int = 14, lower: float = 30.0, upper: float = 70.0) -> RsiResult:
    """Wilder RSI with buy below ``lower`` and sell above ``upper``.

    The first averages are plain means of the first ``period`` changes. A
    window without losses reads 100, without gains 0, and a flat window 50.
    """
    if period < 1:
        raise ValueError("period must be positive")
    x = np.asarray(prices, dtype=float)
    if x.size <= period:
        raise DataError(f"rsi({period}) needs more than {period} prices, got {x.size}")
    delta = np.diff(x)
    gains = np.where(delta > 0, delta, 0.0)
    losses = np.where(delta < 0, -delta, 0.0)
    values = np.full(x.size, np.nan)
    avg_g = gains[:period].mean()
    avg_l = losses[:period].mean()
    for t in range(period, x.size):
        if t > period:
            avg_g = (avg_g * (period - 1) + gains[t - 1]) / period
            avg_l = (avg_l * (period - 1) + losses[t - 1]) / period
        values[t] = _rsi_value(avg_g, avg_l)
    sig = np.zeros(x.size, dtype=np.int8)
    valid = ~np.isnan(values)
    sig[valid & (values < lower)] = 1
    sig[valid & (values > upper)] = -1
    return RsiResult(values, sig)


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0:
        return 50.0 if avg_gain == 0 else 100.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
