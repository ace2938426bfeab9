"""
Scalar analytics: multi-horizon trend score and reward, cumulative return,
Sharpe, drawdown, historical CVaR, Calmar, and the CVaR-derived order cap.

Return conventions: everything here works in log returns. CR% is
``100 * sum(position_t * ln(p[t+1]/p[t]))``, which diverges from simple
returns for large moves.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import EquityCurve
from .errors import PostradeError

logger = logging.getLogger(__name__)

TRADING_DAYS_PER_YEAR = 252
DEFAULT_HORIZONS = (1, 7, 30)


class UndefinedMetric(PostradeError):
    """A ratio whose denominator is zero (flat returns, zero drawdown)."""


class InsufficientData(PostradeError):
    pass


@dataclass(frozen=True)
class TrendScore:
    m_short: float
    m_mid: float
    m_long: float

    @property
    def total(self) -> float:
        return self.m_short + self.m_mid + self.m_long


@dataclass(frozen=True)
class RewardRecord:
    day_index: int
    reward: float
    position_now: int
    position_prev: int
    trend: TrendScore | None = None


@dataclass(frozen=True)
class RiskEstimate:
    var: float
    cvar: float
    alpha: float
    window: int
    pnl_samples_used: int


def trend_score(prices: Sequence[float], t: int, horizons: tuple[int, int, int] = DEFAULT_HORIZONS) -> TrendScore:
    """Forward price deltas over three horizons, clamped at the series end."""
    last = len(prices) - 1
    if not 0 <= t < last:
        raise IndexError(f"t={t} must satisfy 0 <= t < {last}")
    base = prices[t]
    short, mid, long_ = (prices[min(t + h, last)] - base for h in horizons)
    return TrendScore(short, mid, long_)


def reward(
    position_now: float,
    position_prev: float,
    m_total: float,
    normalize: bool = False,
    price_t: float | None = None,
) -> float:
    """Quadratic penalty when the position is unchanged, else position times trend.

    ``normalize`` rescales by the day's price (squared for the penalty) so both
    branches are dimensionless.
    """
    if normalize:
        if not price_t or price_t <= 0:
            raise ValueError("normalize=True needs a positive price_t")
        if position_now == position_prev:
            scaled = m_total / price_t
            return -(scaled * scaled)
        return position_now * m_total / price_t
    if position_now == position_prev:
        # m*m is correctly rounded; pow() need not be
        return -(m_total * m_total)
    return position_now * m_total


def cumulative_return_pct(positions: Sequence[float], prices: Sequence[float]) -> float:
    if len(positions) != len(prices) - 1:
        raise ValueError(f"need len(positions) == len(prices) - 1, got {len(positions)} and {len(prices)}")
    terms = []
    for t, pos in enumerate(positions):
        if prices[t] <= 0 or prices[t + 1] <= 0:
            raise ValueError(f"non-positive price at t={t}")
        terms.append(pos * math.log(prices[t + 1] / prices[t]))
    return 100.0 * math.fsum(terms)


def sharpe(daily_returns: Sequence[float], risk_free_daily: float = 0.0, periods_per_year: int | None = None) -> float:
    """Mean excess return over sample stdev; unannualized unless ``periods_per_year`` is given."""
    r = np.asarray(daily_returns, dtype=float)
    if r.size < 2:
        raise InsufficientData("sharpe needs at least 2 samples")
    if r.max() == r.min():
        raise UndefinedMetric("sharpe undefined: returns have zero dispersion")
    sd = r.std(ddof=1)
    if sd == 0:
        raise UndefinedMetric("sharpe undefined: zero standard deviation")
    ratio = (r.mean() - risk_free_daily) / sd
    if periods_per_year:
        ratio *= math.sqrt(periods_per_year)
    return float(ratio)


def max_drawdown(equity: EquityCurve | Sequence[float]) -> float:
    """Largest fall from any day's value to the lowest value on or after it, as a fraction."""
    values = equity.values if isinstance(equity, EquityCurve) else equity
    if len(values) == 0:
        raise ValueError("empty equity curve")
    worst = 0.0
    trough = math.inf
    for v in reversed(values):
        if v <= 0:
            raise ValueError("equity values must be positive")
        trough = min(trough, v)
        worst = max(worst, (v - trough) / v)
    return worst


def max_drawdown_pct(equity: EquityCurve | Sequence[float]) -> float:
    return 100.0 * max_drawdown(equity)


def tail_rank(n: int, alpha: float) -> int:
    """1-based rank of the VaR sample among ``n`` sorted ascending samples."""
    # floor(n(1-a)) + 1; the epsilon absorbs representation error in 1 - alpha
    return min(n, int(math.floor(n * (1.0 - alpha) + 1e-9)) + 1)


def min_samples(alpha: float) -> int:
    return math.ceil(1.0 / (1.0 - alpha) - 1e-9)


def cvar(pnl_samples: Sequence[float], alpha: float = 0.95, window: int | None = None) -> RiskEstimate:
    """Historical-simulation VaR and CVaR on the lower tail of a PnL sample.

    VaR is the ``floor(n*(1-alpha)) + 1``-th smallest sample; CVaR is the mean
    of every sample at or below it (ties included).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    samples = [float(x) for x in pnl_samples]
    n = len(samples)
    if n < min_samples(alpha):
        raise InsufficientData(f"cvar at alpha={alpha} needs >= {min_samples(alpha)} samples, got {n}")
    ordered = sorted(samples)
    var = ordered[tail_rank(n, alpha) - 1]
    tail = [x for x in ordered if x <= var]
    return RiskEstimate(
        var=var,
        cvar=math.fsum(tail) / len(tail),
        alpha=alpha,
        window=window if window is not None else n,
        pnl_samples_used=n,
    )


def trailing_log_returns(prices: Sequence[float], t: int, window: int) -> list[float]:
    """Per-share daily log returns for the ``window`` days ending at index ``t``."""
    lo = max(1, t - window + 1)
    return [math.log(prices[s] / prices[s - 1]) for s in range(lo, t + 1)]


def annualized_return(cumulative_log_return: float, trading_days: int) -> float:
    if trading_days <= 0:
        raise ValueError("trading_days must be positive")
    return TRADING_DAYS_PER_YEAR / trading_days * cumulative_log_return


def calmar(annualized: float, mdd_fraction: float) -> float:
    if mdd_fraction == 0:
        raise UndefinedMetric("calmar undefined: zero drawdown")
    return annualized / abs(mdd_fraction)


def max_order_size(
    equity_value: float,
    price: float,
    risk: RiskEstimate | None,
    risk_budget_fraction: float,
    floor_limit: int = 1,
) -> int:
    """Largest order, in shares, whose CVaR loss stays inside the risk budget.

    ``limit = floor(budget * equity / (|cvar| * price))``. When no loss signal
    is available (no estimate, or a non-negative tail mean) ``floor_limit`` is
    returned instead.
    """
    if not price > 0:
        raise ValueError("price must be positive")
    if not 0.0 < risk_budget_fraction <= 1.0:
        raise ValueError("risk_budget_fraction must lie in (0, 1]")
    if risk is None or risk.cvar >= 0:
        logger.warning("no loss tail in CVaR estimate; order limit falls back to %d", floor_limit)
        return floor_limit
    raw = risk_budget_fraction * equity_value / (abs(risk.cvar) * price)
    return max(0, int(math.floor(raw + 1e-9)))


@dataclass(frozen=True)
class MetricReport:
    cr_pct: float
    sharpe: float | None
    mdd_pct: float
    calmar: float | None
    annualized_return: float
    trading_days: int
    cvar_at_end: RiskEstimate | None

    def to_dict(self) -> dict:
        risk = self.cvar_at_end
        return {
            "cr_pct": self.cr_pct,
            "sharpe": self.sharpe,
            "mdd_pct": self.mdd_pct,
            "calmar": self.calmar,
            "annualized_return": self.annualized_return,
            "trading_days": self.trading_days,
            "cvar_at_end": None
            if risk is None
            else {
                "var": risk.var,
                "cvar": risk.cvar,
                "alpha": risk.alpha,
                "window": risk.window,
                "pnl_samples_used": risk.pnl_samples_used,
            },
        }


def compute_report(
    step_returns: Sequence[float],
    equity: EquityCurve,
    risk_free_daily: float = 0.0,
    alpha: float = 0.95,
    sharpe_periods: int | None = None,
) -> MetricReport:
    """Bundle CR/SR/MDD/Calmar/CVaR for one run's daily log returns."""
    total = math.fsum(step_returns)
    n = len(step_returns)
    try:
        sr = sharpe(step_returns, risk_free_daily, sharpe_periods)
    except (UndefinedMetric, InsufficientData):
        sr = None
    mdd = max_drawdown(equity)
    ann = annualized_return(total, n) if n else 0.0
    try:
        cal = calmar(ann, mdd)
    except UndefinedMetric:
        cal = None
    try:
        risk = cvar(step_returns, alpha)
    except InsufficientData:
        risk = None
    return MetricReport(
        cr_pct=100.0 * total,
        sharpe=sr,
        mdd_pct=100.0 * mdd,
        calmar=cal,
        annualized_return=ann,
        trading_days=n,
        cvar_at_end=risk,
    )
