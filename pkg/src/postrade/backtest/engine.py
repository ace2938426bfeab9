"""
Train and test day loops, rule-based baselines, and the shared simulator.

Positions are tracked in shares. Returns are evaluated on the position
divided by ``position_scale`` so that one unit of scaled position is the
size buy-and-hold takes on the first test day; with raw share counts a
log-return sum of hundreds of units would dominate every metric.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import Callable, Sequence

from ..agents.context import build_investment_info, momentum_summary
from ..agents.pipeline import AgentContext, PromptHook, analyze_day, decide_direction, decide_quantity, reflect
from ..agents.prompts import PromptRegistry
from ..agents.provider import Provider, make_provider
from ..env import (
    DIRECTION_CODES,
    DIRECTION_NAMES,
    HOLD,
    MEMORY_LAYERS,
    AccountState,
    EquityCurve,
    TradeDecision,
    advance,
    apply_decision,
    build_equity_curve,
    step_return,
)
from ..errors import DataError
from ..market_data import MarketDay, build_replay, load_price_csv, load_text_jsonl
from ..memory import MemoryStore, tokenize
from ..metrics import (
    InsufficientData,
    MetricReport,
    RewardRecord,
    RiskEstimate,
    compute_report,
    cvar,
    max_order_size,
    reward,
    trailing_log_returns,
    trend_score,
)
from .config import DateRange, RunConfig
from .indicators import macd, rsi

logger = logging.getLogger(__name__)

BASELINE_KINDS = ("buy-hold", "random", "macd", "rsi")
_STOPWORDS = frozenset("a an and are as at be by for from has in is it its of on or that the to was were will with".split())


@dataclass
class Market:
    """Full replay plus the close series it was built from."""

    days: list[MarketDay]
    closes: list[float] = field(init=False)
    dates: list[date] = field(init=False)

    def __post_init__(self) -> None:
        self.closes = [d.bar.close for d in self.days]
        self.dates = [d.date for d in self.days]

    def window(self, rng: DateRange, what: str, min_bars: int = 2) -> list[int]:
        """Indices of the bars inside ``rng``; raises on too few bars or gaps."""
        idx = [i for i, d in enumerate(self.days) if rng.contains(d.date)]
        if len(idx) < min_bars:
            raise DataError(f"{what} range {rng.start}..{rng.end} has {len(idx)} bar(s); need >= {min_bars}")
        return idx


@dataclass
class BacktestResult:
    label: str
    decisions: list[dict]
    rewards: list[RewardRecord]
    equity: EquityCurve
    exposure: list[float | None]
    report: MetricReport
    position_scale: float
    provider_calls: int = 0


@dataclass
class TrainResult:
    snapshot: str
    rewards: list[RewardRecord]
    decisions: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# data


def missing_weekdays(dates: Sequence[date], max_gap_days: int) -> list[date]:
    """Weekdays inside any gap between consecutive bars longer than ``max_gap_days``."""
    missing = []
    for prev, cur in zip(dates, dates[1:]):
        if (cur - prev).days > max_gap_days:
            d = prev + timedelta(days=1)
            while d < cur:
                if d.weekday() < 5:
                    missing.append(d)
                d += timedelta(days=1)
    return missing


def load_market(cfg: RunConfig) -> Market:
    bars = load_price_csv(cfg.path(cfg.data.prices))
    news = load_text_jsonl(cfg.path(cfg.data.news), "news", cfg.data.strict).records if cfg.data.news else []
    filings = load_text_jsonl(cfg.path(cfg.data.filings), "filing", cfg.data.strict).records if cfg.data.filings else []
    filings = [f for f in filings if f.symbol == cfg.symbol]
    return Market(build_replay(bars, news, filings))


def _check_gaps(market: Market, idx: list[int], cfg: RunConfig, what: str) -> None:
    gaps = missing_weekdays([market.days[i].date for i in idx], cfg.max_gap_days)
    if gaps:
        shown = ", ".join(d.isoformat() for d in gaps[:20])
        more = f" (+{len(gaps) - 20} more)" if len(gaps) > 20 else ""
        raise DataError(f"{what} range has missing trading dates: {shown}{more}")


def query_terms(symbol: str, day: MarketDay) -> set[str]:
    text = " ".join([symbol] + [n.headline for n in day.company_news + day.macro_news] + [f.kind for f in day.filings])
    return tokenize(text) - _STOPWORDS


# ---------------------------------------------------------------------------
# sizing


def order_limit(cfg: RunConfig, closes: Sequence[float], g: int, equity_value: float) -> int:
    """maxcvar for global bar ``g`` from trailing per-share log returns.

    An account whose mark-to-market value is gone gets no new order capacity.
    """
    if equity_value <= 0:
        return 0
    return max_order_size(equity_value, closes[g], _risk_at(cfg, closes, g), cfg.risk.budget, cfg.risk.floor_limit)


def _risk_at(cfg: RunConfig, closes: Sequence[float], g: int) -> RiskEstimate | None:
    samples = trailing_log_returns(closes, g, cfg.risk.window)
    try:
        return cvar(samples, cfg.risk.alpha, cfg.risk.window)
    except InsufficientData:
        return None


def exposure_of(position: int, price: float, account_value: float) -> float | None:
    """|position| x price over account value; None once the account is wiped out."""
    if account_value <= 0:
        return None
    return abs(position) * price / account_value


def resolve_position_scale(cfg: RunConfig, market: Market) -> float:
    if cfg.position_scale != "auto":
        return float(cfg.position_scale)
    g0 = market.window(cfg.test, "test")[0]
    risk = _risk_at(cfg, market.closes, g0)
    if risk is None or risk.cvar >= 0:
        # no day-0 risk estimate: one unit is a fully invested account
        return float(max(math.floor(cfg.initial_equity / market.closes[g0]), 1))
    return float(max(order_limit(cfg, market.closes, g0, cfg.initial_equity), 1))


# ---------------------------------------------------------------------------
# simulator


Policy = Callable[[int, int, AccountState, int, float], "TradeDecision | tuple[TradeDecision, dict]"]


@dataclass
class _Step:
    decision: TradeDecision
    executed: int
    clamped: bool
    maxcvar: int
    state: AccountState
    r_t: float
    extra: dict


def _merge_citations(*maps: dict[str, list[int]]) -> dict[str, list[int]]:
    out = {}
    for layer in MEMORY_LAYERS:
        out[layer] = sorted({mid for m in maps for mid in m.get(layer, [])})
    return out


def _log_record(label: str, day: MarketDay, next_day: MarketDay, step: _Step, scale: float) -> dict:
    d = step.decision
    rec = {
        "label": label,
        "date": day.date.isoformat(),
        "next_date": next_day.date.isoformat(),
        "direction": DIRECTION_NAMES[d.direction],
        "quantity": d.quantity,
        "executed_quantity": step.executed,
        "maxcvar": step.maxcvar,
        "position_after": step.state.position,
        "position_scale": scale,
        "price": day.bar.close,
        "next_price": next_day.bar.close,
        "r_t": step.r_t,
        "rationale": d.rationale,
        "strategic_intent": d.strategic_intent,
        "memory_indices": {k: list(d.memory_indices.get(k, [])) for k in MEMORY_LAYERS},
        "clamped": step.clamped,
    }
    rec.update(step.extra)
    return rec


def simulate(
    cfg: RunConfig,
    market: Market,
    idx: list[int],
    label: str,
    policy: Policy,
    scale: float,
    after_step: Callable[[int, int, _Step], None] | None = None,
) -> BacktestResult:
    """Run ``policy`` over bars ``idx[:-1]``; the last bar only values the book.

    ``policy(t, g, state, maxcvar, equity)`` returns the day's decision, where
    ``t`` is the index within the window and ``g`` the global bar index. A
    policy may also return ``(decision, extra)`` to add fields to the log.
    """
    closes = market.closes
    state = AccountState()
    decisions, exposure, returns = [], [], []
    equity_value, pnl = cfg.initial_equity, 0.0
    for t, g in enumerate(idx[:-1]):
        limit = order_limit(cfg, closes, g, equity_value)
        decision, extra = policy(t, g, state, limit, equity_value), {}
        if isinstance(decision, tuple):
            decision, extra = decision
        applied = apply_decision(state, decision, limit, cfg.allow_short)
        r_t = step_return(applied.state.position / scale, closes[g], closes[g + 1])
        step = _Step(decision, applied.executed_quantity, applied.clamped, limit, applied.state, r_t, extra)
        exposure.append(exposure_of(applied.state.position, closes[g], equity_value))
        state = advance(applied.state, r_t)
        returns.append(r_t)
        # sizing and exposure use currency P&L on raw shares
        pnl += applied.state.position * (closes[g + 1] - closes[g])
        equity_value = cfg.initial_equity + pnl
        decisions.append(_log_record(label, market.days[g], market.days[g + 1], step, scale))
        if after_step is not None:
            after_step(t, g, step)
    dates = [market.days[g].date for g in idx]
    equity = build_equity_curve(returns, cfg.initial_equity, dates)
    report = compute_report(returns, equity, cfg.risk_free_daily, cfg.risk.alpha, cfg.sharpe_periods)
    return BacktestResult(label, decisions, [], equity, exposure, report, scale)


# ---------------------------------------------------------------------------
# agent


def _agent_context(cfg: RunConfig, provider: Provider | None, on_prompt: PromptHook | None) -> AgentContext:
    if provider is None:
        provider = make_provider(replace(cfg.provider, seed=cfg.seed))
    return AgentContext(
        provider=provider,
        registry=PromptRegistry.load_default(),
        symbol=cfg.symbol,
        batch_size=cfg.batch_size,
        workers=cfg.analysis_workers,
        quantity_fallback=cfg.quantity_fallback,
        on_prompt=on_prompt,
    )


class _AgentPolicy:
    """Direction then quantity, with memory allocation and retrieval each day."""

    def __init__(self, cfg: RunConfig, market: Market, ctx: AgentContext, store: MemoryStore, mode: str,
                 window_closes: Sequence[float] | None = None):
        self.cfg, self.market, self.ctx, self.store, self.mode = cfg, market, ctx, store, mode
        self.window_closes = window_closes
        self.prev_reward: float | None = None
        self.last: dict = {}

    def __call__(self, t: int, g: int, state: AccountState, limit: int, equity_value: float):
        cfg, ctx, store = self.cfg, self.ctx, self.store
        day = self.market.days[g]
        for insight in analyze_day(ctx, day):
            store.allocate(insight, day.date)
        ws = store.retrieve(query_terms(cfg.symbol, day), day.date)
        mom = momentum_summary(self.market.closes, g)
        trend = trend_score(self.window_closes, t, cfg.horizons) if self.mode == "train" else None
        common = dict(mode=self.mode, symbol=cfg.symbol, cur_date=day.date, working_set=ws, momentum=mom,
                      position=state.position, close=day.bar.close, trend=trend, prev_reward=self.prev_reward)
        dres = decide_direction(ctx, build_investment_info(ctx.registry, role="direction", **common), self.mode, store)
        qres = decide_quantity(
            ctx,
            dres.direction,
            build_investment_info(ctx.registry, role="quantity", direction=dres, **common),
            limit,
            self.mode,
            store,
        )
        direction = DIRECTION_CODES[dres.direction] if qres.quantity > 0 else HOLD
        cited = _merge_citations(dres.cited, qres.cited) if direction != HOLD else _merge_citations()
        decision = TradeDecision(direction, qres.quantity if direction != HOLD else 0,
                                 dres.summary_reason, dres.strategic_intent, cited)
        self.last = {"trend": trend, "direction": dres.direction, "cited": cited}
        return decision, ({"quantity_violation": qres.violation} if qres.violation else {})


def run_train(
    cfg: RunConfig,
    market: Market | None = None,
    provider: Provider | None = None,
    on_prompt: PromptHook | None = None,
) -> TrainResult:
    """Train-phase loop; returns the final memory snapshot and reward trace.

    Each day: analyze, allocate, decide with future deltas and the previous
    reward bound, apply, score the reward, then reflect and promote.
    """
    market = market or load_market(cfg)
    store = MemoryStore(cfg.memory)
    if cfg.train.start is None and cfg.train.end is None:
        logger.info("no train range configured; starting the test phase with empty memory")
        return TrainResult(store.snapshot(), [])
    idx = market.window(cfg.train, "train")
    _check_gaps(market, idx, cfg, "train")
    scale = resolve_position_scale(cfg, market) if cfg.test.start or cfg.test.end else 1.0
    ctx = _agent_context(cfg, provider, on_prompt)
    window_closes = [market.closes[g] for g in idx]
    policy = _AgentPolicy(cfg, market, ctx, store, "train", window_closes)
    rewards: list[RewardRecord] = []
    prev_position = [0]

    def after(t: int, g: int, step: _Step) -> None:
        trend = policy.last["trend"]
        value = reward(step.state.position, prev_position[0], trend.total, cfg.reward_normalize, market.closes[g])
        rr = RewardRecord(t, value, step.state.position, prev_position[0], trend)
        rewards.append(rr)
        prev_position[0] = step.state.position
        policy.prev_reward = value
        reflect(ctx, store, on=market.days[g].date, direction=policy.last["direction"],
                quantity=step.executed, cited=policy.last["cited"], reward_record=rr)

    result = simulate(cfg, market, idx, "train", policy, scale, after)
    return TrainResult(store.snapshot(), rewards, result.decisions)


def run_test(
    cfg: RunConfig,
    snapshot: str | MemoryStore | None = None,
    market: Market | None = None,
    provider: Provider | None = None,
    on_prompt: PromptHook | None = None,
    label: str = "agent",
) -> BacktestResult:
    """Test-phase loop: no reflection and no future-price bindings."""
    market = market or load_market(cfg)
    if isinstance(snapshot, MemoryStore):
        snapshot = snapshot.snapshot()
    store = MemoryStore.restore(snapshot) if snapshot is not None else MemoryStore(cfg.memory)
    idx = market.window(cfg.test, "test")
    _check_gaps(market, idx, cfg, "test")
    ctx = _agent_context(cfg, provider, on_prompt)
    calls_before = getattr(ctx.provider, "calls", 0)
    result = simulate(cfg, market, idx, label, _AgentPolicy(cfg, market, ctx, store, "test"),
                      resolve_position_scale(cfg, market))
    result.provider_calls = getattr(ctx.provider, "calls", 0) - calls_before
    return result


def run_backtest(cfg: RunConfig, market: Market | None = None, provider: Provider | None = None,
                 on_prompt: PromptHook | None = None) -> tuple[TrainResult, BacktestResult]:
    market = market or load_market(cfg)
    provider = provider or make_provider(replace(cfg.provider, seed=cfg.seed))
    trained = run_train(cfg, market, provider, on_prompt)
    return trained, run_test(cfg, trained.snapshot, market, provider, on_prompt)


# ---------------------------------------------------------------------------
# baselines


def _fixed(direction: int, quantity: int, why: str) -> TradeDecision:
    return TradeDecision(direction, quantity if direction else 0, why, "rule-based")


def run_baseline(kind: str, cfg: RunConfig, market: Market | None = None) -> BacktestResult:
    """Evaluate a rule-based strategy under the same accounting as the agent.

    Buy-hold takes the first day's cap and never trades again. Random draws a
    direction per day from the config's seed and trades one lot. MACD and RSI
    trade one lot whenever their signal fires. Every order still respects
    the day's cap.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    market = market or load_market(cfg)
    idx = market.window(cfg.test, "test")
    _check_gaps(market, idx, cfg, "test")
    scale = resolve_position_scale(cfg, market)
    lot = cfg.lot_size

    if kind == "buy-hold":
        def policy(t, g, state, limit, eq):
            if t == 0:
                return _fixed(1, limit, "buy and hold: initial purchase at the day-0 cap")
            return _fixed(HOLD, 0, "buy and hold")
    elif kind == "random":
        rng = cfg.rng()

        def policy(t, g, state, limit, eq):
            direction = int(rng.integers(-1, 2))
            return _fixed(direction, min(limit, lot), "random draw")
    else:
        upto = market.closes[: idx[-1] + 1]
        if kind == "macd":
            signals = macd(upto, *cfg.macd).signal
        else:
            signals = rsi(upto, cfg.rsi_period).signal

        def policy(t, g, state, limit, eq):
            s = int(signals[g])
            return _fixed(s, min(limit, lot), f"{kind} signal {s:+d}")

    return simulate(cfg, market, idx, kind, policy, scale)


def run_compare(cfg: RunConfig, baselines: Sequence[str] | None = None, market: Market | None = None,
                provider: Provider | None = None) -> list[BacktestResult]:
    market = market or load_market(cfg)
    _, agent = run_backtest(cfg, market, provider)
    kinds = cfg.baselines if baselines is None else baselines
    return [agent] + [run_baseline(k, cfg, market) for k in kinds]
