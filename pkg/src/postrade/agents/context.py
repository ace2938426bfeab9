"""
Assembly of the ``investment_info`` block fed to the decision prompts.

Momentum is engine-defined: for each lookback ``k`` the close change over
``k`` trading days, and a z-score ``ln(p_t / p_{t-k}) / (sigma * sqrt(k))``
where ``sigma`` is the trailing sample stdev of daily log returns, floored so
a perfectly smooth trend still registers.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from datetime import date
from typing import Sequence

from ..env import MEMORY_LAYERS
from ..memory import WorkingSet
from ..metrics import TrendScore
from .prompts import PromptRegistry, fill
from .schemas import DirectionResult

LOOKBACKS = (5, 10, 20)
FUTURE_BINDINGS = ("cur_record_t1", "cur_record_t7", "cur_record_t30")


@dataclass(frozen=True)
class MomentumSummary:
    lookbacks: tuple[int, ...]
    deltas: tuple[float, ...]
    zscores: tuple[float, ...]

    @property
    def composite(self) -> float:
        return sum(self.zscores) / len(self.zscores) if self.zscores else 0.0

    def line(self) -> str:
        parts = [f"{k}-day change {d:+.4f} (z={z:+.4f})" for k, d, z in zip(self.lookbacks, self.deltas, self.zscores)]
        return "Momentum summary: " + "; ".join(parts)


def momentum_summary(
    closes: Sequence[float],
    t: int,
    lookbacks: Sequence[int] = LOOKBACKS,
    vol_window: int = 20,
    vol_floor: float = 0.005,
) -> MomentumSummary:
    """Backward-looking momentum at index ``t``; uses closes[0..t] only."""
    lo = max(1, t - vol_window + 1)
    rets = [math.log(closes[s] / closes[s - 1]) for s in range(lo, t + 1)]
    sigma = statistics.stdev(rets) if len(rets) >= 2 else 0.0
    sigma = max(sigma, vol_floor)
    deltas, zs = [], []
    for k in lookbacks:
        k_eff = min(k, t)
        if k_eff == 0:
            deltas.append(0.0)
            zs.append(0.0)
            continue
        deltas.append(closes[t] - closes[t - k_eff])
        zs.append(math.log(closes[t] / closes[t - k_eff]) / (sigma * math.sqrt(k_eff)))
    return MomentumSummary(tuple(lookbacks), tuple(deltas), tuple(zs))


def memory_block(registry: PromptRegistry, ws: WorkingSet, mode: str) -> str:
    extract = registry.fragments[f"{mode}_memory_id_extract_prompt"]
    lines = []
    for layer in MEMORY_LAYERS:
        name = registry.fragments["memory_layer_name"][layer]
        desc = registry.fragments["memory_id_desc"][layer]
        lines.append(f"{desc} {fill(extract, {'memory_layer': name})}")
        items = ws.layers.get(layer, [])
        if not items:
            lines.append("- (none)")
        for item in items:
            content = " ".join(item.content.split())
            lines.append(
                f"- [{layer}:{item.id}] {content} (importance {item.importance:.2f}, timeliness {item.recency:.2f})"
            )
    return "\n".join(lines)


def build_investment_info(
    registry: PromptRegistry,
    *,
    mode: str,
    role: str,
    symbol: str,
    cur_date: date,
    working_set: WorkingSet,
    momentum: MomentumSummary,
    position: int,
    close: float,
    trend: TrendScore | None = None,
    prev_reward: float | None = None,
    direction: DirectionResult | None = None,
) -> str:
    """Compose the investment information section for one decision prompt.

    Future price deltas appear only when ``mode == "train"``; a test-mode
    block is built from data available at the close of ``cur_date``.
    """
    if mode not in ("train", "test") or role not in ("direction", "quantity"):
        raise ValueError(f"bad mode/role {mode!r}/{role!r}")
    frag = registry.fragments
    parts = []
    if mode == "train":
        if trend is None:
            raise ValueError("train mode needs the trend score")
        parts.append(
            fill(
                frag["train_investment_info_prefix"],
                {
                    "cur_date": cur_date.isoformat(),
                    "symbol": symbol,
                    "cur_record_t1": f"{trend.m_short:+.4f}",
                    "cur_record_t7": f"{trend.m_mid:+.4f}",
                    "cur_record_t30": f"{trend.m_long:+.4f}",
                    "reward": "n/a" if prev_reward is None else f"{prev_reward:+.6f}",
                },
            ).rstrip("\n")
        )
        if role == "quantity":
            parts.append(frag["train_reward_explanation"].rstrip("\n"))
        parts.append(frag["train_trade_reason_summary"])
    else:
        parts.append(fill(frag["test_investment_info_prefix"], {"cur_date": cur_date.isoformat(), "symbol": symbol}))
        parts.append(frag["test_trade_reason_summary"])
        if role == "direction":
            parts.append(frag["test_invest_action_choice"])
    parts.append(memory_block(registry, working_set, mode))
    key = "direction_sentiment_explanation" if role == "direction" else "quantity_sentiment_explanation"
    parts.append(frag[key].rstrip("\n"))
    parts.append(frag["momentum_explanation"].rstrip("\n"))
    parts.append(momentum.line())
    parts.append(f"Current position: {position} shares. Latest close: {close:.4f}.")
    if role == "quantity" and direction is not None:
        parts.append(
            f"Direction Decision Agent output: {direction.direction} "
            f"({direction.strategic_intent}). Strategy: {direction.summary_reason}"
        )
    return "\n".join(parts)
