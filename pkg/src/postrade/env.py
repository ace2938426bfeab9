"""
Trading environment: position accounting and log-return bookkeeping.

Two task modes are supported. In single-step mode each action is liquidated
on the next bar, so the return is ``a_t * ln(p[t+1]/p[t])``. In position-aware
mode the position carries over and the return is
``position_t * ln(p[t+1]/p[t])``, where ``position_t`` already includes the
decision taken at the close of day ``t``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Sequence

from .errors import PostradeError

logger = logging.getLogger(__name__)

BUY, HOLD, SELL = 1, 0, -1
DIRECTION_NAMES = {BUY: "buy", HOLD: "hold", SELL: "sell"}
DIRECTION_CODES = {v: k for k, v in DIRECTION_NAMES.items()}
MEMORY_LAYERS = ("short", "mid", "long", "reflection")


class LimitViolation(PostradeError):
    """An order exceeded the day's maximum order size."""


class InvalidPrice(PostradeError):
    pass


def empty_citations() -> dict[str, list[int]]:
    return {layer: [] for layer in MEMORY_LAYERS}


@dataclass(frozen=True)
class TradeDecision:
    direction: int
    quantity: int
    rationale: str = ""
    strategic_intent: str = "short-term-tactical"
    memory_indices: dict[str, list[int]] = field(default_factory=empty_citations)

    def __post_init__(self) -> None:
        if self.direction not in (BUY, HOLD, SELL):
            raise ValueError(f"direction must be -1, 0 or 1, got {self.direction!r}")
        if int(self.quantity) != self.quantity or self.quantity < 0:
            raise ValueError(f"quantity must be a non-negative integer, got {self.quantity!r}")
        if self.direction == HOLD and self.quantity != 0:
            raise ValueError("hold decisions must have quantity 0")


@dataclass(frozen=True)
class AccountState:
    position: int = 0
    cumulative_log_return: float = 0.0
    day_index: int = 0


@dataclass
class ApplyResult:
    state: AccountState
    executed_quantity: int
    clamped: bool


def apply_decision(
    state: AccountState,
    decision: TradeDecision,
    limit: int,
    allow_short: bool = False,
) -> ApplyResult:
    """Update the position by ``direction * quantity``.

    With shorting disabled a sell larger than the current holding is clamped
    to the holding; the clamp is logged and reported. An order above ``limit``
    is never truncated: it raises :class:`LimitViolation`.
    """
    if decision.quantity > limit:
        raise LimitViolation(f"order of {decision.quantity} exceeds limit {limit}")
    quantity = decision.quantity
    clamped = False
    if decision.direction == SELL and not allow_short and quantity > state.position:
        logger.info("sell of %d clamped to current position %d", quantity, state.position)
        quantity = max(state.position, 0)
        clamped = True
    position = state.position + decision.direction * quantity
    return ApplyResult(replace(state, position=position), quantity, clamped)


def step_return(position_after: float, price_t: float, price_t1: float) -> float:
    if not (price_t > 0 and price_t1 > 0):
        raise InvalidPrice(f"prices must be positive, got {price_t}, {price_t1}")
    return position_after * math.log(price_t1 / price_t)


def advance(state: AccountState, r_t: float) -> AccountState:
    return replace(
        state,
        cumulative_log_return=state.cumulative_log_return + r_t,
        day_index=state.day_index + 1,
    )


def run_single_step(actions: Sequence[int], prices: Sequence[float]) -> float:
    """Total log return when each action is liquidated on the next bar."""
    if len(actions) != len(prices) - 1:
        raise ValueError(f"need len(actions) == len(prices) - 1, got {len(actions)} and {len(prices)}")
    total = 0.0
    for t, a in enumerate(actions):
        if a not in (-1, 0, 1):
            raise ValueError(f"action must be in {{-1, 0, 1}}, got {a!r}")
        total += step_return(a, prices[t], prices[t + 1])
    return total


def run_position_aware(positions: Sequence[float], prices: Sequence[float]) -> float:
    """Total log return for a given end-of-day position path."""
    if len(positions) != len(prices) - 1:
        raise ValueError(f"need len(positions) == len(prices) - 1, got {len(positions)} and {len(prices)}")
    total = 0.0
    for t, p in enumerate(positions):
        total += step_return(p, prices[t], prices[t + 1])
    return total


@dataclass(frozen=True)
class EquityCurve:
    dates: tuple
    values: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.values)


def build_equity_curve(
    returns: Sequence[float],
    initial_value: float,
    dates: Sequence[date] | None = None,
) -> EquityCurve:
    """Account value ``P0 * exp(cumulative log return)`` after each step."""
    if not initial_value > 0:
        raise ValueError("initial_value must be positive")
    values = [float(initial_value)]
    running = 0.0
    for r in returns:
        running += r
        values.append(initial_value * math.exp(running))
    if dates is None:
        dates = tuple(range(len(values)))
    elif len(dates) != len(values):
        raise ValueError("dates must have len(returns) + 1 entries")
    return EquityCurve(tuple(dates), tuple(values))
