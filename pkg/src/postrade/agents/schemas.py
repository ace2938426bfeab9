"""Structured records produced by the analysis and decision agents."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from ..env import MEMORY_LAYERS

LABELS = ("positive", "negative", "neutral")
RELEVANCE = ("high", "medium", "low")
INDEX_FIELDS = {
    "short": "short_memory_index",
    "mid": "middle_memory_index",
    "long": "long_memory_index",
    "reflection": "reflection_memory_index",
}
_LABEL = re.compile(r"\b(positive|negative|neutral)\b", re.IGNORECASE)


@dataclass(frozen=True)
class AnalysisInsight:
    source_kind: str
    insight: str
    short_term_label: str
    mid_long_label: str
    relevance: str
    reason: str
    relation_type: str | None = None
    sentiment: tuple[float, float, float] | None = None
    item_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.short_term_label not in LABELS or self.mid_long_label not in LABELS:
            raise ValueError("horizon labels must be positive/negative/neutral")
        if self.relevance not in RELEVANCE:
            raise ValueError(f"relevance must be one of {RELEVANCE}")
        if not self.reason.strip():
            raise ValueError("insight reason must be non-empty")
        if self.sentiment is not None and abs(math.fsum(self.sentiment) - 1.0) > 1e-9:
            raise ValueError("sentiment distribution must sum to 1")


def labels_from_text(text: str) -> tuple[str, str] | None:
    """Pull (short-term, mid/long-term) labels out of an insight sentence.

    The analysis prompts ask for "positive/negative/neutral in the short term,
    and ... in the medium to long term"; the first label found is the short
    horizon and the second the longer one. A single label covers both.
    """
    found = [m.lower() for m in _LABEL.findall(text)]
    if not found:
        return None
    return found[0], found[1] if len(found) > 1 else found[0]


def relevance_from_labels(short: str, mid_long: str) -> str:
    directional = (short != "neutral") + (mid_long != "neutral")
    return RELEVANCE[2 - directional]


@dataclass(frozen=True)
class FilteredSignal:
    source_kind: str
    item_ids: tuple[str, ...]
    key_points: str
    reason: str
    relation_type: str | None = None


@dataclass(frozen=True)
class DirectionResult:
    direction: str  # buy | sell | hold
    summary_reason: str
    strategic_intent: str
    cited: dict[str, list[int]] = field(default_factory=lambda: {k: [] for k in MEMORY_LAYERS})
    reflection_analysis: str | None = None
    dropped_citations: tuple[int, ...] = ()


@dataclass(frozen=True)
class QuantityResult:
    quantity: int
    summary_reason: str
    cited: dict[str, list[int]] = field(default_factory=lambda: {k: [] for k in MEMORY_LAYERS})
    violation: str | None = None
    provider_calls: int = 0


@dataclass(frozen=True)
class ReflectionResult:
    text: str
    promote_ids: tuple[int, ...]
    reward_sign: int
    memory_id: int | None = None
