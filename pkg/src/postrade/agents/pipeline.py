"""
Agent operations: signal filtering, analysis, direction and quantity
decisions, and post-trade reflection.

Every provider round trip goes through :func:`call`, which renders the
template, notifies the optional prompt hook, and parses the reply against the
template's schema.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from typing import Any, Callable, Sequence

from ..env import MEMORY_LAYERS
from ..errors import ProviderError
from ..market_data import FilingDoc, MarketDay, NewsItem
from ..memory import MemoryStore, WorkingSet
from ..metrics import RewardRecord
from .parsing import SchemaViolation, parse_response
from .provider import Provider
from .prompts import PromptRegistry
from .schemas import (
    INDEX_FIELDS,
    AnalysisInsight,
    DirectionResult,
    FilteredSignal,
    QuantityResult,
    ReflectionResult,
    labels_from_text,
    relevance_from_labels,
)

logger = logging.getLogger(__name__)

PromptHook = Callable[[str, str], None]

FILTER_TEMPLATE = {"10-K": "filter-10K", "10-Q": "filter-10Q", "macro-news": "filter-macro",
                   "company-news": "filter-company-news"}
ANALYZE_TEMPLATE = {"10-K": "analyze-10K", "10-Q": "analyze-10Q", "macro-news": "analyze-macro",
                    "company-news": "analyze-company-news"}


@dataclass
class AgentContext:
    """What every agent call needs: provider, templates, symbol, and hooks."""

    provider: Provider
    registry: PromptRegistry
    symbol: str
    batch_size: int = 4
    workers: int = 1
    quantity_fallback: str = "min-lot"  # or "clamp"
    on_prompt: PromptHook | None = None
    temperature: float | None = None


def call(ctx: AgentContext, template_id: str, bindings: dict[str, Any], params: dict[str, Any] | None = None) -> dict:
    prompt = ctx.registry.render(template_id, bindings)
    if ctx.on_prompt is not None:
        ctx.on_prompt(template_id, prompt)
    decode = {} if ctx.temperature is None else {"temperature": ctx.temperature}
    raw = ctx.provider.complete(prompt, **decode)
    return parse_response(raw, ctx.registry.get(template_id).response_schema, params)


def _news_text(item: NewsItem) -> str:
    return f"{item.headline}\n{item.summary}".strip()


def filter_signal(ctx: AgentContext, items: Sequence[NewsItem | FilingDoc], template_id: str | None = None) -> list[FilteredSignal]:
    """Screen one source's items; macro items judged unrelated are dropped.

    Filings are screened one document per call, macro news one article per
    call (the classification is per article), and company news in batches
    of ``ctx.batch_size``.
    """
    if not items:
        return []
    kinds = {item.source_kind for item in items}
    if len(kinds) != 1:
        raise ValueError(f"filter_signal needs a single source kind, got {sorted(kinds)}")
    kind = kinds.pop()
    template_id = template_id or FILTER_TEMPLATE[kind]
    out: list[FilteredSignal] = []

    def guarded(ids: tuple[str, ...], bindings: dict) -> dict:
        try:
            return call(ctx, template_id, bindings)
        except ProviderError as exc:
            exc.args = (f"{exc} [items: {', '.join(ids)}]",)
            exc.item_ids = ids
            raise

    if kind in ("10-K", "10-Q"):
        for doc in items:
            ident = (f"{doc.symbol}:{doc.kind}:{doc.date.isoformat()}",)
            res = guarded(ident, {"symbol": ctx.symbol, "filtered_key_points": doc.body})
            out.append(FilteredSignal(kind, ident, res["key_points"], res["reason"]))
    elif kind == "macro-news":
        for item in items:
            res = guarded((item.id,), {"symbol": ctx.symbol, "agent_scratch": _news_text(item)})
            if res["relation_type"] == "none":
                logger.debug("macro item %s dropped as unrelated", item.id)
                continue
            out.append(FilteredSignal(kind, (item.id,), _news_text(item), res["reason"], res["relation_type"]))
    else:
        size = max(1, ctx.batch_size)
        for start in range(0, len(items), size):
            batch = items[start : start + size]
            ids = tuple(i.id for i in batch)
            text = "\n".join(f"{n}. {_news_text(i)}" for n, i in enumerate(batch, start=1))
            res = guarded(ids, {"symbol": ctx.symbol, "news_batch": text})
            out.append(FilteredSignal(kind, ids, res["key_points"], res["reason"]))
    return out


def analyze(ctx: AgentContext, signal: FilteredSignal, template_id: str | None = None) -> AnalysisInsight:
    template_id = template_id or ANALYZE_TEMPLATE[signal.source_kind]
    res = call(ctx, template_id, {"symbol": ctx.symbol, "agent_scratch": signal.key_points})
    insight = res["insight"]
    if "short_term" in res and "mid_long_term" in res:
        labels = (res["short_term"], res["mid_long_term"])
    else:
        labels = labels_from_text(insight) or ("neutral", "neutral")
    reason = res.get("reason") or signal.reason
    if not reason.strip():
        raise SchemaViolation("reason", "minLength=1", "analysis reason is empty")
    relevance = res.get("relevance") or relevance_from_labels(*labels)
    sentiment = None
    if isinstance(res.get("sentiment"), dict):
        s = res["sentiment"]
        sentiment = (float(s["positive"]), float(s["neutral"]), float(s["negative"]))
    try:
        return AnalysisInsight(
            source_kind=signal.source_kind,
            insight=insight,
            short_term_label=labels[0],
            mid_long_label=labels[1],
            relevance=relevance,
            reason=reason,
            relation_type=signal.relation_type,
            sentiment=sentiment,
            item_ids=signal.item_ids,
        )
    except ValueError as exc:
        raise SchemaViolation("insight", "invariant", str(exc)) from None


def analyze_day(ctx: AgentContext, day: MarketDay) -> list[AnalysisInsight]:
    """Filter and analyze one day's feeds in the fixed order filings, macro, company.

    Analysis calls may fan out over ``ctx.workers`` threads; results always
    come back in submission order so memory ids stay reproducible.
    """
    signals: list[FilteredSignal] = []
    for kind in ("10-K", "10-Q"):
        docs = [f for f in day.filings if f.kind == kind]
        signals.extend(filter_signal(ctx, docs))
    signals.extend(filter_signal(ctx, list(day.macro_news)))
    signals.extend(filter_signal(ctx, list(day.company_news)))
    if ctx.workers > 1 and len(signals) > 1:
        with ThreadPoolExecutor(max_workers=ctx.workers) as pool:
            return list(pool.map(lambda s: analyze(ctx, s), signals))
    return [analyze(ctx, s) for s in signals]


def _citations(res: dict, store: MemoryStore | None) -> tuple[dict[str, list[int]], tuple[int, ...]]:
    cited: dict[str, list[int]] = {}
    dropped = []
    for layer in MEMORY_LAYERS:
        keep = []
        for mid in res.get(INDEX_FIELDS[layer], []) or []:
            if store is not None and store.resolve(mid) is None:
                dropped.append(mid)
            else:
                keep.append(int(mid))
        cited[layer] = keep
    if dropped:
        logger.warning("dropping unresolvable memory citations %s", dropped)
    return cited, tuple(dropped)


def _intent(res: dict) -> str:
    if res.get("strategic_intent"):
        return res["strategic_intent"]
    text = res.get("summary_reason", "").lower()
    return "long-term-position" if ("long-term" in text or "accumulat" in text) else "short-term-tactical"


def decide_direction(ctx: AgentContext, investment_info: str, mode: str, store: MemoryStore | None = None) -> DirectionResult:
    res = call(ctx, f"decide-direction-{mode}", {"investment_info": investment_info})
    cited, dropped = _citations(res, store)
    return DirectionResult(
        direction=res["investment_decision"],
        summary_reason=res["summary_reason"],
        strategic_intent=_intent(res),
        cited=cited,
        reflection_analysis=res.get("reflection_analysis"),
        dropped_citations=dropped,
    )


def decide_quantity(
    ctx: AgentContext,
    direction: str,
    investment_info: str,
    maxcvar: int,
    mode: str,
    store: MemoryStore | None = None,
) -> QuantityResult:
    """Order size in ``[1, maxcvar]`` for a buy or sell; hold short-circuits to 0.

    A reply outside the cap is never executed as-is: it falls back to one
    share (or to the cap when ``quantity_fallback == "clamp"``) and the
    violation is recorded.
    """
    if direction == "hold":
        return QuantityResult(0, "hold: no order", provider_calls=0)
    if maxcvar < 1:
        logger.warning("order cap is %d; %s order suppressed", maxcvar, direction)
        return QuantityResult(0, "order cap below one share", provider_calls=0)
    try:
        res = call(ctx, f"decide-quantity-{mode}", {"investment_info": investment_info, "maxcvar": maxcvar},
                   params={"maxcvar": maxcvar})
    except SchemaViolation as exc:
        fallback = 1 if ctx.quantity_fallback == "min-lot" else maxcvar
        logger.warning("quantity response rejected (%s); falling back to %d", exc, fallback)
        return QuantityResult(fallback, "fallback after schema violation", violation=str(exc), provider_calls=1)
    quantity = int(res["order_size"])
    cited, _ = _citations(res, store)
    return QuantityResult(min(max(quantity, 1), maxcvar), res["summary_reason"], cited, provider_calls=1)


def format_cited(store: MemoryStore, cited: dict[str, list[int]]) -> str:
    lines = []
    for layer in MEMORY_LAYERS:
        for mid in cited.get(layer, []):
            rec = store.resolve(mid)
            text = " ".join(rec.content.split()) if rec else "(unknown)"
            lines.append(f"- [{layer}:{mid}] {text}")
    return "\n".join(lines) or "- (none)"


def reflect(
    ctx: AgentContext,
    store: MemoryStore,
    *,
    on: date,
    direction: str,
    quantity: int,
    cited: dict[str, list[int]],
    reward_record: RewardRecord,
) -> ReflectionResult | None:
    """Write a reflection memory and credit the decision's citations.

    Citations are promoted with the sign of the reward. A provider failure
    skips the reflection (with a warning) rather than aborting the run.
    """
    value = reward_record.reward
    sign = (value > 0) - (value < 0)
    promote_ids = tuple(sorted({mid for ids in cited.values() for mid in ids}))
    try:
        res = call(
            ctx,
            "reflect",
            {
                "symbol": ctx.symbol,
                "cur_date": on.isoformat(),
                "decision": direction,
                "quantity": quantity,
                "reward": f"{value:+.6f}",
                "cited_memories": format_cited(store, cited),
            },
        )
    except ProviderError as exc:
        logger.warning("reflection skipped on %s: %s", on, exc)
        return None
    record = store.add_reflection(res["reflection_analysis"], on)
    live = [mid for mid in promote_ids if store.resolve(mid) is not None]
    store.promote(live, sign, on)
    return ReflectionResult(res["reflection_analysis"], tuple(live), sign, record.id)
