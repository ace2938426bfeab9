import json
import re
from datetime import date

import httpx
import pytest

from postrade.agents.context import FUTURE_BINDINGS, build_investment_info, momentum_summary
from postrade.agents.parsing import ParseError, SchemaViolation, parse_response, repair
from postrade.agents.pipeline import (
    AgentContext,
    analyze,
    analyze_day,
    decide_direction,
    decide_quantity,
    filter_signal,
    reflect,
)
from postrade.agents.prompts import PromptRegistry, PromptTemplate, UnboundPlaceholder, fill, render
from postrade.agents.provider import (
    ProviderConfig,
    ProviderHTTPError,
    ProviderRateLimited,
    RateLimiter,
    RemoteProvider,
    StubProvider,
    make_provider,
)
from postrade.agents.schemas import FilteredSignal, relevance_from_labels
from postrade.errors import ConfigError, ProviderError
from postrade.market_data import FilingDoc, MarketDay, NewsItem, PriceBar
from postrade.memory import IMPORTANCE_BY_RELEVANCE, MemoryStore
from postrade.metrics import RewardRecord, TrendScore

D = date(2025, 3, 3)
REG = PromptRegistry.load_default()
MARKER = re.compile(r"\{[A-Za-z_][A-Za-z0-9_]*\}")


class Scripted:
    """Provider that replays canned replies and records prompts."""

    def __init__(self, *replies):
        self.replies = list(replies)
        self.prompts = []

    @property
    def calls(self):
        return len(self.prompts)

    def complete(self, prompt, **_):
        self.prompts.append(prompt)
        reply = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        if isinstance(reply, Exception):
            raise reply
        return reply if isinstance(reply, str) else json.dumps(reply)


def ctx(provider=None, **kw):
    return AgentContext(provider or StubProvider(), REG, "ACME", **kw)


def info(closes, mode="test", role="direction", ws=None, **kw):
    return build_investment_info(
        REG, mode=mode, role=role, symbol="ACME", cur_date=D, working_set=ws or MemoryStore().retrieve(set(), D),
        momentum=momentum_summary(closes, len(closes) - 1), position=0, close=closes[-1], **kw
    )


RISING = [100 * 1.01**i for i in range(25)]
FLAT = [100.0] * 25


# --- templates -----------------------------------------------------------


def test_quantity_prompt_names_the_cap():
    text = render("decide-quantity-test", {"investment_info": "x", "maxcvar": 200})
    assert "maximum order quantity 200" in text


def test_placeholder_free_body_unchanged():
    body = 'Reply with {"a": 1} and nothing else.'
    assert fill(body, {}, ()) == body
    assert fill("no markers here", {}) == "no markers here"


def test_missing_symbol_binding_names_it():
    with pytest.raises(UnboundPlaceholder, match="symbol"):
        render("filter-10K", {"filtered_key_points": "text"})


def test_every_template_renders_without_residual_markers():
    for tid, tpl in REG.templates.items():
        text = REG.render(tid, {name: "v" for name in tpl.placeholders})
        assert not MARKER.search(text), tid


def test_values_are_not_rescanned():
    tpl = PromptTemplate("t", "{a} {b}", ("a", "b"))
    assert fill(tpl.body, {"a": "{b}", "b": "x"}, tpl.placeholders) == "{b} x"


def test_unknown_template():
    with pytest.raises(ConfigError):
        REG.get("nope")


# --- parsing -------------------------------------------------------------


def test_parse_clean_json():
    schema = REG.get("decide-direction-test").response_schema
    rec = parse_response('{"investment_decision": "hold", "summary_reason": "flat"}', schema)
    assert rec["investment_decision"] == "hold"


def test_parse_repairs_code_fence():
    raw = 'Sure!\n```json\n{"reflection_analysis": "ok {fine}"}\n```\nthanks'
    assert repair(raw) == '{"reflection_analysis": "ok {fine}"}'
    assert parse_response(raw, REG.get("reflect").response_schema) == {"reflection_analysis": "ok {fine}"}


def test_parse_gives_up_after_one_repair():
    with pytest.raises(ParseError):
        parse_response("no json at all")
    with pytest.raises(ParseError):
        parse_response("```{broken: }```")


def test_order_size_above_cap_is_schema_violation():
    schema = REG.get("decide-quantity-test").response_schema
    with pytest.raises(SchemaViolation) as info_:
        parse_response('{"order_size": 205, "summary_reason": "x"}', schema, {"maxcvar": 200})
    assert info_.value.field == "order_size"


def test_enum_violation_names_field():
    schema = REG.get("decide-direction-test").response_schema
    with pytest.raises(SchemaViolation) as info_:
        parse_response('{"investment_decision": "short", "summary_reason": "x"}', schema)
    assert info_.value.field == "investment_decision"


# --- providers -----------------------------------------------------------


def test_stub_buys_on_rising_momentum():
    prompt = render("decide-direction-test", {"investment_info": info(RISING)})
    out = json.loads(StubProvider().complete(prompt))
    assert out["investment_decision"] == "buy"


def test_stub_holds_on_flat_momentum():
    prompt = render("decide-direction-test", {"investment_info": info(FLAT)})
    out = json.loads(StubProvider().complete(prompt))
    assert out["investment_decision"] == "hold"
    assert all(out[k] == [] for k in ("short_memory_index", "middle_memory_index", "long_memory_index",
                                      "reflection_memory_index"))


def test_stub_unrecognized_prompt():
    with pytest.raises(ProviderError):
        StubProvider().complete("hello")


def test_stub_config_needs_no_network():
    assert isinstance(make_provider(ProviderConfig()), StubProvider)
    with pytest.raises(ConfigError):
        ProviderConfig(mode="remote", endpoint_env="POSTRADE_TEST_UNSET_ENDPOINT").validate()


def _remote(handler, sleeps=None, **cfg):
    config = ProviderConfig(mode="remote", endpoint="https://llm.test/v1/chat/completions", model="m",
                            backoff_base=0.5, **cfg)
    return RemoteProvider(config, client=httpx.Client(transport=httpx.MockTransport(handler)),
                          sleep=(sleeps.append if sleeps is not None else lambda s: None))


def _chat(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def test_remote_passes_text_through():
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        return _chat("fixed reply text")

    assert _remote(handler).complete("hi") == "fixed reply text"
    assert bodies[0]["messages"] == [{"role": "user", "content": "hi"}]
    assert bodies[0]["temperature"] == 0.7 and bodies[0]["model"] == "m"


def test_remote_retries_with_backoff_and_retry_after():
    replies = iter([httpx.Response(503), httpx.Response(429, headers={"Retry-After": "4"}), _chat("ok")])
    sleeps = []
    assert _remote(lambda r: next(replies), sleeps).complete("hi") == "ok"
    assert sleeps == [0.5, 4.0]


def test_remote_gives_up():
    sleeps = []
    with pytest.raises(ProviderRateLimited):
        _remote(lambda r: httpx.Response(429), sleeps, max_retries=2).complete("hi")
    assert sleeps == [0.5, 1.0]


def test_remote_client_errors_are_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad request")

    with pytest.raises(ProviderHTTPError) as info_:
        _remote(handler).complete("hi")
    assert info_.value.status == 400 and len(calls) == 1


def test_rate_limiter_spaces_requests():
    clock = [0.0]
    sleeps = []
    lim = RateLimiter(60, clock=lambda: clock[0], sleep=sleeps.append)
    for _ in range(3):
        lim.acquire()
    assert sleeps == [1.0, 2.0]


# --- filtering and analysis -------------------------------------------------


def _news(i, headline, scope="company"):
    return NewsItem(f"n{i}", D, headline, "", scope, "ACME" if scope == "company" else None)


def test_gossip_macro_item_dropped():
    items = [_news(1, "Celebrity entertainment gossip", "macro"), _news(2, "Fed raises rates", "macro")]
    kept = filter_signal(ctx(), items)
    assert [s.item_ids for s in kept] == [("n2",)]
    assert kept[0].relation_type == "indirect"


def test_empty_input_no_calls():
    stub = StubProvider()
    assert filter_signal(ctx(stub), []) == []
    assert stub.calls == 0


def test_batches_of_four():
    stub = StubProvider()
    out = filter_signal(ctx(stub, batch_size=4), [_news(i, f"ACME item {i}") for i in range(10)])
    assert stub.calls == 3
    assert [len(s.item_ids) for s in out] == [4, 4, 2]


def test_filter_error_names_items():
    bad = Scripted("not json")
    with pytest.raises(ProviderError, match="n0") as info_:
        filter_signal(ctx(bad), [_news(0, "x")])
    assert info_.value.item_ids == ("n0",)


def test_stub_filing_analysis_has_both_labels():
    doc = FilingDoc("ACME", D, "10-K", "ACME annual report body.")
    (sig,) = filter_signal(ctx(), [doc])
    ins = analyze(ctx(), sig)
    assert (ins.short_term_label, ins.mid_long_label) == ("neutral", "neutral")
    assert ins.reason and ins.relevance == relevance_from_labels("neutral", "neutral")


def test_high_relevance_maps_to_importance():
    reply = {"insight": "Clearly positive in the short term, and positive in the medium to long term.",
             "reason": "strong quarter", "relevance": "high"}
    ins = analyze(ctx(Scripted(reply)), FilteredSignal("company-news", ("n1",), "pts", "r"))
    assert IMPORTANCE_BY_RELEVANCE[ins.relevance] == 0.9
    assert MemoryStore().allocate(ins, D).importance == 0.9


def test_missing_reason_is_schema_error():
    with pytest.raises(SchemaViolation) as info_:
        analyze(ctx(Scripted({"insight": "neutral"})), FilteredSignal("10-K", ("f",), "pts", "r"))
    assert info_.value.field == "reason"


def test_analyze_day_order_and_threads():
    bar = PriceBar(D, 10, 10, 10, 10, 1)
    day = MarketDay(D, bar, company_news=(_news(1, "ACME a"),), macro_news=(_news(2, "Fed", "macro"),),
                    filings=(FilingDoc("ACME", D, "10-Q", "q"), FilingDoc("ACME", D, "10-K", "k")))
    serial = analyze_day(ctx(), day)
    parallel = analyze_day(ctx(workers=4), day)
    assert [i.source_kind for i in serial] == ["10-K", "10-Q", "macro-news", "company-news"]
    assert serial == parallel


# --- decisions ----------------------------------------------------------


def test_direction_rising_and_flat():
    assert decide_direction(ctx(), info(RISING), "test").direction == "buy"
    flat = decide_direction(ctx(), info(FLAT), "test")
    assert flat.direction == "hold" and all(v == [] for v in flat.cited.values())


def test_train_prompt_binds_previous_reward_and_future_deltas():
    trend = TrendScore(1.5, -2.0, 4.25)
    text = info(RISING, mode="train", trend=trend, prev_reward=-0.125)
    assert "Your decision return is -0.125000" in text
    assert "+1.5000" in text and "-2.0000" in text and "+4.2500" in text
    with pytest.raises(ValueError):
        info(RISING, mode="train")


def test_test_prompt_has_no_future_bindings():
    for role in ("direction", "quantity"):
        text = info(RISING, role=role)
        for name in FUTURE_BINDINGS:
            assert name not in text


def test_strong_signal_quantity_near_cap():
    steep = [100 * 1.05**i for i in range(25)]
    q = decide_quantity(ctx(), "buy", info(steep, role="quantity"), 200, "test")
    assert 150 <= q.quantity <= 200 and q.violation is None


def test_hold_makes_no_quantity_call():
    stub = StubProvider()
    q = decide_quantity(ctx(stub), "hold", "ignored", 200, "test")
    assert q.quantity == 0 and q.provider_calls == 0 and stub.calls == 0


def test_over_cap_reply_falls_back_to_one(caplog):
    q = decide_quantity(ctx(Scripted({"order_size": 250, "summary_reason": "all in"})), "buy", "info", 200, "test")
    assert q.quantity == 1 and q.violation and "falling back" in caplog.text
    q = decide_quantity(ctx(Scripted({"order_size": 250, "summary_reason": "x"}), quantity_fallback="clamp"),
                        "buy", "info", 200, "test")
    assert q.quantity == 200


def test_zero_cap_suppresses_order():
    stub = StubProvider()
    assert decide_quantity(ctx(stub), "buy", "info", 0, "test").quantity == 0
    assert stub.calls == 0


def test_unresolvable_citations_dropped():
    reply = {"investment_decision": "buy", "summary_reason": "x", "short_memory_index": [0, 7]}
    store = MemoryStore()
    store.add("known", "short", 0.5, D, "company-news")
    res = decide_direction(ctx(Scripted(reply)), "info", "test", store)
    assert res.cited["short"] == [0] and res.dropped_citations == (7,)


# --- reflection -----------------------------------------------------------


def _store_with(n):
    store = MemoryStore()
    for i in range(n):
        store.add(f"m{i}", "short", 0.5, D, "company-news")
    return store


def test_positive_reward_promotes_citations():
    store = _store_with(2)
    rr = RewardRecord(0, 2.5, 3, 0)
    res = reflect(ctx(), store, on=D, direction="buy", quantity=3, cited={"short": [1]}, reward_record=rr)
    assert res.promote_ids == (1,) and res.reward_sign == 1
    assert store.records[1].validity_count == 1 and store.records[0].validity_count == 0
    assert store.records[res.memory_id].layer == "reflection"


def test_negative_reward_stores_text_without_promotion():
    store = _store_with(1)
    res = reflect(ctx(), store, on=D, direction="sell", quantity=1, cited={"short": [0]},
                  reward_record=RewardRecord(0, -1.0, 0, 1))
    assert store.records[0].validity_count == 0
    assert store.records[res.memory_id].content == "The sell decision earned a negative reward."


def test_stub_reflection_text_is_deterministic():
    texts = set()
    for _ in range(2):
        store = _store_with(0)
        res = reflect(ctx(StubProvider(seed=9)), store, on=D, direction="buy", quantity=1, cited={},
                      reward_record=RewardRecord(0, 0.5, 1, 0))
        texts.add(res.text)
    assert texts == {"The buy decision earned a positive reward."}


def test_reflection_failure_is_skipped(caplog):
    store = _store_with(1)
    res = reflect(ctx(Scripted("garbage")), store, on=D, direction="buy", quantity=1, cited={"short": [0]},
                  reward_record=RewardRecord(0, 1.0, 1, 0))
    assert res is None and "reflection skipped" in caplog.text
    assert len(store) == 1
