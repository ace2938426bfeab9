"""
Language-model providers.

``RemoteProvider`` talks to a chat-completion style HTTP endpoint.
``StubProvider`` is a deterministic rule-based stand-in that reads the same
prompts and answers with schema-valid JSON, so whole backtests can run
offline and reproducibly.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import httpx

from ..errors import ConfigError, ProviderError

logger = logging.getLogger(__name__)


class ProviderTimeout(ProviderError):
    pass


class ProviderHTTPError(ProviderError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ProviderRateLimited(ProviderHTTPError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message, 429)
        self.retry_after = retry_after


class Provider(Protocol):
    def complete(self, prompt: str, **decode_params: Any) -> str: ...


@dataclass
class ProviderConfig:
    mode: str = "stub"  # "stub" | "remote"
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.7
    timeout: float = 60.0
    max_retries: int = 3
    requests_per_minute: float = 0.0  # 0 disables the cap
    api_key_env: str = "POSTRADE_LLM_API_KEY"
    endpoint_env: str = "POSTRADE_LLM_ENDPOINT"
    response_path: str = "choices.0.message.content"
    backoff_base: float = 1.0
    backoff_max: float = 30.0
    seed: int = 0
    hold_band: float = 0.1

    def validate(self) -> None:
        if self.mode not in ("stub", "remote"):
            raise ConfigError(f"provider mode must be 'stub' or 'remote', got {self.mode!r}")
        if self.mode == "remote" and not (self.endpoint or os.environ.get(self.endpoint_env)):
            raise ConfigError(f"remote provider needs an endpoint (config or ${self.endpoint_env})")


def make_provider(config: ProviderConfig, client: httpx.Client | None = None) -> Provider:
    config.validate()
    if config.mode == "stub":
        return StubProvider(seed=config.seed, hold_band=config.hold_band)
    return RemoteProvider(config, client=client)


# ---------------------------------------------------------------------------
# remote


class RateLimiter:
    """Process-wide minimum spacing between requests."""

    def __init__(self, requests_per_minute: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 60.0 / requests_per_minute if requests_per_minute > 0 else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            slot = max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            self._sleep(slot - now)


def _dig(payload: Any, path: str) -> Any:
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node[part]
    return node


class RemoteProvider:
    def __init__(self, config: ProviderConfig, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.endpoint = config.endpoint or os.environ.get(config.endpoint_env, "")
        self.client = client or httpx.Client(timeout=config.timeout)
        self.limiter = RateLimiter(config.requests_per_minute, sleep=sleep)
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.config.api_key_env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _once(self, prompt: str, decode_params: dict) -> str:
        body = {
            "model": self.config.model,
            "temperature": decode_params.pop("temperature", self.config.temperature),
            "messages": [{"role": "user", "content": prompt}],
            **decode_params,
        }
        self.limiter.acquire()
        try:
            resp = self.client.post(self.endpoint, json=body, headers=self._headers(), timeout=self.config.timeout)
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(f"request timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise ProviderHTTPError(f"transport error: {exc}") from exc
        if resp.status_code == 429:
            header = resp.headers.get("Retry-After")
            try:
                retry_after = float(header) if header is not None else None
            except ValueError:
                retry_after = None
            raise ProviderRateLimited("rate limited by provider", retry_after)
        if resp.status_code >= 400:
            raise ProviderHTTPError(f"HTTP {resp.status_code}: {resp.text[:200]}", resp.status_code)
        try:
            text = _dig(resp.json(), self.config.response_path)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderHTTPError(f"unexpected response shape: {exc!r}", resp.status_code) from None
        if not isinstance(text, str):
            raise ProviderHTTPError("response content is not text", resp.status_code)
        return text

    def complete(self, prompt: str, **decode_params: Any) -> str:
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            try:
                return self._once(prompt, dict(decode_params))
            except (ProviderTimeout, ProviderRateLimited, ProviderHTTPError) as exc:
                retryable = not isinstance(exc, ProviderHTTPError) or isinstance(exc, ProviderRateLimited) \
                    or exc.status is None or exc.status >= 500
                if not retryable or attempt == attempts - 1:
                    raise
                delay = min(self.config.backoff_max, self.config.backoff_base * 2**attempt)
                if isinstance(exc, ProviderRateLimited) and exc.retry_after is not None:
                    delay = max(delay, exc.retry_after)
                logger.warning("provider call failed (%s); retry %d/%d in %.1fs",
                               exc, attempt + 1, attempts - 1, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# stub

_Z = re.compile(r"z=([+-]?\d+(?:\.\d+)?)")
_MAXCVAR = re.compile(r"(?:maximum order quantity|range 1 to) (\d+)")
_CITE = re.compile(r"\[(short|mid|long|reflection):(\d+)\]")
_DECISION = re.compile(r"Decision taken: (buy|sell|hold)")
_REWARD = re.compile(r"Your decision return is ([+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?|nan)")
_SYMBOL = re.compile(r"target company(?: is)?: ?(\S+)", re.IGNORECASE)
_IRRELEVANT = ("gossip", "celebrity", "entertainment", "natural disaster", "earthquake", "hurricane",
               "local event", "sports", "weather")
_INDEX_KEYS = {"short": "short_memory_index", "mid": "middle_memory_index",
               "long": "long_memory_index", "reflection": "reflection_memory_index"}


def momentum_from_prompt(prompt: str) -> float:
    """Mean of the momentum z-scores embedded in a decision prompt (0 if none)."""
    section = prompt.split("Momentum summary:", 1)
    if len(section) < 2:
        return 0.0
    zs = [float(z) for z in _Z.findall(section[1].split("\n", 1)[0])]
    return sum(zs) / len(zs) if zs else 0.0


@dataclass
class StubProvider:
    """Deterministic rule-based provider.

    The response kind is recognized from the JSON fields the prompt asks for.
    Decisions follow the sign of the momentum z-score embedded in the prompt:
    buy above ``hold_band``, sell below ``-hold_band``, hold otherwise. Order
    size is ``clamp(round(maxcvar * |z|), 1, maxcvar)``.
    """

    seed: int = 0
    hold_band: float = 0.1
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)
    calls: int = field(default=0, compare=False)

    def _variant(self, prompt: str, n: int) -> int:
        digest = hashlib.sha256(f"{self.seed}\x00{prompt}".encode()).digest()
        return digest[0] % n

    def _citations(self, prompt: str) -> dict[str, list[int]]:
        first: dict[str, list[int]] = {k: [] for k in _INDEX_KEYS.values()}
        for layer, mid in _CITE.findall(prompt):
            key = _INDEX_KEYS[layer]
            if not first[key]:
                first[key].append(int(mid))
        return first

    def complete(self, prompt: str, **decode_params: Any) -> str:
        with self._lock:
            self.calls += 1
        train = '"reflection_analysis"' in prompt
        if '"order_size"' in prompt:
            return json.dumps(self._quantity(prompt, train))
        if '"investment_decision"' in prompt:
            return json.dumps(self._direction(prompt, train))
        if prompt.startswith("Decision review for"):
            return json.dumps(self._reflect(prompt))
        symbol_match = _SYMBOL.search(prompt)
        symbol = symbol_match.group(1).rstrip(".,'\"") if symbol_match else ""
        body = prompt.split("News article:", 1)[-1] if "News article:" in prompt else prompt
        if '"relation_type"' in prompt:
            return json.dumps(self._relation(body, symbol))
        if '"relevance"' in prompt:
            scratch = _quoted_scratch(prompt)
            level = "high" if symbol and symbol.lower() in scratch.lower() else "medium"
            return json.dumps({"insight": f"No significant directional effect on {symbol} is evident.",
                               "relevance": level})
        if '"insight"' in prompt:
            out = {
                "insight": f"This report has a neutral impact on {symbol} in the short term, "
                           f"and a neutral impact in the medium to long term.",
                "reason": "Rule-based stub: no directional evidence extracted from the text.",
            }
            if '"key_points"' in prompt:
                out = {"key_points": _quoted_scratch(prompt)[:400], **out}
            return json.dumps(out)
        if '"key_points"' in prompt:
            return json.dumps({"key_points": _quoted_scratch(prompt)[:600],
                               "reason": "Rule-based stub: all items retained in input order."})
        raise ProviderError("stub provider does not recognize this prompt")

    def _relation(self, body: str, symbol: str) -> dict:
        text = body.lower()
        if any(word in text for word in _IRRELEVANT):
            return {"relation_type": "none", "reason": "Unrelated topic with no plausible impact on the company."}
        if symbol and re.search(rf"\b{re.escape(symbol.lower())}\b", text):
            return {"relation_type": "direct", "reason": "The article names the company explicitly."}
        return {"relation_type": "indirect", "reason": "Macro or market-wide topic that can affect the company."}

    def _direction(self, prompt: str, train: bool) -> dict:
        z = momentum_from_prompt(prompt)
        if z > self.hold_band:
            decision = "buy"
        elif z < -self.hold_band:
            decision = "sell"
        else:
            decision = "hold"
        horizon = "long-term accumulation" if abs(z) >= 1.0 else "short-term profit"
        phrasing = ("Momentum", "Recent price momentum")[self._variant(prompt, 2)]
        out: dict[str, Any] = {
            "investment_decision": decision,
            "summary_reason": f"{phrasing} z-score {z:+.4f}; strategy: {horizon}." if decision != "hold"
            else f"{phrasing} z-score {z:+.4f} is inside the hold band; staying put.",
        }
        out.update(self._citations(prompt) if decision != "hold" else {k: [] for k in _INDEX_KEYS.values()})
        if train:
            out["reflection_analysis"] = "Stub reflection on the previous decision."
        return out

    def _quantity(self, prompt: str, train: bool) -> dict:
        m = _MAXCVAR.search(prompt)
        cap = int(m.group(1)) if m else 1
        z = momentum_from_prompt(prompt)
        size = min(max(int(round(cap * abs(z))), 1), max(cap, 1))
        out: dict[str, Any] = {"order_size": size,
                               "summary_reason": f"Size scaled by |momentum z| {abs(z):.4f} against cap {cap}."}
        out.update(self._citations(prompt))
        if train:
            out["reflection_analysis"] = "Stub reflection on sizing."
        return out

    def _reflect(self, prompt: str) -> dict:
        d = _DECISION.search(prompt)
        r = _REWARD.search(prompt)
        decision = d.group(1) if d else "hold"
        try:
            value = float(r.group(1)) if r else 0.0
        except ValueError:
            value = 0.0
        sign = "positive" if value > 0 else "negative" if value < 0 else "zero"
        if math.isnan(value):
            sign = "zero"
        return {"reflection_analysis": f"The {decision} decision earned a {sign} reward."}


def _quoted_scratch(prompt: str) -> str:
    m = re.search(r'"(.*?)"\n', prompt, re.DOTALL)
    return m.group(1) if m else ""
