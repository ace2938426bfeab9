"""
Market data ingestion: prices, news, and filings into a daily replay stream.

Replay always reads canonical files (CSV for prices, JSONL for text feeds).
The optional online mode only ever writes those files.
"""
from __future__ import annotations

import bisect
import csv
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Iterable, NamedTuple

import httpx

from .errors import DataError, FetchError, RateLimitError

logger = logging.getLogger(__name__)

PRICE_COLUMNS = ("date", "open", "high", "low", "close", "volume")
NEWS_FIELDS = ("id", "date", "headline", "summary", "scope", "symbol")
FILING_FIELDS = ("symbol", "date", "kind", "body")
FILING_KINDS = {"10-K": "10-K", "10-Q": "10-Q", "annual-10K": "10-K", "quarterly-10Q": "10-Q"}


@dataclass(frozen=True)
class PriceBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: float

    def validate(self) -> None:
        for name in ("open", "high", "low", "close"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise DataError(f"{self.date}: {name} must be positive, got {value}")
        if not math.isfinite(self.volume) or self.volume < 0:
            raise DataError(f"{self.date}: volume must be >= 0, got {self.volume}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise DataError(f"{self.date}: high/low do not bracket open/close")


@dataclass(frozen=True)
class NewsItem:
    id: str
    date: date
    headline: str
    summary: str
    scope: str  # "company" | "macro"
    symbol: str | None = None

    @property
    def source_kind(self) -> str:
        return "company-news" if self.scope == "company" else "macro-news"


@dataclass(frozen=True)
class FilingDoc:
    symbol: str
    date: date
    kind: str  # "10-K" | "10-Q"
    body: str

    @property
    def source_kind(self) -> str:
        return self.kind


@dataclass(frozen=True)
class MarketDay:
    date: date
    bar: PriceBar
    company_news: tuple[NewsItem, ...] = field(default_factory=tuple)
    macro_news: tuple[NewsItem, ...] = field(default_factory=tuple)
    filings: tuple[FilingDoc, ...] = field(default_factory=tuple)


class TextLoad(NamedTuple):
    records: list
    errors: list[str]


def _parse_date(value: Any) -> date:
    if isinstance(value, date):
        return value
    if not isinstance(value, str):
        raise ValueError(f"expected ISO date string, got {value!r}")
    return date.fromisoformat(value.strip()[:10])


def load_price_csv(path: str | os.PathLike) -> list[PriceBar]:
    """Load daily OHLCV bars from a CSV file.

    Dates must be strictly increasing in file order; the loader does not sort,
    since a shuffled file usually means a broken export.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"price file not found: {path}")
    bars: list[PriceBar] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip().lower() for h in (reader.fieldnames or [])]
        missing = [c for c in PRICE_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: header missing columns {missing}")
        reader.fieldnames = header
        for row_index, row in enumerate(reader, start=1):
            try:
                bar = PriceBar(
                    date=_parse_date(row["date"]),
                    open=float(row["open"]),
                    high=float(row["high"]),
                    low=float(row["low"]),
                    close=float(row["close"]),
                    volume=float(row["volume"]),
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: malformed row {row_index}: {exc}") from None
            try:
                bar.validate()
            except DataError as exc:
                raise DataError(f"{path}: row {row_index}: {exc}") from None
            if bars and bar.date <= bars[-1].date:
                raise DataError(
                    f"{path}: non-monotone dates at row {row_index} "
                    f"({bar.date} after {bars[-1].date})"
                )
            bars.append(bar)
    return bars


def _news_from_dict(obj: dict) -> NewsItem:
    for name in ("id", "date", "headline", "scope"):
        if obj.get(name) in (None, ""):
            raise ValueError(f"missing required field '{name}'")
    scope = obj["scope"]
    if scope not in ("company", "macro"):
        raise ValueError(f"scope must be 'company' or 'macro', got {scope!r}")
    symbol = obj.get("symbol") or None
    if scope == "company" and symbol is None:
        raise ValueError("company-scope news requires 'symbol'")
    headline = str(obj["headline"]).strip()
    if not headline:
        raise ValueError("headline is empty")
    return NewsItem(
        id=str(obj["id"]),
        date=_parse_date(obj["date"]),
        headline=headline,
        summary=str(obj.get("summary") or ""),
        scope=scope,
        symbol=symbol,
    )


def _filing_from_dict(obj: dict) -> FilingDoc:
    for name in FILING_FIELDS:
        if obj.get(name) in (None, ""):
            raise ValueError(f"missing required field '{name}'")
    kind = FILING_KINDS.get(obj["kind"])
    if kind is None:
        raise ValueError(f"unknown filing kind {obj['kind']!r}")
    return FilingDoc(symbol=str(obj["symbol"]), date=_parse_date(obj["date"]), kind=kind, body=str(obj["body"]))


def load_text_jsonl(path: str | os.PathLike, kind: str, strict: bool = True) -> TextLoad:
    """Load news (``kind="news"``) or filings (``kind="filing"``) from JSONL.

    In strict mode the first bad line raises. Otherwise bad lines are skipped
    and reported in ``errors``.
    """
    if kind not in ("news", "filing"):
        raise ValueError(f"kind must be 'news' or 'filing', got {kind!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"{kind} file not found: {path}")
    convert = _news_from_dict if kind == "news" else _filing_from_dict
    records, errors = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record is not a JSON object")
                records.append(convert(obj))
            except (ValueError, TypeError) as exc:
                message = f"{path}: line {lineno}: {exc}"
                if strict:
                    raise DataError(message) from None
                errors.append(message)
    if errors:
        logger.warning("%s: skipped %d invalid %s record(s)", path, len(errors), kind)
    return TextLoad(records, errors)


def build_replay(
    bars: list[PriceBar],
    news: Iterable[NewsItem] = (),
    filings: Iterable[FilingDoc] = (),
) -> list[MarketDay]:
    """Attach each news item and filing to the first trading day on or after its date.

    Items dated after the last bar are dropped with a warning.
    """
    news, filings = list(news), list(filings)
    for i, bar in enumerate(bars):
        bar.validate()
        if i and bar.date <= bars[i - 1].date:
            raise DataError(f"non-monotone dates at bar {i} ({bar.date})")
    dates = [b.date for b in bars]
    buckets: list[dict[str, list]] = [{"company": [], "macro": [], "filings": []} for _ in bars]
    dropped = 0

    def slot(d: date) -> int | None:
        i = bisect.bisect_left(dates, d)
        return i if i < len(dates) else None

    # stable order inside a day: by date, then id / kind
    for item in sorted(news, key=lambda n: (n.date, n.id)):
        i = slot(item.date)
        if i is None:
            dropped += 1
        else:
            buckets[i]["company" if item.scope == "company" else "macro"].append(item)
    for doc in sorted(filings, key=lambda f: (f.date, f.kind, f.symbol)):
        i = slot(doc.date)
        if i is None:
            dropped += 1
        else:
            buckets[i]["filings"].append(doc)

    days = [
        MarketDay(
            date=bar.date,
            bar=bar,
            company_news=tuple(b["company"]),
            macro_news=tuple(b["macro"]),
            filings=tuple(b["filings"]),
        )
        for bar, b in zip(bars, buckets)
    ]
    attached = sum(len(d.company_news) + len(d.macro_news) + len(d.filings) for d in days)
    assert attached + dropped == len(news) + len(filings)
    if dropped:
        logger.warning("dropped %d item(s) dated after the last trading day", dropped)
    return days


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, date):
        return obj.isoformat()
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def replay_to_json(days: list[MarketDay]) -> str:
    """Canonical serialized form of a replay (used for determinism checks)."""
    return json.dumps([_jsonable(asdict(d)) for d in days], sort_keys=True, separators=(",", ":"))


def slice_days(days: list[MarketDay], start: date | None, end: date | None) -> list[MarketDay]:
    return [d for d in days if (start is None or d.date >= start) and (end is None or d.date <= end)]


# ---------------------------------------------------------------------------
# online mode


@dataclass
class EndpointConfig:
    """Where and how to fetch one feed.

    ``kind`` is one of ``ohlcv``, ``company-news``, ``macro-news``, ``filings``.
    The base URL and API key are read from the named environment variables.
    """

    kind: str
    base_url_env: str = ""
    api_key_env: str = ""
    key_param: str = "token"
    timeout: float = 30.0

    def __post_init__(self) -> None:
        stem = "POSTRADE_" + self.kind.upper().replace("-", "_")
        self.base_url_env = self.base_url_env or stem + "_BASE_URL"
        self.api_key_env = self.api_key_env or stem + "_API_KEY"


def _request_spec(cfg: EndpointConfig, symbol: str, start: date, end: date) -> tuple[str, dict]:
    if cfg.kind == "ohlcv":
        p1 = int(datetime(start.year, start.month, start.day, tzinfo=timezone.utc).timestamp())
        p2 = int(datetime(end.year, end.month, end.day, tzinfo=timezone.utc).timestamp()) + 86400
        return f"/v8/finance/chart/{symbol}", {"period1": p1, "period2": p2, "interval": "1d"}
    if cfg.kind == "company-news":
        return "/company-news", {"symbol": symbol, "from": start.isoformat(), "to": end.isoformat()}
    if cfg.kind == "macro-news":
        return "/news", {"category": "general"}
    if cfg.kind == "filings":
        return "/filings", {"symbol": symbol, "from": start.isoformat(), "to": end.isoformat()}
    raise FetchError(f"unknown feed kind {cfg.kind!r}")


def _utc_date(ts: Any) -> date:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).date()


def _ohlcv_rows(payload: Any) -> list[PriceBar]:
    try:
        result = payload["chart"]["result"][0]
        quote = result["indicators"]["quote"][0]
        stamps = result["timestamp"]
        columns = [quote[k] for k in ("open", "high", "low", "close", "volume")]
    except (KeyError, IndexError, TypeError) as exc:
        raise FetchError(f"ohlcv payload schema mismatch: {exc!r}") from None
    bars = []
    for i, ts in enumerate(stamps):
        values = [col[i] for col in columns]
        if any(v is None for v in values):
            continue  # vendor pads non-trading sessions with nulls
        bars.append(PriceBar(_utc_date(ts), *map(float, values)))
    return bars


def _news_rows(payload: Any, scope: str, symbol: str, start: date, end: date) -> list[NewsItem]:
    if not isinstance(payload, list):
        raise FetchError("news payload schema mismatch: expected a list")
    items = []
    try:
        for art in payload:
            d = _utc_date(art["datetime"])
            if not start <= d <= end:
                continue
            items.append(
                NewsItem(
                    id=str(art["id"]),
                    date=d,
                    headline=str(art["headline"]),
                    summary=str(art.get("summary") or ""),
                    scope=scope,
                    symbol=symbol if scope == "company" else None,
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise FetchError(f"news payload schema mismatch: {exc!r}") from None
    return items


def _format_price(value: float) -> str:
    return f"{value:.6f}"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def prices_to_csv(bars: list[PriceBar]) -> str:
    lines = [",".join(PRICE_COLUMNS)]
    for b in bars:
        lines.append(
            ",".join(
                [b.date.isoformat()]
                + [_format_price(v) for v in (b.open, b.high, b.low, b.close)]
                + [str(int(b.volume))]
            )
        )
    return "\n".join(lines) + "\n"


def records_to_jsonl(records: list[NewsItem] | list[FilingDoc]) -> str:
    out = []
    for rec in records:
        obj = _jsonable(asdict(rec))
        keys = NEWS_FIELDS if isinstance(rec, NewsItem) else FILING_FIELDS
        out.append(json.dumps({k: obj[k] for k in keys}, ensure_ascii=False))
    return "".join(line + "\n" for line in out)


def fetch_remote(
    cfg: EndpointConfig,
    symbol: str,
    start: date,
    end: date,
    out_path: str | os.PathLike,
    client: httpx.Client | None = None,
) -> Path:
    """Fetch one feed and persist it in the canonical file format.

    Any failure raises :class:`FetchError` before the output file is touched.
    """
    base_url = os.environ.get(cfg.base_url_env)
    if not base_url:
        raise FetchError(f"environment variable {cfg.base_url_env} is not set")
    path, params = _request_spec(cfg, symbol, start, end)
    api_key = os.environ.get(cfg.api_key_env)
    if api_key:
        params[cfg.key_param] = api_key

    own_client = client is None
    client = client or httpx.Client(timeout=cfg.timeout)
    try:
        resp = client.get(base_url.rstrip("/") + path, params=params)
    except httpx.HTTPError as exc:
        raise FetchError(f"{cfg.kind}: request failed: {exc}") from exc
    finally:
        if own_client:
            client.close()
    if resp.status_code == 429:
        retry_after = resp.headers.get("Retry-After")
        raise RateLimitError(f"{cfg.kind}: rate limited (retry-after {retry_after})", retry_after)
    if resp.status_code >= 400:
        raise FetchError(f"{cfg.kind}: HTTP {resp.status_code}")
    try:
        payload = resp.json()
    except ValueError:
        raise FetchError(f"{cfg.kind}: response is not JSON") from None

    text = normalize_payload(cfg.kind, payload, symbol, start, end)
    out = Path(out_path)
    _atomic_write(out, text)
    return out


def normalize_payload(kind: str, payload: Any, symbol: str, start: date, end: date) -> str:
    """Convert one vendor payload into canonical CSV or JSONL text.

    Raises:
        FetchError: if the payload does not have the expected shape.
    """
    if kind == "ohlcv":
        bars = [b for b in _ohlcv_rows(payload) if start <= b.date <= end]
        try:
            for b in bars:
                b.validate()
        except DataError as exc:
            raise FetchError(f"ohlcv payload failed validation: {exc}") from None
        text = prices_to_csv(bars)
    elif kind in ("company-news", "macro-news"):
        scope = "company" if kind == "company-news" else "macro"
        text = records_to_jsonl(_news_rows(payload, scope, symbol, start, end))
    elif kind == "filings":
        if not isinstance(payload, list):
            raise FetchError("filings payload schema mismatch: expected a list")
        try:
            docs = [_filing_from_dict(obj) for obj in payload]
        except (ValueError, TypeError) as exc:
            raise FetchError(f"filings payload schema mismatch: {exc}") from None
        text = records_to_jsonl([d for d in docs if start <= d.date <= end])
    else:
        raise FetchError(f"unknown feed kind {kind!r}")
    return text
