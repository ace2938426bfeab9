"""
Layered memory store for analyzed market insights.

Records live in one of four layers (short, mid, long, reflection). Retrieval
ranks each layer by a weighted blend of recency, importance and query
relevance; records cited in positively rewarded decisions accumulate
validity and migrate one layer deeper each time the count reaches a multiple
of the promotion threshold.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from typing import TYPE_CHECKING, Callable, Iterable

import numpy as np

from .env import MEMORY_LAYERS
from .errors import DataError, PostradeError

if TYPE_CHECKING:
    from .agents.schemas import AnalysisInsight

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1
DEPTH = {"short": 0, "mid": 1, "long": 2, "reflection": 3}
NEXT_LAYER = {"short": "mid", "mid": "long"}
LAYER_BY_SOURCE = {
    "10-K": "long",
    "10-Q": "mid",
    "company-news": "short",
    "macro-news": "short",
    "reflection": "reflection",
}
IMPORTANCE_BY_RELEVANCE = {"high": 0.9, "medium": 0.6, "low": 0.3}

_TOKEN = re.compile(r"[a-z0-9]+")


class UnknownMemoryId(PostradeError):
    pass


def tokenize(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


@dataclass
class MemoryRecord:
    id: int
    layer: str
    content: str
    importance: float
    created_date: date
    last_access_date: date
    validity_count: int = 0
    source_kind: str = "company-news"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["created_date"] = self.created_date.isoformat()
        d["last_access_date"] = self.last_access_date.isoformat()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryRecord":
        d = dict(d)
        d["created_date"] = date.fromisoformat(d["created_date"])
        d["last_access_date"] = date.fromisoformat(d["last_access_date"])
        return cls(**d)


@dataclass
class MemoryConfig:
    weights: tuple[float, float, float] = (0.4, 0.3, 0.3)  # recency, importance, relevance
    half_lives: dict[str, float] = field(
        default_factory=lambda: {"short": 7.0, "mid": 45.0, "long": 365.0, "reflection": 90.0}
    )
    k_per_layer: int = 5
    promotion_threshold: int = 3
    capacity: int = 500

    def to_dict(self) -> dict:
        return {
            "weights": list(self.weights),
            "half_lives": {k: self.half_lives[k] for k in MEMORY_LAYERS},
            "k_per_layer": self.k_per_layer,
            "promotion_threshold": self.promotion_threshold,
            "capacity": self.capacity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "weights" in kwargs:
            kwargs["weights"] = tuple(kwargs["weights"])
        if "half_lives" in kwargs:
            kwargs["half_lives"] = {**cls().half_lives, **kwargs["half_lives"]}
        return cls(**kwargs)


@dataclass(frozen=True)
class WorkingItem:
    id: int
    content: str
    score: float
    importance: float
    recency: float
    source_kind: str


@dataclass
class WorkingSet:
    layers: dict[str, list[WorkingItem]] = field(default_factory=lambda: {l: [] for l in MEMORY_LAYERS})

    def ids(self) -> dict[str, list[int]]:
        return {layer: [item.id for item in items] for layer, items in self.layers.items()}

    def all_ids(self) -> set[int]:
        return {item.id for items in self.layers.values() for item in items}

    def __len__(self) -> int:
        return sum(len(v) for v in self.layers.values())


def trading_days_between(start: date, end: date) -> int:
    """Weekday count from ``start`` to ``end``; holidays are not modeled."""
    return max(0, int(np.busday_count(start, end)))


def term_overlap(query: set[str], content: str) -> float:
    """Share of query terms that occur in ``content``."""
    return len(query & tokenize(content)) / len(query) if query else 0.0


class MemoryStore:
    """Layered store. ``relevance`` may replace term overlap (e.g. with an embedding similarity in [0, 1])."""

    def __init__(self, config: MemoryConfig | None = None,
                 relevance: Callable[[set[str], str], float] | None = None):
        self.config = config or MemoryConfig()
        self.relevance = relevance or term_overlap
        self.records: dict[int, MemoryRecord] = {}
        self.tombstones: dict[int, MemoryRecord] = {}
        self.next_id = 0

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, memory_id: int) -> bool:
        return memory_id in self.records

    def layer(self, name: str) -> list[MemoryRecord]:
        return [r for r in self.records.values() if r.layer == name]

    def resolve(self, memory_id: int) -> MemoryRecord | None:
        """Look up a live or evicted record."""
        return self.records.get(memory_id) or self.tombstones.get(memory_id)

    # -- writes ---------------------------------------------------------

    def add(self, content: str, layer: str, importance: float, on: date, source_kind: str) -> MemoryRecord:
        if layer not in DEPTH:
            raise ValueError(f"unknown layer {layer!r}")
        if not 0.0 <= importance <= 1.0:
            raise ValueError("importance must lie in [0, 1]")
        rec = MemoryRecord(
            id=self.next_id,
            layer=layer,
            content=content,
            importance=float(importance),
            created_date=on,
            last_access_date=on,
            source_kind=source_kind,
        )
        self.next_id += 1
        self.records[rec.id] = rec
        self._enforce_capacity(layer, on)
        return rec

    def allocate(self, insight: "AnalysisInsight", on: date) -> MemoryRecord:
        layer = LAYER_BY_SOURCE[insight.source_kind]
        importance = IMPORTANCE_BY_RELEVANCE[insight.relevance]
        return self.add(insight.insight, layer, importance, on, insight.source_kind)

    def add_reflection(self, text: str, on: date, importance: float = 0.6) -> MemoryRecord:
        return self.add(text, "reflection", importance, on, "reflection")

    def promote(self, cited_ids: Iterable[int], reward_sign: float, on: date | None = None) -> list[tuple[int, str, str]]:
        """Credit citations of a rewarded decision; return ``(id, from, to)`` layer moves.

        Only positive rewards count. Evicted ids are skipped; ids the store
        never issued raise :class:`UnknownMemoryId`.
        """
        cited = sorted(set(cited_ids))
        for mid in cited:
            if mid not in self.records and mid not in self.tombstones:
                raise UnknownMemoryId(f"memory id {mid} was never issued")
        if reward_sign <= 0:
            return []
        moves = []
        threshold = self.config.promotion_threshold
        for mid in cited:
            rec = self.records.get(mid)
            if rec is None:
                continue
            rec.validity_count += 1
            if on is not None:
                rec.last_access_date = max(rec.last_access_date, on)
            deeper = NEXT_LAYER.get(rec.layer)
            if deeper and rec.validity_count % threshold == 0:
                moves.append((mid, rec.layer, deeper))
                rec.layer = deeper
        for _, _, dest in moves:
            self._enforce_capacity(dest, on)
        return moves

    def _enforce_capacity(self, layer: str, on: date | None) -> None:
        members = self.layer(layer)
        excess = len(members) - self.config.capacity
        if excess <= 0:
            return
        ref = on or max(r.created_date for r in members)
        members.sort(key=lambda r: (self._base_score(r, ref), r.id))
        for rec in members[:excess]:
            logger.info("evicting memory %d from %s layer", rec.id, layer)
            self.tombstones[rec.id] = self.records.pop(rec.id)

    # -- reads ----------------------------------------------------------

    def recency(self, rec: MemoryRecord, on: date) -> float:
        return math.exp(-trading_days_between(rec.created_date, on) / self.config.half_lives[rec.layer])

    def _base_score(self, rec: MemoryRecord, on: date) -> float:
        w_r, w_i, _ = self.config.weights
        return w_r * self.recency(rec, on) + w_i * rec.importance

    def score(self, rec: MemoryRecord, query: set[str], on: date) -> tuple[float, float, float]:
        """Return ``(composite, recency, relevance)`` for one record."""
        w_r, w_i, w_v = self.config.weights
        rec_score = self.recency(rec, on)
        relevance = self.relevance(query, rec.content)
        return w_r * rec_score + w_i * rec.importance + w_v * relevance, rec_score, relevance

    def retrieve(self, query_terms: Iterable[str], on: date, k_per_layer: int | None = None) -> WorkingSet:
        """Top-k records per layer by composite score; ties go to the lower id."""
        k = self.config.k_per_layer if k_per_layer is None else k_per_layer
        query = {t.lower() for t in query_terms}
        ws = WorkingSet()
        for layer in MEMORY_LAYERS:
            scored = []
            for rec in self.layer(layer):
                total, rec_score, _ = self.score(rec, query, on)
                scored.append((-total, rec.id, rec, total, rec_score))
            scored.sort(key=lambda x: (x[0], x[1]))
            ws.layers[layer] = [
                WorkingItem(rec.id, rec.content, total, rec.importance, rec_score, rec.source_kind)
                for _, _, rec, total, rec_score in scored[:k]
            ]
        return ws

    # -- persistence ----------------------------------------------------

    def snapshot(self) -> str:
        blob = {
            "schema_version": SNAPSHOT_VERSION,
            "config": self.config.to_dict(),
            "next_id": self.next_id,
            "records": [self.records[i].to_dict() for i in sorted(self.records)],
            "tombstones": [self.tombstones[i].to_dict() for i in sorted(self.tombstones)],
        }
        return json.dumps(blob, indent=1) + "\n"

    @classmethod
    def restore(cls, blob: str, relevance: Callable[[set[str], str], float] | None = None) -> "MemoryStore":
        try:
            data = json.loads(blob)
        except ValueError as exc:
            raise DataError(f"memory snapshot is not valid JSON: {exc}") from None
        version = data.get("schema_version")
        if version != SNAPSHOT_VERSION:
            raise DataError(f"memory snapshot schema version {version!r} != {SNAPSHOT_VERSION}")
        store = cls(MemoryConfig.from_dict(data["config"]), relevance)
        store.next_id = data["next_id"]
        for d in data["records"]:
            rec = MemoryRecord.from_dict(d)
            store.records[rec.id] = rec
        for d in data["tombstones"]:
            rec = MemoryRecord.from_dict(d)
            store.tombstones[rec.id] = rec
        return store
