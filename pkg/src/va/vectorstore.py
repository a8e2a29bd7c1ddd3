"""In-memory vector index over chunks and Q&A questions.

Exact (non-approximate) search; corpora here are small, so every query
scores every candidate. Three modes: plain top-k, similarity threshold,
and maximal-marginal-relevance for diversity. Snapshots persist the
whole store as JSON.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .embedding import DimensionMismatch, cosine_similarity

VALID_KINDS = ("chunk", "qa")
MMR_POOL_FACTOR = 4


class VectorStoreError(Exception):
    pass


class EmptyStore(VectorStoreError):
    pass


class IoFailure(VectorStoreError):
    pass


class CorruptSnapshot(VectorStoreError):
    pass


@dataclass(frozen=True)
class IndexedItem:
    """One stored vector with its payload reference (chunk id or qa id)."""

    item_id: str
    kind: str  # chunk | qa
    vector: tuple[float, ...]
    payload_ref: str


@dataclass
class SearchRequest:
    query_vector: Sequence[float]
    mode: str = "topk"  # topk | threshold | mmr
    k: int = 10
    score_threshold: float = 0.0
    mmr_lambda: float = 0.5
    kind_filter: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("topk", "threshold", "mmr"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be positive")
        if not -1.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in [-1, 1]")
        if not 0.0 <= self.mmr_lambda <= 1.0:
            raise ValueError("mmr lambda must lie in [0, 1]")
        if self.kind_filter is not None and self.kind_filter not in VALID_KINDS:
            raise ValueError(f"unknown kind filter {self.kind_filter!r}")


@dataclass(frozen=True)
class ScoredHit:
    item_id: str
    score: float


class VectorStore:
    """Exact cosine-similarity index with overwrite-on-upsert semantics.

    Reads may run concurrently; upsert and snapshot_load take an exclusive
    lock so searches never observe a partially applied write.
    """

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("store dimension must be positive")
        self.dimension = dimension
        self._items: dict[str, IndexedItem] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def upsert(self, items: Iterable[IndexedItem | dict]) -> int:
        """Insert or overwrite items; returns the new store size."""
        staged: dict[str, IndexedItem] = {}
        for raw in items:
            item = self._coerce(raw)
            if len(item.vector) != self.dimension:
                raise DimensionMismatch(
                    f"item {item.item_id!r} has dimension {len(item.vector)}, "
                    f"store expects {self.dimension}"
                )
            if item.kind not in VALID_KINDS:
                raise ValueError(f"item {item.item_id!r} has unknown kind {item.kind!r}")
            staged[item.item_id] = item
        with self._lock:
            self._items.update(staged)
            return len(self._items)

    @staticmethod
    def _coerce(raw: IndexedItem | dict) -> IndexedItem:
        if isinstance(raw, IndexedItem):
            return raw
        return IndexedItem(
            item_id=raw["item_id"],
            kind=raw["kind"],
            vector=tuple(float(v) for v in raw["vector"]),
            payload_ref=raw["payload_ref"],
        )

    def get(self, item_id: str) -> IndexedItem | None:
        return self._items.get(item_id)

    def count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self._items)
        return sum(1 for item in self._items.values() if item.kind == kind)

    def search(self, req: SearchRequest) -> list[ScoredHit]:
        """Run one search; an empty store yields an empty result, not an error."""
        query = list(req.query_vector)
        if len(query) != self.dimension:
            raise DimensionMismatch(
                f"query dimension {len(query)} does not match store dimension {self.dimension}"
            )
        candidates = [
            item
            for item in self._items.values()
            if req.kind_filter is None or item.kind == req.kind_filter
        ]
        if not candidates:
            return []
        scored = sorted(
            ((cosine_similarity(query, item.vector), item) for item in candidates),
            key=lambda pair: (-pair[0], pair[1].item_id),
        )
        if req.mode == "topk":
            return [ScoredHit(item.item_id, score) for score, item in scored[: req.k]]
        if req.mode == "threshold":
            kept = [pair for pair in scored if pair[0] >= req.score_threshold]
            return [ScoredHit(item.item_id, score) for score, item in kept[: req.k]]
        return self._mmr(scored, req.k, req.mmr_lambda)

    def _mmr(
        self, scored: list[tuple[float, IndexedItem]], k: int, lam: float
    ) -> list[ScoredHit]:
        """Greedy MMR over the top 4k-by-similarity candidate pool.

        The first pick is the top-similarity item. Each further pick
        maximizes lam*sim(query,d) - (1-lam)*max_selected sim(d,s); ties
        prefer the candidate with the smaller weighted redundancy penalty,
        then the lexicographically smaller item_id, so selection stays
        deterministic and degenerates to plain top-k at lam=1.
        """
        pool = scored[: MMR_POOL_FACTOR * k]
        seed_sim, seed = pool[0]
        selected = [(seed, lam * seed_sim)]
        remaining = pool[1:]
        while len(selected) < k and remaining:
            best = None
            for sim, item in remaining:
                penalty = (1.0 - lam) * max(
                    cosine_similarity(item.vector, chosen.vector)
                    for chosen, _ in selected
                )
                objective = lam * sim - penalty
                key = (-objective, penalty, item.item_id)
                if best is None or key < best[0]:
                    best = (key, item, objective)
            _, pick, objective = best
            selected.append((pick, objective))
            remaining = [(sim, item) for sim, item in remaining if item is not pick]
        return [ScoredHit(item.item_id, score) for item, score in selected]

    def snapshot_save(self, path: str | Path) -> int:
        """Serialize the store (dimension + items sorted by id) as JSON."""
        payload = {
            "dimension": self.dimension,
            "items": [
                {
                    "item_id": item.item_id,
                    "kind": item.kind,
                    "vector": list(item.vector),
                    "payload_ref": item.payload_ref,
                }
                for item in sorted(self._items.values(), key=lambda i: i.item_id)
            ],
        }
        data = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        try:
            Path(path).write_text(data, encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write snapshot to {path}: {exc}") from exc
        return len(data.encode("utf-8"))

    @classmethod
    def snapshot_load(cls, path: str | Path) -> "VectorStore":
        """Rebuild a store from a snapshot_save file."""
        try:
            raw = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read snapshot from {path}: {exc}") from exc
        try:
            payload = json.loads(raw)
            store = cls(int(payload["dimension"]))
            store.upsert(payload["items"])
        except (KeyError, TypeError, ValueError, DimensionMismatch) as exc:
            raise CorruptSnapshot(f"snapshot {path} is corrupt: {exc}") from exc
        return store

    def norms_ok(self, tolerance: float = 1e-6) -> bool:
        """True when every stored vector is unit norm or all-zero."""
        for item in self._items.values():
            norm = math.sqrt(sum(v * v for v in item.vector))
            if norm != 0.0 and abs(norm - 1.0) > tolerance:
                return False
        return True
