"""Retrieval pipeline: multi-query expansion, fusion, reranking, few-shot lookup.

One user question becomes several rephrased queries; each query runs a
top-k vector search; the ranked lists are merged with reciprocal rank
fusion; the fused head is reranked by a (question, document) scorer; and
similar historical Q&A pairs are attached as few-shot examples. Provider
failures in the expansion and rerank stages degrade gracefully instead of
failing the turn — retrieval must never strand the user.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import httpx

from .corpus import Chunk, QaPair
from .embedding import (
    API_KEY_ENV,
    ProviderMalformedResponse,
    ProviderUnreachable,
    cosine_similarity,
)
from .llm import VARIANT_TEMPERATURE, CompletionProvider, CompletionRequest
from .vectorstore import EmptyStore, ScoredHit, SearchRequest, VectorStore

RRF_K_DEFAULT = 60

VARIANT_PROMPT = (
    "Rewrite the student question below into {n} differently phrased search queries "
    "that keep its meaning. Output one query per line with no numbering or commentary.\n\n"
    "User question:\n{question}"
)

_LINE_PREFIX = re.compile(r"^\s*(?:\d+[.)]\s*|[-*]\s*)")


class RetrievalError(Exception):
    pass


class DuplicateWithinList(RetrievalError):
    pass


@dataclass
class RetrievalConfig:
    n_variants: int = 3
    per_query_k: int = 8
    max_context: int = 6
    max_fewshot: int = 3
    mmr_lambda: float = 0.5
    rrf_k: int = RRF_K_DEFAULT


@dataclass(frozen=True)
class QueryVariants:
    """Alternative phrasings of one question; the original is excluded."""

    original: str
    variants: tuple[str, ...]
    degraded: bool = False  # provider failed; pipeline proceeds with the original


@dataclass(frozen=True)
class RankedList:
    """One query's ranked item ids, best first (rank 1)."""

    query: str
    hits: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.hits)) != len(self.hits):
            raise DuplicateWithinList(f"ranked list for {self.query!r} repeats an item id")


@dataclass
class RetrievalBundle:
    """Everything generation needs for one question, plus a per-stage trace."""

    question: str
    context_chunks: list[tuple[Chunk, float, float]]  # (chunk, fused_score, rerank_score)
    fewshot_examples: list[tuple[QaPair, float]]
    trace: dict

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "context_chunks": [
                {"id": c.id, "fused_score": fused, "rerank_score": rerank}
                for c, fused, rerank in self.context_chunks
            ],
            "fewshot_examples": [
                {"id": qa.id, "score": score} for qa, score in self.fewshot_examples
            ],
            "trace": self.trace,
        }


class RerankScorer(Protocol):
    def score(self, query: str, documents: Sequence[str]) -> list[float]: ...


class ScriptedReranker:
    """Test double: the first substring key found in a document gives its score."""

    def __init__(self, scores: dict[str, float] | None = None, default: float = 0.5):
        self.scores = dict(scores or {})
        self.default = default

    def score(self, query: str, documents: Sequence[str]) -> list[float]:
        out = []
        for doc in documents:
            for needle, value in self.scores.items():
                if needle in doc:
                    out.append(float(value))
                    break
            else:
                out.append(float(self.default))
        return out


class EmbeddingReranker:
    """Offline reranker: rescaled cosine between query and document embeddings."""

    def __init__(self, embedder):
        self.embedder = embedder

    def score(self, query: str, documents: Sequence[str]) -> list[float]:
        vectors = self.embedder.embed_batch([query, *documents])
        query_vec = vectors[0]
        return [(cosine_similarity(query_vec, vec) + 1.0) / 2.0 for vec in vectors[1:]]


class RemoteReranker:
    """Scorer calling POST {endpoint}/rerank with the question and documents."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def score(self, query: str, documents: Sequence[str]) -> list[float]:
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            resp = httpx.post(
                f"{self.endpoint}/rerank",
                json={"query": query, "documents": list(documents)},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderUnreachable(f"reranker at {self.endpoint}: {exc}") from exc
        try:
            scores = [float(s) for s in resp.json()["scores"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderMalformedResponse(f"bad rerank payload: {exc}") from exc
        if len(scores) != len(documents):
            raise ProviderMalformedResponse(
                f"expected {len(documents)} scores, got {len(scores)}"
            )
        return scores


@dataclass
class PipelineDeps:
    """Everything retrieve_bundle needs, resolved once at startup."""

    store: VectorStore
    embedder: object
    llm: CompletionProvider
    reranker: RerankScorer
    config: RetrievalConfig = field(default_factory=RetrievalConfig)
    chunks: dict[str, Chunk] = field(default_factory=dict)
    qa_pairs: dict[str, QaPair] = field(default_factory=dict)


def _normalize_query(text: str) -> str:
    return " ".join(text.lower().split())


def generate_query_variants(
    question: str, n: int, llm: CompletionProvider
) -> QueryVariants:
    """Ask the provider for n rephrasings; degrade to no variants on failure."""
    if not question.strip():
        raise ValueError("question must be non-empty")
    try:
        raw = llm.complete(
            CompletionRequest(
                system="You rephrase search queries.",
                user=VARIANT_PROMPT.format(n=n, question=question),
                temperature=VARIANT_TEMPERATURE,
            )
        )
    except Exception:
        return QueryVariants(original=question, variants=(), degraded=True)
    seen = {_normalize_query(question)}
    variants: list[str] = []
    for line in raw.splitlines():
        candidate = _LINE_PREFIX.sub("", line).strip()
        if not candidate:
            continue
        key = _normalize_query(candidate)
        if key in seen:
            continue
        seen.add(key)
        variants.append(candidate)
        if len(variants) == n:
            break
    return QueryVariants(original=question, variants=tuple(variants))


def rrf_fuse(
    lists: Sequence[RankedList], k_const: int = RRF_K_DEFAULT
) -> list[tuple[str, float]]:
    """Reciprocal rank fusion: score(D) = sum over lists of 1/(k_const + rank(D)).

    Ranks are 1-based. Output is sorted by score descending, ties broken
    by item_id ascending.
    """
    if not lists:
        raise ValueError("rrf_fuse requires at least one ranked list")
    if k_const < 1:
        raise ValueError("k_const must be positive")
    contributions: dict[str, list[float]] = {}
    for ranked in lists:
        for rank, item_id in enumerate(ranked.hits, start=1):
            contributions.setdefault(item_id, []).append(1.0 / (k_const + rank))
    # fsum over sorted terms keeps scores exactly invariant under input permutation
    scores = {
        item_id: math.fsum(sorted(terms)) for item_id, terms in contributions.items()
    }
    return sorted(scores.items(), key=lambda pair: (-pair[1], pair[0]))


def rerank(
    question: str,
    candidates: Sequence[Chunk],
    scorer: RerankScorer,
) -> tuple[list[tuple[Chunk, float]], bool]:
    """Score each (question, chunk.text) pair and resort descending.

    Returns (scored chunks, degraded). On scorer failure the fused order is
    preserved with rank-position scores (first gets 1.0, last 1/n).
    """
    if not candidates:
        raise ValueError("rerank requires at least one candidate")
    try:
        scores = scorer.score(question, [c.text for c in candidates])
        if len(scores) != len(candidates):
            raise ProviderMalformedResponse(
                f"scorer returned {len(scores)} scores for {len(candidates)} documents"
            )
    except Exception:
        n = len(candidates)
        return [(c, (n - i) / n) for i, c in enumerate(candidates)], True
    ranked = sorted(
        zip(candidates, (float(s) for s in scores)),
        key=lambda pair: (-pair[1], pair[0].id),
    )
    return ranked, False


def retrieve_fewshot(
    question: str,
    store: VectorStore,
    embedder,
    m: int,
    qa_pairs: dict[str, QaPair],
) -> list[tuple[QaPair, float]]:
    """Top-m most similar historical questions with their cosine scores."""
    if m < 1 or store.count(kind="qa") == 0:
        return []
    query_vec = embedder.embed_batch([question])[0]
    hits = store.search(SearchRequest(query_vector=query_vec, mode="topk", k=m, kind_filter="qa"))
    out: list[tuple[QaPair, float]] = []
    for hit in hits:
        item = store.get(hit.item_id)
        pair = qa_pairs.get(item.payload_ref) if item else None
        if pair is not None:
            out.append((pair, hit.score))
    return out


def _ranked_list(query: str, hits: Sequence[ScoredHit]) -> RankedList:
    return RankedList(query=query, hits=tuple(h.item_id for h in hits))


def retrieve_bundle(question: str, deps: PipelineDeps) -> RetrievalBundle:
    """Run the full retrieval stage for one question.

    Searches the original question plus each generated variant, fuses the
    ranked lists with RRF, reranks the fused head, and attaches few-shot
    Q&A examples. Deterministic when every provider is scripted.
    """
    if not question.strip():
        raise ValueError("question must be non-empty")
    if deps.store.count(kind="chunk") == 0:
        raise EmptyStore("no chunks indexed; run ingest first")
    cfg = deps.config

    expansion = generate_query_variants(question, cfg.n_variants, deps.llm)
    queries = [question, *expansion.variants]

    ranked_lists: list[RankedList] = []
    for query in queries:
        vec = deps.embedder.embed_batch([query])[0]
        hits = deps.store.search(
            SearchRequest(query_vector=vec, mode="topk", k=cfg.per_query_k, kind_filter="chunk")
        )
        ranked_lists.append(_ranked_list(query, hits))

    fused = rrf_fuse(ranked_lists, cfg.rrf_k)
    head = fused[: cfg.max_context]
    fused_scores: dict[str, float] = {}
    candidates: list[Chunk] = []
    for item_id, score in head:
        item = deps.store.get(item_id)
        chunk = deps.chunks.get(item.payload_ref) if item else None
        if chunk is not None:
            candidates.append(chunk)
            fused_scores[chunk.id] = score

    if not candidates:
        raise EmptyStore("fused retrieval produced no resolvable chunks")
    reranked, rerank_degraded = rerank(question, candidates, deps.reranker)
    context = [(chunk, fused_scores[chunk.id], score) for chunk, score in reranked]

    fewshot = retrieve_fewshot(question, deps.store, deps.embedder, cfg.max_fewshot, deps.qa_pairs)

    trace = {
        "variants": list(expansion.variants),
        "variant_generation_degraded": expansion.degraded,
        "ranked_list_sizes": [len(r.hits) for r in ranked_lists],
        "fused_size": len(fused),
        "context_size": len(context),
        "reranker_degraded": rerank_degraded,
        "fewshot_count": len(fewshot),
    }
    return RetrievalBundle(
        question=question,
        context_chunks=context,
        fewshot_examples=fewshot,
        trace=trace,
    )
