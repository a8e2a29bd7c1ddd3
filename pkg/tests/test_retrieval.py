from __future__ import annotations

import random

import pytest

from va.corpus import Chunk
from va.llm import ScriptedProvider, ScriptedRule
from va.retrieval import (
    DuplicateWithinList,
    EmbeddingReranker,
    PipelineDeps,
    RankedList,
    RetrievalConfig,
    ScriptedReranker,
    generate_query_variants,
    rerank,
    retrieve_bundle,
    retrieve_fewshot,
    rrf_fuse,
)
from va.vectorstore import EmptyStore, SearchRequest

from conftest import make_pipeline
from oracles import ref_rrf


class _FailingProvider:
    def complete(self, req):
        raise RuntimeError("provider down")


class _FailingScorer:
    def score(self, query, documents):
        raise RuntimeError("scorer down")


# ---------------------------------------------------------------- variants


def test_variants_parsed_from_lines():
    provider = ScriptedProvider(
        default="How many meetings can be missed?\nWhat is the skip policy?\nMeeting absence rules?"
    )
    result = generate_query_variants("Can I skip a meeting?", 3, provider)
    assert result.variants == (
        "How many meetings can be missed?",
        "What is the skip policy?",
        "Meeting absence rules?",
    )
    assert result.degraded is False


def test_variants_exclude_the_original_question():
    provider = ScriptedProvider(default="can i skip a meeting?\nSomething new entirely?")
    result = generate_query_variants("Can I skip a meeting?", 3, provider)
    assert result.variants == ("Something new entirely?",)


def test_variants_dedup_and_numbering_stripped():
    provider = ScriptedProvider(default="1. Alpha beta?\n2) alpha   beta?\n- Gamma delta?")
    result = generate_query_variants("Original?", 3, provider)
    assert result.variants == ("Alpha beta?", "Gamma delta?")


def test_variants_capped_at_n():
    provider = ScriptedProvider(default="a?\nb?\nc?\nd?\ne?")
    result = generate_query_variants("Original?", 3, provider)
    assert len(result.variants) == 3


def test_variants_degrade_on_provider_failure():
    result = generate_query_variants("Can I skip?", 3, _FailingProvider())
    assert result.variants == ()
    assert result.degraded is True


def test_variants_use_higher_temperature():
    provider = ScriptedProvider(default="X?")
    generate_query_variants("Q?", 3, provider)
    assert provider.calls[0].temperature == pytest.approx(0.7)


# ---------------------------------------------------------------- rrf


def test_rrf_single_list_rank_one():
    fused = rrf_fuse([RankedList("q", ("D",))], 60)
    assert fused[0][0] == "D"
    assert fused[0][1] == pytest.approx(1 / 61, abs=1e-12)


def test_rrf_two_lists_ranks_one_and_three():
    lists = [
        RankedList("q1", ("D", "x", "y")),
        RankedList("q2", ("a", "b", "D")),
    ]
    fused = dict(rrf_fuse(lists, 60))
    assert fused["D"] == pytest.approx(1 / 61 + 1 / 63, abs=1e-12)


def test_rrf_absent_item_absent_from_output():
    fused = rrf_fuse([RankedList("q", ("a", "b"))])
    assert "z" not in dict(fused)


def test_rrf_agreeing_lists_preserve_order():
    lists = [RankedList("q1", ("X", "Y")), RankedList("q2", ("X", "Y"))]
    fused = rrf_fuse(lists)
    assert [item for item, _ in fused] == ["X", "Y"]


def test_rrf_permutation_invariance():
    rng = random.Random(21)
    ids = [f"doc-{i}" for i in range(12)]
    lists = []
    for q in range(5):
        hits = rng.sample(ids, rng.randint(1, len(ids)))
        lists.append(RankedList(f"q{q}", tuple(hits)))
    baseline = rrf_fuse(lists)
    for seed in range(20):
        shuffled = list(lists)
        random.Random(seed).shuffle(shuffled)
        assert rrf_fuse(shuffled) == baseline


def test_rrf_rank_improvement_strictly_increases_score():
    rng = random.Random(33)
    ids = [f"doc-{i}" for i in range(8)]
    for _ in range(30):
        hits = rng.sample(ids, 6)
        pos = rng.randint(1, 5)
        target = hits[pos]
        improved = list(hits)
        improved[pos - 1], improved[pos] = improved[pos], improved[pos - 1]
        base_score = dict(rrf_fuse([RankedList("q", tuple(hits))]))[target]
        better_score = dict(rrf_fuse([RankedList("q", tuple(improved))]))[target]
        assert better_score > base_score


def test_rrf_matches_reference_on_random_inputs():
    rng = random.Random(77)
    ids = [f"doc-{i}" for i in range(15)]
    for _ in range(50):
        lists = [
            RankedList(f"q{q}", tuple(rng.sample(ids, rng.randint(1, 10))))
            for q in range(rng.randint(1, 5))
        ]
        expected = ref_rrf([list(l.hits) for l in lists], 60)
        got = rrf_fuse(lists, 60)
        assert [item for item, _ in got] == [item for item, _ in expected]
        for (_, a), (_, b) in zip(got, expected):
            assert a == pytest.approx(b, abs=1e-12)


def test_ranked_list_rejects_duplicates():
    with pytest.raises(DuplicateWithinList):
        RankedList("q", ("a", "a"))


# ---------------------------------------------------------------- rerank


def chunk(cid: str, text: str) -> Chunk:
    return Chunk(id=cid, doc_id="d", text=text)


def test_rerank_sorts_by_score():
    scorer = ScriptedReranker({"alpha": 0.2, "beta": 0.9})
    ranked, degraded = rerank("q", [chunk("a", "alpha text"), chunk("b", "beta text")], scorer)
    assert [c.id for c, _ in ranked] == ["b", "a"]
    assert ranked[0][1] == pytest.approx(0.9)
    assert degraded is False


def test_rerank_failure_preserves_order_with_positional_scores():
    candidates = [chunk("a", "one"), chunk("b", "two"), chunk("c", "three")]
    ranked, degraded = rerank("q", candidates, _FailingScorer())
    assert [c.id for c, _ in ranked] == ["a", "b", "c"]
    assert [s for _, s in ranked] == pytest.approx([1.0, 2 / 3, 1 / 3])
    assert degraded is True


def test_rerank_single_candidate():
    ranked, degraded = rerank("q", [chunk("only", "text")], ScriptedReranker(default=0.4))
    assert [c.id for c, _ in ranked] == ["only"]
    assert degraded is False


def test_embedding_reranker_tracks_similarity(regulations_chunks):
    deps = make_pipeline(regulations_chunks)
    scorer = EmbeddingReranker(deps.embedder)
    scores = scorer.score(
        "skipping meetings grade", ["Skipping two meetings lowers the grade.", "Plagiarism."]
    )
    assert scores[0] > scores[1]
    assert all(0.0 <= s <= 1.0 for s in scores)


# ---------------------------------------------------------------- fewshot


def test_fewshot_identical_question_scores_one(regulations_chunks, qa_pairs):
    deps = make_pipeline(regulations_chunks, qa_pairs)
    hits = retrieve_fewshot(
        "Can I skip a project meeting?", deps.store, deps.embedder, 2, deps.qa_pairs
    )
    assert hits[0][0].id == "qa-1"
    assert hits[0][1] == pytest.approx(1.0, abs=1e-6)


def test_fewshot_empty_when_no_qa_indexed(regulations_chunks):
    deps = make_pipeline(regulations_chunks)
    assert retrieve_fewshot("anything", deps.store, deps.embedder, 3, {}) == []


def test_fewshot_matches_exhaustive_comparison(regulations_chunks, qa_pairs):
    deps = make_pipeline(regulations_chunks, qa_pairs)
    question = "What happens when I miss the examination?"
    hits = retrieve_fewshot(question, deps.store, deps.embedder, 2, deps.qa_pairs)
    from oracles import ref_cosine

    query_vec = deps.embedder.embed_batch([question])[0]
    scored = sorted(
        (
            (-ref_cosine(query_vec, deps.embedder.embed_batch([p.question])[0]), p.id)
            for p in qa_pairs
        ),
    )
    expected_ids = [pid for _, pid in scored[:2]]
    assert [p.id for p, _ in hits] == expected_ids


# ---------------------------------------------------------------- bundle


def scripted_pipeline(regulations_chunks, qa_pairs, variants_response=None):
    rules = []
    if variants_response is not None:
        rules.append(ScriptedRule(match="User question:", response=variants_response))
    llm = ScriptedProvider(rules, default="untouched")
    return make_pipeline(
        regulations_chunks,
        qa_pairs,
        llm=llm,
        reranker=ScriptedReranker({"meetings": 0.9, "examination": 0.8}, default=0.3),
        config=RetrievalConfig(n_variants=2, per_query_k=4, max_context=3, max_fewshot=2),
    )


def test_bundle_is_deterministic(regulations_chunks, qa_pairs):
    question = "How many meetings can be skipped?"
    response = "meeting skip limit?\nabsence from project meetings?"
    first = retrieve_bundle(
        question, scripted_pipeline(regulations_chunks, qa_pairs, response)
    ).to_dict()
    second = retrieve_bundle(
        question, scripted_pipeline(regulations_chunks, qa_pairs, response)
    ).to_dict()
    assert first == second


def test_bundle_degrades_without_variants(regulations_chunks, qa_pairs):
    deps = make_pipeline(
        regulations_chunks,
        qa_pairs,
        llm=_FailingProvider(),
        reranker=ScriptedReranker(default=0.5),
    )
    bundle = retrieve_bundle("How many meetings can be skipped?", deps)
    assert bundle.trace["variant_generation_degraded"] is True
    assert bundle.trace["variants"] == []
    assert len(bundle.trace["ranked_list_sizes"]) == 1
    assert bundle.context_chunks


def test_bundle_respects_max_context(regulations_chunks, qa_pairs):
    deps = scripted_pipeline(regulations_chunks, qa_pairs, "skip meetings?")
    bundle = retrieve_bundle("How many meetings can be skipped?", deps)
    assert len(bundle.context_chunks) <= 3
    assert len(bundle.fewshot_examples) <= 2


def test_bundle_chunks_exist_and_unique(regulations_chunks, qa_pairs):
    deps = scripted_pipeline(regulations_chunks, qa_pairs, "skip meetings?")
    bundle = retrieve_bundle("How many meetings can be skipped?", deps)
    ids = [c.id for c, _, _ in bundle.context_chunks]
    assert len(set(ids)) == len(ids)
    assert all(cid in deps.chunks for cid in ids)


def test_bundle_scores_sorted_descending(regulations_chunks, qa_pairs):
    deps = scripted_pipeline(regulations_chunks, qa_pairs, "skip meetings?")
    bundle = retrieve_bundle("How many meetings can be skipped?", deps)
    rerank_scores = [score for _, _, score in bundle.context_chunks]
    assert rerank_scores == sorted(rerank_scores, reverse=True)


def test_bundle_empty_store_raises():
    deps = make_pipeline([], llm=ScriptedProvider(default="x"))
    with pytest.raises(EmptyStore):
        retrieve_bundle("anything?", deps)


def test_bundle_matches_staged_execution(qa_pairs):
    """Independent hand-execution of search -> fuse -> rerank on 5 chunks."""
    chunks = [
        chunk("c1", "meetings may be skipped once"),
        chunk("c2", "two skipped meetings lower the grade"),
        chunk("c3", "examinations are mandatory"),
        chunk("c4", "groups have seven students"),
        chunk("c5", "plagiarism is escalated"),
    ]
    question = "How many meetings can be skipped?"
    variant = "skipped meetings limit?"
    deps = make_pipeline(
        chunks,
        [],
        llm=ScriptedProvider([ScriptedRule(match="User question:", response=variant)]),
        reranker=ScriptedReranker({"grade": 0.9}, default=0.4),
        config=RetrievalConfig(n_variants=1, per_query_k=3, max_context=2, max_fewshot=2),
    )

    # stage 1: per-query top-k searches
    ranked_lists = []
    for query in (question, variant):
        vec = deps.embedder.embed_batch([query])[0]
        hits = deps.store.search(
            SearchRequest(query_vector=vec, mode="topk", k=3, kind_filter="chunk")
        )
        ranked_lists.append([h.item_id for h in hits])
    # stage 2: reference fusion, truncate to max_context
    fused = ref_rrf(ranked_lists, 60)[:2]
    expected_ids = [item_id.removeprefix("chunk:") for item_id, _ in fused]
    # stage 3: reference rerank (scripted scores, ties broken by id)
    scores = {cid: (0.9 if "grade" in deps.chunks[cid].text else 0.4) for cid in expected_ids}
    expected_order = sorted(expected_ids, key=lambda cid: (-scores[cid], cid))

    bundle = retrieve_bundle(question, deps)
    assert [c.id for c, _, _ in bundle.context_chunks] == expected_order
    fused_by_id = {item_id.removeprefix("chunk:"): s for item_id, s in fused}
    for c, fused_score, rerank_score in bundle.context_chunks:
        assert fused_score == pytest.approx(fused_by_id[c.id], abs=1e-12)
        assert rerank_score == pytest.approx(scores[c.id])
