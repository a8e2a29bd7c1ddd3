from __future__ import annotations

import math
import random

import pytest

from va.embedding import DimensionMismatch
from va.vectorstore import (
    CorruptSnapshot,
    IndexedItem,
    IoFailure,
    ScoredHit,
    SearchRequest,
    VectorStore,
)

from oracles import ref_mmr, ref_topk


def make_store(vectors: dict[str, list[float]], kind: str = "chunk") -> VectorStore:
    dim = len(next(iter(vectors.values())))
    store = VectorStore(dim)
    store.upsert(
        IndexedItem(item_id, kind, tuple(vec), item_id) for item_id, vec in vectors.items()
    )
    return store


def random_unit(rng: random.Random, dim: int) -> list[float]:
    vec = [rng.gauss(0, 1) for _ in range(dim)]
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec]


def test_upsert_overwrites_duplicates():
    store = make_store({"a": [1.0, 0.0], "b": [0.0, 1.0], "c": [1.0, 1.0]})
    size = store.upsert([IndexedItem("a", "chunk", (0.0, 1.0), "a")])
    assert size == 3
    assert store.get("a").vector == (0.0, 1.0)


def test_upsert_into_empty_store():
    store = VectorStore(2)
    assert store.upsert([IndexedItem("x", "chunk", (1.0, 0.0), "x")]) == 1


def test_upsert_dimension_mismatch():
    store = VectorStore(2)
    with pytest.raises(DimensionMismatch):
        store.upsert([IndexedItem("x", "chunk", (1.0, 0.0, 0.0), "x")])


def test_topk_exact_match():
    store = make_store({"A": [1.0, 0.0], "B": [0.0, 1.0]})
    hits = store.search(SearchRequest(query_vector=[1.0, 0.0], mode="topk", k=1))
    assert hits == [ScoredHit("A", 1.0)]


def test_threshold_filters_low_scores():
    store = make_store({"A": [1.0, 0.0], "B": [0.0, 1.0]})
    hits = store.search(
        SearchRequest(query_vector=[1.0, 0.0], mode="threshold", score_threshold=0.9, k=10)
    )
    assert [h.item_id for h in hits] == ["A"]


def test_threshold_caps_at_k():
    store = make_store({f"i{n}": [1.0, 0.0] for n in range(5)})
    hits = store.search(
        SearchRequest(query_vector=[1.0, 0.0], mode="threshold", score_threshold=0.5, k=3)
    )
    assert len(hits) == 3


def test_mmr_prefers_diverse_second_pick():
    # near-duplicate B ties with orthogonal C on the raw objective at
    # lambda 0.5; the redundancy tie-break must prefer C
    store = make_store({"A": [1.0, 0.0], "B": [0.999, 0.0447], "C": [0.0, 1.0]})
    hits = store.search(SearchRequest(query_vector=[1.0, 0.0], mode="mmr", k=2, mmr_lambda=0.5))
    assert [h.item_id for h in hits] == ["A", "C"]
    oracle = ref_mmr(
        {"A": [1.0, 0.0], "B": [0.999, 0.0447], "C": [0.0, 1.0]}, [1.0, 0.0], 2, 0.5
    )
    assert [h.item_id for h in hits] == [item_id for item_id, _ in oracle]


def test_mmr_first_element_matches_topk_first():
    rng = random.Random(3)
    vectors = {f"v{i}": random_unit(rng, 6) for i in range(20)}
    store = make_store(vectors)
    query = random_unit(rng, 6)
    top = store.search(SearchRequest(query_vector=query, mode="topk", k=5))
    for lam in (0.0, 0.3, 0.7, 1.0):
        mmr = store.search(SearchRequest(query_vector=query, mode="mmr", k=5, mmr_lambda=lam))
        assert mmr[0].item_id == top[0].item_id


def test_mmr_lambda_one_equals_topk_selection():
    rng = random.Random(5)
    vectors = {f"v{i}": random_unit(rng, 4) for i in range(30)}
    store = make_store(vectors)
    query = random_unit(rng, 4)
    top = store.search(SearchRequest(query_vector=query, mode="topk", k=6))
    mmr = store.search(SearchRequest(query_vector=query, mode="mmr", k=6, mmr_lambda=1.0))
    assert [h.item_id for h in mmr] == [h.item_id for h in top]


def test_topk_sorted_descending_with_id_tiebreak():
    store = make_store({"b": [1.0, 0.0], "a": [1.0, 0.0], "c": [0.5, 0.5]})
    hits = store.search(SearchRequest(query_vector=[1.0, 0.0], mode="topk", k=3))
    assert [h.item_id for h in hits] == ["a", "b", "c"]
    assert hits[0].score >= hits[1].score >= hits[2].score


def test_search_empty_store_returns_empty():
    store = VectorStore(2)
    assert store.search(SearchRequest(query_vector=[1.0, 0.0])) == []


def test_search_kind_filter():
    store = VectorStore(2)
    store.upsert(
        [
            IndexedItem("chunk:a", "chunk", (1.0, 0.0), "a"),
            IndexedItem("qa:b", "qa", (1.0, 0.0), "b"),
        ]
    )
    hits = store.search(SearchRequest(query_vector=[1.0, 0.0], k=5, kind_filter="qa"))
    assert [h.item_id for h in hits] == ["qa:b"]


def test_search_query_dimension_mismatch():
    store = make_store({"a": [1.0, 0.0]})
    with pytest.raises(DimensionMismatch):
        store.search(SearchRequest(query_vector=[1.0, 0.0, 0.0]))


def test_topk_matches_bruteforce_over_100_seeds():
    for seed in range(100):
        rng = random.Random(seed)
        dim = rng.randint(2, 8)
        vectors = {
            f"item-{i:02d}": random_unit(rng, dim) for i in range(rng.randint(1, 50))
        }
        store = make_store(vectors)
        query = random_unit(rng, dim)
        k = rng.randint(1, 12)
        hits = store.search(SearchRequest(query_vector=query, mode="topk", k=k))
        expected = ref_topk(vectors, query, k)
        assert [(h.item_id, pytest.approx(h.score, abs=1e-12)) for h in hits] == [
            (item_id, pytest.approx(score, abs=1e-12)) for item_id, score in expected
        ]
        # every omitted item scores no better than the worst returned hit
        if hits:
            worst = hits[-1].score
            returned = {h.item_id for h in hits}
            for item_id, vec in vectors.items():
                if item_id not in returned:
                    from oracles import ref_cosine

                    assert ref_cosine(query, vec) <= worst + 1e-12


def test_mmr_matches_bruteforce_over_100_seeds():
    for seed in range(100):
        rng = random.Random(1000 + seed)
        dim = rng.randint(2, 6)
        vectors = {
            f"item-{i:02d}": random_unit(rng, dim) for i in range(rng.randint(1, 50))
        }
        store = make_store(vectors)
        query = random_unit(rng, dim)
        k = rng.randint(1, 10)
        lam = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0])
        hits = store.search(
            SearchRequest(query_vector=query, mode="mmr", k=k, mmr_lambda=lam)
        )
        expected = ref_mmr(vectors, query, k, lam)
        assert [h.item_id for h in hits] == [item_id for item_id, _ in expected]
        for hit, (_, score) in zip(hits, expected):
            assert hit.score == pytest.approx(score, abs=1e-12)


def test_threshold_is_prefix_of_topk():
    rng = random.Random(42)
    vectors = {f"v{i}": random_unit(rng, 4) for i in range(25)}
    store = make_store(vectors)
    query = random_unit(rng, 4)
    top = store.search(SearchRequest(query_vector=query, mode="topk", k=10))
    threshold = top[-1].score
    thr_hits = store.search(
        SearchRequest(query_vector=query, mode="threshold", score_threshold=threshold, k=10)
    )
    assert {h.item_id for h in thr_hits} <= {h.item_id for h in top}


def test_snapshot_roundtrip_preserves_results(tmp_path):
    rng = random.Random(9)
    vectors = {f"v{i}": random_unit(rng, 5) for i in range(10)}
    store = make_store(vectors)
    path = tmp_path / "snap.json"
    written = store.snapshot_save(path)
    assert written == path.stat().st_size
    loaded = VectorStore.snapshot_load(path)
    assert loaded.dimension == store.dimension
    assert len(loaded) == len(store)
    for q in range(5):
        query = random_unit(random.Random(100 + q), 5)
        for mode in ("topk", "mmr"):
            before = store.search(SearchRequest(query_vector=query, mode=mode, k=4))
            after = loaded.search(SearchRequest(query_vector=query, mode=mode, k=4))
            assert before == after


def test_snapshot_empty_store(tmp_path):
    store = VectorStore(3)
    path = tmp_path / "empty.json"
    store.snapshot_save(path)
    loaded = VectorStore.snapshot_load(path)
    assert len(loaded) == 0
    assert loaded.dimension == 3


def test_snapshot_save_unwritable_path(tmp_path):
    store = VectorStore(2)
    with pytest.raises(IoFailure):
        store.snapshot_save(tmp_path / "missing-dir" / "snap.json")


def test_snapshot_load_truncated_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"dimension": 2, "items": [{"item_id": "a"', encoding="utf-8")
    with pytest.raises(CorruptSnapshot):
        VectorStore.snapshot_load(path)


def test_snapshot_file_items_sorted_by_id(tmp_path):
    import json

    store = make_store({"zeta": [1.0, 0.0], "alpha": [0.0, 1.0]})
    path = tmp_path / "snap.json"
    store.snapshot_save(path)
    payload = json.loads(path.read_text())
    assert [item["item_id"] for item in payload["items"]] == ["alpha", "zeta"]
    assert payload["dimension"] == 2
