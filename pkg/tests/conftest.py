from __future__ import annotations

from pathlib import Path

import pytest

from va.corpus import Chunk, QaPair
from va.embedding import HashEmbedder
from va.retrieval import PipelineDeps, RetrievalConfig, ScriptedReranker
from va.vectorstore import IndexedItem, VectorStore

FIXTURES = Path(__file__).parent / "fixtures"


def write_chunk_file(path: Path, chunk_id: str, doc: str, body: str, **meta: str) -> Path:
    lines = ["---", f"id: {chunk_id}", f"doc: {doc}"]
    for key, value in meta.items():
        lines.append(f"{key}: {value}")
    lines.append("---")
    lines.append(body)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def make_pipeline(
    chunks: list[Chunk],
    qa_pairs: list[QaPair] | None = None,
    llm=None,
    reranker=None,
    config: RetrievalConfig | None = None,
    dimension: int = 64,
) -> PipelineDeps:
    """Assemble an in-memory pipeline over the given corpus."""
    embedder = HashEmbedder(dimension)
    store = VectorStore(dimension)
    items = [
        IndexedItem(f"chunk:{c.id}", "chunk", tuple(embedder.embed_batch([c.text])[0]), c.id)
        for c in chunks
    ]
    for pair in qa_pairs or []:
        vec = embedder.embed_batch([pair.question])[0]
        items.append(IndexedItem(f"qa:{pair.id}", "qa", tuple(vec), pair.id))
    store.upsert(items)
    return PipelineDeps(
        store=store,
        embedder=embedder,
        llm=llm,
        reranker=reranker if reranker is not None else ScriptedReranker(default=0.5),
        config=config or RetrievalConfig(),
        chunks={c.id: c for c in chunks},
        qa_pairs={p.id: p for p in (qa_pairs or [])},
    )


@pytest.fixture
def regulations_chunks() -> list[Chunk]:
    """Twelve chunks with distinctive vocabularies for predictable retrieval."""
    rows = [
        ("att-1", "rules", "One project meeting may be skipped in phases one and two combined."),
        ("att-2", "rules", "Skipping two meetings lowers the project grade by one point."),
        ("att-3", "rules", "Skipping three meetings results in a no-grade for the project."),
        ("exam-1", "exams", "Missing the final product examination results in a no-grade."),
        ("exam-2", "exams", "The resit for the product examination happens four weeks later."),
        ("exam-3", "exams", "Pre-examination attendance is mandatory for every group member."),
        ("grade-1", "grading", "Individual grades combine tutor assessment and peer review."),
        ("grade-2", "grading", "The final report counts for sixty percent of the grade."),
        ("group-1", "groups", "Project groups contain six or seven students with a fixed tutor."),
        ("group-2", "groups", "Inactive group members must be reported to the coordinator."),
        ("force-1", "policies", "Force majeure cases require written evidence within five days."),
        ("plag-1", "policies", "Plagiarism in deliverables is escalated to the examination board."),
    ]
    return [
        Chunk(id=cid, doc_id=doc, title=cid, section_path="1", text=text)
        for cid, doc, text in rows
    ]


@pytest.fixture
def qa_pairs() -> list[QaPair]:
    return [
        QaPair("qa-1", "Can I skip a project meeting?", "One meeting in phases one and two."),
        QaPair("qa-2", "What if I miss the final examination?", "You receive a no-grade."),
        QaPair("qa-3", "How large are project groups?", "Six or seven students."),
        QaPair("qa-4", "What counts toward the individual grade?", "Tutor assessment and peers."),
        QaPair("qa-5", "How do I report force majeure?", "Written evidence within five days."),
    ]
