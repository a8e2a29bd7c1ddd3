"""Loaders for the manually parsed chunk corpus and the JSONL datasets.

Chunks live one per file: a front-matter block delimited by `---` lines
(keys: id, doc, title, section, tags), followed by the chunk body. The
Q&A few-shot dataset and the labeled evaluation dataset are JSON Lines.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

_ID_PATTERN = re.compile(r"[A-Za-z0-9_.-]+")


class CorpusError(Exception):
    """Base for corpus parsing/loading failures."""


class MissingDelimiter(CorpusError):
    pass


class MissingKey(CorpusError):
    pass


class EmptyBody(CorpusError):
    pass


class MalformedFrontMatter(CorpusError):
    pass


class InvalidChunkId(CorpusError):
    pass


class DuplicateChunkId(CorpusError):
    pass


class MalformedLine(CorpusError):
    pass


class DuplicateId(CorpusError):
    pass


class EmptyRelevantList(CorpusError):
    pass


@dataclass(frozen=True)
class Chunk:
    """One manually parsed document fragment, the unit of retrieval."""

    id: str
    doc_id: str
    title: str = ""
    section_path: str = ""
    text: str = ""
    tags: tuple[str, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class QaPair:
    """A historical question with the coordinator's answer, used few-shot."""

    id: str
    question: str
    answer: str


@dataclass(frozen=True)
class EvalCase:
    """One labeled evaluation row: question, expected answer, relevant chunk ids."""

    question: str
    ground_truth: str
    relevant_chunk_ids: tuple[str, ...]


def parse_chunk_file(path: str | Path) -> Chunk:
    """Parse a single chunk file (front-matter + body) into a Chunk.

    Raises MissingDelimiter, MissingKey, EmptyBody, MalformedFrontMatter or
    InvalidChunkId; every error message names the file and offending line.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "---":
        raise MissingDelimiter(f"{path}:1: expected opening '---' delimiter")

    try:
        close_idx = lines.index("---", 1) + 1  # 1-based line number of the closer
    except ValueError:
        raise MissingDelimiter(f"{path}:{len(lines)}: missing closing '---' delimiter") from None

    meta: dict[str, str] = {}
    for idx, line in enumerate(lines[1 : close_idx - 1], start=2):
        if ":" not in line:
            raise MalformedFrontMatter(f"{path}:{idx}: expected 'key: value', got {line!r}")
        key, value = line.split(":", 1)
        meta[key.strip()] = value.strip()

    for required in ("id", "doc"):
        if not meta.get(required):
            raise MissingKey(f"{path}:1: front-matter is missing required key {required!r}")
    chunk_id = meta["id"]
    if not _ID_PATTERN.fullmatch(chunk_id):
        raise InvalidChunkId(f"{path}:1: id {chunk_id!r} must match [A-Za-z0-9_.-]+")

    body = "\n".join(lines[close_idx:]).strip()
    if not body:
        raise EmptyBody(f"{path}:{close_idx}: chunk body is empty")

    tags = tuple(t.strip() for t in meta.get("tags", "").split(",") if t.strip())
    return Chunk(
        id=chunk_id,
        doc_id=meta["doc"],
        title=meta.get("title", ""),
        section_path=meta.get("section", ""),
        text=body,
        tags=tags,
    )


def chunk_to_text(chunk: Chunk) -> str:
    """Serialize a Chunk back to front-matter + body.

    Round-trips through parse_chunk_file. Tags must not contain commas
    (the front-matter tag list is comma separated).
    """
    lines = ["---", f"id: {chunk.id}", f"doc: {chunk.doc_id}"]
    if chunk.title:
        lines.append(f"title: {chunk.title}")
    if chunk.section_path:
        lines.append(f"section: {chunk.section_path}")
    if chunk.tags:
        lines.append(f"tags: {', '.join(chunk.tags)}")
    lines.append("---")
    lines.append(chunk.text)
    return "\n".join(lines) + "\n"


def parse_corpus_dir(path: str | Path) -> list[Chunk]:
    """Parse every `.md` file under a directory (recursively).

    Returns chunks sorted by id. Raises DuplicateChunkId when two files
    declare the same id; parse errors propagate with file context.
    """
    root = Path(path)
    if not root.is_dir():
        raise CorpusError(f"corpus directory does not exist: {root}")
    seen: dict[str, Path] = {}
    chunks: list[Chunk] = []
    for file in sorted(root.rglob("*.md")):
        chunk = parse_chunk_file(file)
        if chunk.id in seen:
            raise DuplicateChunkId(
                f"chunk id {chunk.id!r} declared in both {seen[chunk.id]} and {file}"
            )
        seen[chunk.id] = file
        chunks.append(chunk)
    return sorted(chunks, key=lambda c: c.id)


def _read_jsonl(path: Path) -> list[tuple[int, dict]]:
    rows: list[tuple[int, dict]] = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(f"{path}:{line_no}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise MalformedLine(f"{path}:{line_no}: expected a JSON object")
        rows.append((line_no, obj))
    return rows


def _require_str(obj: dict, key: str, path: Path, line_no: int) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value.strip():
        raise MalformedLine(f"{path}:{line_no}: missing or empty field {key!r}")
    return value


def load_qa_dataset(path: str | Path) -> list[QaPair]:
    """Load the question/answer few-shot dataset from a JSONL file."""
    path = Path(path)
    pairs: list[QaPair] = []
    seen: set[str] = set()
    for line_no, obj in _read_jsonl(path):
        pair = QaPair(
            id=_require_str(obj, "id", path, line_no),
            question=_require_str(obj, "question", path, line_no),
            answer=_require_str(obj, "answer", path, line_no),
        )
        if pair.id in seen:
            raise DuplicateId(f"{path}:{line_no}: duplicate qa id {pair.id!r}")
        seen.add(pair.id)
        pairs.append(pair)
    return pairs


def load_eval_dataset(path: str | Path) -> list[EvalCase]:
    """Load labeled evaluation cases from a JSONL file."""
    path = Path(path)
    cases: list[EvalCase] = []
    for line_no, obj in _read_jsonl(path):
        question = _require_str(obj, "question", path, line_no)
        ground_truth = _require_str(obj, "ground_truth", path, line_no)
        ids = obj.get("relevant_chunk_ids")
        if not isinstance(ids, list) or not all(isinstance(i, str) and i for i in ids):
            raise MalformedLine(f"{path}:{line_no}: relevant_chunk_ids must be a list of ids")
        if not ids:
            raise EmptyRelevantList(f"{path}:{line_no}: relevant_chunk_ids is empty")
        cases.append(EvalCase(question, ground_truth, tuple(ids)))
    return cases
