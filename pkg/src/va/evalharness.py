"""Five-metric evaluation harness and response-time statistics.

Retrieval quality is scored with rank-weighted context precision, ground
truth sentence recall, and a set-based custom precision against manually
labeled relevant chunks. Generation quality is scored with answer
relevancy (cosine between the original question and questions regenerated
from the answer) and faithfulness (fraction of answer claims supported by
the retrieved context). The runner evaluates a labeled dataset case by
case with reflection disabled, so the metrics isolate the retrieval plus
generation path, and writes a deterministic JSON report.
"""

from __future__ import annotations

import json
import re
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import EvalCase
from .embedding import cosine_similarity
from .generation import generate_answer
from .llm import (
    CompletionProvider,
    CompletionRequest,
    UnparseableVerdict,
    judge_binary,
)
from .retrieval import PipelineDeps, retrieve_bundle

METRIC_NAMES = (
    "context_precision",
    "context_recall",
    "custom_precision",
    "answer_relevancy",
    "faithfulness",
)

RELEVANCE_PROMPT = (
    "Question:\n{question}\n\n"
    "Decide if the document below contains information relevant to answering the "
    "question above. Reply with yes or no only.\n\n"
    "Document:\n{document}"
)

ATTRIBUTION_PROMPT = (
    "Context:\n{context}\n\n"
    "Decide if the sentence below is supported by the context above. "
    "Reply with yes or no only.\n\n"
    "Sentence:\n{sentence}"
)

CLAIM_EXTRACTION_PROMPT = (
    "List every distinct factual claim made in the text below, one claim per line, "
    "with no numbering or commentary.\n\n"
    "Answer to analyze:\n{answer}"
)

CLAIM_SUPPORT_PROMPT = (
    "Context:\n{context}\n\n"
    "Decide if the claim below can be inferred from the context above. "
    "Reply with yes or no only.\n\n"
    "Claim:\n{claim}"
)

QUESTION_GEN_PROMPT = (
    "Generate {n} questions that the text below directly answers. "
    "Output one question per line with no numbering.\n\n"
    "Answer text:\n{answer}"
)

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
_LINE_PREFIX = re.compile(r"^\s*(?:\d+[.)]\s*|[-*]\s*)")


class EvalError(Exception):
    pass


class EmptyRelevantSet(EvalError):
    pass


class NoSentences(EvalError):
    pass


class NoClaims(EvalError):
    pass


class GenerationFailed(EvalError):
    pass


class EmptyList(EvalError):
    pass


def context_precision_at_k(relevance_flags: Sequence[int]) -> float:
    """Rank-weighted precision over an ordered 0/1 relevance list.

    Sum of Precision@k at each relevant rank, divided by the number of
    relevant items in the top K. Zero relevant items score 0.0.
    """
    if not relevance_flags:
        raise ValueError("relevance_flags must be non-empty")
    relevant_total = sum(1 for v in relevance_flags if v)
    if relevant_total == 0:
        return 0.0
    numerator = 0.0
    hits = 0
    for k, flag in enumerate(relevance_flags, start=1):
        if flag:
            hits += 1
            numerator += hits / k
    return numerator / relevant_total


def split_sentences(text: str) -> list[str]:
    """Sentences delimited by . ! ? followed by whitespace or end of text."""
    parts = [p.strip() for p in _SENTENCE_END.split(text)]
    return [p for p in parts if p.strip(".!?").strip()]


def context_recall(ground_truth: str, contexts: Sequence[str], judge: "JudgeAdapter") -> float:
    """Fraction of ground-truth sentences the judge attributes to the contexts."""
    sentences = split_sentences(ground_truth)
    if not sentences:
        raise NoSentences("ground truth contains no sentences")
    attributed = sum(1 for s in sentences if judge.attributed(s, contexts))
    return attributed / len(sentences)


def custom_precision(retrieved_ids: Sequence[str], relevant_ids: Sequence[str]) -> float:
    """|retrieved ∩ relevant| / |relevant| with set semantics."""
    relevant = set(relevant_ids)
    if not relevant:
        raise EmptyRelevantSet("relevant_ids must be non-empty")
    return len(set(retrieved_ids) & relevant) / len(relevant)


def answer_relevancy(
    original_question: str,
    answer: str,
    llm: CompletionProvider,
    embedder,
    n: int = 3,
) -> float:
    """Mean cosine between the original question and questions generated from the answer."""
    if not answer.strip():
        raise ValueError("answer must be non-empty")
    raw = llm.complete(
        CompletionRequest(
            system="You write questions answered by a given text.",
            user=QUESTION_GEN_PROMPT.format(n=n, answer=answer),
        )
    )
    generated = [_LINE_PREFIX.sub("", line).strip() for line in raw.splitlines()]
    generated = [g for g in generated if g][:n]
    if not generated:
        raise GenerationFailed("provider produced no artificial questions")
    vectors = embedder.embed_batch([original_question, *generated])
    original_vec = vectors[0]
    sims = [cosine_similarity(vec, original_vec) for vec in vectors[1:]]
    return sum(sims) / len(sims)


def faithfulness(answer: str, contexts: Sequence[str], judge: "JudgeAdapter") -> float:
    """Fraction of extracted answer claims supported by the contexts."""
    if not answer.strip():
        raise ValueError("answer must be non-empty")
    claims = judge.extract_claims(answer)
    if not claims:
        raise NoClaims("judge extracted no claims from the answer")
    supported = sum(1 for claim in claims if judge.supported(claim, contexts))
    return supported / len(claims)


def timing_stats(latencies_ms: Sequence[float]) -> tuple[float, float | None]:
    """Arithmetic mean and sample standard deviation (n-1); std is None for n=1."""
    if not latencies_ms:
        raise EmptyList("timing_stats requires at least one latency")
    mean = statistics.fmean(latencies_ms)
    if len(latencies_ms) < 2:
        return mean, None
    return mean, statistics.stdev(latencies_ms)


class JudgeAdapter:
    """LLM-backed evaluation judge with three faculties.

    Relevance verdicts per (question, chunk), sentence attribution per
    (sentence, contexts), and claim extraction plus per-claim support
    verdicts. Unparseable binary verdicts count as negative, never as
    positive. kind selects how run_eval sources relevance flags: a
    scripted judge defers to the labeled relevant ids, a remote one is
    asked per retrieved chunk.
    """

    def __init__(self, llm: CompletionProvider, kind: str = "scripted"):
        if kind not in ("scripted", "remote"):
            raise ValueError(f"unknown judge kind {kind!r}")
        self.llm = llm
        self.kind = kind

    def _binary(self, prompt: str) -> bool:
        try:
            return judge_binary(prompt, self.llm)
        except UnparseableVerdict:
            return False

    def relevant(self, question: str, chunk_text: str) -> bool:
        return self._binary(RELEVANCE_PROMPT.format(question=question, document=chunk_text))

    def attributed(self, sentence: str, contexts: Sequence[str]) -> bool:
        return self._binary(
            ATTRIBUTION_PROMPT.format(context="\n\n".join(contexts), sentence=sentence)
        )

    def extract_claims(self, answer: str) -> list[str]:
        raw = self.llm.complete(
            CompletionRequest(
                system="You list factual claims.",
                user=CLAIM_EXTRACTION_PROMPT.format(answer=answer),
            )
        )
        claims = [_LINE_PREFIX.sub("", line).strip() for line in raw.splitlines()]
        return [c for c in claims if c]

    def supported(self, claim: str, contexts: Sequence[str]) -> bool:
        return self._binary(
            CLAIM_SUPPORT_PROMPT.format(context="\n\n".join(contexts), claim=claim)
        )


@dataclass
class CaseResult:
    case: EvalCase
    retrieved_ids: list[str] = field(default_factory=list)
    answer: str = ""
    metrics: dict[str, float | None] = field(default_factory=dict)
    undefined: dict[str, str] = field(default_factory=dict)
    latency_ms: float = 0.0
    failed: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "question": self.case.question,
            "ground_truth": self.case.ground_truth,
            "relevant_chunk_ids": list(self.case.relevant_chunk_ids),
            "retrieved_ids": self.retrieved_ids,
            "answer": self.answer,
            "metrics": {name: self.metrics.get(name) for name in METRIC_NAMES},
            "undefined": self.undefined,
            "latency_ms": self.latency_ms,
            "failed": self.failed,
            "error": self.error,
        }


@dataclass
class MetricsReport:
    cases: list[CaseResult]
    aggregates: dict
    config: dict

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "cases": [c.to_dict() for c in self.cases],
            "aggregates": self.aggregates,
            "undefined_counts": self._undefined_counts(),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def _undefined_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in METRIC_NAMES}
        for case in self.cases:
            for name in case.undefined:
                counts[name] += 1
        return counts


def _evaluate_case(
    case: EvalCase,
    deps: PipelineDeps,
    judge: JudgeAdapter,
    fixed_latency_ms: float | None,
) -> CaseResult:
    result = CaseResult(case=case)
    missing = [cid for cid in case.relevant_chunk_ids if cid not in deps.chunks]
    if missing:
        result.failed = True
        result.error = f"relevant chunk ids not in corpus: {missing}"
        return result
    started = time.monotonic()
    try:
        bundle = retrieve_bundle(case.question, deps)
        draft = generate_answer(bundle, None, deps.llm, generation_index=1)
    except Exception as exc:
        result.failed = True
        result.error = f"{type(exc).__name__}: {exc}"
        return result
    result.latency_ms = (
        float(fixed_latency_ms)
        if fixed_latency_ms is not None
        else (time.monotonic() - started) * 1000.0
    )
    result.answer = draft.text
    result.retrieved_ids = [chunk.id for chunk, _, _ in bundle.context_chunks]
    contexts = [chunk.text for chunk, _, _ in bundle.context_chunks]

    if judge.kind == "remote":
        flags = [int(judge.relevant(case.question, text)) for text in contexts]
    else:
        relevant = set(case.relevant_chunk_ids)
        flags = [int(cid in relevant) for cid in result.retrieved_ids]

    computations = {
        "context_precision": lambda: context_precision_at_k(flags),
        "context_recall": lambda: context_recall(case.ground_truth, contexts, judge),
        "custom_precision": lambda: custom_precision(
            result.retrieved_ids, case.relevant_chunk_ids
        ),
        "answer_relevancy": lambda: answer_relevancy(
            case.question, draft.text, deps.llm, deps.embedder
        ),
        "faithfulness": lambda: faithfulness(draft.text, contexts, judge),
    }
    for name, compute in computations.items():
        try:
            result.metrics[name] = compute()
        except (NoClaims, NoSentences, GenerationFailed) as exc:
            result.metrics[name] = None
            result.undefined[name] = type(exc).__name__
    return result


def run_eval(
    dataset: Sequence[EvalCase],
    deps: PipelineDeps,
    judge: JudgeAdapter,
    report_path: str | Path | None = None,
    fixed_latency_ms: float | None = None,
    config_echo: dict | None = None,
) -> MetricsReport:
    """Evaluate every case and aggregate; failures stay in the report, not raised.

    fixed_latency_ms replaces wall-clock timing so scripted fixture runs
    produce byte-identical reports.
    """
    if not dataset:
        raise ValueError("evaluation dataset must be non-empty")
    cases = [_evaluate_case(case, deps, judge, fixed_latency_ms) for case in dataset]

    aggregates: dict = {}
    for name in METRIC_NAMES:
        defined = [
            c.metrics[name]
            for c in cases
            if not c.failed and c.metrics.get(name) is not None
        ]
        aggregates[name] = sum(defined) / len(defined) if defined else None
    latencies = [c.latency_ms for c in cases if not c.failed]
    if latencies:
        mean, std = timing_stats(latencies)
        aggregates["latency_mean_ms"] = mean
        aggregates["latency_std_ms"] = std
    else:
        aggregates["latency_mean_ms"] = None
        aggregates["latency_std_ms"] = None

    report = MetricsReport(cases=cases, aggregates=aggregates, config=config_echo or {})
    if report_path is not None:
        Path(report_path).write_text(report.to_json(), encoding="utf-8")
    return report
