"""Self-reflection fallback loop around retrieval and generation.

Each draft answer passes two LLM-as-judge gates: a hallucination check
(is every claim grounded in the retrieved facts?) and an answer check
(does it resolve the question?). Failures trigger bounded regeneration,
bounded question rewriting, and finally a clarification dialogue with
the user. A second clarification request within one question's lifetime
terminates the loop with an apology, so no dialogue runs forever.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field
from enum import Enum

from .embedding import ProviderMalformedResponse, ProviderUnreachable
from .generation import DraftAnswer, generate_answer, render_facts
from .llm import CompletionProvider, CompletionRequest, UnparseableVerdict, judge_binary
from .retrieval import PipelineDeps, retrieve_bundle

FALLBACK_CLARIFICATION = (
    "Could you rephrase your question or add more detail about your situation?"
)

APOLOGY_ANSWER = (
    "I'm sorry, I could not find a reliable answer to your question. "
    "Please contact the project coordinator directly."
)

GROUNDED_PROMPT = (
    "{facts}\n\n"
    "Decide if the answer below is fully grounded in the facts above: every claim "
    "must be supported by those facts. Reply with yes or no only.\n\n"
    "Claimed answer:\n{answer}"
)

RESOLVES_PROMPT = (
    "Question:\n{question}\n\n"
    "Decide if the proposed answer below resolves the question above. "
    "Reply with yes or no only.\n\n"
    "Proposed answer:\n{answer}"
)

REWRITE_PROMPT = (
    "The answer so far did not resolve the student's question. Rewrite the question "
    "to be clearer or more specific so that better documents can be found. "
    "Output only the rewritten question.\n\n"
    "Previous answer:\n{answer}\n\n"
    "Original question:\n{question}"
)

CLARIFICATION_PROMPT = (
    "You could not find a satisfying answer. Ask the student one short clarification "
    "question that would help narrow down what they need.\n\n"
    "Student question:\n{question}"
)

HARD_BUDGET_CAP = 5


class ReflectionError(Exception):
    pass


class State(str, Enum):
    RETRIEVE = "Retrieve"
    GENERATE = "Generate"
    HALLUCINATION_CHECK = "HallucinationCheck"
    ANSWER_CHECK = "AnswerCheck"
    REWRITE = "Rewrite"
    AWAIT_CLARIFICATION = "AwaitClarification"
    ANSWERED = "Answered"
    FAILED = "Failed"


@dataclass
class ReflectionConfig:
    max_rewrites: int = 2
    max_regenerations: int = 2

    def __post_init__(self) -> None:
        for name, value in (("max_rewrites", self.max_rewrites),
                            ("max_regenerations", self.max_regenerations)):
            if not 0 <= value <= HARD_BUDGET_CAP:
                raise ValueError(f"{name} must lie in 0..{HARD_BUDGET_CAP}")


@dataclass
class ReflectionSession:
    """Per-conversation state machine record; one question lifecycle at a time."""

    session_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    original_question: str = ""
    current_question: str = ""
    rewrites_used: int = 0
    regenerations_used_this_cycle: int = 0
    regenerations_used_total: int = 0
    clarifications_requested: int = 0
    clarification_history: list[tuple[str, str]] = field(default_factory=list)
    pending_clarification: str = ""
    state: State = State.RETRIEVE
    transcript: list[tuple[str, str]] = field(default_factory=list)

    def note(self, state: State, text: str) -> None:
        self.transcript.append((state.value, text))

    def reset_for_question(self, question: str) -> None:
        self.original_question = question
        self.current_question = question
        self.rewrites_used = 0
        self.regenerations_used_this_cycle = 0
        self.regenerations_used_total = 0
        self.clarifications_requested = 0
        self.clarification_history = []
        self.pending_clarification = ""
        self.state = State.RETRIEVE


@dataclass
class TurnOutcome:
    kind: str  # answer | clarification_request
    text: str
    sources: list[tuple[str, float]]
    trace: list[tuple[str, str]]
    elapsed_ms: int = 0


@dataclass
class TurnDeps:
    pipeline: PipelineDeps
    config: ReflectionConfig = field(default_factory=ReflectionConfig)


def _verdict(prompt: str, llm: CompletionProvider) -> tuple[bool, str]:
    try:
        passed = judge_binary(prompt, llm)
    except UnparseableVerdict:
        return False, "unparseable verdict, treated as no"
    return passed, "yes" if passed else "no"


def check_grounded(draft: DraftAnswer, llm: CompletionProvider) -> bool:
    """True when the judge confirms every claim is supported by the facts."""
    prompt = GROUNDED_PROMPT.format(facts=render_facts(draft.bundle_ref), answer=draft.text)
    return _verdict(prompt, llm)[0]


def check_resolves(question: str, draft: DraftAnswer, llm: CompletionProvider) -> bool:
    """True when the judge confirms the answer addresses the question."""
    prompt = RESOLVES_PROMPT.format(question=question, answer=draft.text)
    return _verdict(prompt, llm)[0]


def rewrite_question(
    current: str, draft: DraftAnswer | None, llm: CompletionProvider
) -> str:
    """One provider-written rephrasing; degrades to the input on failure."""
    prompt = REWRITE_PROMPT.format(
        answer=draft.text if draft is not None else "(none)",
        question=current,
    )
    try:
        rewritten = llm.complete(
            CompletionRequest(system="You rewrite unclear questions.", user=prompt)
        ).strip()
    except Exception:
        return current
    if not rewritten or rewritten.lower() == current.strip().lower():
        return current
    return rewritten


def build_clarification(session: ReflectionSession, llm: CompletionProvider) -> str:
    """One clarification question for the user; fixed fallback on provider failure."""
    prompt = CLARIFICATION_PROMPT.format(question=session.original_question)
    try:
        text = llm.complete(
            CompletionRequest(system="You ask one short clarification question.", user=prompt)
        ).strip()
    except Exception:
        return FALLBACK_CLARIFICATION
    return text or FALLBACK_CLARIFICATION


def _retrieval_query(session: ReflectionSession) -> str:
    replies = [reply for _, reply in session.clarification_history]
    return " ".join([session.current_question, *replies]) if replies else session.current_question


def run_turn(session: ReflectionSession, user_input: str, deps: TurnDeps) -> TurnOutcome:
    """Drive one user turn through the reflection loop until it needs the user again.

    A session in AwaitClarification treats the input as the clarification
    reply; any other state starts a fresh question lifecycle. Provider
    transport failures abort the turn with a clarification request
    carrying the fixed fallback text.
    """
    started = time.monotonic()
    if session.state is State.AWAIT_CLARIFICATION:
        session.clarification_history.append((session.pending_clarification, user_input))
        session.note(State.AWAIT_CLARIFICATION, f"user replied: {user_input}")
        session.pending_clarification = ""
    else:
        session.reset_for_question(user_input)

    try:
        outcome = _drive(session, deps)
    except (ProviderUnreachable, ProviderMalformedResponse) as exc:
        session.state = State.FAILED
        session.note(State.FAILED, f"provider_unreachable: {exc}")
        outcome = TurnOutcome(
            kind="clarification_request",
            text=FALLBACK_CLARIFICATION,
            sources=[],
            trace=list(session.transcript),
        )
    outcome.elapsed_ms = int(round((time.monotonic() - started) * 1000))
    return outcome


def _drive(session: ReflectionSession, deps: TurnDeps) -> TurnOutcome:
    cfg = deps.config
    llm = deps.pipeline.llm
    while True:
        session.state = State.RETRIEVE
        query = _retrieval_query(session)
        bundle = retrieve_bundle(query, deps.pipeline)
        bundle.question = session.current_question
        bundle.trace["retrieval_query"] = query
        session.regenerations_used_this_cycle = 0
        session.note(
            State.RETRIEVE,
            f"context={len(bundle.context_chunks)} fewshot={len(bundle.fewshot_examples)} "
            f"variants={len(bundle.trace['variants'])}",
        )

        draft = None
        grounded = False
        while True:
            session.state = State.GENERATE
            draft = generate_answer(
                bundle,
                session.clarification_history,
                llm,
                generation_index=session.regenerations_used_this_cycle + 1,
            )
            session.note(State.GENERATE, f"attempt {draft.generation_index}")

            session.state = State.HALLUCINATION_CHECK
            grounded, note = _verdict(
                GROUNDED_PROMPT.format(facts=render_facts(bundle), answer=draft.text), llm
            )
            session.note(State.HALLUCINATION_CHECK, note)
            if grounded:
                break
            if session.regenerations_used_this_cycle < cfg.max_regenerations:
                session.regenerations_used_this_cycle += 1
                session.regenerations_used_total += 1
                continue
            session.note(
                State.HALLUCINATION_CHECK,
                "regeneration budget exhausted, treating as answer-check failure",
            )
            break

        resolved = False
        if grounded:
            session.state = State.ANSWER_CHECK
            resolved, note = _verdict(
                RESOLVES_PROMPT.format(question=session.current_question, answer=draft.text),
                llm,
            )
            session.note(State.ANSWER_CHECK, note)
        if resolved:
            session.state = State.ANSWERED
            session.note(State.ANSWERED, "both checks passed")
            return TurnOutcome(
                kind="answer",
                text=draft.text,
                sources=[(c.id, score) for c, _, score in bundle.context_chunks],
                trace=list(session.transcript),
            )

        if session.rewrites_used < cfg.max_rewrites:
            session.state = State.REWRITE
            rewritten = rewrite_question(session.current_question, draft, llm)
            session.rewrites_used += 1
            if rewritten == session.current_question:
                session.note(State.REWRITE, "rewrite made no progress, budget consumed")
            else:
                session.note(State.REWRITE, rewritten)
            session.current_question = rewritten
            continue

        if session.clarifications_requested >= 1:
            session.state = State.FAILED
            session.note(State.FAILED, "clarification already used for this question")
            return TurnOutcome(
                kind="answer",
                text=APOLOGY_ANSWER,
                sources=[],
                trace=list(session.transcript),
            )

        session.clarifications_requested += 1
        session.state = State.AWAIT_CLARIFICATION
        clarification = build_clarification(session, llm)
        session.pending_clarification = clarification
        session.note(State.AWAIT_CLARIFICATION, clarification)
        return TurnOutcome(
            kind="clarification_request",
            text=clarification,
            sources=[],
            trace=list(session.transcript),
        )
