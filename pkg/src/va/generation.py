"""Prompt assembly and answer drafting.

The generation prompt is structured XML so the model can tell retrieved
facts, few-shot examples, clarification dialogue and the actual question
apart. Element order is fixed and all user/document text is escaped, so
the prompt always parses as well-formed XML under a single root.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

from .llm import DEFAULT_TEMPERATURE, CompletionProvider, CompletionRequest
from .retrieval import RetrievalBundle

ANSWER_SYSTEM = "You are a study-regulations assistant for university project groups."

GROUNDING_DIRECTIVE = (
    "Answer the student's question using only the facts inside the facts element. "
    "If the facts do not contain the needed information, reply exactly: "
    "I don't have that information. Keep the answer short and factual."
)

NO_INFORMATION_REPLY = "I don't have that information"


class GenerationError(Exception):
    pass


class EmptyContext(GenerationError):
    pass


@dataclass
class DraftAnswer:
    """One generated answer together with the exact prompt that produced it."""

    text: str
    prompt_used: str
    bundle_ref: RetrievalBundle
    generation_index: int = 1

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("draft answer text must be non-empty")
        if self.generation_index < 1:
            raise ValueError("generation_index starts at 1")


def render_facts(bundle: RetrievalBundle) -> str:
    """The <facts> element alone; shared with the hallucination judge prompt."""
    docs = "\n".join(
        f'<document id="{escape(chunk.id)}">{escape(chunk.text)}</document>'
        for chunk, _, _ in bundle.context_chunks
    )
    return f"<facts>\n{docs}\n</facts>"


def build_prompt(
    bundle: RetrievalBundle,
    clarification_history: list[tuple[str, str]] | None = None,
    warning: str | None = None,
) -> str:
    """Assemble the XML answer prompt from a retrieval bundle.

    Elements appear in fixed order: instructions, facts (one document per
    context chunk, bundle order), examples (one qa per few-shot pair),
    clarifications (only when history exists), question, and an optional
    trailing warning naming unsupported claims from a failed grounding
    check. Raises EmptyContext when the bundle has no context chunks.
    """
    if not bundle.context_chunks:
        raise EmptyContext("cannot build a prompt without context chunks")
    parts = [f"<instructions>{escape(GROUNDING_DIRECTIVE)}</instructions>"]
    parts.append(render_facts(bundle))
    examples = "\n".join(
        f"<qa><q>{escape(pair.question)}</q><a>{escape(pair.answer)}</a></qa>"
        for pair, _ in bundle.fewshot_examples
    )
    parts.append(f"<examples>\n{examples}\n</examples>" if examples else "<examples></examples>")
    if clarification_history:
        exchanges = "\n".join(
            f"<exchange><q>{escape(q)}</q><a>{escape(a)}</a></exchange>"
            for q, a in clarification_history
        )
        parts.append(f"<clarifications>\n{exchanges}\n</clarifications>")
    parts.append(f"<question>{escape(bundle.question)}</question>")
    if warning:
        parts.append(f"<warning>{escape(warning)}</warning>")
    return "\n".join(parts)


def generate_answer(
    bundle: RetrievalBundle,
    clarification_history: list[tuple[str, str]] | None,
    llm: CompletionProvider,
    generation_index: int = 1,
    warning: str | None = None,
) -> DraftAnswer:
    """Draft one answer at low temperature over the assembled prompt."""
    prompt = build_prompt(bundle, clarification_history, warning=warning)
    text = llm.complete(
        CompletionRequest(system=ANSWER_SYSTEM, user=prompt, temperature=DEFAULT_TEMPERATURE)
    )
    return DraftAnswer(
        text=text,
        prompt_used=prompt,
        bundle_ref=bundle,
        generation_index=generation_index,
    )
