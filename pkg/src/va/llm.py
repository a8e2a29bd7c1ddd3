"""Generative-provider contract: remote chat completions plus a scripted double.

The scripted provider answers from an ordered rule list (first substring
match on the user prompt wins) and performs no I/O, which keeps every
pipeline stage deterministic under test. The remote provider speaks the
common `/v1/chat/completions` wire format and records one entry per call
into an append-only log (timestamp, latency, prompt byte count).
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from .embedding import API_KEY_ENV, ProviderMalformedResponse, ProviderUnreachable

DEFAULT_TEMPERATURE = 0.2
VARIANT_TEMPERATURE = 0.7  # query rephrasing benefits from diversity


class LlmError(Exception):
    pass


class NoRuleMatched(LlmError):
    pass


class UnparseableVerdict(LlmError):
    pass


@dataclass
class CompletionRequest:
    system: str
    user: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.user:
            raise ValueError("user prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


class CompletionProvider(Protocol):
    def complete(self, req: CompletionRequest) -> str: ...


@dataclass
class CallRecord:
    timestamp: float
    latency_ms: float
    prompt_bytes: int


class CallLog:
    """Append-only, thread-safe record of remote provider calls."""

    def __init__(self) -> None:
        self._records: list[CallRecord] = []
        self._lock = threading.Lock()

    def append(self, record: CallRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)

    def latencies_ms(self) -> list[float]:
        with self._lock:
            return [r.latency_ms for r in self._records]


@dataclass
class ScriptedRule:
    """One scripted response: fires when `match` occurs in the user prompt."""

    match: str
    response: str
    consumed_once: bool = False


class ScriptedProvider:
    """Deterministic test double; rules are evaluated in declaration order.

    A consumed_once rule is removed after it fires, so sequences of
    verdicts ("no", "no", "yes") script naturally. Falls back to
    `default` when nothing matches, else raises NoRuleMatched.
    """

    def __init__(self, rules: list[ScriptedRule] | None = None, default: str | None = None):
        self._rules = list(rules or [])
        self.default = default
        self.calls: list[CompletionRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_script_file(cls, path: str | Path) -> "ScriptedProvider":
        """Load rules from JSON: {"default": str|null, "rules": [{match, response, consumed_once?}]}."""
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = [
            ScriptedRule(
                match=row["match"],
                response=row["response"],
                consumed_once=bool(row.get("consumed_once", False)),
            )
            for row in payload.get("rules", [])
        ]
        return cls(rules, default=payload.get("default"))

    def complete(self, req: CompletionRequest) -> str:
        with self._lock:
            self.calls.append(req)
            for idx, rule in enumerate(self._rules):
                if rule.match in req.user:
                    if rule.consumed_once:
                        del self._rules[idx]
                    return rule.response
            if self.default is not None:
                return self.default
        raise NoRuleMatched(f"no scripted rule matches prompt: {req.user[:120]!r}")


class RemoteChatProvider:
    """Chat-completions client with simple retry and call logging."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        timeout: float = 60.0,
        max_retries: int = 2,
        call_log: CallLog | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.call_log = call_log if call_log is not None else CallLog()

    def complete(self, req: CompletionRequest) -> str:
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        started = time.time()
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = httpx.post(
                    f"{self.endpoint}/v1/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            self.call_log.append(
                CallRecord(
                    timestamp=started,
                    latency_ms=(time.time() - started) * 1000.0,
                    prompt_bytes=len(req.user.encode("utf-8")),
                )
            )
            try:
                return str(resp.json()["choices"][0]["message"]["content"])
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ProviderMalformedResponse(f"bad chat payload: {exc}") from exc
        raise ProviderUnreachable(
            f"chat provider at {self.endpoint} failed after "
            f"{self.max_retries + 1} attempts: {last_error}"
        )


def complete(req: CompletionRequest, provider: CompletionProvider) -> str:
    return provider.complete(req)


def judge_binary(question_prompt: str, provider: CompletionProvider) -> bool:
    """Strict yes/no gate: anything not prefixed yes/no raises UnparseableVerdict."""
    req = CompletionRequest(
        system="You answer strictly with yes or no.",
        user=question_prompt,
    )
    verdict = provider.complete(req).strip().lower()
    if verdict.startswith("yes"):
        return True
    if verdict.startswith("no"):
        return False
    raise UnparseableVerdict(f"expected a yes/no reply, got {verdict[:80]!r}")
