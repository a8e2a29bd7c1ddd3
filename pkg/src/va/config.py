"""Application configuration and dependency wiring.

One precedence chain everywhere: built-in defaults, then VA_-prefixed
environment variables, then the JSON config file, then explicit flag
overrides. The build_* helpers turn a resolved config into live
providers and a loaded retrieval pipeline.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import parse_corpus_dir, load_qa_dataset
from .embedding import EmbedderConfig, build_embedder
from .llm import CallLog, RemoteChatProvider, ScriptedProvider
from .reflection import ReflectionConfig
from .retrieval import (
    EmbeddingReranker,
    PipelineDeps,
    RemoteReranker,
    RetrievalConfig,
    ScriptedReranker,
)
from .vectorstore import VectorStore

# Environment variables honored before the config file is applied.
ENV_KEYS = {
    "VA_INDEX_PATH": "index_path",
    "VA_CORPUS_DIR": "corpus_dir",
    "VA_QA_PATH": "qa_path",
    "VA_PORT": "port",
}


class ConfigError(Exception):
    pass


@dataclass
class LlmProviderConfig:
    kind: str = "remote"  # remote | scripted
    endpoint: str | None = None
    model: str | None = None
    script_path: str | None = None
    default_response: str | None = None


@dataclass
class RerankerProviderConfig:
    kind: str = "embedding"  # embedding | scripted | remote
    endpoint: str | None = None
    scores: dict[str, float] = field(default_factory=dict)
    default: float = 0.5


@dataclass
class AppConfig:
    index_path: str = "store.json"
    corpus_dir: str = "corpus"
    qa_path: str | None = None
    port: int = 8080
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    llm: LlmProviderConfig = field(default_factory=LlmProviderConfig)
    reranker: RerankerProviderConfig = field(default_factory=RerankerProviderConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    reflection: ReflectionConfig = field(default_factory=ReflectionConfig)
    eval_fixed_latency_ms: float | None = None
    feedback_log_path: str = "va_feedback.jsonl"
    question_log_path: str = "va_questions.jsonl"
    static_dir: str | None = None
    cors_origins: list[str] = field(default_factory=lambda: ["http://localhost:5173"])

    def echo(self) -> dict:
        """Deterministic summary embedded in evaluation reports."""
        return {
            "embedder": {"kind": self.embedder.kind, "dimension": self.embedder.dimension},
            "llm": {"kind": self.llm.kind, "model": self.llm.model},
            "reranker": {"kind": self.reranker.kind},
            "retrieval": {
                "n_variants": self.retrieval.n_variants,
                "per_query_k": self.retrieval.per_query_k,
                "max_context": self.retrieval.max_context,
                "max_fewshot": self.retrieval.max_fewshot,
                "lambda": self.retrieval.mmr_lambda,
                "rrf_k": self.retrieval.rrf_k,
            },
            "reflection": {
                "max_rewrites": self.reflection.max_rewrites,
                "max_regenerations": self.reflection.max_regenerations,
            },
            "eval_fixed_latency_ms": self.eval_fixed_latency_ms,
        }


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        elif value is not None:
            out[key] = value
    return out


def load_config(
    path: str | Path | None = None,
    overrides: dict | None = None,
    env: dict | None = None,
) -> AppConfig:
    """Resolve configuration: defaults < VA_* env < config file < overrides."""
    raw: dict = {}
    env = os.environ if env is None else env
    for env_key, config_key in ENV_KEYS.items():
        if env_key in env:
            raw[config_key] = env[env_key]
    if path is not None:
        try:
            file_raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        if not isinstance(file_raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        raw = _merge(raw, file_raw)
    if overrides:
        raw = _merge(raw, overrides)
    return _from_dict(raw)


def _from_dict(raw: dict) -> AppConfig:
    try:
        embedder = EmbedderConfig(**raw.get("embedder", {}))
        llm = LlmProviderConfig(**raw.get("llm", {}))
        reranker = RerankerProviderConfig(**raw.get("reranker", {}))
        retrieval_raw = dict(raw.get("retrieval", {}))
        if "lambda" in retrieval_raw:  # JSON key; `lambda` is reserved in Python
            retrieval_raw["mmr_lambda"] = retrieval_raw.pop("lambda")
        retrieval = RetrievalConfig(**retrieval_raw)
        reflection = ReflectionConfig(**raw.get("reflection", {}))
        config = AppConfig(
            index_path=str(raw.get("index_path", AppConfig.index_path)),
            corpus_dir=str(raw.get("corpus_dir", AppConfig.corpus_dir)),
            qa_path=raw.get("qa_path"),
            port=int(raw.get("port", AppConfig.port)),
            embedder=embedder,
            llm=llm,
            reranker=reranker,
            retrieval=retrieval,
            reflection=reflection,
            eval_fixed_latency_ms=raw.get("eval_fixed_latency_ms"),
            feedback_log_path=str(raw.get("feedback_log_path", AppConfig.feedback_log_path)),
            question_log_path=str(raw.get("question_log_path", AppConfig.question_log_path)),
            static_dir=raw.get("static_dir"),
            cors_origins=list(raw.get("cors_origins", ["http://localhost:5173"])),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return config


def build_llm(config: LlmProviderConfig, call_log: CallLog | None = None):
    if config.kind == "scripted":
        if config.script_path:
            provider = ScriptedProvider.from_script_file(config.script_path)
            if config.default_response is not None:
                provider.default = config.default_response
            return provider
        return ScriptedProvider(default=config.default_response)
    if config.kind == "remote":
        if not config.endpoint or not config.model:
            raise ConfigError("remote llm requires endpoint and model")
        return RemoteChatProvider(config.endpoint, config.model, call_log=call_log)
    raise ConfigError(f"unknown llm kind {config.kind!r}")


def build_reranker(config: RerankerProviderConfig, embedder):
    if config.kind == "embedding":
        return EmbeddingReranker(embedder)
    if config.kind == "scripted":
        return ScriptedReranker(config.scores, default=config.default)
    if config.kind == "remote":
        if not config.endpoint:
            raise ConfigError("remote reranker requires an endpoint")
        return RemoteReranker(config.endpoint)
    raise ConfigError(f"unknown reranker kind {config.kind!r}")


def build_pipeline(config: AppConfig, call_log: CallLog | None = None) -> PipelineDeps:
    """Load corpus, Q&A pairs and the snapshot index; wire all providers."""
    chunks = {c.id: c for c in parse_corpus_dir(config.corpus_dir)}
    qa_pairs = (
        {p.id: p for p in load_qa_dataset(config.qa_path)} if config.qa_path else {}
    )
    store = VectorStore.snapshot_load(config.index_path)
    embedder = build_embedder(config.embedder)
    llm = build_llm(config.llm, call_log=call_log)
    reranker = build_reranker(config.reranker, embedder)
    return PipelineDeps(
        store=store,
        embedder=embedder,
        llm=llm,
        reranker=reranker,
        config=config.retrieval,
        chunks=chunks,
        qa_pairs=qa_pairs,
    )
