"""Retrieval-augmented virtual assistant for project regulations."""

from .corpus import Chunk, EvalCase, QaPair, load_eval_dataset, load_qa_dataset, parse_corpus_dir
from .embedding import EmbedderConfig, HashEmbedder, cosine_similarity, hash_embed
from .llm import CompletionRequest, ScriptedProvider, ScriptedRule, judge_binary
from .reflection import ReflectionConfig, ReflectionSession, TurnDeps, TurnOutcome, run_turn
from .retrieval import PipelineDeps, RetrievalBundle, RetrievalConfig, retrieve_bundle, rrf_fuse
from .vectorstore import IndexedItem, ScoredHit, SearchRequest, VectorStore

__all__ = [
    "Chunk",
    "CompletionRequest",
    "EmbedderConfig",
    "EvalCase",
    "HashEmbedder",
    "IndexedItem",
    "PipelineDeps",
    "QaPair",
    "ReflectionConfig",
    "ReflectionSession",
    "RetrievalBundle",
    "RetrievalConfig",
    "ScoredHit",
    "ScriptedProvider",
    "ScriptedRule",
    "SearchRequest",
    "TurnDeps",
    "TurnOutcome",
    "VectorStore",
    "cosine_similarity",
    "hash_embed",
    "judge_binary",
    "load_eval_dataset",
    "load_qa_dataset",
    "parse_corpus_dir",
    "retrieve_bundle",
    "rrf_fuse",
    "run_turn",
]

__version__ = "0.1.0"
