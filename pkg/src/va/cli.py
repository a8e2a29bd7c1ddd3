"""Operator command line: ingest, ask, serve, eval.

Exit codes: 0 success, 1 usage error (synopsis on stderr), 2 runtime
error. Flags override the config file, which overrides VA_* environment
variables, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import sys

from .config import AppConfig, ConfigError, build_pipeline, load_config
from .corpus import CorpusError, load_eval_dataset, load_qa_dataset, parse_corpus_dir
from .embedding import EmbeddingError, build_embedder
from .evalharness import METRIC_NAMES, EvalError, JudgeAdapter, run_eval
from .llm import LlmError
from .reflection import ReflectionSession, State, TurnDeps, run_turn
from .retrieval import RetrievalError
from .vectorstore import IndexedItem, VectorStore, VectorStoreError

METRIC_LABELS = {
    "context_precision": "Context precision",
    "context_recall": "Context recall",
    "answer_relevancy": "Answer relevancy",
    "faithfulness": "Faithfulness",
    "custom_precision": "Custom precision",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="va", description="Regulations virtual assistant")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="parse corpus and qa, embed, write the index")
    ingest.add_argument("--corpus", help="directory of chunk .md files")
    ingest.add_argument("--qa", help="qa dataset (jsonl)")
    ingest.add_argument("--index", help="output snapshot path")
    ingest.add_argument("--config", help="config file (json)")

    ask = sub.add_parser("ask", help="answer one question through the full pipeline")
    ask.add_argument("question", help="the question to ask")
    ask.add_argument("--index", help="snapshot path")
    ask.add_argument("--config", help="config file (json)")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--port", type=int, help="listen port (default 8080)")
    serve.add_argument("--index", help="snapshot path")
    serve.add_argument("--config", help="config file (json)")

    evalp = sub.add_parser("eval", help="run the evaluation harness over a dataset")
    evalp.add_argument("--index", help="snapshot path")
    evalp.add_argument("--dataset", required=True, help="eval dataset (jsonl)")
    evalp.add_argument("--report", required=True, help="output report path (json)")
    evalp.add_argument("--config", help="config file (json)")

    return parser


def _resolve_config(args: argparse.Namespace, keys: dict[str, str]) -> AppConfig:
    overrides = {
        config_key: getattr(args, flag)
        for flag, config_key in keys.items()
        if getattr(args, flag, None) is not None
    }
    return load_config(path=getattr(args, "config", None), overrides=overrides)


def _cmd_ingest(args: argparse.Namespace) -> int:
    config = _resolve_config(
        args, {"corpus": "corpus_dir", "qa": "qa_path", "index": "index_path"}
    )
    chunks = parse_corpus_dir(config.corpus_dir)
    if not chunks:
        print(f"no chunks found under {config.corpus_dir}", file=sys.stderr)
        return 2
    qa_pairs = load_qa_dataset(config.qa_path) if config.qa_path else []
    embedder = build_embedder(config.embedder)

    vectors = embedder.embed_batch([c.text for c in chunks])
    items = [
        IndexedItem(f"chunk:{c.id}", "chunk", tuple(vec), c.id)
        for c, vec in zip(chunks, vectors)
    ]
    if qa_pairs:
        qa_vectors = embedder.embed_batch([p.question for p in qa_pairs])
        items.extend(
            IndexedItem(f"qa:{p.id}", "qa", tuple(vec), p.id)
            for p, vec in zip(qa_pairs, qa_vectors)
        )
    store = VectorStore(embedder.dimension)
    store.upsert(items)
    written = store.snapshot_save(config.index_path)
    print(
        f"indexed {len(chunks)} chunks and {len(qa_pairs)} qa pairs "
        f"(dimension {embedder.dimension}) -> {config.index_path} ({written} bytes)"
    )
    return 0


def _cmd_ask(args: argparse.Namespace) -> int:
    config = _resolve_config(args, {"index": "index_path"})
    pipeline = build_pipeline(config)
    deps = TurnDeps(pipeline=pipeline, config=config.reflection)
    session = ReflectionSession()

    outcome = run_turn(session, args.question, deps)
    while outcome.kind == "clarification_request" and session.state is State.AWAIT_CLARIFICATION:
        print(outcome.text)
        try:
            reply = input("> ")
        except EOFError:
            print("no clarification provided", file=sys.stderr)
            return 2
        outcome = run_turn(session, reply, deps)
    if outcome.kind == "clarification_request":
        # transport failure path: the fixed fallback, not a real clarification
        print(outcome.text, file=sys.stderr)
        return 2

    print(outcome.text)
    if outcome.sources:
        print("\nSources:")
        for chunk_id, score in outcome.sources:
            print(f"  {chunk_id}  {score:.4f}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    config = _resolve_config(args, {"index": "index_path", "port": "port"})
    app = create_app(config)
    uvicorn.run(app, host="127.0.0.1", port=config.port, log_level="info")
    return 0


def _format_table(aggregates: dict) -> str:
    lines = [f"{'Metric':<22}{'Value':>6}"]
    for name in METRIC_NAMES:
        value = aggregates.get(name)
        cell = f"{round(value * 100)}%" if value is not None else "n/a"
        lines.append(f"{METRIC_LABELS[name]:<22}{cell:>6}")
    return "\n".join(lines)


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _resolve_config(args, {"index": "index_path"})
    dataset = load_eval_dataset(args.dataset)
    pipeline = build_pipeline(config)
    judge_kind = "remote" if config.llm.kind == "remote" else "scripted"
    judge = JudgeAdapter(pipeline.llm, kind=judge_kind)
    report = run_eval(
        dataset,
        pipeline,
        judge,
        report_path=args.report,
        fixed_latency_ms=config.eval_fixed_latency_ms,
        config_echo=config.echo(),
    )
    print(_format_table(report.aggregates))
    mean = report.aggregates.get("latency_mean_ms")
    std = report.aggregates.get("latency_std_ms")
    if mean is not None:
        std_text = f"{std:.1f}" if std is not None else "n/a"
        print(f"\nLatency: mean {mean:.1f} ms, std {std_text} ms over {len(report.cases)} cases")
    failed = sum(1 for c in report.cases if c.failed)
    if failed:
        print(f"{failed} case(s) failed; see {args.report}", file=sys.stderr)
    print(f"report written to {args.report}")
    return 0


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "ingest":
            return _cmd_ingest(args)
        if args.command == "ask":
            return _cmd_ask(args)
        if args.command == "serve":
            return _cmd_serve(args)
        return _cmd_eval(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except (
        ConfigError,
        CorpusError,
        EmbeddingError,
        EvalError,
        LlmError,
        RetrievalError,
        VectorStoreError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
