"""Command-line entry point.

Subcommands cover the full pipeline: build-topics, build-random, similarity,
build-scenario, run, report. Every subcommand writes a manifest.json
capturing its inputs, flags and seed; rerunning with an identical manifest
reproduces the primary outputs byte for byte.

Exit codes: 0 success, 2 input/validation problem, 3 runtime/session failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from pathlib import Path

from . import __version__, figures
from .clustering import ClusterParams, populate_clusters, seed_clusters
from .corpus import Corpus, DocStore, load_documents, load_qrels, load_queries
from .embeddings import load_vectors
from .errors import InputError, SessionError
from .harness import (
    Bm25Ranker,
    LexicalOverlapRanker,
    RunConfig,
    TermWeightRanker,
    external_ranker_session,
    run_sequence,
)
from .metrics import (
    RunHistory,
    SimilarityMatrix,
    quartile_forgetting,
    similarity_matrix,
    write_quartile_csv,
)
from .seeding import rng_for
from .streams import (
    build_direct_transfer,
    build_information_update,
    build_language_drift,
    build_random_sequence,
    build_topic_sequence,
    load_scenario,
    load_sequence,
    save_scenario,
    save_sequence,
)

logger = logging.getLogger("topicstream")

CORPUS_FILES = {
    "queries": "queries.tsv",
    "docs": "docs.tsv",
    "qrels": "qrels.txt",
    "query_vectors": "query_vectors.tsv",
    "doc_vectors": "doc_vectors.tsv",
}


def _resolve(args, flag: str, kind: str, required: bool = True) -> Path | None:
    """Explicit flag wins; otherwise fall back to --corpus-dir conventions."""
    explicit = getattr(args, flag, None)
    if explicit:
        return Path(explicit)
    if args.corpus_dir:
        candidate = Path(args.corpus_dir) / CORPUS_FILES[kind]
        if candidate.exists() or required:
            return candidate
        return None
    if required:
        raise InputError(f"missing --{flag.replace('_', '-')} (or --corpus-dir)")
    return None


def _write_manifest(out_dir: Path, command: str, args, extras: dict | None = None) -> None:
    payload = {
        "tool": {"name": "topicstream", "version": __version__},
        "command": command,
        "seed": args.seed,
        "flags": {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in sorted(vars(args).items())
            if k != "func" and v is not None
        },
    }
    if extras:
        payload.update(extras)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _load_corpus_from_args(args) -> Corpus:
    queries = load_queries(_resolve(args, "queries", "queries"))
    docs = load_documents(_resolve(args, "documents", "docs"))
    qrels = load_qrels(_resolve(args, "qrels", "qrels"))
    return Corpus(queries=queries, docs=docs, qrels=qrels)


def cmd_build_topics(args) -> int:
    queries = load_queries(_resolve(args, "queries", "queries"))
    qrels = load_qrels(_resolve(args, "qrels", "qrels"))
    table = load_vectors(_resolve(args, "vectors", "query_vectors"))
    params = ClusterParams(
        t1=args.t1, t2=args.t2, min_size=args.min_size, sample_size=args.sample_size, seed=args.seed
    )

    judged = [q for q in qrels.judged_queries() if q in queries]
    missing = [q for q in judged if q not in table]
    if missing:
        logger.warning("%d judged queries lack embeddings and are skipped", len(missing))
        judged = [q for q in judged if q in table]
    if not judged:
        raise InputError("no judged queries with embeddings")

    sample_n = min(params.sample_size, len(judged))
    sample = sorted(rng_for(args.seed, "cluster-sample").sample(judged, sample_n))
    clusters = seed_clusters(sample, table, params)
    if not clusters:
        raise InputError("no community reached the minimum size; lower --t1 or --min-size")
    pool = sorted(set(judged) - {m for c in clusters for m in c.members})
    clusters = populate_clusters(clusters, pool, table, params)

    corpus = Corpus(queries=queries, docs=DocStore({}), qrels=qrels)  # docs unused here
    seq = build_topic_sequence(
        clusters, corpus, split_val=args.split_val, split_test=args.split_test, seed=args.seed
    )
    out = Path(args.out_dir)
    save_sequence(seq, out, queries)
    sizes = [t.size for t in seq.tasks]
    _write_manifest(
        out,
        "build-topics",
        args,
        {"clusters": len(seq.tasks), "task_sizes": sizes, "embedding_source": args.embedding_model},
    )
    mean = statistics.mean(sizes)
    sd = statistics.pstdev(sizes) if len(sizes) > 1 else 0.0
    print(f"clusters: {len(seq.tasks)}")
    print(f"queries per task: {mean:.1f} +/- {sd:.1f}")
    return 0


def cmd_build_random(args) -> int:
    reference = load_sequence(Path(args.reference_sequence))
    queries = load_queries(_resolve(args, "queries", "queries"))
    qrels = load_qrels(_resolve(args, "qrels", "qrels"))
    corpus = Corpus(queries=queries, docs=DocStore({}), qrels=qrels)
    seq = build_random_sequence(reference, corpus, seed=args.seed)
    out = Path(args.out_dir)
    save_sequence(seq, out, queries)
    _write_manifest(out, "build-random", args, {"tasks": len(seq.tasks)})
    print(f"random tasks: {len(seq.tasks)} (size-matched to {args.reference_sequence})")
    return 0


def cmd_similarity(args) -> int:
    seq = load_sequence(Path(args.sequence))
    queries = load_queries(_resolve(args, "queries", "queries"))
    docs = load_documents(_resolve(args, "documents", "docs"))
    from .retrieval import build_index

    idx = build_index(docs)
    matrix = similarity_matrix(
        seq,
        idx,
        queries,
        pool_size=args.pool_size,
        depth=args.depth,
        seed=args.seed,
        threads=args.threads,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    matrix.to_csv(out / "similarity.csv")
    if not args.no_figures:
        figures.save_similarity_heatmap(matrix, out / "similarity.png")
    _write_manifest(
        out,
        "similarity",
        args,
        {"intra_mean": matrix.intra_mean(), "inter_mean": matrix.inter_mean()},
    )
    print(f"intra mean: {matrix.intra_mean() * 100:.1f}")
    print(f"inter mean: {matrix.inter_mean() * 100:.1f}")
    return 0


def cmd_build_scenario(args) -> int:
    seq = load_sequence(Path(args.sequence))
    queries = load_queries(_resolve(args, "queries", "queries"))
    qrels = load_qrels(_resolve(args, "qrels", "qrels"))
    corpus = Corpus(queries=queries, docs=DocStore({}), qrels=qrels)
    if args.kind == "dt":
        scenarios = build_direct_transfer(seq, corpus, seed=args.seed, init_k=args.init_k)
    elif args.kind == "iu":
        table = load_vectors(_resolve(args, "vectors", "doc_vectors"))
        scenarios = build_information_update(seq, corpus, table, seed=args.seed, init_k=args.init_k)
    else:
        table = load_vectors(_resolve(args, "vectors", "query_vectors"))
        scenarios = build_language_drift(seq, corpus, table, seed=args.seed, init_k=args.init_k)
    out = Path(args.out_dir)
    for sc in scenarios:
        save_scenario(sc, out / sc.name, queries)
    _write_manifest(out, "build-scenario", args, {"scenarios": [sc.name for sc in scenarios]})
    print(f"{args.kind} scenarios written: {', '.join(sc.name for sc in scenarios)}")
    return 0


def _make_ranker(args, idx, cfg):
    if args.ranker == "bm25":
        return Bm25Ranker(idx)
    if args.ranker == "lexical":
        return LexicalOverlapRanker()
    if args.ranker == "termweight":
        return TermWeightRanker(
            idx,
            margin=args.margin,
            learning_rate=args.learning_rate,
            negatives_per_pair=args.negatives,
            seed=args.seed,
        )
    if args.ranker == "external":
        if not args.ranker_cmd:
            raise InputError("--ranker external requires --ranker-cmd")
        return external_ranker_session(args.ranker_cmd, cfg)
    raise InputError(f"unknown ranker {args.ranker!r}")


def cmd_run(args) -> int:
    if bool(args.sequence) == bool(args.scenario):
        raise InputError("pass exactly one of --sequence or --scenario")
    stream = load_sequence(Path(args.sequence)) if args.sequence else load_scenario(Path(args.scenario))
    corpus = _load_corpus_from_args(args)
    from .retrieval import build_index

    idx = build_index(corpus.docs)
    cfg = RunConfig(
        seed=args.seed,
        candidates_depth=args.depth,
        epochs_per_task=args.epochs,
        mode=args.mode,
        request_timeout=args.request_timeout,
        threads=args.threads,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ranker = _make_ranker(args, idx, cfg)
    try:
        history = run_sequence(stream, ranker, cfg, corpus, idx, out_dir=out)
    finally:
        if hasattr(ranker, "close"):
            ranker.close()
    _write_manifest(
        out,
        "run",
        args,
        {
            "ranker": getattr(ranker, "name", args.ranker),
            "trainable": bool(getattr(ranker, "trainable", False)),
            "step_task_ids": history.step_task_ids,
            "tracked": list(history.tracked),
            "toy_hyperparameters_are_toolkit_choices": args.ranker == "termweight",
        },
    )
    if not args.no_figures:
        figures.save_history_curves(history, out / "history.png")
    final = history.n_steps
    print(f"{'target':<24} {'mrr@10':>8} {'mrr@100':>8}")
    for label in history.tracked:
        rec = history.get(label, final)
        print(f"{label:<24} {rec.mrr10:>8.4f} {rec.mrr100:>8.4f}")
    mean10 = sum(history.get(t, final).mrr10 for t in history.tracked) / len(history.tracked)
    mean100 = sum(history.get(t, final).mrr100 for t in history.tracked) / len(history.tracked)
    print(f"{'mean':<24} {mean10:>8.4f} {mean100:>8.4f}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    history_path = run_dir / "history.csv"
    manifest_path = run_dir / "manifest.json"
    if not history_path.exists():
        raise InputError(f"no history.csv under {run_dir}")
    step_task_ids = None
    tracked = None
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        step_task_ids = manifest.get("step_task_ids")
        if manifest.get("tracked"):
            tracked = tuple(manifest["tracked"])
    history = RunHistory.from_csv(history_path, step_task_ids=step_task_ids, tracked=tracked)
    matrix = SimilarityMatrix.from_csv(Path(args.matrix))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = quartile_forgetting(history, matrix, metric=args.metric)
    write_quartile_csv(rows, out / "quartiles.csv")
    pooled = quartile_forgetting(history, matrix, metric=args.metric, pooled=True)
    write_quartile_csv(pooled, out / "quartiles_pooled.csv")

    lines = ["per-target peak steps:"]
    for label in history.tracked:
        series = history.scores(label, args.metric)
        best = max(range(len(series)), key=lambda j: (series[j], -j))
        lines.append(f"  {label}: best {args.metric} {series[best]:.4f} at step {best}")
    summary = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    if not args.no_figures:
        figures.save_history_curves(history, out / "history.png", metric=args.metric)
        figures.save_quartile_bars(rows, out / "quartiles.png")
    _write_manifest(out, "report", args, {"rows": len(rows)})
    print(summary, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topicstream",
        description="Build topic streams from a judged corpus and evaluate rankers continually over them.",
    )
    parser.add_argument("--version", action="version", version=f"topicstream {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=13, help="root random seed (default 13)")
        p.add_argument("--corpus-dir", default=None, help="directory with queries.tsv/docs.tsv/qrels.txt/...")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="cap on parallel query evaluation")
        p.add_argument("--log-level", default="warning",
                       choices=["debug", "info", "warning", "error"])

    p = sub.add_parser("build-topics", help="cluster queries into topics and write a task sequence")
    common(p)
    p.add_argument("--queries", help="tab-separated id/text query file")
    p.add_argument("--qrels", help="TREC qrels file")
    p.add_argument("--vectors", help="query embedding file (#dim header)")
    p.add_argument("--t1", type=float, default=0.7, help="seed community threshold (default 0.7)")
    p.add_argument("--t2", type=float, default=0.5, help="population threshold (default 0.5)")
    p.add_argument("--min-size", "-s", dest="min_size", type=int, default=40,
                   help="minimum seed community size (default 40)")
    p.add_argument("--sample-size", type=int, default=50_000,
                   help="queries sampled for community extraction (default 50000)")
    p.add_argument("--split-val", type=int, default=40, help="validation queries per task cap")
    p.add_argument("--split-test", type=int, default=40, help="test queries per task cap")
    p.add_argument("--embedding-model", default="unspecified",
                   help="free-form note recording which model produced the vectors")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_build_topics)

    p = sub.add_parser("build-random", help="size-matched random baseline for an existing sequence")
    common(p)
    p.add_argument("--reference-sequence", required=True, help="directory of the reference sequence")
    p.add_argument("--queries")
    p.add_argument("--qrels")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_build_random)

    p = sub.add_parser("similarity", help="pairwise task-overlap matrix for a sequence")
    common(p)
    p.add_argument("--sequence", required=True)
    p.add_argument("--queries")
    p.add_argument("--documents")
    p.add_argument("--pool-size", type=int, default=250)
    p.add_argument("--depth", type=int, default=1000, help="retrieval depth per pool query")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("build-scenario", help="controlled short streams derived from a sequence")
    common(p)
    p.add_argument("--kind", required=True, choices=["dt", "iu", "ld"])
    p.add_argument("--sequence", required=True)
    p.add_argument("--queries")
    p.add_argument("--qrels")
    p.add_argument("--vectors", help="doc vectors for iu, query vectors for ld")
    p.add_argument("--init-k", "-k", dest="init_k", type=int, default=5,
                   help="tasks aggregated into the warm-up task (default 5)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_build_scenario)

    p = sub.add_parser("run", help="run a ranker continually over a sequence or scenario")
    common(p)
    p.add_argument("--sequence")
    p.add_argument("--scenario")
    p.add_argument("--queries")
    p.add_argument("--documents")
    p.add_argument("--qrels")
    p.add_argument("--ranker", default="bm25", choices=["bm25", "termweight", "lexical", "external"])
    p.add_argument("--ranker-cmd", help="command line of an external ranker process")
    p.add_argument("--mode", default="sequential", choices=["sequential", "joint", "frozen"])
    p.add_argument("--depth", type=int, default=1000, help="re-ranking candidate depth")
    p.add_argument("--epochs", type=int, default=1, help="training epochs per task")
    p.add_argument("--margin", type=float, default=1.0, help="termweight hinge margin")
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--negatives", type=int, default=4, help="negatives sampled per positive pair")
    p.add_argument("--request-timeout", type=float, default=300.0,
                   help="seconds per external-ranker request")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="forgetting-by-similarity quartiles for a finished run")
    common(p)
    p.add_argument("--run", required=True, help="run directory holding history.csv")
    p.add_argument("--matrix", required=True, help="similarity matrix CSV")
    p.add_argument("--metric", default="mrr10", choices=["mrr10", "mrr100"])
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (InputError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 2
    except SessionError as exc:
        logger.error("%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
