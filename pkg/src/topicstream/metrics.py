"""Retrieval quality and forgetting metrics.

MRR@K per task, the forgetting score (best score a task ever reached along
the sequence minus its score at a given step), the retrieval-overlap score
between two tasks (shared retrieved documents over two sampled query pools),
full pairwise similarity matrices, and the quartile table that groups
forgetting by task similarity.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DocStore, QueryStore
from .errors import InputError
from .retrieval import InvertedIndex, Ranking, search
from .seeding import rng_for
from .streams import Task, TopicSequence

HISTORY_HEADER = ["task", "step", "mrr10", "mrr100"]
QUARTILE_HEADER = ["tracked_task", "quartile", "mean_similarity", "mean_mf"]


@dataclass(frozen=True)
class EvalRecord:
    """Scores for one tracked target at one training step."""

    task: str
    step: int
    mrr10: float
    mrr100: float


@dataclass
class RunHistory:
    """All evaluation records of one run, keyed by (target label, step).

    Steps run 0..n_steps: step 0 is the evaluation before sequence training,
    step j the one right after training the j-th task. step_task_ids[j]
    names the task trained at step j (index 0 is empty).
    """

    n_steps: int
    tracked: tuple[str, ...]
    step_task_ids: list[str] = field(default_factory=list)
    records: dict[tuple[str, int], EvalRecord] = field(default_factory=dict)

    def add(self, rec: EvalRecord) -> None:
        self.records[(rec.task, rec.step)] = rec

    def get(self, label: str, step: int) -> EvalRecord:
        return self.records[(label, step)]

    def scores(self, label: str, metric: str = "mrr10") -> list[float]:
        return [getattr(self.get(label, j), metric) for j in range(self.n_steps + 1)]

    def is_complete(self) -> bool:
        return all((t, j) in self.records for t in self.tracked for j in range(self.n_steps + 1))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_HEADER)
            for (label, step) in sorted(self.records):
                rec = self.records[(label, step)]
                writer.writerow([label, step, repr(rec.mrr10), repr(rec.mrr100)])

    @classmethod
    def from_csv(
        cls,
        path: str | Path,
        step_task_ids: list[str] | None = None,
        tracked: tuple[str, ...] | None = None,
    ) -> "RunHistory":
        records = {}
        max_step = 0
        labels = []
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != HISTORY_HEADER:
                raise InputError(f"unexpected history header {header}")
            for row in reader:
                rec = EvalRecord(row[0], int(row[1]), float(row[2]), float(row[3]))
                records[(rec.task, rec.step)] = rec
                max_step = max(max_step, rec.step)
                if rec.task not in labels:
                    labels.append(rec.task)
        history = cls(
            n_steps=max_step,
            tracked=tracked or tuple(labels),
            step_task_ids=step_task_ids or [""] * (max_step + 1),
            records=records,
        )
        return history


def mrr_at_k(ranking: Ranking, relevant: set[str], k: int) -> float:
    """Reciprocal rank of the first relevant doc within the top k, else 0."""
    if k < 1:
        raise InputError("cutoff must be >= 1")
    for pos, (did, _) in enumerate(ranking.entries[:k], 1):
        if did in relevant:
            return 1.0 / pos
    return 0.0


def rescore_candidates(ranker, query_text: str, candidates: list[tuple[str, str]], query_id: str = "") -> Ranking:
    """Re-rank candidate (doc-id, text) pairs with a ranker; ties keep the
    candidate order, so an identity re-scorer reproduces the input ranking."""
    if not candidates:
        return Ranking(query_id=query_id, entries=[])
    scores = ranker.rescore(query_text, candidates)
    if len(scores) != len(candidates):
        raise InputError(
            f"ranker returned {len(scores)} scores for {len(candidates)} candidates"
        )
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])
    return Ranking(query_id=query_id, entries=[(candidates[i][0], float(scores[i])) for i in order])


def evaluate_task(
    ranker,
    task: Task,
    idx: InvertedIndex,
    queries: QueryStore,
    docs: DocStore,
    cutoffs: tuple[int, int] = (10, 100),
    depth: int = 1000,
    label: str | None = None,
    step: int = 0,
    threads: int = 1,
) -> EvalRecord:
    """MRR over the task's test queries after re-ranking BM25 candidates.

    A query whose relevant documents never enter the candidate list simply
    contributes zero.
    """
    if not task.test:
        raise InputError(f"task {task.task_id}: empty test split")
    if depth < max(cutoffs):
        raise InputError("candidate depth below MRR cutoff")

    def one_query(qid: str) -> tuple[float, ...]:
        text = queries.text(qid)
        base = search(idx, text, depth, query_id=qid)
        candidates = [(did, docs.text(did)) for did, _ in base.entries]
        reranked = rescore_candidates(ranker, text, candidates, query_id=qid)
        relevant = set(task.qrels[qid])
        return tuple(mrr_at_k(reranked, relevant, k) for k in cutoffs)

    test_qids = list(task.test)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_query = list(pool.map(one_query, test_qids))
    else:
        per_query = [one_query(q) for q in test_qids]
    means = [sum(vals[i] for vals in per_query) / len(per_query) for i in range(len(cutoffs))]
    return EvalRecord(task=label or task.task_id, step=step, mrr10=means[0], mrr100=means[1])


def forgetting_score(history: RunHistory, label: str, step: int, metric: str = "mrr10") -> float:
    """Best score the target ever reached minus its score at the given step.

    Always >= 0 and exactly 0 at the peak step.
    """
    series = history.scores(label, metric)
    return max(series) - series[step]


def sample_pools(task_queries, pool_size: int, seed: int, task_key: str) -> tuple[list[str], list[str]]:
    """Two disjoint query pools from one task, each min(pool_size, n//2)."""
    qids = sorted(task_queries)
    rng_for(seed, "pool", task_key).shuffle(qids)
    size = min(pool_size, len(qids) // 2)
    if size == 0:
        raise InputError(f"task {task_key}: too few queries to sample a pool")
    return qids[:size], qids[size : 2 * size]


def retrieved_union(pool, idx: InvertedIndex, queries: QueryStore, depth: int) -> set[str]:
    """Union of the top-depth retrieved doc ids over a query pool."""
    union: set[str] = set()
    for qid in pool:
        union.update(search(idx, queries.text(qid), depth, query_id=qid).doc_ids())
    return union


def overlap_from_pools(pool_a, pool_b, idx: InvertedIndex, queries: QueryStore, depth: int) -> float:
    """|retrieved(A) intersect retrieved(B)| / |retrieved(A)|."""
    docs_a = retrieved_union(pool_a, idx, queries, depth)
    if not docs_a:
        raise InputError("first pool retrieved no documents (degenerate index)")
    docs_b = retrieved_union(pool_b, idx, queries, depth)
    return len(docs_a & docs_b) / len(docs_a)


def retrieval_overlap(
    task_i: Task,
    task_j: Task,
    idx: InvertedIndex,
    queries: QueryStore,
    pool_size: int = 250,
    depth: int = 1000,
    seed: int = 13,
) -> float:
    """Shared-retrieved-document ratio between two tasks (or one task with
    itself, using its two disjoint pools). Pools are keyed by task id, so the
    same task always contributes the same pools within one seed."""
    pool_a, _ = sample_pools(task_i.queries, pool_size, seed, task_i.task_id)
    if task_j.task_id == task_i.task_id:
        _, pool_b = sample_pools(task_i.queries, pool_size, seed, task_i.task_id)
    else:
        _, pool_b = sample_pools(task_j.queries, pool_size, seed, task_j.task_id)
    return overlap_from_pools(pool_a, pool_b, idx, queries, depth)


@dataclass
class SimilarityMatrix:
    """Pairwise retrieval-overlap scores for all ordered task pairs."""

    task_ids: list[str]
    values: np.ndarray  # (n, n) floats in [0, 1]
    pool_size: int
    depth: int

    def value(self, id_i: str, id_j: str) -> float:
        return float(self.values[self.task_ids.index(id_i), self.task_ids.index(id_j)])

    def intra_mean(self) -> float:
        return float(np.mean(np.diag(self.values)))

    def inter_mean(self) -> float:
        n = len(self.task_ids)
        if n < 2:
            raise InputError("inter mean needs at least two tasks")
        off = self.values[~np.eye(n, dtype=bool)]
        return float(np.mean(off))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["task"] + self.task_ids)
            for i, tid in enumerate(self.task_ids):
                writer.writerow([tid] + [repr(float(v)) for v in self.values[i]])

    @classmethod
    def from_csv(cls, path: str | Path, pool_size: int = 0, depth: int = 0) -> "SimilarityMatrix":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            task_ids = header[1:]
            rows = [[float(x) for x in row[1:]] for row in reader]
        values = np.array(rows, dtype=np.float64)
        if values.shape != (len(task_ids), len(task_ids)):
            raise InputError(f"matrix shape {values.shape} does not match {len(task_ids)} tasks")
        return cls(task_ids=task_ids, values=values, pool_size=pool_size, depth=depth)


def similarity_matrix(
    seq: TopicSequence,
    idx: InvertedIndex,
    queries: QueryStore,
    pool_size: int = 250,
    depth: int = 1000,
    seed: int = 13,
    threads: int = 1,
) -> SimilarityMatrix:
    """Overlap scores for all ordered task pairs, pools sampled once per task."""
    tasks = seq.tasks
    pools = {t.task_id: sample_pools(t.queries, pool_size, seed, t.task_id) for t in tasks}

    def union_of(pool) -> set[str]:
        return retrieved_union(pool, idx, queries, depth)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            firsts = list(ex.map(lambda t: union_of(pools[t.task_id][0]), tasks))
            seconds = list(ex.map(lambda t: union_of(pools[t.task_id][1]), tasks))
    else:
        firsts = [union_of(pools[t.task_id][0]) for t in tasks]
        seconds = [union_of(pools[t.task_id][1]) for t in tasks]

    n = len(tasks)
    values = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        if not firsts[i]:
            raise InputError(f"task {tasks[i].task_id}: pool retrieved no documents")
        for j in range(n):
            values[i, j] = len(firsts[i] & seconds[j]) / len(firsts[i])
    return SimilarityMatrix(
        task_ids=[t.task_id for t in tasks], values=values, pool_size=pool_size, depth=depth
    )


@dataclass(frozen=True)
class QuartileRow:
    tracked_task: str
    quartile: int
    mean_similarity: float
    mean_mf: float
    pair_count: int


def _bucketize(pairs: list[tuple[float, float]]) -> list[tuple[float, float, int]]:
    """Quartile stats for (similarity, forgetting) pairs; edge ties fall into
    the lower bucket."""
    sims = np.array([p[0] for p in pairs])
    q1, q2, q3 = np.percentile(sims, [25, 50, 75])
    buckets: dict[int, list[tuple[float, float]]] = {1: [], 2: [], 3: [], 4: []}
    for sim, mf in pairs:
        bucket = 1 + (sim > q1) + (sim > q2) + (sim > q3)
        buckets[bucket].append((sim, mf))
    out = []
    for b in range(1, 5):
        got = buckets[b]
        if got:
            out.append(
                (
                    float(np.mean([g[0] for g in got])),
                    float(np.mean([g[1] for g in got])),
                    len(got),
                )
            )
        else:
            out.append((float("nan"), float("nan"), 0))
    return out


def quartile_forgetting(
    history: RunHistory,
    matrix: SimilarityMatrix,
    metric: str = "mrr10",
    pooled: bool = False,
) -> list[QuartileRow]:
    """Group each tracked task's per-step forgetting by the similarity of the
    task trained at that step.

    With pooled=True the (similarity, forgetting) pairs of all tracked tasks
    share one set of quartile edges and are reported as a single block.
    """
    if len(history.step_task_ids) != history.n_steps + 1:
        raise InputError("history lacks the step -> trained-task mapping")
    per_task_pairs: dict[str, list[tuple[float, float]]] = {}
    for label in history.tracked:
        if label not in matrix.task_ids:
            continue  # eval groups and aggregate tasks have no matrix row
        pairs = []
        for step in range(1, history.n_steps + 1):
            trained = history.step_task_ids[step]
            if trained == label or trained not in matrix.task_ids:
                continue
            pairs.append(
                (matrix.value(label, trained), forgetting_score(history, label, step, metric))
            )
        per_task_pairs[label] = pairs

    rows: list[QuartileRow] = []
    if pooled:
        pairs = [p for ps in per_task_pairs.values() for p in ps]
        if len(pairs) < 4:
            raise InputError(f"need at least 4 (similarity, forgetting) pairs, have {len(pairs)}")
        for b, (sim, mf, count) in enumerate(_bucketize(pairs), 1):
            rows.append(QuartileRow("pooled", b, sim, mf, count))
        return rows

    for label in sorted(per_task_pairs):
        pairs = per_task_pairs[label]
        if len(pairs) < 4:
            raise InputError(
                f"tracked task {label}: need at least 4 (similarity, forgetting) pairs, have {len(pairs)}"
            )
        for b, (sim, mf, count) in enumerate(_bucketize(pairs), 1):
            rows.append(QuartileRow(label, b, sim, mf, count))
    return rows


def write_quartile_csv(rows: list[QuartileRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(QUARTILE_HEADER)
        for row in rows:
            writer.writerow(
                [row.tracked_task, row.quartile, repr(row.mean_similarity), repr(row.mean_mf)]
            )
