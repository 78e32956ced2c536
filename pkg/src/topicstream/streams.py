"""Task streams: topic sequences, randomized baselines, controlled scenarios.

A Task is a set of judged queries with train/val/test splits and the qrels
restricted to them. A TopicSequence is an ordered list of tasks a ranker is
fine-tuned on; Scenarios are short sequences (an aggregate warm-up task plus
two or three derived tasks) that move either the document distribution
(information update), the query distribution (language drift), or bring a
topic back later with fresh data (direct transfer).

Everything here is a pure function of (inputs, seed); reruns are
byte-identical.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .clustering import TopicCluster, constrained_two_means
from .corpus import Corpus, QueryStore, load_qrels, load_queries, write_id_text, write_qrels
from .embeddings import EmbeddingTable
from .errors import InputError
from .seeding import rng_for, subseed

logger = logging.getLogger(__name__)

PROVENANCES = frozenset(
    ["topic", "random", "init", "dt_plus", "dt_minus", "dt_foreign",
     "iu_prime", "iu_second", "ld_star", "ld_starstar", "eval"]
)

SEQUENCE_FORMAT = "topicstream-sequence/1"
SCENARIO_FORMAT = "topicstream-scenario/1"


@dataclass(frozen=True)
class Task:
    """A topic's queries with disjoint splits and their relevance judgments."""

    task_id: str
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    qrels: dict[str, dict[str, int]]
    provenance: str
    sources: tuple[str, ...] = ()

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise InputError(f"unknown task provenance {self.provenance!r}")
        train, val, test = set(self.train), set(self.val), set(self.test)
        if train & val or val & test or train & test:
            raise InputError(f"task {self.task_id}: splits overlap")
        missing = [q for q in self.queries if not self.qrels.get(q)]
        if missing:
            raise InputError(
                f"task {self.task_id}: {len(missing)} queries without qrels, e.g. {missing[:3]}"
            )

    @property
    def queries(self) -> tuple[str, ...]:
        return self.train + self.val + self.test

    @property
    def size(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


@dataclass
class TopicSequence:
    """Ordered tasks plus the subset tracked at every evaluation step."""

    tasks: list[Task]
    tracked: tuple[int, ...]  # 1-based task positions
    seed: int

    def __post_init__(self):
        n = len(self.tasks)
        if any(i < 1 or i > n for i in self.tracked):
            raise InputError("tracked indices must lie in 1..n")

    def tracked_ids(self) -> list[str]:
        return [self.tasks[i - 1].task_id for i in self.tracked]


@dataclass
class Scenario:
    """A short controlled stream: init task first, then the derived tasks."""

    name: str
    kind: str  # dt | iu | ld
    reversed_roles: bool
    topic_id: str
    tasks: list[Task]
    eval_groups: dict[str, Task]
    seed: int
    meta: dict = field(default_factory=dict)


def _split_counts(n_judged: int, cap_val: int, cap_test: int) -> tuple[int, int]:
    third = n_judged // 3
    return min(cap_val, third), min(cap_test, third)


def _sample_split(items: list[str], n_val: int, n_test: int, rng) -> tuple[tuple, tuple, tuple]:
    """Draw val then test from a sorted pool; the remainder trains."""
    pool = sorted(items)
    val = sorted(rng.sample(pool, n_val))
    rest = sorted(set(pool) - set(val))
    test = sorted(rng.sample(rest, n_test))
    train = sorted(set(rest) - set(test))
    return tuple(train), tuple(val), tuple(test)


def build_topic_sequence(
    clusters: list[TopicCluster],
    corpus: Corpus,
    split_val: int = 40,
    split_test: int = 40,
    seed: int = 13,
) -> TopicSequence:
    """Turn topic clusters into a shuffled task sequence with splits.

    Per cluster, val and test each receive min(cap, floor(judged/3)) queries;
    clusters that cannot give every split at least one query are dropped with
    a warning. Task order is a seeded permutation of the clusters and five
    tasks are marked for tracking.
    """
    tasks = []
    for cluster in clusters:
        judged = sorted(m for m in cluster.members if m in corpus.qrels)
        if len(judged) < split_val + split_test + 1:
            logger.warning("cluster %d: only %d judged queries, dropped", cluster.cluster_id, len(judged))
            continue
        n_val, n_test = _split_counts(len(judged), split_val, split_test)
        rng = rng_for(seed, "split", cluster.cluster_id)
        train, val, test = _sample_split(judged, n_val, n_test, rng)
        task_id = f"topic-{cluster.cluster_id:03d}"
        tasks.append(
            Task(
                task_id=task_id,
                train=train,
                val=val,
                test=test,
                qrels=corpus.qrels.restrict(train + val + test),
                provenance="topic",
                sources=(str(cluster.cluster_id),),
            )
        )
    if len(tasks) < 2:
        raise InputError(f"only {len(tasks)} usable clusters; need at least 2")
    rng_for(seed, "order").shuffle(tasks)
    n = len(tasks)
    tracked = tuple(sorted(rng_for(seed, "tracked").sample(range(1, n + 1), min(5, n))))
    return TopicSequence(tasks=tasks, tracked=tracked, seed=seed)


def build_random_sequence(reference: TopicSequence, corpus: Corpus, seed: int = 13) -> TopicSequence:
    """Size-matched baseline: same task count and split sizes as the
    reference, membership drawn by one uniform shuffle of all its queries."""
    union = sorted({q for t in reference.tasks for q in t.queries})
    rng_for(seed, "random-union").shuffle(union)
    tasks = []
    cursor = 0
    for k, ref in enumerate(reference.tasks):
        chunk = union[cursor : cursor + ref.size]
        cursor += ref.size
        val = tuple(sorted(chunk[: len(ref.val)]))
        test = tuple(sorted(chunk[len(ref.val) : len(ref.val) + len(ref.test)]))
        train = tuple(sorted(chunk[len(ref.val) + len(ref.test) :]))
        tasks.append(
            Task(
                task_id=f"random-{k:03d}",
                train=train,
                val=val,
                test=test,
                qrels=corpus.qrels.restrict(chunk),
                provenance="random",
                sources=(ref.task_id,),
            )
        )
    return TopicSequence(tasks=tasks, tracked=reference.tracked, seed=seed)


def build_init_task(
    seq: TopicSequence,
    k: int = 5,
    excluded: set[str] | None = None,
    seed: int = 13,
) -> Task:
    """Aggregate k randomly chosen tasks (never the excluded ones) into one
    warm-up task whose splits are the unions of theirs."""
    excluded = excluded or set()
    available = [t for t in seq.tasks if t.task_id not in excluded]
    if len(available) < k:
        raise InputError(f"need {k} tasks outside the excluded set, have {len(available)}")
    chosen = rng_for(seed, "init").sample(available, k)
    chosen.sort(key=lambda t: t.task_id)
    train = tuple(sorted({q for t in chosen for q in t.train}))
    val = tuple(sorted({q for t in chosen for q in t.val}))
    test = tuple(sorted({q for t in chosen for q in t.test}))
    qrels: dict[str, dict[str, int]] = {}
    for t in chosen:
        for q, docs in t.qrels.items():
            merged = qrels.setdefault(q, {})
            for d, g in docs.items():
                merged[d] = max(g, merged.get(d, 0))
    return Task(
        task_id="init",
        train=train,
        val=val,
        test=test,
        qrels=qrels,
        provenance="init",
        sources=tuple(t.task_id for t in chosen),
    )


def _eval_group(name: str, test: tuple[str, ...], qrels: dict) -> Task:
    return Task(
        task_id=name,
        train=(),
        val=(),
        test=test,
        qrels={q: dict(qrels[q]) for q in test},
        provenance="eval",
    )


def build_direct_transfer(
    seq: TopicSequence,
    corpus: Corpus,
    seed: int = 13,
    draws: int = 3,
    init_k: int = 5,
) -> list[Scenario]:
    """Draw scenarios (init, topic+, foreign, topic-) where the chosen
    topic's train queries split 75/25 between its first and second visit."""
    eligible = [t for t in seq.tasks if len(t.train) >= 4]
    if len(eligible) < 2:
        raise InputError("direct transfer needs at least 2 tasks with >= 4 train queries")
    scenarios = []
    for r in range(draws):
        rng = rng_for(seed, "dt", r)
        topic = rng.choice(eligible)
        foreign = rng.choice([t for t in eligible if t.task_id != topic.task_id])
        init = build_init_task(
            seq, k=init_k, excluded={topic.task_id, foreign.task_id}, seed=subseed(seed, "dt", r)
        )
        shuffled = rng.sample(list(topic.train), len(topic.train))
        n_plus = int(0.75 * len(shuffled) + 0.5)
        plus_q = tuple(sorted(shuffled[:n_plus]))
        minus_q = tuple(sorted(shuffled[n_plus:]))
        common = dict(val=topic.val, test=topic.test, sources=(topic.task_id,))
        plus = Task(
            task_id=f"{topic.task_id}-plus",
            train=plus_q,
            qrels={q: dict(topic.qrels[q]) for q in plus_q + topic.val + topic.test},
            provenance="dt_plus",
            **common,
        )
        minus = Task(
            task_id=f"{topic.task_id}-minus",
            train=minus_q,
            qrels={q: dict(topic.qrels[q]) for q in minus_q + topic.val + topic.test},
            provenance="dt_minus",
            **common,
        )
        foreign_task = replace(foreign, provenance="dt_foreign", sources=(foreign.task_id,))
        groups = {
            "topic": _eval_group("topic", topic.test, topic.qrels),
            "foreign": _eval_group("foreign", foreign.test, foreign.qrels),
        }
        scenarios.append(
            Scenario(
                name=f"dt-{r}",
                kind="dt",
                reversed_roles=False,
                topic_id=topic.task_id,
                tasks=[init, plus, foreign_task, minus],
                eval_groups=groups,
                seed=seed,
                meta={"foreign_id": foreign.task_id, "split": [len(plus_q), len(minus_q)]},
            )
        )
    return scenarios


def _pick_single_doc(task: Task, qid: str, seed: int) -> str:
    """One relevant doc per query, sampled uniformly under the run seed."""
    docs = sorted(task.qrels[qid])
    if len(docs) == 1:
        return docs[0]
    return rng_for(seed, "pick-doc", qid).choice(docs)


def _group_splits(qids: list[str], seed: int, label: object, cap: int = 20) -> tuple[tuple, tuple, tuple]:
    n_val = n_test = min(cap, len(qids) // 3)
    rng = rng_for(seed, "group-split", label)
    return _sample_split(qids, n_val, n_test, rng)


def build_information_update(
    seq: TopicSequence,
    corpus: Corpus,
    emb_docs: EmbeddingTable,
    seed: int = 13,
    draws: int = 3,
    init_k: int = 5,
    min_docs: int = 8,
) -> list[Scenario]:
    """Document-shift scenarios, forward and reversed per chosen topic.

    The topic's relevant documents are split in two by constrained 2-means;
    queries follow their (single sampled) relevant doc into Q1/Q2. The first
    task keeps every query but maps second-half documents onto their nearest
    first-half neighbor, the second task re-points Q2 at its true documents.
    """
    eligible = []
    for t in seq.tasks:
        docs = {d for q in t.queries for d in t.qrels[q]}
        if len(docs) < min_docs:
            logger.warning("task %s: %d distinct relevant docs < %d, skipped", t.task_id, len(docs), min_docs)
            continue
        if any(d not in emb_docs for d in docs):
            logger.warning("task %s: missing document embeddings, skipped", t.task_id)
            continue
        eligible.append(t)
    if not eligible:
        raise InputError("no task qualifies for information update")
    chosen = rng_for(seed, "iu").sample(eligible, min(draws, len(eligible)))
    if len(chosen) < draws:
        logger.warning("only %d eligible topics for %d draws", len(chosen), draws)

    scenarios = []
    for r, topic in enumerate(chosen):
        qs = sorted(topic.queries)
        picked = {q: _pick_single_doc(topic, q, seed) for q in qs}
        all_docs = sorted(set(picked.values()))
        if len(all_docs) < min_docs:
            logger.warning("task %s: %d distinct sampled docs < %d, skipped", topic.task_id, len(all_docs), min_docs)
            continue
        d1, d2 = constrained_two_means(
            all_docs, emb_docs, min_frac=0.25, seed=subseed(seed, "iu-split", topic.task_id)
        )
        set1 = set(d1)
        q1 = [q for q in qs if picked[q] in set1]
        q2 = [q for q in qs if picked[q] not in set1]
        splits1 = _group_splits(q1, seed, (topic.task_id, "q1"))
        splits2 = _group_splits(q2, seed, (topic.task_id, "q2"))
        grades = {q: topic.qrels[q][picked[q]] for q in qs}

        for rev in (False, True):
            keep_docs, move_docs = (d2, d1) if rev else (d1, d2)
            keep_q, move_q = (q2, q1) if rev else (q1, q2)
            mapping = {d: emb_docs.nearest(d, keep_docs)[0] for d in move_docs}
            collisions = len(mapping) - len(set(mapping.values()))

            prime_qrels = {q: {picked[q]: grades[q]} for q in keep_q}
            prime_qrels.update({q: {mapping[picked[q]]: 1} for q in move_q})
            prime = Task(
                task_id=f"{topic.task_id}-prime",
                train=tuple(sorted(splits1[0] + splits2[0])),
                val=tuple(sorted(splits1[1] + splits2[1])),
                test=tuple(sorted(splits1[2] + splits2[2])),
                qrels=prime_qrels,
                provenance="iu_prime",
                sources=(topic.task_id,),
            )
            second = Task(
                task_id=f"{topic.task_id}-second",
                train=(splits2 if not rev else splits1)[0],
                val=(splits2 if not rev else splits1)[1],
                test=(splits2 if not rev else splits1)[2],
                qrels={q: {picked[q]: grades[q]} for q in (move_q)},
                provenance="iu_second",
                sources=(topic.task_id,),
            )
            true_qrels = {q: {picked[q]: grades[q]} for q in qs}
            groups = {
                "Q1D1": _eval_group("Q1D1", splits1[2], true_qrels),
                "Q2D2": _eval_group("Q2D2", splits2[2], true_qrels),
                "union": _eval_group("union", tuple(sorted(splits1[2] + splits2[2])), true_qrels),
            }
            init = build_init_task(
                seq, k=init_k, excluded={topic.task_id}, seed=subseed(seed, "iu", topic.task_id)
            )
            scenarios.append(
                Scenario(
                    name=f"iu-{r}" + ("-rev" if rev else ""),
                    kind="iu",
                    reversed_roles=rev,
                    topic_id=topic.task_id,
                    tasks=[init, prime, second],
                    eval_groups=groups,
                    seed=seed,
                    meta={
                        "d1": list(d1),
                        "d2": list(d2),
                        "q1": q1,
                        "q2": q2,
                        "mapping_collisions": collisions,
                    },
                )
            )
    if not scenarios:
        raise InputError("no information-update scenario could be built")
    return scenarios


def build_language_drift(
    seq: TopicSequence,
    corpus: Corpus,
    emb_queries: EmbeddingTable,
    seed: int = 13,
    draws: int = 3,
    init_k: int = 5,
    min_queries: int = 8,
) -> list[Scenario]:
    """Query-shift scenarios, forward and reversed per chosen topic.

    The topic's queries are split in two by constrained 2-means; each
    second-half query is mapped to its nearest first-half neighbor, whose
    qrels then cover documents from both halves. The second task trains the
    second-half formulation directly.
    """
    eligible = []
    for t in seq.tasks:
        if t.size < min_queries:
            logger.warning("task %s: %d queries < %d, skipped", t.task_id, t.size, min_queries)
            continue
        if any(q not in emb_queries for q in t.queries):
            logger.warning("task %s: missing query embeddings, skipped", t.task_id)
            continue
        eligible.append(t)
    if not eligible:
        raise InputError("no task qualifies for language drift")
    chosen = rng_for(seed, "ld").sample(eligible, min(draws, len(eligible)))
    if len(chosen) < draws:
        logger.warning("only %d eligible topics for %d draws", len(chosen), draws)

    scenarios = []
    for r, topic in enumerate(chosen):
        qs = sorted(topic.queries)
        picked = {q: _pick_single_doc(topic, q, seed) for q in qs}
        grades = {q: topic.qrels[q][picked[q]] for q in qs}
        q1, q2 = constrained_two_means(
            qs, emb_queries, min_frac=0.25, seed=subseed(seed, "ld-split", topic.task_id)
        )
        splits1 = _group_splits(list(q1), seed, (topic.task_id, "q1"))
        splits2 = _group_splits(list(q2), seed, (topic.task_id, "q2"))

        for rev in (False, True):
            keep_q, keep_splits = (q2, splits2) if rev else (q1, splits1)
            move_q, move_splits = (q1, splits1) if rev else (q2, splits2)
            # map held-in (train) queries only, so no train pair lands on a
            # held-out evaluation query
            mapping = {q: emb_queries.nearest(q, keep_splits[0])[0] for q in move_splits[0]}
            collisions = len(mapping) - len(set(mapping.values()))

            star_qrels = {q: {picked[q]: grades[q]} for q in keep_q}
            for q_moved, q_target in sorted(mapping.items()):
                star_qrels[q_target][picked[q_moved]] = max(
                    1, star_qrels[q_target].get(picked[q_moved], 0)
                )
            star = Task(
                task_id=f"{topic.task_id}-star",
                train=keep_splits[0],
                val=keep_splits[1],
                test=keep_splits[2],
                qrels=star_qrels,
                provenance="ld_star",
                sources=(topic.task_id,),
            )
            starstar = Task(
                task_id=f"{topic.task_id}-starstar",
                train=move_splits[0],
                val=move_splits[1],
                test=move_splits[2],
                qrels={q: {picked[q]: grades[q]} for q in move_q},
                provenance="ld_starstar",
                sources=(topic.task_id,),
            )
            true_qrels = {q: {picked[q]: grades[q]} for q in qs}
            groups = {
                "Q1D1": _eval_group("Q1D1", splits1[2], true_qrels),
                "Q2D2": _eval_group("Q2D2", splits2[2], true_qrels),
                "union": _eval_group("union", tuple(sorted(splits1[2] + splits2[2])), true_qrels),
            }
            init = build_init_task(
                seq, k=init_k, excluded={topic.task_id}, seed=subseed(seed, "ld", topic.task_id)
            )
            scenarios.append(
                Scenario(
                    name=f"ld-{r}" + ("-rev" if rev else ""),
                    kind="ld",
                    reversed_roles=rev,
                    topic_id=topic.task_id,
                    tasks=[init, star, starstar],
                    eval_groups=groups,
                    seed=seed,
                    meta={
                        "q1": list(q1),
                        "q2": list(q2),
                        "d1": sorted({picked[q] for q in q1}),
                        "d2": sorted({picked[q] for q in q2}),
                        "mapping_collisions": collisions,
                    },
                )
            )
    if not scenarios:
        raise InputError("no language-drift scenario could be built")
    return scenarios


# ---------------------------------------------------------------------------
# serialization


def _write_task(task: Task, root: Path, queries: QueryStore) -> None:
    for split in ("train", "val", "test"):
        qids = getattr(task, split)
        split_dir = root / split
        split_dir.mkdir(parents=True, exist_ok=True)
        write_id_text({q: queries.text(q) for q in qids}, split_dir / "queries.tsv")
        write_qrels({q: task.qrels[q] for q in qids}, split_dir / "qrels.txt")


def _read_task(root: Path, task_id: str, provenance: str, sources: tuple[str, ...]) -> Task:
    splits = {}
    qrels: dict[str, dict[str, int]] = {}
    for split in ("train", "val", "test"):
        qfile = root / split / "queries.tsv"
        splits[split] = tuple(load_queries(qfile).ids()) if qfile.exists() else ()
        rfile = root / split / "qrels.txt"
        if rfile.exists():
            for q, docs in load_qrels(rfile).pairs.items():
                qrels.setdefault(q, {}).update(docs)
    return Task(
        task_id=task_id,
        train=splits["train"],
        val=splits["val"],
        test=splits["test"],
        qrels=qrels,
        provenance=provenance,
        sources=sources,
    )


def save_sequence(seq: TopicSequence, out_dir: str | Path, queries: QueryStore) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for task in seq.tasks:
        _write_task(task, out / "tasks" / task.task_id, queries)
    manifest = {
        "format": SEQUENCE_FORMAT,
        "seed": seq.seed,
        "tracked": list(seq.tracked),
        "tasks": [
            {"task_id": t.task_id, "provenance": t.provenance, "sources": list(t.sources)}
            for t in seq.tasks
        ],
    }
    (out / "sequence.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_sequence(in_dir: str | Path) -> TopicSequence:
    root = Path(in_dir)
    manifest_path = root / "sequence.json"
    if not manifest_path.exists():
        raise InputError(f"no sequence.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != SEQUENCE_FORMAT:
        raise InputError(f"unexpected sequence format {manifest.get('format')!r}")
    tasks = [
        _read_task(root / "tasks" / spec["task_id"], spec["task_id"], spec["provenance"], tuple(spec["sources"]))
        for spec in manifest["tasks"]
    ]
    return TopicSequence(tasks=tasks, tracked=tuple(manifest["tracked"]), seed=manifest["seed"])


def save_scenario(sc: Scenario, out_dir: str | Path, queries: QueryStore) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for task in sc.tasks:
        _write_task(task, out / "tasks" / task.task_id, queries)
    for name, group in sc.eval_groups.items():
        _write_task(group, out / "groups" / name, queries)
    manifest = {
        "format": SCENARIO_FORMAT,
        "name": sc.name,
        "kind": sc.kind,
        "reversed": sc.reversed_roles,
        "topic_id": sc.topic_id,
        "seed": sc.seed,
        "meta": sc.meta,
        "tasks": [
            {"task_id": t.task_id, "provenance": t.provenance, "sources": list(t.sources)}
            for t in sc.tasks
        ],
        "eval_groups": sorted(sc.eval_groups),
    }
    (out / "scenario.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_scenario(in_dir: str | Path) -> Scenario:
    root = Path(in_dir)
    manifest_path = root / "scenario.json"
    if not manifest_path.exists():
        raise InputError(f"no scenario.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != SCENARIO_FORMAT:
        raise InputError(f"unexpected scenario format {manifest.get('format')!r}")
    tasks = [
        _read_task(root / "tasks" / spec["task_id"], spec["task_id"], spec["provenance"], tuple(spec["sources"]))
        for spec in manifest["tasks"]
    ]
    groups = {
        name: _read_task(root / "groups" / name, name, "eval", ())
        for name in manifest["eval_groups"]
    }
    return Scenario(
        name=manifest["name"],
        kind=manifest["kind"],
        reversed_roles=manifest["reversed"],
        topic_id=manifest["topic_id"],
        tasks=tasks,
        eval_groups=groups,
        seed=manifest["seed"],
        meta=manifest.get("meta", {}),
    )
