"""Continual-run orchestration.

run_sequence drives the loop: per task in the stream, train the ranker (or
not, per mode), then evaluate every tracked target. Rankers plug in behind a
small contract (``trainable`` flag, ``rescore``, optionally ``train``);
native BM25/lexical rankers, a trainable term-weight ranker, and a child
process speaking newline-delimited JSON all implement it.
"""

from __future__ import annotations

import json
import logging
import re
import select
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus
from .errors import InputError, SessionError
from .metrics import RunHistory, evaluate_task
from .retrieval import InvertedIndex, bm25_score, search, tokenize
from .seeding import rng_for
from .streams import Scenario, Task, TopicSequence

logger = logging.getLogger(__name__)

_ALNUM = re.compile(r"[a-z0-9]+")


@dataclass
class RunConfig:
    """Knobs of one continual run."""

    seed: int = 13
    candidates_depth: int = 1000
    epochs_per_task: int = 1
    cutoffs: tuple[int, int] = (10, 100)
    mode: str = "sequential"  # sequential | joint | frozen
    request_timeout: float = 300.0
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("sequential", "joint", "frozen"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.candidates_depth < max(self.cutoffs):
            raise InputError("candidates_depth must be >= the largest MRR cutoff")


class Bm25Ranker:
    """Frozen ranker that re-scores candidates with their BM25 score, so the
    re-ranked list equals the first-stage ranking."""

    name = "bm25"
    trainable = False

    def __init__(self, idx: InvertedIndex):
        self.idx = idx

    def rescore(self, query_text: str, candidates: list[tuple[str, str]]) -> list[float]:
        terms = tokenize(query_text)
        return [bm25_score(terms, did, self.idx) for did, _ in candidates]


class LexicalOverlapRanker:
    """Frozen ranker scoring by count of shared lowercase alphanumeric tokens."""

    name = "lexical"
    trainable = False

    def rescore(self, query_text: str, candidates: list[tuple[str, str]]) -> list[float]:
        q_tokens = set(_ALNUM.findall(query_text.lower()))
        return [float(len(q_tokens & set(_ALNUM.findall(text.lower())))) for _, text in candidates]


class TermWeightRanker:
    """Trainable toy ranker: one learnable weight per term.

    score(q, d) = sum over shared distinct terms of weight * idf. Unseen
    terms weigh 1.0. Trained with a pairwise hinge on (positive, sampled
    negative) pairs; optimizer state (per-term velocity and the negative-
    sampling RNG) lives on the instance and is never reset between tasks.
    """

    name = "termweight"
    trainable = True

    def __init__(
        self,
        idx: InvertedIndex,
        margin: float = 1.0,
        learning_rate: float = 0.1,
        negatives_per_pair: int = 4,
        momentum: float = 0.0,
        seed: int = 13,
    ):
        self.idx = idx
        self.margin = margin
        self.learning_rate = learning_rate
        self.negatives_per_pair = negatives_per_pair
        self.momentum = momentum
        self.weights: dict[str, float] = {}
        self.velocity: dict[str, float] = {}
        self.rng = rng_for(seed, "termweight-trainer")

    def score_texts(self, query_text: str, doc_text: str) -> float:
        shared = set(tokenize(query_text)) & set(tokenize(doc_text))
        return sum(self.weights.get(t, 1.0) * self.idx.idf(t) for t in shared)

    def rescore(self, query_text: str, candidates: list[tuple[str, str]]) -> list[float]:
        q_tokens = set(tokenize(query_text))
        out = []
        for _, text in candidates:
            shared = q_tokens & set(tokenize(text))
            out.append(sum(self.weights.get(t, 1.0) * self.idx.idf(t) for t in shared))
        return out

    def _apply(self, term: str, grad: float) -> None:
        v = self.momentum * self.velocity.get(term, 0.0) + grad
        self.velocity[term] = v
        self.weights[term] = self.weights.get(term, 1.0) - self.learning_rate * v

    def train(self, pairs, negatives, epochs: int) -> float:
        return train_term_ranker(self, pairs, negatives, epochs)

    def checkpoint(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for term in sorted(self.weights):
                fh.write(f"{term}\t{repr(self.weights[term])}\n")


def train_term_ranker(ranker: TermWeightRanker, pairs, negatives, epochs: int) -> float:
    """Hinge training of the term-weight ranker.

    pairs: list of (qid, query text, doc id, doc text) positives, processed
    in the given order every epoch. negatives: callable
    (qid, query_text, count, rng) -> list of (doc id, doc text). Returns the
    mean hinge loss of the final epoch.
    """
    last_epoch_loss = 0.0
    for _ in range(max(1, epochs)):
        total, events = 0.0, 0
        for qid, q_text, _pos_id, pos_text in pairs:
            q_tokens = set(tokenize(q_text))
            pos_tokens = q_tokens & set(tokenize(pos_text))
            s_pos = sum(ranker.weights.get(t, 1.0) * ranker.idx.idf(t) for t in pos_tokens)
            for _neg_id, neg_text in negatives(qid, q_text, ranker.negatives_per_pair, ranker.rng):
                neg_tokens = q_tokens & set(tokenize(neg_text))
                s_neg = sum(ranker.weights.get(t, 1.0) * ranker.idx.idf(t) for t in neg_tokens)
                loss = ranker.margin - s_pos + s_neg
                events += 1
                if loss <= 0.0:
                    continue
                total += loss
                for t in pos_tokens - neg_tokens:
                    ranker._apply(t, -ranker.idx.idf(t))
                for t in neg_tokens - pos_tokens:
                    ranker._apply(t, ranker.idx.idf(t))
                s_pos = sum(ranker.weights.get(t, 1.0) * ranker.idx.idf(t) for t in pos_tokens)
        last_epoch_loss = total / events if events else 0.0
    return last_epoch_loss


def make_negatives_provider(idx: InvertedIndex, corpus: Corpus, task: Task, depth: int = 100):
    """Sample negatives from the BM25 top-depth for the query, excluding any
    document judged relevant for some query of the current task."""
    judged = {d for q in task.qrels for d in task.qrels[q]}

    def provider(qid: str, query_text: str, count: int, rng) -> list[tuple[str, str]]:
        ranked = search(idx, query_text, depth, query_id=qid)
        candidates = [did for did in ranked.doc_ids() if did not in judged]
        if not candidates:
            return []
        chosen = candidates if len(candidates) <= count else rng.sample(candidates, count)
        return [(did, corpus.docs.text(did)) for did in chosen]

    return provider


def task_pairs(task: Task, corpus: Corpus) -> list[tuple[str, str, str, str]]:
    """All (qid, query text, did, doc text) training pairs of a task's train
    split, in sorted order."""
    out = []
    for qid in task.train:
        for did in sorted(task.qrels[qid]):
            out.append((qid, corpus.queries.text(qid), did, corpus.docs.text(did)))
    return out


class ExternalRanker:
    """Client side of the external-ranker wire protocol.

    The child speaks newline-delimited JSON over stdin/stdout, one request in
    flight at a time:

        {"op": "hello"}                       -> {"ok": true, "trainable": b}
        {"op": "train", "pairs": [...], "epoch": n} -> {"ok": true, "loss": x}
        {"op": "rescore", "qid": .., "q": .., "cands": [{"did","d"},..]}
                                              -> {"ok": true, "scores": [..]}
    """

    name = "external"

    def __init__(self, cmd: str | list[str], timeout: float = 300.0):
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise SessionError(f"cannot spawn ranker command {argv!r}: {exc}") from exc
        self.timeout = timeout
        self.cmd = argv
        try:
            reply = self._request({"op": "hello"})
        except SessionError:
            self.close()
            raise
        self.trainable = bool(reply.get("trainable", False))

    def _request(self, payload: dict) -> dict:
        if self.proc.poll() is not None:
            raise SessionError(f"ranker process exited with code {self.proc.returncode}")
        try:
            self.proc.stdin.write(json.dumps(payload) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SessionError(f"ranker process closed stdin: {exc}") from exc
        ready, _, _ = select.select([self.proc.stdout], [], [], self.timeout)
        if not ready:
            self.close()
            raise SessionError(f"ranker request timed out after {self.timeout}s: {payload['op']}")
        line = self.proc.stdout.readline()
        if not line:
            code = self.proc.poll()
            raise SessionError(f"ranker process closed its output (exit code {code})")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SessionError(f"malformed ranker reply: {line!r}") from exc
        if not reply.get("ok"):
            raise SessionError(f"ranker error reply: {reply.get('error', reply)}")
        return reply

    def train(self, pairs, negatives, epochs: int) -> float:
        loss = 0.0
        for epoch in range(max(1, epochs)):
            payload = {
                "op": "train",
                "pairs": [
                    {"q": q, "qid": qid, "d": d, "did": did} for qid, q, did, d in pairs
                ],
                "epoch": epoch,
            }
            loss = float(self._request(payload).get("loss", 0.0))
        return loss

    def rescore(self, query_text: str, candidates: list[tuple[str, str]]) -> list[float]:
        payload = {
            "op": "rescore",
            "qid": "",
            "q": query_text,
            "cands": [{"did": did, "d": text} for did, text in candidates],
        }
        scores = self._request(payload).get("scores")
        if not isinstance(scores, list) or len(scores) != len(candidates):
            raise SessionError(
                f"ranker returned {len(scores) if isinstance(scores, list) else type(scores)} "
                f"scores for {len(candidates)} candidates"
            )
        return [float(s) for s in scores]

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_ranker_session(cmd: str | list[str], cfg: RunConfig) -> ExternalRanker:
    """Spawn an external ranker and complete the hello handshake."""
    return ExternalRanker(cmd, timeout=cfg.request_timeout)


def _eval_targets(stream) -> dict[str, Task]:
    """Label -> task to evaluate at every step."""
    if isinstance(stream, Scenario):
        targets = {t.task_id: t for t in stream.tasks if t.test}
        targets.update(stream.eval_groups)
        return targets
    return {stream.tasks[i - 1].task_id: stream.tasks[i - 1] for i in stream.tracked}


def run_sequence(
    stream: TopicSequence | Scenario,
    ranker,
    cfg: RunConfig,
    corpus: Corpus,
    idx: InvertedIndex,
    out_dir: str | Path | None = None,
) -> RunHistory:
    """Run the continual loop over a sequence or scenario.

    Step 0 is the evaluation before any sequence training (for scenarios:
    right after warm-up on the aggregate init task). In sequential mode each
    following step trains one task, keeping all trainer state, then evaluates
    every tracked target; joint mode trains once on the shuffled union and
    evaluates a flat tail; frozen mode never trains.
    """
    scenario = isinstance(stream, Scenario)
    if scenario:
        init_task = stream.tasks[0]
        training = stream.tasks[1:]
    else:
        init_task = None
        training = list(stream.tasks)
    targets = _eval_targets(stream)
    labels = tuple(sorted(targets))
    n = len(training)
    history = RunHistory(
        n_steps=n,
        tracked=labels,
        step_task_ids=[""] + [t.task_id for t in training],
    )
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    def train_on(pairs, task_for_negs: Task) -> None:
        provider = make_negatives_provider(idx, corpus, task_for_negs, depth=100)
        ranker.train(pairs, provider, cfg.epochs_per_task)

    def evaluate_step(step: int) -> None:
        for label in labels:
            rec = evaluate_task(
                ranker,
                targets[label],
                idx,
                corpus.queries,
                corpus.docs,
                cutoffs=cfg.cutoffs,
                depth=cfg.candidates_depth,
                label=label,
                step=step,
                threads=cfg.threads,
            )
            history.add(rec)
        if out is not None and hasattr(ranker, "checkpoint"):
            ranker.checkpoint(out / "checkpoints" / f"step-{step}.tsv")

    def flush() -> None:
        if out is not None:
            history.to_csv(out / "history.csv")

    try:
        trainable = getattr(ranker, "trainable", False) and cfg.mode != "frozen"
        if cfg.mode == "joint":
            evaluate_step(0)
            if trainable:
                all_tasks = ([init_task] if init_task else []) + training
                pairs = [p for t in all_tasks for p in task_pairs(t, corpus)]
                rng_for(cfg.seed, "joint-shuffle").shuffle(pairs)
                union_qrels: dict[str, dict[str, int]] = {}
                for t in all_tasks:
                    for q, docs in t.qrels.items():
                        union_qrels.setdefault(q, {}).update(docs)
                union_task = Task(
                    task_id="joint",
                    train=tuple(sorted({p[0] for p in pairs})),
                    val=(),
                    test=(),
                    qrels={q: union_qrels[q] for q in {p[0] for p in pairs}},
                    provenance="init",
                )
                train_on(pairs, union_task)
            for step in range(1, n + 1):
                evaluate_step(step)
        else:
            if scenario and trainable:
                pairs = task_pairs(init_task, corpus)
                rng_for(cfg.seed, "pairs", init_task.task_id).shuffle(pairs)
                train_on(pairs, init_task)
            evaluate_step(0)
            for step, task in enumerate(training, 1):
                if trainable:
                    pairs = task_pairs(task, corpus)
                    rng_for(cfg.seed, "pairs", task.task_id).shuffle(pairs)
                    train_on(pairs, task)
                evaluate_step(step)
    except SessionError as exc:
        flush()
        done = sum(1 for key in history.records)
        raise SessionError(f"run aborted after {done} records: {exc}") from exc
    flush()
    return history
