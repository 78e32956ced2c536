"""MRR, forgetting, retrieval overlap, similarity matrices, quartiles."""

import random

import numpy as np
import pytest

from topicstream.corpus import Corpus, DocStore, QrelSet, QueryStore
from topicstream.errors import InputError
from topicstream.harness import Bm25Ranker
from topicstream.metrics import (
    EvalRecord,
    RunHistory,
    SimilarityMatrix,
    evaluate_task,
    forgetting_score,
    mrr_at_k,
    overlap_from_pools,
    quartile_forgetting,
    retrieval_overlap,
    sample_pools,
    similarity_matrix,
    write_quartile_csv,
)
from topicstream.retrieval import Ranking, build_index, search
from topicstream.streams import Task, TopicSequence

import synth


def ranking_of(*dids):
    return Ranking(query_id="q", entries=[(d, float(10 - i)) for i, d in enumerate(dids)])


class TestMrrAtK:
    def test_relevant_first(self):
        assert mrr_at_k(ranking_of("d1", "d2"), {"d1"}, 10) == 1.0

    def test_cutoff(self):
        ranking = ranking_of(*[f"x{i}" for i in range(10)], "rel")
        assert mrr_at_k(ranking, {"rel"}, 10) == 0.0
        assert mrr_at_k(ranking, {"rel"}, 100) == pytest.approx(1 / 11)

    def test_empty_ranking(self):
        assert mrr_at_k(Ranking("q", []), {"d"}, 10) == 0.0


class TestEvaluateTask:
    def fixture(self):
        docs = {
            "d1": "alpha beta shared",
            "d2": "alpha shared",
            "d3": "beta gamma",
            "d4": "gamma delta",
        }
        queries = {"q1": "alpha beta", "q2": "gamma delta"}
        qrels = {"q1": {"d1": 1}, "q2": {"d4": 1}}
        corpus = Corpus(QueryStore(queries), DocStore(docs), QrelSet(qrels))
        task = Task(
            task_id="t", train=(), val=(), test=("q1", "q2"), qrels=qrels, provenance="topic"
        )
        return corpus, task

    def test_identity_rerank_equals_bm25(self):
        corpus, task = self.fixture()
        idx = build_index(corpus.docs)
        rec = evaluate_task(Bm25Ranker(idx), task, idx, corpus.queries, corpus.docs, depth=100)
        expected = []
        for qid in task.test:
            base = search(idx, corpus.queries.text(qid), 100)
            expected.append(mrr_at_k(base, set(task.qrels[qid]), 10))
        assert rec.mrr10 == pytest.approx(sum(expected) / 2, abs=1e-12)

    def test_mean_of_reciprocal_ranks(self):
        corpus, task = self.fixture()
        idx = build_index(corpus.docs)

        class Fixed:
            trainable = False
            name = "fixed"

            def rescore(self, q, cands):
                # puts q1's relevant doc first, q2's second
                want = {"q1": "d1", "q2": "d3"}.get(q.split()[0] == "alpha" and "q1" or "q2")
                return [2.0 if d == want else 1.0 for d, _ in cands]

        rec = evaluate_task(Fixed(), task, idx, corpus.queries, corpus.docs, depth=100)
        assert rec.mrr10 == pytest.approx((1.0 + 0.5) / 2)

    def test_manual_rank_inspection(self):
        # doc with both query terms outranks single-term docs under BM25
        corpus, task = self.fixture()
        idx = build_index(corpus.docs)
        ranking = search(idx, "alpha beta", 10)
        assert ranking.doc_ids()[0] == "d1"
        rec = evaluate_task(Bm25Ranker(idx), task, idx, corpus.queries, corpus.docs, depth=100)
        assert rec.mrr10 == pytest.approx(1.0)  # both queries rank their doc first

    def test_threads_do_not_change_result(self):
        corpus, task = self.fixture()
        idx = build_index(corpus.docs)
        one = evaluate_task(Bm25Ranker(idx), task, idx, corpus.queries, corpus.docs, depth=100, threads=1)
        four = evaluate_task(Bm25Ranker(idx), task, idx, corpus.queries, corpus.docs, depth=100, threads=4)
        assert (one.mrr10, one.mrr100) == (four.mrr10, four.mrr100)


def history_from_scores(scores: dict[str, list[float]]) -> RunHistory:
    n = len(next(iter(scores.values()))) - 1
    h = RunHistory(n_steps=n, tracked=tuple(sorted(scores)), step_task_ids=[""] * (n + 1))
    for label, series in scores.items():
        for step, value in enumerate(series):
            h.add(EvalRecord(task=label, step=step, mrr10=value, mrr100=value))
    return h


class TestForgettingScore:
    def test_drop_from_peak(self):
        h = history_from_scores({"t": [0.20, 0.30, 0.25]})
        assert forgetting_score(h, "t", 2) == pytest.approx(0.05)

    def test_zero_at_peak(self):
        h = history_from_scores({"t": [0.20, 0.30, 0.25]})
        assert forgetting_score(h, "t", 1) == 0.0

    def test_never_negative(self):
        rng = random.Random(8)
        for _ in range(50):
            series = [rng.random() for _ in range(6)]
            h = history_from_scores({"t": series})
            for j in range(6):
                assert forgetting_score(h, "t", j) >= 0.0


class TestOverlap:
    def test_set_arithmetic(self):
        # one-term queries with disjoint single-doc postings make retrieved
        # unions explicit
        docs = DocStore({f"d{i}": f"term{i}" for i in range(6)})
        queries = QueryStore({f"q{i}": f"term{i}" for i in range(6)})
        idx = build_index(docs)
        # A retrieves {d0,d1,d2}; B retrieves {d1,d2,d3} -> 2/3
        val = overlap_from_pools(["q0", "q1", "q2"], ["q1", "q2", "q3"], idx, queries, depth=5)
        assert val == pytest.approx(2 / 3)

    def test_identical_pools_give_one(self):
        docs = DocStore({"d0": "term0", "d1": "term1"})
        queries = QueryStore({"q0": "term0", "q1": "term1"})
        idx = build_index(docs)
        assert overlap_from_pools(["q0", "q1"], ["q0", "q1"], idx, queries, depth=5) == 1.0

    def test_empty_first_union_is_error(self):
        docs = DocStore({"d0": "term0"})
        queries = QueryStore({"q9": "zebra"})
        idx = build_index(docs)
        with pytest.raises(InputError):
            overlap_from_pools(["q9"], ["q9"], idx, queries, depth=5)

    def test_disjoint_pools_within_task(self):
        a, b = sample_pools([f"q{i}" for i in range(30)], pool_size=10, seed=3, task_key="t")
        assert len(a) == len(b) == 10
        assert not (set(a) & set(b))

    def test_self_overlap_uses_disjoint_pools(self):
        corpus, tasks = synth.two_vocab_corpus()
        idx = build_index(corpus.docs)
        val = retrieval_overlap(tasks[0], tasks[0], idx, corpus.queries, pool_size=30, depth=25, seed=3)
        assert 0.0 < val <= 1.0

    def test_cross_vocabulary_overlap_is_zero(self):
        corpus, tasks = synth.two_vocab_corpus()
        idx = build_index(corpus.docs)
        val = retrieval_overlap(tasks[0], tasks[1], idx, corpus.queries, pool_size=30, depth=25, seed=3)
        assert val == 0.0


class TestSimilarityMatrix:
    def test_two_vocab_structure(self):
        corpus, tasks = synth.two_vocab_corpus()
        seq = TopicSequence(tasks=tasks, tracked=(1, 2), seed=3)
        idx = build_index(corpus.docs)
        m = similarity_matrix(seq, idx, corpus.queries, pool_size=40, depth=25, seed=3)
        assert m.values[0, 0] > 0 and m.values[1, 1] > 0
        assert m.values[0, 1] == 0.0 and m.values[1, 0] == 0.0
        assert m.intra_mean() > m.inter_mean()

    def test_doubling_pool_keeps_ordering(self):
        corpus, tasks = synth.two_vocab_corpus()
        seq = TopicSequence(tasks=tasks, tracked=(1, 2), seed=3)
        idx = build_index(corpus.docs)
        small = similarity_matrix(seq, idx, corpus.queries, pool_size=20, depth=25, seed=3)
        big = similarity_matrix(seq, idx, corpus.queries, pool_size=40, depth=25, seed=3)
        assert small.intra_mean() > small.inter_mean()
        assert big.intra_mean() > big.inter_mean()

    def test_csv_round_trip(self, tmp_path):
        values = np.array([[1.0, 0.25], [0.125, 1.0]])
        m = SimilarityMatrix(task_ids=["ta", "tb"], values=values, pool_size=2, depth=5)
        m.to_csv(tmp_path / "m.csv")
        back = SimilarityMatrix.from_csv(tmp_path / "m.csv")
        assert back.task_ids == ["ta", "tb"]
        assert np.array_equal(back.values, values)

    def test_threads_match_serial(self):
        corpus, tasks = synth.two_vocab_corpus()
        seq = TopicSequence(tasks=tasks, tracked=(1, 2), seed=3)
        idx = build_index(corpus.docs)
        serial = similarity_matrix(seq, idx, corpus.queries, pool_size=20, depth=25, seed=3)
        threaded = similarity_matrix(seq, idx, corpus.queries, pool_size=20, depth=25, seed=3, threads=4)
        assert np.array_equal(serial.values, threaded.values)


class TestHistoryCsv:
    def test_round_trip(self, tmp_path):
        h = history_from_scores({"ta": [0.1, 0.5, 0.4], "tb": [0.2, 0.3, 0.6]})
        h.to_csv(tmp_path / "h.csv")
        back = RunHistory.from_csv(tmp_path / "h.csv")
        assert back.n_steps == 2
        assert back.records == h.records

    def test_deterministic_bytes(self, tmp_path):
        h = history_from_scores({"ta": [1 / 3, 2 / 7]})
        h.to_csv(tmp_path / "a.csv")
        h.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestQuartiles:
    def matrix_for(self, labels, sim_fn):
        n = len(labels)
        values = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                values[i, j] = 1.0 if i == j else sim_fn(i, j)
        return SimilarityMatrix(task_ids=labels, values=values, pool_size=1, depth=1)

    def history_nine_tasks(self, mf_fn):
        labels = [f"t{i}" for i in range(9)]
        h = RunHistory(n_steps=9, tracked=("t0",), step_task_ids=[""] + labels)
        # t0 peaks at step 1 then degrades per mf_fn at each later step
        h.add(EvalRecord("t0", 0, 0.5, 0.5))
        h.add(EvalRecord("t0", 1, 1.0, 1.0))
        for j in range(2, 10):
            v = 1.0 - mf_fn(j)
            h.add(EvalRecord("t0", j, v, v))
        return labels, h

    def test_eight_distinct_pairs_split_two_per_quartile(self):
        labels, h = self.history_nine_tasks(lambda j: 0.01 * j)
        m = self.matrix_for(labels, lambda i, j: 0.1 * j)
        rows = quartile_forgetting(h, m)
        assert [r.quartile for r in rows] == [1, 2, 3, 4]
        assert all(r.pair_count == 2 for r in rows)

    def test_equal_mf_everywhere(self):
        labels, h = self.history_nine_tasks(lambda j: 0.25)
        m = self.matrix_for(labels, lambda i, j: 0.1 * j)
        rows = quartile_forgetting(h, m)
        assert all(r.mean_mf == pytest.approx(0.25) for r in rows)

    def test_pooled_variant(self):
        labels, h = self.history_nine_tasks(lambda j: 0.01 * j)
        m = self.matrix_for(labels, lambda i, j: 0.1 * j)
        rows = quartile_forgetting(h, m, pooled=True)
        assert [r.tracked_task for r in rows] == ["pooled"] * 4

    def test_too_few_pairs_is_error(self):
        labels = ["t0", "t1", "t2"]
        h = RunHistory(n_steps=3, tracked=("t0",), step_task_ids=[""] + labels)
        for j in range(4):
            h.add(EvalRecord("t0", j, 0.5, 0.5))
        m = self.matrix_for(labels, lambda i, j: 0.1)
        with pytest.raises(InputError):
            quartile_forgetting(h, m)

    def test_csv_shape(self, tmp_path):
        labels, h = self.history_nine_tasks(lambda j: 0.01 * j)
        m = self.matrix_for(labels, lambda i, j: 0.1 * j)
        write_quartile_csv(quartile_forgetting(h, m), tmp_path / "q.csv")
        lines = (tmp_path / "q.csv").read_text().splitlines()
        assert lines[0] == "tracked_task,quartile,mean_similarity,mean_mf"
        assert len(lines) == 5
