"""Continual run loop, toy ranker training, external ranker protocol."""

import sys
from pathlib import Path

import pytest

from topicstream.corpus import Corpus, DocStore, QrelSet, QueryStore
from topicstream.errors import SessionError
from topicstream.harness import (
    Bm25Ranker,
    LexicalOverlapRanker,
    RunConfig,
    TermWeightRanker,
    external_ranker_session,
    make_negatives_provider,
    run_sequence,
    task_pairs,
    train_term_ranker,
)
from topicstream.metrics import forgetting_score
from topicstream.retrieval import build_index

import synth

ADAPTER = [sys.executable, str(Path(__file__).parent / "echo_adapter.py")]

TOY_RANKER_ARGS = dict(margin=1.2, learning_rate=0.4, negatives_per_pair=16)
TOY_CFG_ARGS = dict(candidates_depth=100, epochs_per_task=5)


class TestRunSequenceBasics:
    def test_frozen_bm25_history_is_flat(self):
        corpus, seq = synth.forgetting_stream()
        idx = build_index(corpus.docs)
        cfg = RunConfig(seed=13, candidates_depth=100, mode="frozen")
        history = run_sequence(seq, Bm25Ranker(idx), cfg, corpus, idx)
        for label in history.tracked:
            series = history.scores(label)
            assert len(set(series)) == 1
            for step in range(history.n_steps + 1):
                assert forgetting_score(history, label, step) == 0.0

    def test_history_complete_with_step_per_task(self):
        corpus, seq = synth.forgetting_stream()
        idx = build_index(corpus.docs)
        cfg = RunConfig(seed=13, candidates_depth=100, mode="frozen")
        history = run_sequence(seq, Bm25Ranker(idx), cfg, corpus, idx)
        assert history.n_steps == len(seq.tasks)
        assert history.is_complete()
        assert len(history.records) == len(history.tracked) * (history.n_steps + 1)

    def test_rerun_identical_bytes(self, tmp_path):
        corpus, seq = synth.forgetting_stream()
        idx = build_index(corpus.docs)
        for name in ("a", "b"):
            ranker = TermWeightRanker(idx, seed=13, **TOY_RANKER_ARGS)
            cfg = RunConfig(seed=13, mode="sequential", **TOY_CFG_ARGS)
            run_sequence(seq, ranker, cfg, corpus, idx, out_dir=tmp_path / name)
        assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
        for step in range(len(seq.tasks) + 1):
            assert (tmp_path / "a" / "checkpoints" / f"step-{step}.tsv").read_bytes() == (
                tmp_path / "b" / "checkpoints" / f"step-{step}.tsv"
            ).read_bytes()


class TestForgettingDynamics:
    def run_mode(self, mode, epochs=5):
        corpus, seq = synth.forgetting_stream()
        idx = build_index(corpus.docs)
        ranker = TermWeightRanker(idx, seed=13, **TOY_RANKER_ARGS)
        cfg = RunConfig(seed=13, candidates_depth=100, epochs_per_task=epochs, mode=mode)
        return run_sequence(seq, ranker, cfg, corpus, idx)

    def test_sequential_forgets_first_topic_after_second(self):
        history = self.run_mode("sequential")
        assert forgetting_score(history, "t1", 2) > 0.0
        assert forgetting_score(history, "t1", 1) == 0.0

    def test_joint_max_forgetting_strictly_below_sequential(self):
        seq_hist = self.run_mode("sequential")
        joint_hist = self.run_mode("joint", epochs=12)

        def max_mf(history):
            return max(
                forgetting_score(history, label, step)
                for label in history.tracked
                for step in range(1, history.n_steps + 1)
            )

        assert max_mf(joint_hist) < max_mf(seq_hist)


class TestTrainTermRanker:
    def corpus(self):
        docs = {"dp": "alpha beta", "dn": "alpha gamma", "dz": "zeta eta"}
        queries = {"q1": "alpha beta"}
        qrels = {"q1": {"dp": 1}}
        return Corpus(QueryStore(queries), DocStore(docs), QrelSet(qrels))

    def test_disjoint_negative_changes_nothing(self):
        corpus = self.corpus()
        idx = build_index(corpus.docs)
        ranker = TermWeightRanker(idx, margin=1.0, learning_rate=0.5)
        pairs = [("q1", "alpha beta", "dp", "alpha beta")]
        # negative shares no query term: hinge active but gradient empty
        train_term_ranker(ranker, pairs, lambda qid, q, k, rng: [("dz", "zeta eta")], epochs=3)
        assert ranker.weights == {}

    def test_inactive_hinge_no_update(self):
        corpus = self.corpus()
        idx = build_index(corpus.docs)
        ranker = TermWeightRanker(idx, margin=0.0, learning_rate=0.5)
        pairs = [("q1", "alpha beta", "dp", "alpha beta")]
        # s(pos) > s(neg) already and margin is 0, so no update happens
        train_term_ranker(ranker, pairs, lambda qid, q, k, rng: [("dn", "alpha gamma")], epochs=3)
        assert ranker.weights == {}

    def test_separable_pair_reaches_margin(self):
        corpus = self.corpus()
        idx = build_index(corpus.docs)
        ranker = TermWeightRanker(idx, margin=1.0, learning_rate=0.1)
        pairs = [("q1", "alpha beta", "dp", "alpha beta")]
        negatives = lambda qid, q, k, rng: [("dn", "alpha gamma")]
        train_term_ranker(ranker, pairs, negatives, epochs=50)
        s_pos = ranker.score_texts("alpha beta", "alpha beta")
        s_neg = ranker.score_texts("alpha beta", "alpha gamma")
        assert s_pos - s_neg >= ranker.margin - 1e-9

    def test_epoch_loss_non_increasing_on_separable_fixture(self):
        corpus = self.corpus()
        idx = build_index(corpus.docs)
        ranker = TermWeightRanker(idx, margin=1.0, learning_rate=0.05)
        pairs = [("q1", "alpha beta", "dp", "alpha beta")]
        negatives = lambda qid, q, k, rng: [("dn", "alpha gamma")]
        losses = [train_term_ranker(ranker, pairs, negatives, epochs=1) for _ in range(20)]
        assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))

    def test_negatives_provider_excludes_judged(self):
        corpus, seq = synth.forgetting_stream()
        idx = build_index(corpus.docs)
        task = seq.tasks[0]
        provider = make_negatives_provider(idx, corpus, task, depth=100)
        judged = {d for q in task.qrels for d in task.qrels[q]}
        ranker = TermWeightRanker(idx)
        for qid in task.train:
            negs = provider(qid, corpus.queries.text(qid), 8, ranker.rng)
            assert not ({d for d, _ in negs} & judged)


class TestExternalRanker:
    def cfg(self):
        return RunConfig(seed=13, candidates_depth=100, request_timeout=30.0)

    def test_hello_handshake(self):
        with external_ranker_session(ADAPTER, self.cfg()) as ranker:
            assert ranker.trainable is True
        with external_ranker_session(ADAPTER + ["--untrainable"], self.cfg()) as ranker:
            assert ranker.trainable is False

    def test_rescore_length_contract(self):
        with external_ranker_session(ADAPTER, self.cfg()) as ranker:
            scores = ranker.rescore("q", [("d1", "a"), ("d2", "b"), ("d3", "c")])
            assert scores == [3.0, 2.0, 1.0]

    def test_echo_matches_raw_bm25(self):
        corpus, seq = synth.forgetting_stream()
        idx = build_index(corpus.docs)
        cfg = RunConfig(seed=13, candidates_depth=100, mode="frozen")
        native = run_sequence(seq, Bm25Ranker(idx), cfg, corpus, idx)
        with external_ranker_session(ADAPTER + ["--untrainable"], self.cfg()) as ranker:
            external = run_sequence(seq, ranker, cfg, corpus, idx)
        assert native.records == external.records

    def test_malformed_reply_is_session_error(self):
        with pytest.raises(SessionError, match="malformed"):
            with external_ranker_session(ADAPTER + ["--garbage-once"], self.cfg()) as ranker:
                pass

    def test_unknown_op_error_reply(self):
        with external_ranker_session(ADAPTER, self.cfg()) as ranker:
            with pytest.raises(SessionError, match="unknown op"):
                ranker._request({"op": "mystery"})

    def test_unspawnable_command(self):
        with pytest.raises(SessionError):
            external_ranker_session(["/nonexistent/ranker-binary"], self.cfg())

    def test_train_round_trip(self):
        corpus, seq = synth.forgetting_stream()
        with external_ranker_session(ADAPTER, self.cfg()) as ranker:
            pairs = task_pairs(seq.tasks[0], corpus)
            loss = ranker.train(pairs, negatives=None, epochs=2)
            assert loss == 0.0


class TestLexicalRanker:
    def test_shared_token_counts(self):
        r = LexicalOverlapRanker()
        assert r.rescore("a b", [("d", "b c")]) == [1.0]
        assert r.rescore("a b", [("d", "x y")]) == [0.0]
        assert r.rescore("What is IT?", [("d", "what it is")]) == [3.0]
