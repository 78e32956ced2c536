"""Corpus loading, validation and round-trips."""

import random

import pytest

from topicstream.corpus import (
    Corpus,
    DocStore,
    QrelSet,
    QueryStore,
    load_documents,
    load_qrels,
    load_queries,
    validate_corpus,
    write_documents,
    write_qrels,
    write_queries,
)
from topicstream.errors import FormatError, InputError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadQueries:
    def test_basic_parse(self, tmp_path):
        p = write(tmp_path / "q.tsv", "q1\twhat is water shortage\nq2\tlargest freshwater source\n")
        store = load_queries(p)
        assert len(store) == 2
        assert store.text("q1") == "what is water shortage"

    def test_empty_file(self, tmp_path):
        assert len(load_queries(write(tmp_path / "q.tsv", ""))) == 0

    def test_duplicate_id_names_id_and_line(self, tmp_path):
        p = write(tmp_path / "q.tsv", "q1\ta\nq1\tb\n")
        with pytest.raises(FormatError, match=r"q\.tsv:2.*q1"):
            load_queries(p)

    def test_malformed_line_reports_number(self, tmp_path):
        p = write(tmp_path / "q.tsv", "q1\tok\nq2 no tab here\n")
        with pytest.raises(FormatError, match=r"q\.tsv:2"):
            load_queries(p)

    def test_blank_text_rejected(self, tmp_path):
        with pytest.raises(FormatError):
            load_queries(write(tmp_path / "q.tsv", "q1\t   \n"))


class TestLoadDocuments:
    def test_three_line_collection(self, tmp_path):
        p = write(tmp_path / "d.tsv", "d1\talpha\nd2\tbeta\nd3\tgamma\n")
        assert len(load_documents(p)) == 3

    def test_blank_trailing_line_ignored(self, tmp_path):
        p = write(tmp_path / "d.tsv", "d1\talpha\nd2\tbeta\n\n")
        assert len(load_documents(p)) == 2

    def test_missing_tab_is_error(self, tmp_path):
        with pytest.raises(FormatError, match=r"d\.tsv:1"):
            load_documents(write(tmp_path / "d.tsv", "d1 alpha\n"))


class TestLoadQrels:
    def test_single_pair(self, tmp_path):
        qrels = load_qrels(write(tmp_path / "r.txt", "q1 0 d1 1\n"))
        assert qrels.pairs == {"q1": {"d1": 1}}

    def test_zero_grade_dropped(self, tmp_path):
        qrels = load_qrels(write(tmp_path / "r.txt", "q1 0 d1 0\n"))
        assert len(qrels) == 0

    def test_duplicates_keep_max_grade(self, tmp_path):
        qrels = load_qrels(write(tmp_path / "r.txt", "q1 0 d1 1\nq1 0 d1 2\n"))
        assert qrels.pairs == {"q1": {"d1": 2}}

    def test_non_integer_grade(self, tmp_path):
        with pytest.raises(FormatError, match=r"r\.txt:1"):
            load_qrels(write(tmp_path / "r.txt", "q1 0 d1 high\n"))

    def test_wrong_field_count(self, tmp_path):
        with pytest.raises(FormatError):
            load_qrels(write(tmp_path / "r.txt", "q1 d1 1\n"))

    def test_size_bounded_by_lines_and_grades_positive(self, tmp_path):
        rng = random.Random(3)
        lines = []
        for i in range(200):
            lines.append(f"q{rng.randrange(30)} 0 d{rng.randrange(40)} {rng.randrange(-1, 3)}")
        qrels = load_qrels(write(tmp_path / "r.txt", "\n".join(lines) + "\n"))
        n_pairs = sum(len(v) for v in qrels.pairs.values())
        assert n_pairs <= 200
        assert all(g >= 1 for docs in qrels.pairs.values() for g in docs.values())


class TestValidate:
    def make(self):
        return Corpus(
            QueryStore({"q1": "alpha", "q2": "beta"}),
            DocStore({"d1": "alpha text", "d2": "beta text"}),
            QrelSet({"q1": {"d1": 1}, "q2": {"d2": 1}}),
        )

    def test_consistent_corpus(self):
        assert validate_corpus(self.make()).ok

    def test_dangling_query(self):
        c = self.make()
        c.qrels.pairs["q9"] = {"d1": 1}
        report = validate_corpus(c)
        assert report.dangling_queries == ("q9",)

    def test_dangling_doc(self):
        c = self.make()
        c.qrels.pairs["q1"]["d9"] = 1
        report = validate_corpus(c)
        assert report.dangling_docs == (("q1", "d9"),)

    def test_strict_mode_raises(self):
        c = self.make()
        c.qrels.pairs["q9"] = {"d1": 1}
        with pytest.raises(InputError):
            validate_corpus(c, strict=True)


class TestRoundTrip:
    def test_queries_round_trip(self, tmp_path):
        rng = random.Random(17)
        entries = {f"q{i}": f"text {rng.randrange(10**6)} row" for i in range(60)}
        store = QueryStore(entries)
        write_queries(store, tmp_path / "q.tsv")
        assert load_queries(tmp_path / "q.tsv").entries == entries

    def test_documents_round_trip(self, tmp_path):
        entries = {f"d{i}": f"passage body {i}" for i in range(30)}
        write_documents(DocStore(entries), tmp_path / "d.tsv")
        assert load_documents(tmp_path / "d.tsv").entries == entries

    def test_qrels_round_trip(self, tmp_path):
        rng = random.Random(23)
        pairs = {
            f"q{i}": {f"d{rng.randrange(50)}": rng.randrange(1, 4) for _ in range(rng.randrange(1, 4))}
            for i in range(40)
        }
        write_qrels(pairs, tmp_path / "r.txt")
        assert load_qrels(tmp_path / "r.txt").pairs == pairs
