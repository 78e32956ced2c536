"""Tab-separated query/passage stores and TREC-format relevance judgments.

File formats:
  queries / collection: ``id<TAB>text`` per line, UTF-8, newline ``\\n``.
  qrels: ``qid 0 did grade`` whitespace-separated (TREC format).

IDs are opaque strings. Stores are immutable after load and safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, InputError


@dataclass(frozen=True)
class QueryStore:
    """Query-id -> query text."""

    entries: dict[str, str]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, qid: str) -> bool:
        return qid in self.entries

    def text(self, qid: str) -> str:
        return self.entries[qid]

    def ids(self) -> list[str]:
        return sorted(self.entries)


@dataclass(frozen=True)
class DocStore:
    """Doc-id -> passage text."""

    entries: dict[str, str]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, did: str) -> bool:
        return did in self.entries

    def text(self, did: str) -> str:
        return self.entries[did]

    def ids(self) -> list[str]:
        return sorted(self.entries)


@dataclass(frozen=True)
class QrelSet:
    """Query-id -> {doc-id: relevance grade}, grades >= 1 only."""

    pairs: dict[str, dict[str, int]]

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, qid: str) -> bool:
        return qid in self.pairs

    def docs_for(self, qid: str) -> dict[str, int]:
        return self.pairs.get(qid, {})

    def judged_queries(self) -> list[str]:
        return sorted(self.pairs)

    def restrict(self, qids) -> dict[str, dict[str, int]]:
        """Qrels limited to the given query ids (missing ids dropped)."""
        return {q: dict(self.pairs[q]) for q in sorted(qids) if q in self.pairs}


@dataclass(frozen=True)
class Corpus:
    queries: QueryStore
    docs: DocStore
    qrels: QrelSet


@dataclass(frozen=True)
class ValidationReport:
    """Dangling qrel references found by validate_corpus."""

    dangling_queries: tuple[str, ...] = ()
    dangling_docs: tuple[tuple[str, str], ...] = ()

    @property
    def ok(self) -> bool:
        return not self.dangling_queries and not self.dangling_docs

    def findings(self) -> list[str]:
        out = [f"qrel references unknown query {q}" for q in self.dangling_queries]
        out += [f"qrel for {q} references unknown doc {d}" for q, d in self.dangling_docs]
        return out


def _load_id_text(path: str | Path, what: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise FormatError(f"{path}:{lineno}: expected `id<TAB>text` in {what} file")
            key, text = line.split("\t", 1)
            key = key.strip()
            text = text.strip()
            if not key or not text:
                raise FormatError(f"{path}:{lineno}: empty id or text in {what} file")
            if key in entries:
                raise FormatError(f"{path}:{lineno}: duplicate {what} id {key!r}")
            entries[key] = text
    return entries


def load_queries(path: str | Path) -> QueryStore:
    """Load a tab-separated query file into an immutable store."""
    return QueryStore(_load_id_text(path, "query"))


def load_documents(path: str | Path) -> DocStore:
    """Load a tab-separated passage collection into an immutable store."""
    return DocStore(_load_id_text(path, "doc"))


def load_qrels(path: str | Path) -> QrelSet:
    """Load TREC qrels, dropping grades <= 0 and keeping the max grade per pair."""
    pairs: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4:
                raise FormatError(f"{path}:{lineno}: expected `qid 0 did grade`, got {len(fields)} fields")
            qid, _, did, grade_s = fields
            try:
                grade = int(grade_s)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer relevance grade {grade_s!r}") from None
            if grade <= 0:
                continue
            bucket = pairs.setdefault(qid, {})
            if grade > bucket.get(did, 0):
                bucket[did] = grade
    return QrelSet(pairs)


def load_corpus(queries_path, docs_path, qrels_path) -> Corpus:
    return Corpus(load_queries(queries_path), load_documents(docs_path), load_qrels(qrels_path))


def validate_corpus(c: Corpus, strict: bool = False) -> ValidationReport:
    """Cross-check that every qrel entry points at a known query and doc."""
    bad_q = tuple(q for q in c.qrels.judged_queries() if q not in c.queries)
    bad_d = tuple(
        (q, d)
        for q in c.qrels.judged_queries()
        for d in sorted(c.qrels.pairs[q])
        if d not in c.docs
    )
    report = ValidationReport(dangling_queries=bad_q, dangling_docs=bad_d)
    if strict and not report.ok:
        raise InputError("corpus validation failed: " + "; ".join(report.findings()))
    return report


def write_id_text(entries: dict[str, str], path: str | Path) -> None:
    """Write an id->text mapping back to its tab-separated file format."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(f"{key}\t{entries[key]}\n")


def write_queries(store: QueryStore, path: str | Path) -> None:
    write_id_text(store.entries, path)


def write_documents(store: DocStore, path: str | Path) -> None:
    write_id_text(store.entries, path)


def write_qrels(pairs: dict[str, dict[str, int]], path: str | Path) -> None:
    """Write qrels in TREC format, sorted by (qid, did) for stable bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(pairs):
            for did in sorted(pairs[qid]):
                fh.write(f"{qid} 0 {did} {pairs[qid][did]}\n")
