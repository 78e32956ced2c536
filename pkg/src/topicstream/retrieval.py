"""Lexical retrieval: tokenizer, in-memory inverted index, BM25 top-k search.

Scoring uses the non-negative log formulation
``idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`` with defaults k1=0.9, b=0.4.
No stemming is applied; determinism and auditability win over analyzer
fidelity here since downstream overlap measures are relative.
"""

from __future__ import annotations

import math
import re
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import DocStore
from .errors import InputError

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

# Fixed 33-word English stopword list. Tuned for question-style queries
# (interrogatives dropped); changing it changes every index and run file.
STOPWORDS = frozenset(
    """
    a an and are as at be but by for how if in into is it no not of on or
    that the their then there these they this to was what with
    """.split()
)

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop stopwords."""
    return [t for t in _TOKEN.findall(text.lower()) if t not in STOPWORDS]


@dataclass
class InvertedIndex:
    """Term postings plus the document statistics BM25 needs."""

    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avg_doc_len: float
    doc_count: int

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def tf(self, term: str, did: str) -> int:
        plist = self.postings.get(term)
        if not plist:
            return 0
        pos = bisect_left(plist, (did,))
        if pos < len(plist) and plist[pos][0] == did:
            return plist[pos][1]
        return 0


@dataclass
class Ranking:
    """Scored documents for one query, scores non-increasing."""

    query_id: str
    entries: list[tuple[str, float]] = field(default_factory=list)

    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def build_index(docs: DocStore) -> InvertedIndex:
    """Index a document store; postings are sorted by doc id."""
    if len(docs) == 0:
        raise InputError("cannot index an empty document store")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for did in docs.ids():
        tokens = tokenize(docs.text(did))
        doc_lengths[did] = len(tokens)
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        for term in counts:
            postings.setdefault(term, []).append((did, counts[term]))
    # ids() is sorted, so each postings list is already in doc-id order
    avg = sum(doc_lengths.values()) / len(doc_lengths)
    return InvertedIndex(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_len=avg,
        doc_count=len(doc_lengths),
    )


def bm25_score(
    q_terms: list[str],
    did: str,
    idx: InvertedIndex,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """BM25 score of one document for a tokenized query.

    Query terms are scored per occurrence, so a duplicated term counts twice.
    """
    if did not in idx.doc_lengths:
        raise InputError(f"unknown doc id {did!r}")
    dlen = idx.doc_lengths[did]
    score = 0.0
    for term in q_terms:
        tf = idx.tf(term, did)
        if tf == 0:
            continue
        denom = tf + k1 * (1.0 - b + b * dlen / idx.avg_doc_len)
        score += idx.idf(term) * tf * (k1 + 1.0) / denom
    return score


def search(
    idx: InvertedIndex,
    query: str,
    k: int,
    query_id: str = "",
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> Ranking:
    """Top-k documents by BM25; ties broken by ascending doc id.

    Only documents matching at least one query term are returned, so the
    ranking may hold fewer than k entries (or none).
    """
    if k < 1:
        raise InputError("k must be >= 1")
    q_terms = tokenize(query)
    scores: dict[str, float] = {}
    for term in q_terms:
        plist = idx.postings.get(term)
        if not plist:
            continue
        idf = idx.idf(term)
        for did, tf in plist:
            denom = tf + k1 * (1.0 - b + b * idx.doc_lengths[did] / idx.avg_doc_len)
            scores[did] = scores.get(did, 0.0) + idf * tf * (k1 + 1.0) / denom
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return Ranking(query_id=query_id, entries=ranked)


def write_run(rankings: list[Ranking], path: str | Path, tag: str = "topicstream") -> None:
    """Write rankings as a TREC run file: ``qid Q0 docid rank score tag``."""
    with open(path, "w", encoding="utf-8") as fh:
        for ranking in rankings:
            for rank, (did, score) in enumerate(ranking.entries, 1):
                fh.write(f"{ranking.query_id} Q0 {did} {rank} {score:.6f} {tag}\n")
