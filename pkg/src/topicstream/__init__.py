"""topicstream: build long topic streams from a judged query corpus and
measure how continually trained rankers hold up on them."""

__version__ = "0.1.0"

from .corpus import Corpus, DocStore, QrelSet, QueryStore, load_corpus, validate_corpus
from .embeddings import EmbeddingTable, load_vectors
from .errors import InputError, SessionError
from .metrics import RunHistory, SimilarityMatrix, forgetting_score, mrr_at_k, retrieval_overlap
from .retrieval import InvertedIndex, Ranking, build_index, bm25_score, search, tokenize
from .streams import Scenario, Task, TopicSequence

__all__ = [
    "Corpus",
    "DocStore",
    "EmbeddingTable",
    "InputError",
    "InvertedIndex",
    "QrelSet",
    "QueryStore",
    "Ranking",
    "RunHistory",
    "Scenario",
    "SessionError",
    "SimilarityMatrix",
    "Task",
    "TopicSequence",
    "bm25_score",
    "build_index",
    "forgetting_score",
    "load_corpus",
    "load_vectors",
    "mrr_at_k",
    "retrieval_overlap",
    "search",
    "tokenize",
    "validate_corpus",
]
