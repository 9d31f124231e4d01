"""Incremental Okapi BM25 index over the transcripts of one document."""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from collections.abc import Callable, Collection, Iterable
from functools import lru_cache

from django.utils.translation import get_language_info

from . import docia_logger as logger
from .core import DuplicateSegmentError

_TOKEN_SEPARATOR = re.compile(r"[\W_]+")


def tokenize(text: str) -> list[str]:
    """Split a text into lower-cased alphanumeric tokens.

    No stemming and no stopword removal are applied.

    Args:
        text: the text

    Returns:
        the tokens (empty for an empty text)
    """
    return [token for token in _TOKEN_SEPARATOR.split(text.lower()) if token]


@lru_cache(maxsize=16)
def _stemmer_for(language: str) -> Callable[[str], str]:
    from nltk.stem.snowball import SnowballStemmer

    try:
        name = get_language_info(language)["name"].lower()
    except KeyError:
        name = language.lower()
    if name not in SnowballStemmer.languages:
        logger.warning("no stemmer for language", language=language)
        return lambda token: token
    return SnowballStemmer(name).stem


def analyzer(
    *, stemming_language: str | None = None, stopwords: Iterable[str] = ()
) -> Callable[[str], list[str]]:
    """Create a tokenizer with optional stemming and stopword removal.

    Args:
        stemming_language: language tag of the Snowball stemmer, or None
        stopwords: tokens to drop (compared after lower-casing)

    Returns:
        a function from text to tokens
    """
    stop = frozenset(tokenize(" ".join(stopwords)))
    stem = _stemmer_for(stemming_language) if stemming_language else None

    def analyze(text: str) -> list[str]:
        tokens = [t for t in tokenize(text) if t not in stop]
        return [stem(t) for t in tokens] if stem else tokens

    return analyze


class Bm25Index:
    """BM25 index that grows one segment at a time.

    IDF uses the non-negative form ``ln(1 + (N - df + 0.5) / (df + 0.5))``, so
    every score is non-negative. The statistics are global over all indexed
    segments, whatever the pool of a query.
    """

    def __init__(
        self,
        k1: float = 1.2,
        b: float = 0.75,
        *,
        analyze: Callable[[str], list[str]] = tokenize,
    ):
        self.k1 = k1
        self.b = b
        self.analyze = analyze
        self.postings: dict[str, dict[int, int]] = defaultdict(dict)
        self.doc_lengths: dict[int, int] = {}
        self.total_length = 0

    @property
    def total_docs(self) -> int:
        """Number of indexed segments."""
        return len(self.doc_lengths)

    @property
    def avg_doc_len(self) -> float:
        """Mean token count of the indexed segments (0 when empty)."""
        if not self.doc_lengths:
            return 0.0
        return self.total_length / len(self.doc_lengths)

    def __contains__(self, seg_index: int) -> bool:
        return seg_index in self.doc_lengths

    def add_segment(self, seg_index: int, text: str) -> Bm25Index:
        """Index the text of a segment.

        Args:
            seg_index: the segment index
            text: the segment text

        Raises:
            DuplicateSegmentError: if the segment is already indexed

        Returns:
            this index
        """
        if seg_index in self.doc_lengths:
            error = f"segment {seg_index} is already indexed"
            raise DuplicateSegmentError(error)
        tokens = self.analyze(text)
        for token, tf in Counter(tokens).items():
            self.postings[token][seg_index] = tf
        self.doc_lengths[seg_index] = len(tokens)
        self.total_length += len(tokens)
        return self

    def idf(self, token: str) -> float:
        """Compute the inverse document frequency of a token.

        Args:
            token: an analyzed token

        Returns:
            the IDF (0 for unknown tokens)
        """
        df = len(self.postings.get(token, ()))
        if not df:
            return 0.0
        n = self.total_docs
        return math.log(1 + (n - df + 0.5) / (df + 0.5))

    def scores(self, query: str, pool: Collection[int]) -> dict[int, float]:
        """Score the segments of a pool against a query.

        Repeated query tokens contribute once per occurrence.

        Args:
            query: the query text
            pool: indices of indexed segments

        Returns:
            the score of every pool member
        """
        scores = dict.fromkeys(pool, 0.0)
        avgdl = self.avg_doc_len
        if not scores or avgdl == 0:
            return scores
        k1, b = self.k1, self.b
        for token in self.analyze(query):
            postings = self.postings.get(token)
            if not postings:
                continue
            idf = self.idf(token)
            for seg_index, tf in postings.items():
                if seg_index not in scores:
                    continue
                dl = self.doc_lengths[seg_index]
                scores[seg_index] += (
                    idf * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * dl / avgdl))
                )
        return scores

    def top_n(
        self, query: str, n: int, pool: Collection[int] | None = None
    ) -> list[tuple[int, float]]:
        """Rank the pool by BM25 score.

        Segments with a zero score are left out. Ties go to the most recent
        segment.

        Args:
            query: the query text
            n: maximum number of results
            pool: indices to consider (all indexed segments when None)

        Returns:
            up to n pairs (segment index, score), best first
        """
        if n <= 0:
            return []
        if pool is None:
            pool = self.doc_lengths.keys()
        scored = self.scores(query, [i for i in pool if i in self.doc_lengths])
        ranked = sorted(
            ((i, s) for i, s in scored.items() if s > 0),
            key=lambda item: (-item[1], -item[0]),
        )
        return ranked[:n]
