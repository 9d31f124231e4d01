"""Refinement determination: keep a refinement only if it stays close to its input."""

from __future__ import annotations

from array import array
from collections.abc import Callable
from dataclasses import dataclass

from .core import GateDecision, SimilarityKind


def indel_distance(a: str, b: str) -> int:
    """Count the insertions and deletions that turn one string into another.

    Substitutions are not allowed, so the distance equals
    ``len(a) + len(b) - 2 * LCS(a, b)``. Strings are compared per code point.

    Args:
        a: first string
        b: second string

    Returns:
        the indel distance
    """
    if a == b:
        return 0
    if not a or not b:
        return len(a) + len(b)
    if len(a) < len(b):
        a, b = b, a

    # one row of the LCS table
    row = array("L", [0] * (len(b) + 1))
    for x in a:
        diagonal = 0
        for j, y in enumerate(b, start=1):
            above = row[j]
            row[j] = diagonal + 1 if x == y else max(above, row[j - 1])
            diagonal = above
    return len(a) + len(b) - 2 * row[len(b)]


def levenshtein_distance(a: str, b: str) -> int:
    """Count the unit-cost edits (with substitutions) that turn a into b.

    Args:
        a: first string
        b: second string

    Returns:
        the Levenshtein distance
    """
    if a == b:
        return 0
    if not a or not b:
        return len(a) + len(b)
    if len(a) < len(b):
        a, b = b, a

    column = array("L", range(len(b) + 1))
    for x, char in enumerate(a, start=1):
        column[0] = x
        last = x - 1
        for y in range(1, len(b) + 1):
            old = column[y]
            cost = int(char != b[y - 1])
            column[y] = min(column[y] + 1, column[y - 1] + 1, last + cost)
            last = old
    return column[len(b)]


def indel_similarity(a: str, b: str) -> float:
    """Normalized indel similarity.

    Args:
        a: first string
        b: second string

    Returns:
        ``1 - indel_distance(a, b) / (len(a) + len(b))``, 1.0 if both are empty
    """
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    return 1 - indel_distance(a, b) / total


def levenshtein_similarity(a: str, b: str) -> float:
    """Levenshtein distance normalized by the sum of lengths, as a similarity."""
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    return 1 - levenshtein_distance(a, b) / total


@dataclass(frozen=True)
class SimilarityFn:
    """A named symmetric similarity in [0, 1]."""

    name: str
    compute: Callable[[str, str], float]

    def __call__(self, a: str, b: str) -> float:
        return self.compute(a, b)


SIMILARITIES = {
    SimilarityKind.INDEL: SimilarityFn(SimilarityKind.INDEL, indel_similarity),
    SimilarityKind.LEVENSHTEIN: SimilarityFn(
        SimilarityKind.LEVENSHTEIN, levenshtein_similarity
    ),
}


def get_similarity(kind: SimilarityKind | str) -> SimilarityFn:
    """Return a registered similarity function.

    Args:
        kind: name of the similarity

    Returns:
        the function
    """
    return SIMILARITIES[SimilarityKind(kind)]


def determine(
    text: str,
    candidate: str,
    threshold: float,
    similarity: SimilarityFn = SIMILARITIES[SimilarityKind.INDEL],
    *,
    ablated: bool = False,
) -> tuple[str, GateDecision]:
    """Choose between a text and its refinement.

    The candidate is kept iff its similarity to the text is at least the
    threshold. The returned text is one of the two arguments, unchanged.

    Args:
        text: the input of the refinement
        candidate: the refined text
        threshold: λ in [0, 1]
        similarity: the similarity function
        ablated: keep the candidate whatever its similarity; the threshold is
            only recorded

    Returns:
        a tuple (final text, decision)
    """
    g = similarity(candidate, text)
    accepted = ablated or g >= threshold
    decision = GateDecision(
        similarity=g, accepted=accepted, threshold_used=threshold, ablated=ablated
    )
    return (candidate if accepted else text), decision
