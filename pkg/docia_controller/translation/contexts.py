"""Per-document memory and multi-level context assembly."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Collection
from dataclasses import dataclass, field

from . import docia_logger as logger
from .core import (
    Ablation,
    ContextMode,
    OutOfOrderSegmentError,
    PipelineConfig,
    SegmentRecord,
)
from .retrieval import Bm25Index, analyzer


@dataclass(frozen=True)
class ContextEntry:
    """A finalized segment as it appears in a prompt."""

    index: int
    transcript: str
    translation: str
    score: float | None = None
    """BM25 score, for long-memory entries"""


@dataclass(frozen=True)
class MultiLevelContext:
    """Short-memory and long-memory context of one segment.

    Both levels are chronological and disjoint; every long-memory entry
    precedes every short-memory entry.
    """

    short: tuple[ContextEntry, ...] = ()
    long: tuple[ContextEntry, ...] = ()
    query_used: str = ""

    @property
    def entries(self) -> tuple[ContextEntry, ...]:
        """All entries in chronological order."""
        return self.long + self.short

    def __len__(self) -> int:
        return len(self.short) + len(self.long)

    def fingerprint(self) -> str:
        """Return a digest of the context texts.

        Returns:
            SHA-256 over the indices and texts of the entries
        """
        payload = json.dumps(
            [[e.index, e.transcript, e.translation] for e in self.entries],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        """Return a JSON-compatible representation for inspection.

        Returns:
            the context as a dict
        """
        return {
            "query_used": self.query_used,
            "short": [_entry_dict(e) for e in self.short],
            "long": [_entry_dict(e) for e in self.long],
            "fingerprint": self.fingerprint(),
        }


EMPTY_CONTEXT = MultiLevelContext()


def _entry_dict(entry: ContextEntry) -> dict:
    data = {
        "index": entry.index,
        "transcript": entry.transcript,
        "translation": entry.translation,
    }
    if entry.score is not None:
        data["score"] = entry.score
    return data


@dataclass
class ContextStore:
    """Finalized transcripts and translations of one document.

    Entry j exists once segment j has completed the pipeline. Online stores
    keep the refined texts, offline stores keep the drafts.
    """

    doc_id: str
    mode: ContextMode = ContextMode.ONLINE
    index: Bm25Index = field(default_factory=Bm25Index)
    transcripts: list[str] = field(default_factory=list)
    translations: list[str] = field(default_factory=list)

    @classmethod
    def for_config(cls, doc_id: str, config: PipelineConfig) -> ContextStore:
        """Create an empty store with the retrieval settings of a config.

        Args:
            doc_id: the document
            config: the pipeline configuration

        Returns:
            the store
        """
        analyze = analyzer(
            stemming_language=config.source_lang if config.bm25_stemming else None,
            stopwords=config.bm25_stopwords,
        )
        return cls(
            doc_id=doc_id,
            mode=config.context_mode,
            index=Bm25Index(config.bm25_k1, config.bm25_b, analyze=analyze),
        )

    def __len__(self) -> int:
        return len(self.transcripts)

    def record_segment(self, record: SegmentRecord) -> ContextStore:
        """Append a completed segment.

        Args:
            record: the record of the next segment

        Raises:
            OutOfOrderSegmentError: if the record is not the next segment

        Returns:
            this store
        """
        expected = len(self.transcripts) + 1
        if record.id.index != expected:
            error = (
                f"{self.doc_id}: expected segment {expected}, got {record.id.index}"
            )
            raise OutOfOrderSegmentError(error)
        if self.mode == ContextMode.ONLINE:
            transcript = record.refined_transcript
            translation = record.final_translation
        else:
            transcript, translation = record.draft_transcript, record.draft_translation
        self.transcripts.append(transcript)
        self.translations.append(translation)
        self.index.add_segment(expected, transcript)
        return self

    def entry(self, index: int, score: float | None = None) -> ContextEntry:
        """Return a stored segment.

        Args:
            index: 1-based segment index
            score: retrieval score to attach

        Returns:
            the entry
        """
        return ContextEntry(
            index, self.transcripts[index - 1], self.translations[index - 1], score
        )

    def short_memory(self, i: int, m: int) -> tuple[ContextEntry, ...]:
        """Return the m segments preceding segment i.

        Args:
            i: current segment index
            m: short-memory size

        Returns:
            entries max(1, i-m)..i-1 in chronological order
        """
        last = min(i - 1, len(self))
        return tuple(self.entry(j) for j in range(max(1, i - m), last + 1))

    def long_memory(
        self, query: str, i: int, m: int, n: int
    ) -> tuple[ContextEntry, ...]:
        """Retrieve the n segments best matching a query before the short memory.

        Args:
            query: retrieval query
            i: current segment index
            m: short-memory size
            n: long-memory size

        Returns:
            up to n entries from 1..i-m-1 in chronological order
        """
        return self._retrieve(query, range(1, min(i - m - 1, len(self)) + 1), n)

    def all_preceding(self, i: int) -> MultiLevelContext:
        """Return every segment before i as short memory.

        Args:
            i: current segment index

        Returns:
            the context
        """
        return MultiLevelContext(short=self.short_memory(i, i - 1))

    def assemble_context(
        self,
        i: int,
        query: str,
        m: int,
        n: int,
        ablations: Collection[Ablation] = (),
        window: int | None = None,
    ) -> MultiLevelContext:
        """Combine short-memory and long-memory context for segment i.

        Without short memory, the long memory holds the top ``window``
        matches over all preceding segments. Without long memory, the short
        memory holds the ``window`` preceding segments.

        Args:
            i: current segment index
            query: retrieval query
            m: short-memory size
            n: long-memory size
            ablations: disabled context levels
            window: total window size L (defaults to m + n)

        Returns:
            the context
        """
        if window is None:
            window = m + n
        if Ablation.NO_SHORT_CTX in ablations:
            short: tuple[ContextEntry, ...] = ()
            long = self._retrieve(query, range(1, min(i - 1, len(self)) + 1), window)
        elif Ablation.NO_LONG_CTX in ablations:
            short, long = self.short_memory(i, window), ()
        else:
            short, long = self.short_memory(i, m), self.long_memory(query, i, m, n)
        context = MultiLevelContext(short=short, long=long, query_used=query)
        logger.debug(
            "context assembled",
            doc_id=self.doc_id,
            index=i,
            short=[e.index for e in short],
            long=[e.index for e in long],
        )
        return context

    def _retrieve(self, query: str, pool: range, n: int) -> tuple[ContextEntry, ...]:
        if n <= 0 or not pool:
            return ()
        hits = self.index.top_n(query, n, pool)
        return tuple(self.entry(j, score) for j, score in sorted(hits))
