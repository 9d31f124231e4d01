"""Word error rate, gate statistics and export for external scoring."""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any

from . import docia_logger as logger
from .core import Document, EmptyReference, IoError, PipelineConfig, SegmentRecord


class _Op(IntEnum):
    OK = 0
    SUB = 1
    INS = 2
    DEL = 3


@dataclass(frozen=True)
class WerCounts:
    """Edit operations of a minimal word alignment."""

    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_length: int = 0

    @property
    def errors(self) -> int:
        """Total number of edits."""
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        """Word error rate.

        Raises:
            EmptyReference: if the reference has no words
        """
        if self.reference_length == 0:
            error = "reference has no words"
            raise EmptyReference(error)
        return self.errors / self.reference_length

    def __add__(self, other: WerCounts) -> WerCounts:
        return WerCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_length + other.reference_length,
        )


def wer_counts(hypothesis: str, reference: str) -> WerCounts:
    """Align two texts word by word.

    Words are whitespace-separated and compared case-sensitively, with
    punctuation kept as part of the words.

    Args:
        hypothesis: the hypothesis
        reference: the reference

    Returns:
        the edit counts of a minimal alignment
    """
    r, h = reference.split(), hypothesis.split()
    costs = [[0] * (len(h) + 1) for _ in range(len(r) + 1)]
    backtrace = [[_Op.OK] * (len(h) + 1) for _ in range(len(r) + 1)]
    for i in range(1, len(r) + 1):
        costs[i][0] = i
        backtrace[i][0] = _Op.DEL
    for j in range(1, len(h) + 1):
        costs[0][j] = j
        backtrace[0][j] = _Op.INS

    for i in range(1, len(r) + 1):
        for j in range(1, len(h) + 1):
            if r[i - 1] == h[j - 1]:
                costs[i][j] = costs[i - 1][j - 1]
                backtrace[i][j] = _Op.OK
                continue
            substitution = costs[i - 1][j - 1] + 1
            insertion = costs[i][j - 1] + 1
            deletion = costs[i - 1][j] + 1
            costs[i][j] = min(substitution, insertion, deletion)
            if costs[i][j] == substitution:
                backtrace[i][j] = _Op.SUB
            elif costs[i][j] == insertion:
                backtrace[i][j] = _Op.INS
            else:
                backtrace[i][j] = _Op.DEL

    i, j = len(r), len(h)
    counts = dict.fromkeys(_Op, 0)
    while i > 0 or j > 0:
        op = backtrace[i][j]
        counts[op] += 1
        if op in (_Op.OK, _Op.SUB):
            i, j = i - 1, j - 1
        elif op == _Op.INS:
            j -= 1
        else:
            i -= 1
    return WerCounts(counts[_Op.SUB], counts[_Op.DEL], counts[_Op.INS], len(r))


def wer(hypothesis: str, reference: str) -> float:
    """Compute the case-sensitive word error rate.

    Args:
        hypothesis: the hypothesis
        reference: the reference

    Raises:
        EmptyReference: if the reference has no words

    Returns:
        (substitutions + deletions + insertions) / reference words
    """
    return wer_counts(hypothesis, reference).rate


def corpus_wer(pairs: Iterable[tuple[str, str]]) -> float:
    """Compute the word error rate over many segments, pooling the counts.

    Args:
        pairs: tuples (hypothesis, reference)

    Raises:
        EmptyReference: if the references have no words at all

    Returns:
        the pooled word error rate
    """
    total = WerCounts()
    for hypothesis, reference in pairs:
        total += wer_counts(hypothesis, reference)
    return total.rate


@dataclass(frozen=True)
class GateStats:
    """Decisions of one refinement gate over a run.

    Fallback decisions (failed refinement calls) are counted apart and do
    not enter the evaluated counts or the histogram.
    """

    stage: str
    evaluated: int = 0
    accepted: int = 0
    rejected: int = 0
    fallbacks: int = 0
    ablated: int = 0
    """decisions made with the gate switched off, counted as evaluated"""
    mean_similarity: float | None = None
    min_similarity: float | None = None
    max_similarity: float | None = None
    histogram: tuple[int, ...] = field(default=(0,) * 10)
    """counts of similarities in [0, 0.1), [0.1, 0.2)... [0.9, 1.0]"""

    @property
    def acceptance_rate(self) -> float | None:
        """Share of accepted refinements."""
        return self.accepted / self.evaluated if self.evaluated else None

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-compatible representation.

        Returns:
            the statistics as a dict
        """
        return {
            "stage": self.stage,
            "evaluated": self.evaluated,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "fallbacks": self.fallbacks,
            "ablated": self.ablated,
            "acceptance_rate": self.acceptance_rate,
            "mean_similarity": self.mean_similarity,
            "min_similarity": self.min_similarity,
            "max_similarity": self.max_similarity,
            "histogram": list(self.histogram),
        }


def _stats(stage: str, decisions: list[Any]) -> GateStats:
    fallbacks = sum(d.fallback for d in decisions)
    evaluated = [d for d in decisions if not d.fallback]
    if not evaluated:
        return GateStats(stage=stage, fallbacks=fallbacks)
    similarities = [d.similarity for d in evaluated]
    histogram = [0] * 10
    for g in similarities:
        histogram[min(int(g * 10), 9)] += 1
    accepted = sum(d.accepted for d in evaluated)
    ablated = sum(d.ablated for d in evaluated)
    return GateStats(
        stage=stage,
        evaluated=len(evaluated),
        accepted=accepted,
        rejected=len(evaluated) - accepted,
        fallbacks=fallbacks,
        ablated=ablated,
        mean_similarity=sum(similarities) / len(similarities),
        min_similarity=min(similarities),
        max_similarity=max(similarities),
        histogram=tuple(histogram),
    )


def gate_stats(records: Iterable[SegmentRecord]) -> dict[str, GateStats]:
    """Aggregate the gate decisions of a run per stage.

    Args:
        records: the segment records

    Returns:
        statistics keyed by ``asr`` and ``mt``
    """
    records = list(records)
    return {
        "asr": _stats("asr", [r.asr_gate for r in records if r.asr_gate]),
        "mt": _stats("mt", [r.mt_gate for r in records if r.mt_gate]),
    }


def transcript_wer(
    records: Iterable[SegmentRecord], documents: Iterable[Document]
) -> dict[str, float | int | None]:
    """Compare draft and refined transcripts with the reference transcripts.

    Only segments with a non-empty reference transcript count.

    Args:
        records: the segment records
        documents: the documents holding the references

    Returns:
        the pooled WER of the drafts and of the refined transcripts, and
        the number of scored segments
    """
    references = {
        (d.doc_id, s.index): s.ref_transcript
        for d in documents
        for s in d.segments
        if s.ref_transcript and s.ref_transcript.split()
    }
    draft, refined = WerCounts(), WerCounts()
    scored = 0
    for record in records:
        reference = references.get((record.id.doc_id, record.id.index))
        if reference is None:
            continue
        draft += wer_counts(record.draft_transcript, reference)
        refined += wer_counts(record.refined_transcript, reference)
        scored += 1
    return {
        "segments": scored,
        "draft_wer": draft.rate if scored else None,
        "refined_wer": refined.rate if scored else None,
    }


def _line(text: str) -> str:
    return " ".join(text.split())


def export_external(
    records: Sequence[SegmentRecord],
    documents: Iterable[Document],
    out_dir: str | Path,
    config: PipelineConfig | None = None,
) -> list[Path]:
    """Write plain-text files for external (neural) metrics.

    The directory ``{src}-{tgt}`` receives ``src.txt`` (refined transcripts),
    ``hyp.txt`` (final translations), ``ref.txt`` (reference translations,
    only when every segment has one) and ``docs.json`` (document line
    ranges and the configuration). Lines are aligned across the files.

    Args:
        records: the segment records
        documents: the documents holding the references
        out_dir: the export root
        config: the configuration of the run

    Raises:
        IoError: if the files cannot be written

    Returns:
        the written files
    """
    config = config or PipelineConfig()
    references = {
        (d.doc_id, s.index): s.ref_translation for d in documents for s in d.segments
    }
    records = sorted(records, key=lambda r: r.id)
    refs = [references.get((r.id.doc_id, r.id.index)) for r in records]
    has_ref = bool(records) and all(ref is not None for ref in refs)

    boundaries: list[dict[str, Any]] = []
    for line_number, record in enumerate(records, start=1):
        if boundaries and boundaries[-1]["doc_id"] == record.id.doc_id:
            boundaries[-1]["last_line"] = line_number
        else:
            boundaries.append(
                {
                    "doc_id": record.id.doc_id,
                    "first_line": line_number,
                    "last_line": line_number,
                }
            )

    target = Path(out_dir) / f"{config.source_lang}-{config.target_lang}"
    files = {
        "src.txt": [_line(r.refined_transcript) for r in records],
        "hyp.txt": [_line(r.final_translation) for r in records],
    }
    if has_ref:
        files["ref.txt"] = [_line(ref) for ref in refs]
    manifest = {
        "pair": target.name,
        "segments": len(records),
        "documents": boundaries,
        "has_ref": has_ref,
        "config_digest": config.digest(),
        "config": config.to_dict(),
    }

    written = []
    try:
        target.mkdir(parents=True, exist_ok=True)
        for name, lines in files.items():
            path = target / name
            path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")
            written.append(path)
        path = target / "docs.json"
        path.write_text(
            json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        written.append(path)
    except OSError as e:
        error = f"cannot export to {target}: {e}"
        raise IoError(error) from e
    logger.info(
        "export written", path=str(target), segments=len(records), has_ref=has_ref
    )
    return written


@dataclass(frozen=True)
class ExportedCorpus:
    """Contents of an export directory."""

    manifest: dict[str, Any]
    sources: tuple[str, ...]
    hypotheses: tuple[str, ...]
    references: tuple[str, ...] | None = None

    def segment_ids(self) -> list[tuple[str, int]]:
        """Return (doc_id, index) of each line.

        Returns:
            one id per exported line
        """
        ids = []
        for document in self.manifest["documents"]:
            count = document["last_line"] - document["first_line"] + 1
            ids += [(document["doc_id"], i) for i in range(1, count + 1)]
        return ids


def read_export(pair_dir: str | Path) -> ExportedCorpus:
    """Read back a directory written by :func:`export_external`.

    Args:
        pair_dir: the ``{src}-{tgt}`` directory

    Raises:
        IoError: if a file cannot be read

    Returns:
        the exported corpus
    """
    pair_dir = Path(pair_dir)

    def lines(name: str) -> tuple[str, ...]:
        return tuple((pair_dir / name).read_text(encoding="utf-8").splitlines())

    try:
        manifest = json.loads((pair_dir / "docs.json").read_text(encoding="utf-8"))
        return ExportedCorpus(
            manifest=manifest,
            sources=lines("src.txt"),
            hypotheses=lines("hyp.txt"),
            references=lines("ref.txt") if manifest["has_ref"] else None,
        )
    except (OSError, ValueError, KeyError) as e:
        error = f"cannot read export {pair_dir}: {e}"
        raise IoError(error) from e
