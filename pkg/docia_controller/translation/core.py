"""Domain types shared by the pipeline modules, plus config and corpus loading."""

from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from django.db import models
from django.utils.translation import gettext_lazy as gettext

from . import docia_logger as logger


class DociaError(Exception):
    """Base class of every error raised by the pipeline."""


class ConfigError(DociaError):
    """The pipeline configuration is invalid or contradictory."""


class SchemaError(DociaError):
    """An input or output file does not follow the expected schema."""


class IoError(DociaError):
    """A file could not be read or written."""


class DuplicateSegmentError(DociaError):
    """A segment was added twice to a retrieval index."""


class OutOfOrderSegmentError(DociaError):
    """A segment was recorded before all of its predecessors."""


class ParseFailure(DociaError):
    """A model reply does not contain an output value."""


class BackendError(DociaError):
    """A chat-completion backend failed."""


class BackendExhausted(BackendError):
    """All attempts allowed by the retry policy have failed."""


class AuthError(BackendError):
    """The backend rejected the credentials (never retried)."""


class BackendTimeout(BackendError):
    """A single backend request timed out."""


class ScriptMiss(BackendError):
    """No entry of a scripted backend matches a prompt."""


class TranslationFailure(DociaError):
    """The translation stage produced no usable output."""


class NotFoundError(DociaError):
    """A requested document or segment does not exist."""


class EmptyReference(DociaError):
    """A reference text has no tokens."""


class Mode(models.TextChoices):
    """Pipeline modes: two baselines and the full agent."""

    ASR_SMT = ("asr-smt", gettext("segment-level translation of draft ASR"))
    """translate each draft transcript without context"""

    ASR_DMT = ("asr-dmt", gettext("context-aware translation of draft ASR"))
    """translate draft transcripts with all preceding segments as context"""

    DOCIA = ("docia", gettext("document-level context incorporation"))
    """refine and translate with multi-level context"""


class Stage(models.TextChoices):
    """Context-aware stages that can be enabled in docia mode."""

    ASR_REFINE = ("asr_refine", gettext("ASR refinement"))
    CONTEXT_MT = ("context_mt", gettext("context-aware translation"))
    MT_REFINE = ("mt_refine", gettext("translation refinement"))


STAGE_ALIASES = {"a": Stage.ASR_REFINE, "m": Stage.CONTEXT_MT, "p": Stage.MT_REFINE}
"""short stage names (DoCIA_a, DoCIA_a-m, DoCIA_a-m-p)"""


class ContextMode(models.TextChoices):
    """How the document memory is updated after each segment."""

    ONLINE = ("online", gettext("store refined outputs"))
    OFFLINE = ("offline", gettext("store draft outputs"))


class Ablation(models.TextChoices):
    """Components that can be switched off for ablation runs."""

    NO_GATE = ("no_gate", gettext("without refinement determination"))
    NO_SHORT_CTX = ("no_short_ctx", gettext("without short-memory context"))
    NO_LONG_CTX = ("no_long_ctx", gettext("without long-memory context"))


class Task(models.TextChoices):
    """Prompted tasks."""

    ASR_REFINE = ("asr_refine", gettext("ASR refinement"))
    TRANSLATE = ("translate", gettext("translation"))
    TRANSLATE_REFINE = ("translate_refine", gettext("translation refinement"))


class SimilarityKind(models.TextChoices):
    """Similarity functions available to the refinement gate."""

    INDEL = ("indel", gettext("normalized indel similarity"))
    LEVENSHTEIN = ("levenshtein", gettext("Levenshtein-based similarity"))


class PromptRole(models.TextChoices):
    """Chat role used to send the rendered prompt."""

    USER = ("user", gettext("user"))
    SYSTEM = ("system", gettext("system"))


class BackendKind(models.TextChoices):
    """Chat-completion backend types."""

    HTTP = ("http", gettext("OpenAI-compatible HTTP endpoint"))
    SCRIPTED = ("scripted", gettext("deterministic scripted replies"))


class ScriptRule(models.TextChoices):
    """Reply rules of the scripted backend."""

    REPLY = ("reply", gettext("fixed reply"))
    QUEUE = ("queue", gettext("fixed replies consumed in order"))
    ECHO = ("echo", gettext("repeat the task input"))
    UPPERCASE = ("uppercase", gettext("upper-case the task input"))
    CONTEXT_TAG = ("context-tag", gettext("tag the task input with context counts"))
    MAP = ("map", gettext("look the task input up in a table"))
    FAIL = ("fail", gettext("fail as if retries were exhausted"))


@dataclass(frozen=True, order=True)
class SegmentId:
    """Position of an audio segment within a corpus."""

    doc_id: str
    index: int

    def __post_init__(self):
        if self.index < 1:
            error = f"segment index must be positive, got {self.index}"
            raise ValueError(error)

    def __str__(self) -> str:
        return f"{self.doc_id}#{self.index}"


@dataclass(frozen=True)
class GateDecision:
    """Outcome of the refinement determination for one refinement.

    Decisions marked as ``fallback`` are synthetic: the refinement call failed
    and the input was kept without comparing any candidate. Decisions marked
    as ``ablated`` were made with the gate switched off: the candidate is
    always accepted, the threshold is the configured one and only recorded.
    """

    similarity: float
    accepted: bool
    threshold_used: float
    fallback: bool = False
    ablated: bool = False

    def __post_init__(self):
        if self.fallback:
            return
        if self.ablated:
            if not self.accepted:
                error = "an ablated decision always accepts the candidate"
                raise ValueError(error)
        elif self.accepted != (self.similarity >= self.threshold_used):
            error = "accepted must be equivalent to similarity >= threshold"
            raise ValueError(error)

    @classmethod
    def failed(cls, threshold: float) -> GateDecision:
        """Create the rejected decision used when a refinement call fails.

        Args:
            threshold: the threshold that would have been applied

        Returns:
            a rejected fallback decision
        """
        return cls(
            similarity=0.0, accepted=False, threshold_used=threshold, fallback=True
        )


@dataclass(frozen=True)
class SegmentFailure:
    """A problem that occurred while processing a segment."""

    stage: str
    error: str
    message: str
    fatal: bool = False

    @classmethod
    def from_exception(
        cls, stage: str, exc: BaseException, *, fatal: bool = False
    ) -> SegmentFailure:
        """Describe an exception raised by a stage.

        Args:
            stage: name of the stage
            exc: the exception
            fatal: whether the segment lost its translation

        Returns:
            the failure description
        """
        return cls(stage=stage, error=type(exc).__name__, message=str(exc), fatal=fatal)


@dataclass(frozen=True)
class SegmentRecord:
    """State of one segment after the pipeline has processed it."""

    id: SegmentId
    draft_transcript: str
    refined_transcript: str
    draft_translation: str
    final_translation: str
    asr_gate: GateDecision | None = None
    mt_gate: GateDecision | None = None
    stage_timings: Mapping[str, float] = field(default_factory=dict, compare=False)
    llm_calls: int = 0
    extra_calls: int = 0
    failures: tuple[SegmentFailure, ...] = ()
    skipped: bool = False
    context_fingerprints: Mapping[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        """Whether the segment lost its translation."""
        return any(f.fatal for f in self.failures)


@dataclass(frozen=True)
class SegmentInput:
    """One line of the input corpus."""

    index: int
    draft_transcript: str
    ref_transcript: str | None = None
    ref_translation: str | None = None


@dataclass(frozen=True)
class Document:
    """A spoken document (talk) as an ordered list of draft transcripts."""

    doc_id: str
    segments: tuple[SegmentInput, ...]

    def __post_init__(self):
        indices = [s.index for s in self.segments]
        if indices != list(range(1, len(indices) + 1)):
            error = f"document {self.doc_id!r} has non-contiguous indices {indices}"
            raise SchemaError(error)

    def __len__(self) -> int:
        return len(self.segments)

    def segment(self, index: int) -> SegmentInput:
        """Return the segment at a 1-based index.

        Args:
            index: the segment index

        Raises:
            NotFoundError: if the document has no such segment

        Returns:
            the segment
        """
        if not 1 <= index <= len(self.segments):
            error = f"document {self.doc_id!r} has no segment {index}"
            raise NotFoundError(error)
        return self.segments[index - 1]


@dataclass(frozen=True)
class BackendConfig:
    """Settings of the chat-completion backend."""

    kind: BackendKind = BackendKind.HTTP
    endpoint_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-4o-mini"
    credentials_env_var: str = "DOCIA_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_initial: float = 1.0
    backoff_multiplier: float = 2.0
    temperature: float = 0.0
    max_output_tokens: int = 1024
    concurrency_limit: int = 4
    script: str | None = None

    def to_dict(self) -> dict[str, Any]:
        """Return the config-file representation.

        Returns:
            a JSON-compatible dict
        """
        return {
            "kind": str(self.kind),
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "credentials_env_var": self.credentials_env_var,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "backoff_initial": self.backoff_initial,
            "backoff_multiplier": self.backoff_multiplier,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "concurrency_limit": self.concurrency_limit,
            "script": self.script,
        }


@dataclass(frozen=True)
class PipelineConfig:
    """Validated configuration of a pipeline run.

    Use :func:`validate_config` to build instances; the keys of
    :meth:`to_dict` are the config-file contract (``L``, ``m``, ``n``,
    ``lambda``...).
    """

    mode: Mode = Mode.DOCIA
    stages: frozenset[Stage] = frozenset(Stage)
    context_mode: ContextMode = ContextMode.ONLINE
    window: int = 6
    short_window: int = 3
    long_window: int = 3
    threshold: float = 0.7
    threshold_mt: float | None = None
    ablations: frozenset[Ablation] = frozenset()
    source_lang: str = "en"
    target_lang: str = "de"
    backend: BackendConfig = field(default_factory=BackendConfig)
    parallel_documents: int = 1
    similarity: SimilarityKind = SimilarityKind.INDEL
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    bm25_stemming: bool = False
    bm25_stopwords: tuple[str, ...] = ()
    prompt_role: PromptRole = PromptRole.USER

    @property
    def mt_threshold(self) -> float:
        """Threshold of the translation-refinement gate."""
        return self.threshold if self.threshold_mt is None else self.threshold_mt

    @property
    def gated(self) -> bool:
        """Whether refinements go through the determination gate."""
        return Ablation.NO_GATE not in self.ablations

    def enabled(self, stage: Stage) -> bool:
        """Check whether a context-aware stage runs.

        Args:
            stage: the stage

        Returns:
            True if the stage is enabled in docia mode
        """
        return self.mode == Mode.DOCIA and stage in self.stages

    def to_dict(self) -> dict[str, Any]:
        """Return the config-file representation.

        Returns:
            a JSON-compatible dict whose keys follow the config-file contract
        """
        return {
            "mode": str(self.mode),
            "stages": sorted(str(s) for s in self.stages),
            "context_mode": str(self.context_mode),
            "L": self.window,
            "m": self.short_window,
            "n": self.long_window,
            "lambda": self.threshold,
            "lambda_mt": self.threshold_mt,
            "ablations": sorted(str(a) for a in self.ablations),
            "source_lang": self.source_lang,
            "target_lang": self.target_lang,
            "parallel_documents": self.parallel_documents,
            "similarity": str(self.similarity),
            "bm25_k1": self.bm25_k1,
            "bm25_b": self.bm25_b,
            "bm25_stemming": self.bm25_stemming,
            "bm25_stopwords": list(self.bm25_stopwords),
            "prompt_role": str(self.prompt_role),
            "backend": self.backend.to_dict(),
        }

    def digest(self) -> str:
        """Return a digest that identifies the effective configuration.

        Returns:
            SHA-256 of the canonical JSON representation
        """
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, **overrides: Any) -> PipelineConfig:
        """Apply config-file keys and validate the result.

        Args:
            overrides: config-file keys (e.g. ``L=4``, ``m=2``, ``n=2``)

        Returns:
            the validated configuration
        """
        return validate_config({**self.to_dict(), **overrides})


def validate_config(raw: PipelineConfig | Mapping[str, Any] | None) -> PipelineConfig:
    """Apply defaults to a raw configuration and check its consistency.

    Defaults follow the reference setup (L=6, m=n=3, λ=0.7, docia mode with all
    stages, online context). If only L is given, it is split into
    m = L - L//2 and n = L//2.

    Args:
        raw: config-file keys, or an existing configuration

    Raises:
        ConfigError: if the configuration is invalid or contradictory

    Returns:
        the validated configuration
    """
    # importing here to avoid circular imports
    from .serializers import PipelineConfigSerializer

    if raw is None:
        raw = {}
    elif isinstance(raw, PipelineConfig):
        raw = raw.to_dict()
    serializer = PipelineConfigSerializer(data=dict(raw))
    if not serializer.is_valid():
        error = f"invalid configuration: {flatten_errors(serializer.errors)}"
        raise ConfigError(error)
    return serializer.to_config()


def flatten_errors(errors: Any, prefix: str = "") -> str:
    """Join nested serializer errors into one line.

    Args:
        errors: the errors of a serializer
        prefix: prepended to every message

    Returns:
        messages prefixed with their field path, separated by semicolons
    """
    if isinstance(errors, Mapping):
        return "; ".join(
            flatten_errors(v, f"{prefix}{k}: " if k != "non_field_errors" else prefix)
            for k, v in errors.items()
        )
    if isinstance(errors, list | tuple):
        return "; ".join(flatten_errors(e, prefix) for e in errors)
    return f"{prefix}{errors}"


def load_documents(path: str | Path) -> list[Document]:
    """Read a JSONL corpus of draft transcripts.

    Each line holds ``doc_id``, ``index``, ``draft_transcript`` and, optionally,
    ``ref_transcript`` and ``ref_translation``. Blank lines are ignored.

    Args:
        path: the JSONL file

    Raises:
        IoError: if the file cannot be read
        SchemaError: if a line is malformed, a segment is repeated or
            a document has gaps in its indices

    Returns:
        the documents sorted by id, each with its segments sorted by index
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        error = f"cannot read {path}: {e}"
        raise IoError(error) from e

    rows = []
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rows.append((f"{path}:{line_number}", json.loads(line)))
        except json.JSONDecodeError as e:
            error = f"{path}:{line_number}: invalid JSON ({e.msg})"
            raise SchemaError(error) from e
    documents = _group_segments(rows)
    logger.debug(
        "corpus loaded",
        path=str(path),
        documents=len(documents),
        segments=sum(len(d) for d in documents),
    )
    return documents


def documents_from_data(data: Iterable[Mapping[str, Any]]) -> list[Document]:
    """Build documents from already-parsed input rows.

    Args:
        data: rows with the same fields as the JSONL input

    Raises:
        SchemaError: if a row is malformed or the indices are inconsistent

    Returns:
        the documents sorted by id
    """
    return _group_segments((f"row {i}", row) for i, row in enumerate(data, start=1))


def _group_segments(rows: Iterable[tuple[str, Any]]) -> list[Document]:
    # importing here to avoid circular imports
    from .serializers import SegmentInputSerializer

    by_doc: dict[str, dict[int, SegmentInput]] = defaultdict(dict)
    for location, row in rows:
        serializer = SegmentInputSerializer(data=row)
        if not serializer.is_valid():
            error = f"{location}: {flatten_errors(serializer.errors)}"
            raise SchemaError(error)
        doc_id, segment = serializer.to_segment()
        if segment.index in by_doc[doc_id]:
            error = f"{location}: duplicate segment ({doc_id!r}, {segment.index})"
            raise SchemaError(error)
        by_doc[doc_id][segment.index] = segment
    return [
        Document(doc_id, tuple(segments[i] for i in sorted(segments)))
        for doc_id, segments in sorted(by_doc.items())
    ]


def skipped_record(segment_id: SegmentId, draft: str = "") -> SegmentRecord:
    """Return the record of a segment whose draft transcript is blank.

    Args:
        segment_id: the segment
        draft: the blank draft, kept verbatim as the transcript

    Returns:
        a record with empty translations, no gate decisions and no LLM calls
    """
    return SegmentRecord(
        id=segment_id,
        draft_transcript=draft,
        refined_transcript=draft,
        draft_translation="",
        final_translation="",
        skipped=True,
    )
