"""Contains the document runner and the corpus driver."""

from __future__ import annotations

import json
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from django.conf import settings

from . import docia_logger as logger
from .backends import Backend, build_backend
from .contexts import EMPTY_CONTEXT, ContextStore, MultiLevelContext
from .core import (
    AuthError,
    BackendError,
    ConfigError,
    Document,
    GateDecision,
    IoError,
    Mode,
    NotFoundError,
    ParseFailure,
    PipelineConfig,
    SchemaError,
    SegmentFailure,
    SegmentId,
    SegmentInput,
    SegmentRecord,
    Stage,
    TranslationFailure,
    flatten_errors,
    skipped_record,
)
from .gate import determine, get_similarity
from .prompts import (
    ChatPrompt,
    parse_output,
    render_asr_refinement,
    render_translation,
    render_translation_refinement,
)
from .serializers import SegmentRecordSerializer

EXIT_OK = 0
EXIT_SEGMENT_FAILURES = 1
EXIT_USAGE = 2


def asr_context(
    store: ContextStore, index: int, draft: str, config: PipelineConfig
) -> MultiLevelContext:
    """Assemble the context of the ASR-refinement stage (queried by the draft).

    Args:
        store: the document memory
        index: the current segment
        draft: the draft transcript
        config: the pipeline configuration

    Returns:
        the context
    """
    return store.assemble_context(
        index,
        draft,
        config.short_window,
        config.long_window,
        config.ablations,
        config.window,
    )


def translation_context(
    store: ContextStore, index: int, source: str, config: PipelineConfig
) -> MultiLevelContext:
    """Assemble the context of the translation stages for the configured mode.

    Args:
        store: the document memory
        index: the current segment
        source: the (refined) transcript to translate
        config: the pipeline configuration

    Returns:
        no context for segment-level translation, every preceding segment
        for the context-aware baseline, and the multi-level context queried
        by the source otherwise
    """
    if config.mode == Mode.ASR_DMT:
        return store.all_preceding(index)
    if not config.enabled(Stage.CONTEXT_MT):
        return EMPTY_CONTEXT
    return store.assemble_context(
        index,
        source,
        config.short_window,
        config.long_window,
        config.ablations,
        config.window,
    )


class DocumentRun:
    """Sequential run over the segments of one document.

    The runner owns the document memory. Each segment goes through ASR
    refinement, translation and translation refinement (the stages the
    configuration enables) and is then recorded into the memory.
    """

    def __init__(self, document: Document, config: PipelineConfig, backend: Backend):
        """.

        Args:
            document: the document to translate
            config: a validated configuration
            backend: the chat-completion backend
        """
        self.document = document
        self.config = config
        self.backend = backend
        self.store = ContextStore.for_config(document.doc_id, config)
        self.records: list[SegmentRecord] = []
        self.failures: list[tuple[SegmentId, SegmentFailure]] = []
        self.similarity = get_similarity(config.similarity)
        self.translation_context: MultiLevelContext = EMPTY_CONTEXT
        self.log = logger.bind(doc_id=document.doc_id)
        self._reset_segment(0)

    def _reset_segment(self, index: int) -> None:
        self._index = index
        self._calls = 0
        self._extra_calls = 0
        self._segment_failures: list[SegmentFailure] = []
        self._fingerprints: dict[str, str] = {}
        self.translation_context = EMPTY_CONTEXT

    def _fail(self, stage: str, exc: BaseException, *, fatal: bool = False) -> None:
        failure = SegmentFailure.from_exception(stage, exc, fatal=fatal)
        self._segment_failures.append(failure)
        self.failures.append((SegmentId(self.document.doc_id, self._index), failure))
        self.log.warning(
            "stage failed",
            index=self._index,
            stage=stage,
            error=failure.error,
            message=failure.message,
            fatal=fatal,
        )

    def _ask(self, prompt: ChatPrompt, *, extra: bool = False) -> str:
        if extra:
            self._extra_calls += 1
        else:
            self._calls += 1
        return parse_output(self.backend.complete(prompt).raw_text)

    def stage_asr_refine(self, draft: str) -> tuple[str, GateDecision]:
        """Refine the draft transcript of the current segment.

        Failures keep the draft with a synthetic rejected decision.

        Args:
            draft: the draft transcript

        Returns:
            a tuple (refined transcript, gate decision)
        """
        threshold = self.config.threshold
        ctx = asr_context(self.store, self._index, draft, self.config)
        prompt = render_asr_refinement(
            draft,
            ctx,
            self.config.source_lang,
            doc_id=self.document.doc_id,
            seg_index=self._index,
            role=self.config.prompt_role,
        )
        self._fingerprints[Stage.ASR_REFINE] = prompt.fingerprint
        try:
            candidate = self._ask(prompt)
        except AuthError:
            raise
        except (BackendError, ParseFailure) as e:
            self._fail(Stage.ASR_REFINE, e)
            return draft, GateDecision.failed(threshold)
        return determine(
            draft, candidate, threshold, self.similarity, ablated=not self.config.gated
        )

    def stage_translate(self, source: str) -> str:
        """Translate the current segment.

        A failed call is retried once, then replaced by a prompt without
        context. The context is kept for the refinement stage.

        Args:
            source: the (refined) transcript

        Raises:
            TranslationFailure: if every attempt failed

        Returns:
            the draft translation
        """
        ctx = translation_context(self.store, self._index, source, self.config)
        self.translation_context = ctx
        prompts = [self._translation_prompt(source, ctx)] * 2
        if len(ctx):
            prompts.append(self._translation_prompt(source, EMPTY_CONTEXT))
        self._fingerprints[Stage.CONTEXT_MT] = prompts[0].fingerprint

        last_error: Exception | None = None
        for attempt, prompt in enumerate(prompts):
            try:
                return self._ask(prompt, extra=attempt > 0)
            except AuthError:
                raise
            except (BackendError, ParseFailure) as e:
                last_error = e
                if attempt < len(prompts) - 1:
                    self._fail(Stage.CONTEXT_MT, e)
        error = f"no translation for segment {self._index}: {last_error}"
        raise TranslationFailure(error) from last_error

    def _translation_prompt(self, source: str, ctx: MultiLevelContext) -> ChatPrompt:
        return render_translation(
            source,
            ctx,
            self.config.source_lang,
            self.config.target_lang,
            doc_id=self.document.doc_id,
            seg_index=self._index,
            role=self.config.prompt_role,
        )

    def stage_translate_refine(
        self, source: str, draft_translation: str
    ) -> tuple[str, GateDecision]:
        """Refine the draft translation with the translation-stage context.

        Args:
            source: the (refined) transcript
            draft_translation: the draft translation

        Returns:
            a tuple (final translation, gate decision)
        """
        threshold = self.config.mt_threshold
        prompt = render_translation_refinement(
            source,
            draft_translation,
            self.translation_context,
            self.config.source_lang,
            self.config.target_lang,
            doc_id=self.document.doc_id,
            seg_index=self._index,
            role=self.config.prompt_role,
        )
        self._fingerprints[Stage.MT_REFINE] = prompt.fingerprint
        try:
            candidate = self._ask(prompt)
        except AuthError:
            raise
        except (BackendError, ParseFailure) as e:
            self._fail(Stage.MT_REFINE, e)
            return draft_translation, GateDecision.failed(threshold)
        return determine(
            draft_translation,
            candidate,
            threshold,
            self.similarity,
            ablated=not self.config.gated,
        )

    def process_segment(self, segment: SegmentInput) -> SegmentRecord:
        """Run the enabled stages on the next segment and record it.

        Args:
            segment: the next segment of the document

        Raises:
            AuthError: if the backend rejects the credentials

        Returns:
            the segment record
        """
        self._reset_segment(segment.index)
        segment_id = SegmentId(self.document.doc_id, segment.index)
        draft = segment.draft_transcript
        log = self.log.bind(index=segment.index)

        if not draft.strip():
            record = skipped_record(segment_id, draft)
            log.debug("segment skipped")
        else:
            timings: dict[str, float] = {}

            start = time.perf_counter()
            refined, asr_gate = draft, None
            if self.config.enabled(Stage.ASR_REFINE):
                refined, asr_gate = self.stage_asr_refine(draft)
                timings[Stage.ASR_REFINE] = time.perf_counter() - start

            start = time.perf_counter()
            try:
                draft_translation = self.stage_translate(refined)
            except TranslationFailure as e:
                self._fail(Stage.CONTEXT_MT, e, fatal=True)
                draft_translation = ""
            timings[Stage.CONTEXT_MT] = time.perf_counter() - start

            final, mt_gate = draft_translation, None
            translated = not any(f.fatal for f in self._segment_failures)
            if self.config.enabled(Stage.MT_REFINE) and translated:
                start = time.perf_counter()
                final, mt_gate = self.stage_translate_refine(refined, draft_translation)
                timings[Stage.MT_REFINE] = time.perf_counter() - start

            record = SegmentRecord(
                id=segment_id,
                draft_transcript=draft,
                refined_transcript=refined,
                draft_translation=draft_translation,
                final_translation=final,
                asr_gate=asr_gate,
                mt_gate=mt_gate,
                stage_timings=timings,
                llm_calls=self._calls,
                extra_calls=self._extra_calls,
                failures=tuple(self._segment_failures),
                context_fingerprints={str(k): v for k, v in self._fingerprints.items()},
            )
            log.debug(
                "segment finished",
                llm_calls=record.llm_calls,
                extra_calls=record.extra_calls,
                failures=len(record.failures),
            )

        self.store.record_segment(record)
        self.records.append(record)
        return record

    def run(self) -> list[SegmentRecord]:
        """Process every segment in index order.

        Returns:
            the records in segment order
        """
        self.log.info("document started", segments=len(self.document))
        for segment in self.document.segments:
            self.process_segment(segment)
        self.log.info(
            "document finished",
            llm_calls=sum(r.llm_calls for r in self.records),
            failures=len(self.failures),
        )
        return self.records


def run_document(
    document: Document, config: PipelineConfig, backend: Backend
) -> list[SegmentRecord]:
    """Translate a document segment by segment.

    Args:
        document: the document
        config: a validated configuration
        backend: the chat-completion backend

    Raises:
        AuthError: if the backend rejects the credentials

    Returns:
        the records in segment order
    """
    return DocumentRun(document, config, backend).run()


@dataclass(frozen=True)
class DocumentFailure:
    """A document whose run was aborted."""

    doc_id: str
    error: str
    message: str


@dataclass(frozen=True)
class CorpusResult:
    """Records of a corpus run, sorted by (doc_id, index)."""

    records: tuple[SegmentRecord, ...] = ()
    document_failures: tuple[DocumentFailure, ...] = ()
    config: PipelineConfig = field(default_factory=PipelineConfig)

    @property
    def config_digest(self) -> str:
        """Digest of the effective configuration."""
        return self.config.digest()

    @property
    def failed(self) -> bool:
        """Whether a document was aborted or a segment lost its translation."""
        return bool(self.document_failures) or any(r.failed for r in self.records)

    @property
    def exit_code(self) -> int:
        """Exit code of a command that produced this result."""
        return EXIT_SEGMENT_FAILURES if self.failed else EXIT_OK

    def to_jsonl(self) -> str:
        """Serialize the records.

        Returns:
            one JSON object per line
        """
        return "".join(f"{record_to_json(r)}\n" for r in self.records)

    def write_jsonl(self, path: str | Path) -> None:
        """Write the records to a JSONL file.

        Args:
            path: the output file

        Raises:
            IoError: if the file cannot be written
        """
        try:
            Path(path).write_text(self.to_jsonl(), encoding="utf-8")
        except OSError as e:
            error = f"cannot write {path}: {e}"
            raise IoError(error) from e

    def manifest(self) -> dict[str, Any]:
        """Describe the run for reproducibility.

        Returns:
            the effective config, its digest and the aborted documents
        """
        return {
            "config": self.config.to_dict(),
            "config_digest": self.config_digest,
            "documents": len({r.id.doc_id for r in self.records}),
            "segments": len(self.records),
            "document_failures": [
                {"doc_id": f.doc_id, "error": f.error, "message": f.message}
                for f in self.document_failures
            ],
        }


def record_to_dict(record: SegmentRecord) -> dict[str, Any]:
    """Return the output representation of a record (without timings).

    Args:
        record: the record

    Returns:
        a JSON-compatible dict
    """
    return json.loads(json.dumps(SegmentRecordSerializer(record).data))


def record_to_json(record: SegmentRecord) -> str:
    """Serialize a record as one output line.

    Args:
        record: the record

    Returns:
        the JSON text
    """
    return json.dumps(record_to_dict(record), ensure_ascii=False)


def record_from_dict(data: dict[str, Any], location: str = "record") -> SegmentRecord:
    """Rebuild a record from its output representation.

    Args:
        data: the output object
        location: where the object comes from, for messages

    Raises:
        SchemaError: if the object is malformed

    Returns:
        the record
    """
    serializer = SegmentRecordSerializer(data=data)
    if not serializer.is_valid():
        error = f"{location}: {flatten_errors(serializer.errors)}"
        raise SchemaError(error)
    return serializer.to_record()


def load_records(path: str | Path) -> list[SegmentRecord]:
    """Read the output JSONL of a previous run.

    Args:
        path: the file

    Raises:
        IoError: if the file cannot be read
        SchemaError: if a line is malformed

    Returns:
        the records sorted by (doc_id, index)
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        error = f"cannot read {path}: {e}"
        raise IoError(error) from e
    records = []
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            error = f"{path}:{line_number}: invalid JSON ({e.msg})"
            raise SchemaError(error) from e
        records.append(record_from_dict(data, f"{path}:{line_number}"))
    return sorted(records, key=lambda r: r.id)


def document_rows(document: Document) -> list[dict[str, Any]]:
    """Return the input rows of a document.

    Args:
        document: the document

    Returns:
        one dict per segment, in the input-file format
    """
    return [
        {
            "doc_id": document.doc_id,
            "index": s.index,
            "draft_transcript": s.draft_transcript,
            "ref_transcript": s.ref_transcript,
            "ref_translation": s.ref_translation,
        }
        for s in document.segments
    ]


def _run_guarded(
    document: Document, config: PipelineConfig, backend: Backend
) -> tuple[list[SegmentRecord], DocumentFailure | None]:
    try:
        return run_document(document, config, backend), None
    except (AuthError, ConfigError) as e:
        logger.error("document aborted", doc_id=document.doc_id, error=str(e))
        return [], DocumentFailure(document.doc_id, type(e).__name__, str(e))


def _run_queued(
    documents: Sequence[Document], config: PipelineConfig
) -> tuple[list[SegmentRecord], list[DocumentFailure]]:
    # importing here to avoid circular imports
    from celery import group

    from .tasks import run_document_task

    config_dict = config.to_dict()
    jobs = group(run_document_task.s(document_rows(d), config_dict) for d in documents)
    records: list[SegmentRecord] = []
    failures: list[DocumentFailure] = []
    for document, outcome in zip(documents, jobs.apply_async().get(), strict=True):
        if outcome.get("failure"):
            failures.append(DocumentFailure(**outcome["failure"]))
        records += [record_from_dict(r) for r in outcome["records"]]
        logger.debug("document collected", doc_id=document.doc_id)
    return records, failures


def run_corpus(
    documents: Iterable[Document],
    config: PipelineConfig,
    backend: Backend | None = None,
) -> CorpusResult:
    """Translate documents, several at a time.

    Up to ``parallel_documents`` documents run concurrently and share the
    backend. With ``DOCIA_ENABLE_QUEUE`` and no explicit backend, each
    document becomes a Celery task. The output order does not depend on
    completion order.

    Args:
        documents: the documents
        config: a validated configuration
        backend: the backend (built from the configuration when None, then
            closed at the end of the run)

    Returns:
        the corpus result
    """
    documents = list(documents)
    records: list[SegmentRecord] = []
    failures: list[DocumentFailure] = []

    if documents and backend is None and settings.DOCIA_ENABLE_QUEUE:
        records, failures = _run_queued(documents, config)
    elif documents:
        owned = backend is None
        backend = backend or build_backend(config.backend)
        workers = min(config.parallel_documents, len(documents))
        try:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                outcomes = executor.map(
                    lambda d: _run_guarded(d, config, backend), documents
                )
                for document_records, failure in outcomes:
                    records += document_records
                    if failure is not None:
                        failures.append(failure)
        finally:
            if owned:
                backend.close()

    result = CorpusResult(
        records=tuple(sorted(records, key=lambda r: r.id)),
        document_failures=tuple(sorted(failures, key=lambda f: f.doc_id)),
        config=config,
    )
    logger.info(
        "corpus finished",
        documents=len(documents),
        segments=len(result.records),
        document_failures=len(result.document_failures),
    )
    return result


def inspect_context(
    document: Document,
    prior_records: Iterable[SegmentRecord],
    index: int,
    config: PipelineConfig,
) -> dict[str, Any]:
    """Rebuild the context a segment had during a previous run.

    The memory is replayed from the records of the preceding segments, so
    the result reflects the texts that run stored.

    Args:
        document: the document
        prior_records: records of a previous run of this document
        index: the segment to inspect
        config: the configuration of that run

    Raises:
        NotFoundError: if the document has no such segment
        SchemaError: if the records of preceding segments are missing

    Returns:
        the contexts, BM25 scores and rendered prompts of the segment
    """
    segment = document.segment(index)
    by_index = {
        r.id.index: r for r in prior_records if r.id.doc_id == document.doc_id
    }
    store = ContextStore.for_config(document.doc_id, config)
    for j in range(1, index):
        if j not in by_index:
            error = f"no record of {document.doc_id}#{j} in the previous run"
            raise SchemaError(error)
        store.record_segment(by_index[j])

    draft = segment.draft_transcript
    current = by_index.get(index)
    refined = current.refined_transcript if current else draft
    draft_translation = current.draft_translation if current else ""

    asr_ctx = asr_context(store, index, draft, config)
    mt_ctx = translation_context(store, index, refined, config)
    prompts = {}
    if config.enabled(Stage.ASR_REFINE):
        prompts[str(Stage.ASR_REFINE)] = render_asr_refinement(
            draft, asr_ctx, config.source_lang
        ).text
    prompts[str(Stage.CONTEXT_MT)] = render_translation(
        refined, mt_ctx, config.source_lang, config.target_lang
    ).text
    if config.enabled(Stage.MT_REFINE):
        prompts[str(Stage.MT_REFINE)] = render_translation_refinement(
            refined, draft_translation, mt_ctx, config.source_lang, config.target_lang
        ).text

    pool = range(1, index)
    return {
        "doc_id": document.doc_id,
        "index": index,
        "draft_transcript": draft,
        "refined_transcript": refined,
        "asr_context": asr_ctx.to_dict(),
        "translation_context": mt_ctx.to_dict(),
        "bm25_scores": {
            "asr_refine": _scores(store, draft, pool),
            "context_mt": _scores(store, refined, pool),
        },
        "prompts": prompts,
    }


def _scores(store: ContextStore, query: str, pool: range) -> dict[str, float]:
    return {str(i): s for i, s in sorted(store.index.scores(query, pool).items())}


def find_document(documents: Iterable[Document], doc_id: str) -> Document:
    """Return a document by id.

    Args:
        documents: the documents
        doc_id: the wanted id

    Raises:
        NotFoundError: if there is no such document

    Returns:
        the document
    """
    for document in documents:
        if document.doc_id == doc_id:
            return document
    error = f"no document {doc_id!r}"
    raise NotFoundError(error)
