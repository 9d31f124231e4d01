"""Tests of the translation app."""

from typing import Any

from ..core import Document, SegmentId, SegmentRecord, documents_from_data


def corpus(*docs: tuple[str, list[str]]) -> list[Document]:
    """Build documents from (doc_id, draft transcripts) pairs."""
    return documents_from_data(
        {"doc_id": doc_id, "index": i, "draft_transcript": text}
        for doc_id, texts in docs
        for i, text in enumerate(texts, start=1)
    )


def record(
    index: int, text: str, translation: str = "", **kwargs: Any
) -> SegmentRecord:
    """Build a finished record whose draft and refined texts are equal."""
    return SegmentRecord(
        id=SegmentId(kwargs.pop("doc_id", "doc"), index),
        draft_transcript=kwargs.pop("draft", text),
        refined_transcript=text,
        draft_translation=kwargs.pop("draft_translation", translation),
        final_translation=translation,
        **kwargs,
    )
