"""Rendering of the instruction prompts and parsing of the model replies."""

from __future__ import annotations

import ast
import hashlib
import json
import re
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

from django.conf import settings
from django.template import Context, Engine
from django.utils.translation import get_language_info

from .contexts import MultiLevelContext
from .core import ParseFailure, PromptRole, Task

BUILTIN_PROMPT_DIR = (
    Path(__file__).resolve().parent / "templates" / "translation" / "prompts"
)
EMPTY_BLOCK = "(none)"

REQUIRED_HEADERS = {
    Task.ASR_REFINE: (
        "### Preceding ASR sentences:",
        "### Draft current ASR sentence:",
        "### Your output:",
    ),
    Task.TRANSLATE: (
        "### Preceding source sentences:",
        "### Preceding translation history:",
        "### Current source sentence:",
        "### Your output:",
    ),
    Task.TRANSLATE_REFINE: (
        "### Preceding source sentences:",
        "### Preceding translation history:",
        "### Current source sentence:",
        "### Draft translation:",
        "### Your output:",
    ),
}


@dataclass(frozen=True)
class ChatPrompt:
    """A rendered instruction, ready to be sent as a single chat message."""

    text: str
    task: Task
    doc_id: str = ""
    seg_index: int = 0
    fingerprint: str = ""
    """digest of the context entries the prompt was built from"""
    role: PromptRole = PromptRole.USER
    inputs: Mapping[str, Any] = field(default_factory=dict, compare=False)
    """structured task inputs (input text, context texts)"""

    @property
    def input_text(self) -> str:
        """The text the task transforms (draft transcript or source sentence)."""
        return self.inputs.get("input", "")

    @property
    def context_size(self) -> int:
        """Number of context segments in the prompt."""
        return len(self.inputs.get("context_transcripts", ()))

    @property
    def prompt_hash(self) -> str:
        """SHA-256 of the rendered text."""
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def messages(self) -> list[dict[str, str]]:
        """Return the chat messages of the request.

        Returns:
            a list with one message
        """
        return [{"role": str(self.role), "content": self.text}]


@lru_cache(maxsize=4)
def _engine(override_dir: str | None) -> Engine:
    dirs = [override_dir] if override_dir else []
    return Engine(dirs=[*dirs, str(BUILTIN_PROMPT_DIR)], autoescape=False)


def language_name(tag: str) -> str:
    """Return the English name of a language tag.

    Args:
        tag: a BCP-47 tag such as ``en`` or ``de``

    Returns:
        the name ("English", "German"...), or the tag itself if unknown
    """
    names = getattr(settings, "DOCIA_LANGUAGE_NAMES", {})
    if tag in names:
        return names[tag]
    try:
        return get_language_info(tag.lower())["name"]
    except KeyError:
        return tag


def _numbered(lines: list[tuple[int, str]]) -> str:
    if not lines:
        return EMPTY_BLOCK
    return "\n".join(f"[{index}] {text}" for index, text in lines)


def _render(
    task: Task,
    variables: dict[str, Any],
    ctx: MultiLevelContext,
    *,
    input_text: str,
    doc_id: str,
    seg_index: int,
    role: PromptRole,
    extra_inputs: dict[str, Any] | None = None,
) -> ChatPrompt:
    entries = ctx.entries
    template = _engine(getattr(settings, "DOCIA_PROMPT_DIR", None)).get_template(
        f"{task}.txt"
    )
    text = template.render(
        Context(
            {
                **variables,
                "context_transcripts": _numbered(
                    [(e.index, e.transcript) for e in entries]
                ),
                "context_translations": _numbered(
                    [(e.index, e.translation) for e in entries]
                ),
            },
            autoescape=False,
        )
    )
    return ChatPrompt(
        text=text,
        task=task,
        doc_id=doc_id,
        seg_index=seg_index,
        fingerprint=ctx.fingerprint(),
        role=PromptRole(role),
        inputs={
            "input": input_text,
            "context_indices": [e.index for e in entries],
            "context_transcripts": [e.transcript for e in entries],
            "context_translations": [e.translation for e in entries],
            **(extra_inputs or {}),
        },
    )


def render_asr_refinement(
    draft: str,
    ctx: MultiLevelContext,
    src_lang: str,
    *,
    doc_id: str = "",
    seg_index: int = 0,
    role: PromptRole = PromptRole.USER,
) -> ChatPrompt:
    """Render the ASR-refinement prompt.

    Args:
        draft: the draft transcript
        ctx: the context built with the draft as query
        src_lang: source language tag
        doc_id: the document, for metadata
        seg_index: the segment, for metadata
        role: chat role of the message

    Returns:
        the prompt
    """
    return _render(
        Task.ASR_REFINE,
        {"src_lang": language_name(src_lang), "draft": draft},
        ctx,
        input_text=draft,
        doc_id=doc_id,
        seg_index=seg_index,
        role=role,
    )


def render_translation(
    src: str,
    ctx: MultiLevelContext,
    src_lang: str,
    tgt_lang: str,
    *,
    doc_id: str = "",
    seg_index: int = 0,
    role: PromptRole = PromptRole.USER,
) -> ChatPrompt:
    """Render the context-aware translation prompt.

    Source and translation blocks are aligned by segment index.

    Args:
        src: the current source sentence
        ctx: the translation context
        src_lang: source language tag
        tgt_lang: target language tag
        doc_id: the document, for metadata
        seg_index: the segment, for metadata
        role: chat role of the message

    Returns:
        the prompt
    """
    return _render(
        Task.TRANSLATE,
        {
            "src_lang": language_name(src_lang),
            "tgt_lang": language_name(tgt_lang),
            "source": src,
        },
        ctx,
        input_text=src,
        doc_id=doc_id,
        seg_index=seg_index,
        role=role,
    )


def render_translation_refinement(
    src: str,
    draft_translation: str,
    ctx: MultiLevelContext,
    src_lang: str,
    tgt_lang: str,
    *,
    doc_id: str = "",
    seg_index: int = 0,
    role: PromptRole = PromptRole.USER,
) -> ChatPrompt:
    """Render the translation-refinement prompt.

    The input of this task is the draft translation.

    Args:
        src: the current source sentence
        draft_translation: the translation to refine
        ctx: the context of the translation stage
        src_lang: source language tag
        tgt_lang: target language tag
        doc_id: the document, for metadata
        seg_index: the segment, for metadata
        role: chat role of the message

    Returns:
        the prompt
    """
    return _render(
        Task.TRANSLATE_REFINE,
        {
            "src_lang": language_name(src_lang),
            "tgt_lang": language_name(tgt_lang),
            "source": src,
            "draft_translation": draft_translation,
        },
        ctx,
        input_text=draft_translation,
        doc_id=doc_id,
        seg_index=seg_index,
        role=role,
        extra_inputs={"source": src},
    )


def format_output(text: str) -> str:
    """Wrap a text in the reply format the prompts ask for.

    Args:
        text: the output value

    Returns:
        a strict JSON object with key ``Output``
    """
    return json.dumps({"Output": text}, ensure_ascii=False)


_FENCE = re.compile(r"```[\w-]*[ \t]*\n?(.*?)\n?[ \t]*```", re.DOTALL)
_OUTPUT_FIELD = re.compile(
    r"""["']Output["']\s*:\s*(?:"((?:[^"\\]|\\.)*)"|'((?:[^'\\]|\\.)*)')""",
    re.DOTALL,
)


def _output_of(value: Any) -> str | None:
    if isinstance(value, dict) and isinstance(value.get("Output"), str):
        return value["Output"]
    return None


def _from_json(text: str) -> str | None:
    try:
        return _output_of(json.loads(text))
    except (json.JSONDecodeError, RecursionError):
        return None


def _from_literal(text: str) -> str | None:
    try:
        return _output_of(ast.literal_eval(text))
    except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
        return None


def _from_pattern(text: str) -> str | None:
    match = _OUTPUT_FIELD.search(text)
    if match is None:
        return None
    double_quoted, single_quoted = match.groups()
    if double_quoted is not None:
        try:
            return json.loads(f'"{double_quoted}"')
        except json.JSONDecodeError:
            return double_quoted
    return single_quoted.replace("\\'", "'")


def parse_output(raw: str) -> str:
    """Extract the output value from a model reply.

    Tried in order: strict JSON, JSON inside a code fence, a Python-style
    literal with single quotes, and finally the first ``Output`` field found
    anywhere in the reply.

    Args:
        raw: the raw reply

    Raises:
        ParseFailure: if no step yields a string value

    Returns:
        the value, stripped of surrounding whitespace
    """
    text = raw.strip()
    candidates = [text]
    fence = _FENCE.search(text)
    if fence is not None:
        candidates.append(fence.group(1).strip())

    for parse in (_from_json, _from_literal):
        for candidate in candidates:
            value = parse(candidate)
            if value is not None:
                return value.strip()
    value = _from_pattern(text)
    if value is not None:
        return value.strip()

    preview = text if len(text) <= 80 else f"{text[:77]}..."
    error = f"no output value in reply {preview!r}"
    raise ParseFailure(error)
