"""Chat-completion backends: an OpenAI-compatible HTTP client and a scripted one."""

from __future__ import annotations

import os
import threading
import time
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import httpx
import yaml
from overrides import overrides
from tenacity import (
    RetryError,
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from . import docia_logger as logger
from . import trace_logger
from .core import (
    AuthError,
    BackendConfig,
    BackendError,
    BackendExhausted,
    BackendKind,
    BackendTimeout,
    ConfigError,
    IoError,
    ScriptMiss,
    ScriptRule,
)
from .prompts import ChatPrompt, format_output


@dataclass(frozen=True)
class CompletionResult:
    """A full reply of a backend."""

    raw_text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    latency: float = 0.0
    attempts: int = 1

    def __post_init__(self):
        if self.attempts < 1:
            error = "a completion takes at least one attempt"
            raise ValueError(error)


class Backend:
    """Base class of chat-completion backends."""

    def complete(self, prompt: ChatPrompt) -> CompletionResult:
        """Send a prompt and wait for the full reply.

        Args:
            prompt: the prompt

        Raises:
            BackendError: if no reply could be obtained
        """
        raise NotImplementedError

    def close(self) -> None:
        """Release the resources held by the backend."""

    def __enter__(self) -> Backend:
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()


def _trace(backend: str, prompt: ChatPrompt, result: CompletionResult) -> None:
    trace_logger.info(
        "completion",
        backend=backend,
        task=str(prompt.task),
        doc_id=prompt.doc_id,
        index=prompt.seg_index,
        prompt_hash=prompt.prompt_hash,
        context_fingerprint=prompt.fingerprint,
        latency=round(result.latency, 6),
        attempts=result.attempts,
        prompt_tokens=result.prompt_tokens,
        completion_tokens=result.completion_tokens,
    )


class _RetryableStatus(BackendError):
    """The endpoint answered with a status worth retrying (429 or 5xx)."""


class HttpBackend(Backend):
    """Client of an OpenAI-compatible ``/chat/completions`` endpoint.

    Transport errors, timeouts, 429 and 5xx answers are retried with
    exponential backoff; 401 and 403 are not. At most ``concurrency_limit``
    requests of this backend are in flight at once, whatever the number of
    threads calling it. Backoff waits do not hold a slot.

    The limit is per instance, hence per process: with queued documents every
    Celery worker process builds its own backend, so up to
    ``concurrency_limit`` times the number of worker processes can be in
    flight against the endpoint. Size the worker pool accordingly.
    """

    def __init__(
        self,
        config: BackendConfig,
        *,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        """.

        Args:
            config: backend settings
            client: HTTP client to use instead of a new one
            sleep: function used to wait between attempts
        """
        self.config = config
        self.url = f"{config.endpoint_url.rstrip('/')}/chat/completions"
        self._owns_client = client is None
        self.client = client or httpx.Client(timeout=config.timeout)
        self._slots = threading.BoundedSemaphore(config.concurrency_limit)
        self._sleep = sleep

        self.api_key = os.environ.get(config.credentials_env_var)
        if not self.api_key:
            logger.warning(
                "no API key - requests are sent without credentials",
                env_var=config.credentials_env_var,
            )

    @overrides
    def close(self) -> None:
        """Close the HTTP client if it was created by this backend."""
        if self._owns_client:
            self.client.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _body(self, prompt: ChatPrompt) -> dict[str, Any]:
        return {
            "model": self.config.model_name,
            "messages": prompt.messages(),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        }

    def _post(self, prompt: ChatPrompt) -> dict[str, Any]:
        try:
            response = self.client.post(
                self.url,
                json=self._body(prompt),
                headers=self._headers(),
                timeout=self.config.timeout,
            )
        except httpx.TimeoutException as e:
            error = f"request timed out after {self.config.timeout} s"
            raise BackendTimeout(error) from e

        status = response.status_code
        if status in (401, 403):
            error = f"endpoint rejected the credentials (HTTP {status})"
            raise AuthError(error)
        if status == 429 or status >= 500:
            error = f"endpoint answered HTTP {status}"
            raise _RetryableStatus(error)
        if status >= 400:
            error = f"endpoint answered HTTP {status}: {response.text[:200]}"
            raise BackendError(error)
        try:
            return response.json()
        except ValueError as e:
            error = "endpoint answered with invalid JSON"
            raise BackendError(error) from e

    @overrides
    def complete(self, prompt: ChatPrompt) -> CompletionResult:
        retrying = Retrying(
            stop=stop_after_attempt(self.config.max_retries + 1),
            wait=wait_exponential(
                multiplier=self.config.backoff_initial,
                exp_base=self.config.backoff_multiplier,
            ),
            retry=retry_if_exception_type(
                (httpx.TransportError, BackendTimeout, _RetryableStatus)
            ),
            sleep=self._sleep,
        )
        log = logger.bind(
            doc_id=prompt.doc_id, index=prompt.seg_index, task=str(prompt.task)
        )
        attempts = 0

        def attempt() -> dict[str, Any]:
            nonlocal attempts
            attempts += 1
            with self._slots:
                return self._post(prompt)

        start = time.perf_counter()
        try:
            data = retrying(attempt)
        except RetryError as e:
            cause = e.last_attempt.exception()
            log.warning("backend exhausted", attempts=attempts, error=str(cause))
            error = f"no reply after {attempts} attempts: {cause}"
            raise BackendExhausted(error) from cause
        latency = time.perf_counter() - start

        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            error = "reply has no choices[0].message.content"
            raise BackendError(error) from e
        if not isinstance(text, str):
            error = "reply content is not a string"
            raise BackendError(error)

        usage = data.get("usage") or {}
        result = CompletionResult(
            raw_text=text,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
            latency=latency,
            attempts=attempts,
        )
        if attempts > 1:
            log.info("completion retried", attempts=attempts)
        _trace("http", prompt, result)
        return result


@dataclass
class ScriptEntry:
    """A rule of the scripted backend and the prompts it matches."""

    rule: ScriptRule
    task: str | None = None
    doc_id: str | None = None
    index: int | None = None
    reply: str = ""
    replies: list[str] | None = None
    table: Mapping[str, str] | None = None
    raw: bool = False

    def matches(self, prompt: ChatPrompt) -> bool:
        """Check whether the entry applies to a prompt.

        Args:
            prompt: the prompt

        Returns:
            True if task, document and segment (when given) match
        """
        if self.rule == ScriptRule.QUEUE and not self.replies:
            return False
        if self.rule == ScriptRule.MAP and prompt.input_text not in (self.table or {}):
            return False
        return (
            (self.task is None or self.task == prompt.task)
            and (self.doc_id is None or self.doc_id == prompt.doc_id)
            and (self.index is None or self.index == prompt.seg_index)
        )

    def answer(self, prompt: ChatPrompt) -> str:
        """Produce the reply text.

        Args:
            prompt: the prompt

        Raises:
            BackendExhausted: for the fail rule

        Returns:
            the reply, JSON-wrapped unless the entry is raw
        """
        text = prompt.input_text
        match self.rule:
            case ScriptRule.REPLY:
                value = self.reply
            case ScriptRule.QUEUE:
                value = self.replies.pop(0)
            case ScriptRule.ECHO:
                value = text
            case ScriptRule.UPPERCASE:
                value = text.upper()
            case ScriptRule.CONTEXT_TAG:
                transcripts = prompt.inputs.get("context_transcripts", ())
                tagged = sum("[ctx=" in t for t in transcripts)
                value = f"{text} [ctx={prompt.context_size}:{tagged}]"
            case ScriptRule.MAP:
                value = self.table[text]
            case ScriptRule.FAIL:
                error = (
                    f"scripted failure for {prompt.task} "
                    f"at {prompt.doc_id}#{prompt.seg_index}"
                )
                raise BackendExhausted(error)
        return value if self.raw else format_output(value)


class ScriptedBackend(Backend):
    """Deterministic backend that answers from an ordered script.

    The first matching entry in script order answers a prompt. Calls and
    prompts are recorded so tests can inspect them.
    """

    def __init__(self, entries: Iterable[ScriptEntry], *, source: str | None = None):
        self.entries = list(entries)
        self.source = source
        self.prompts: list[ChatPrompt] = []
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        """Number of prompts received."""
        return len(self.prompts)

    def calls_for(self, doc_id: str) -> list[ChatPrompt]:
        """Return the prompts received for one document.

        Args:
            doc_id: the document

        Returns:
            the prompts in the order they were received
        """
        with self._lock:
            return [p for p in self.prompts if p.doc_id == doc_id]

    @classmethod
    def from_data(
        cls, data: Iterable[Mapping[str, Any]], *, source: str | None = None
    ) -> ScriptedBackend:
        """Create a backend from parsed script entries.

        Args:
            data: the entries
            source: where the script comes from, for messages

        Raises:
            ConfigError: if an entry is invalid

        Returns:
            the backend
        """
        # importing here to avoid circular imports
        from .serializers import ScriptEntrySerializer

        entries = []
        for position, item in enumerate(data, start=1):
            serializer = ScriptEntrySerializer(data=item)
            if not serializer.is_valid():
                error = f"{source or 'script'} entry {position}: {serializer.errors}"
                raise ConfigError(error)
            entries.append(ScriptEntry(**serializer.validated_data))
        return cls(entries, source=source)

    @classmethod
    def from_yaml(cls, path: str | Path) -> ScriptedBackend:
        """Read a YAML script file.

        Args:
            path: the file, holding a list of entries

        Raises:
            IoError: if the file cannot be read
            ConfigError: if the script is invalid

        Returns:
            the backend
        """
        try:
            with Path(path).open(encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except OSError as e:
            error = f"cannot read script {path}: {e}"
            raise IoError(error) from e
        except yaml.YAMLError as e:
            error = f"invalid script {path}: {e}"
            raise ConfigError(error) from e
        if not isinstance(data, list):
            error = f"script {path} must hold a list of entries"
            raise ConfigError(error)
        return cls.from_data(data, source=str(path))

    @overrides
    def complete(self, prompt: ChatPrompt) -> CompletionResult:
        with self._lock:
            self.prompts.append(prompt)
            entry = next((e for e in self.entries if e.matches(prompt)), None)
            if entry is None:
                error = (
                    f"no script entry for {prompt.task} "
                    f"at {prompt.doc_id}#{prompt.seg_index}"
                )
                raise ScriptMiss(error)
            text = entry.answer(prompt)
        result = CompletionResult(raw_text=text)
        _trace("scripted", prompt, result)
        return result


def scripted_backend(
    script: Iterable[Mapping[str, Any]] | str | Path,
) -> ScriptedBackend:
    """Create a scripted backend.

    Args:
        script: a list of entries, or the path of a YAML script

    Returns:
        the backend
    """
    if isinstance(script, str | Path):
        return ScriptedBackend.from_yaml(script)
    return ScriptedBackend.from_data(script)


def build_backend(config: BackendConfig) -> Backend:
    """Create the backend described by a config.

    Args:
        config: backend settings

    Raises:
        ConfigError: if a scripted backend has no script

    Returns:
        the backend
    """
    if config.kind == BackendKind.SCRIPTED:
        if not config.script:
            error = "the scripted backend needs a script"
            raise ConfigError(error)
        return ScriptedBackend.from_yaml(config.script)
    return HttpBackend(config)
