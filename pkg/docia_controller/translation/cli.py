"""Helpers shared by the management commands."""

from __future__ import annotations

import json
import logging
from argparse import ArgumentParser
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import structlog
import yaml
from django.core.management.base import CommandError

from . import docia_logger as logger
from .core import (
    AuthError,
    ConfigError,
    DociaError,
    IoError,
    NotFoundError,
    PipelineConfig,
    SchemaError,
    validate_config,
)
from .metrics import GateStats, gate_stats
from .pipelines import EXIT_SEGMENT_FAILURES, EXIT_USAGE, CorpusResult

TRACE_LOGGER = "docia_controller.trace"

# flag destination -> config-file key
CONFIG_FLAGS = {
    "mode": "mode",
    "stages": "stages",
    "context_mode": "context_mode",
    "window": "L",
    "short_window": "m",
    "long_window": "n",
    "threshold": "lambda",
    "threshold_mt": "lambda_mt",
    "ablations": "ablations",
    "source_lang": "source_lang",
    "target_lang": "target_lang",
    "parallel_documents": "parallel_documents",
    "similarity": "similarity",
    "prompt_role": "prompt_role",
}
BACKEND_FLAGS = {
    "backend_kind": "kind",
    "script": "script",
    "model_name": "model_name",
    "endpoint_url": "endpoint_url",
}


def add_config_arguments(parser: ArgumentParser) -> None:
    """Add the config file flag and one flag per configuration key.

    Args:
        parser: the command parser
    """
    group = parser.add_argument_group("pipeline configuration")
    group.add_argument("--config", help="YAML config file")
    group.add_argument("--mode", help="asr-smt, asr-dmt or docia")
    group.add_argument("--stages", help="comma-separated stages (a, m, p or names)")
    group.add_argument("--context-mode", help="online or offline")
    group.add_argument("--L", dest="window", type=int, help="context window size")
    group.add_argument("--m", dest="short_window", type=int, help="short-memory size")
    group.add_argument("--n", dest="long_window", type=int, help="long-memory size")
    group.add_argument("--lambda", dest="threshold", type=float, help="gate threshold")
    group.add_argument(
        "--lambda-mt", dest="threshold_mt", type=float, help="threshold of the MT gate"
    )
    group.add_argument("--ablations", help="comma-separated ablations")
    group.add_argument("--source-lang")
    group.add_argument("--target-lang")
    group.add_argument("--parallel-documents", type=int)
    group.add_argument("--similarity", help="indel or levenshtein")
    group.add_argument("--prompt-role", help="user or system")
    group.add_argument("--backend-kind", help="http or scripted")
    group.add_argument("--script", help="YAML script of the scripted backend")
    group.add_argument("--model-name")
    group.add_argument("--endpoint-url")


def add_trace_argument(parser: ArgumentParser) -> None:
    """Add the ``--trace`` flag.

    Args:
        parser: the command parser
    """
    parser.add_argument(
        "--trace", help="write one JSON line per LLM call to this file"
    )


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Read a YAML config file.

    Args:
        path: the file

    Raises:
        IoError: if the file cannot be read
        ConfigError: if it is not a YAML mapping

    Returns:
        the config-file keys
    """
    try:
        with Path(path).open(encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        error = f"cannot read config {path}: {e}"
        raise IoError(error) from e
    except yaml.YAMLError as e:
        error = f"invalid config {path}: {e}"
        raise ConfigError(error) from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        error = f"config {path} must be a mapping"
        raise ConfigError(error)
    return data


def flag_overrides(options: dict[str, Any]) -> dict[str, Any]:
    """Collect the config keys given as flags.

    Args:
        options: the parsed command options

    Returns:
        config-file keys, with a ``backend`` mapping when backend flags are set
    """
    overrides = {
        key: options[dest]
        for dest, key in CONFIG_FLAGS.items()
        if options.get(dest) is not None
    }
    backend = {
        key: options[dest]
        for dest, key in BACKEND_FLAGS.items()
        if options.get(dest) is not None
    }
    if backend:
        overrides["backend"] = backend
    return overrides


def merge_config(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Apply flag overrides to config-file keys.

    A flag that sets only some of L, m and n drops the others from the
    file, so that they are derived again; a mode flag without a stages
    flag drops the stages of the file.

    Args:
        base: the config-file keys
        overrides: the flag keys

    Returns:
        the merged keys
    """
    merged = dict(base)
    window_keys = {"L", "m", "n"}
    if window_keys & overrides.keys():
        for key in window_keys - overrides.keys():
            merged.pop(key, None)
    if "mode" in overrides and "stages" not in overrides:
        merged.pop("stages", None)
    for key, value in overrides.items():
        if key == "backend":
            merged["backend"] = {**(merged.get("backend") or {}), **value}
        else:
            merged[key] = value
    return merged


def effective_config(options: dict[str, Any], **extra: Any) -> PipelineConfig:
    """Build the configuration of a command.

    Args:
        options: the parsed command options
        extra: further config keys, applied last

    Raises:
        ConfigError: if the configuration is invalid
        IoError: if the config file cannot be read

    Returns:
        the validated configuration
    """
    base = read_config_file(options["config"]) if options.get("config") else {}
    merged = merge_config(base, flag_overrides(options))
    if extra:
        merged = merge_config(merged, extra)
    return validate_config(merged)


@contextmanager
def trace_to(path: str | Path | None) -> Iterator[None]:
    """Route the per-call trace to a JSON-lines file while the block runs.

    Args:
        path: the trace file, or None to leave tracing off
    """
    if not path:
        yield
        return
    trace = logging.getLogger(TRACE_LOGGER)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(
        structlog.stdlib.ProcessorFormatter(
            processor=structlog.processors.JSONRenderer(ensure_ascii=False)
        )
    )
    previous = trace.level
    trace.addHandler(handler)
    trace.setLevel(logging.INFO)
    logger.debug("trace enabled", path=str(path))
    try:
        yield
    finally:
        trace.removeHandler(handler)
        trace.setLevel(previous)
        handler.close()


@contextmanager
def command_errors() -> Iterator[None]:
    """Turn pipeline errors into command errors with the right exit code."""
    try:
        yield
    except (ConfigError, SchemaError, IoError, NotFoundError, AuthError) as e:
        error = f"{type(e).__name__}: {e}"
        raise CommandError(error, returncode=EXIT_USAGE) from e
    except DociaError as e:
        error = f"{type(e).__name__}: {e}"
        raise CommandError(error, returncode=EXIT_SEGMENT_FAILURES) from e


def usage_error(message: str) -> CommandError:
    """Create the error of an invalid invocation.

    Args:
        message: what is wrong

    Returns:
        a command error with exit code 2
    """
    return CommandError(message, returncode=EXIT_USAGE)


def write_json(path: str | Path, data: Any) -> None:
    """Write an indented JSON file.

    Args:
        path: the file
        data: JSON-compatible data

    Raises:
        IoError: if the file cannot be written
    """
    try:
        Path(path).write_text(
            json.dumps(data, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    except OSError as e:
        error = f"cannot write {path}: {e}"
        raise IoError(error) from e


def _rate(value: float | None) -> str:
    return "-" if value is None else f"{value:.1%}"


def gate_lines(stats: dict[str, GateStats]) -> list[str]:
    """Format gate statistics as table rows.

    Args:
        stats: statistics keyed by stage

    Returns:
        the rows, header first
    """
    columns = (
        "gate",
        "evaluated",
        "accepted",
        "rejected",
        "fallbacks",
        "ablated",
        "rate",
        "mean g",
    )
    rows = ["".join(f"{c:>10}" for c in columns)]
    for name, s in stats.items():
        mean = "-" if s.mean_similarity is None else f"{s.mean_similarity:.3f}"
        values = (
            name,
            s.evaluated,
            s.accepted,
            s.rejected,
            s.fallbacks,
            s.ablated,
            _rate(s.acceptance_rate),
            mean,
        )
        rows.append("".join(f"{v:>10}" for v in values))
    return rows


def print_summary(result: CorpusResult, write: Callable[[str], Any]) -> None:
    """Print the summary table of a run.

    Args:
        result: the corpus result
        write: function printing one line
    """
    records = result.records
    write(f"documents   {len({r.id.doc_id for r in records})}")
    write(f"segments    {len(records)} ({sum(r.skipped for r in records)} skipped)")
    write(
        f"LLM calls   {sum(r.llm_calls for r in records)} primary, "
        f"{sum(r.extra_calls for r in records)} extra"
    )
    write(
        f"failures    {sum(len(r.failures) for r in records)} "
        f"({sum(r.failed for r in records)} fatal, "
        f"{len(result.document_failures)} documents aborted)"
    )
    for line in gate_lines(gate_stats(records)):
        write(line)
    for failure in result.document_failures:
        write(f"aborted     {failure.doc_id}: {failure.error}: {failure.message}")


def run_config(options: dict[str, Any], output: str | Path) -> PipelineConfig:
    """Return the configuration a previous run was made with.

    The manifest written next to the output is used unless a config file or
    configuration flags are given.

    Args:
        options: the parsed command options
        output: the output JSONL of the run

    Raises:
        ConfigError: if the configuration is invalid
        IoError: if the manifest cannot be read

    Returns:
        the validated configuration
    """
    manifest = Path(f"{output}.manifest.json")
    if options.get("config") or flag_overrides(options) or not manifest.exists():
        return effective_config(options)
    try:
        data = json.loads(manifest.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        error = f"cannot read manifest {manifest}: {e}"
        raise IoError(error) from e
    logger.debug("config read from manifest", path=str(manifest))
    return validate_config(data.get("config") or {})
