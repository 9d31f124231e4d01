"""Run a corpus once per point of a parameter grid."""

import csv
from argparse import ArgumentParser
from itertools import product
from pathlib import Path
from typing import Any

from django.core.management.base import BaseCommand, CommandError
from overrides import overrides

from translation import docia_logger as logger
from translation.cli import (
    add_config_arguments,
    add_trace_argument,
    command_errors,
    effective_config,
    trace_to,
    usage_error,
    write_json,
)
from translation.core import IoError, PipelineConfig, load_documents
from translation.metrics import gate_stats, transcript_wer
from translation.pipelines import EXIT_SEGMENT_FAILURES, CorpusResult, run_corpus

CSV_COLUMNS = (
    "point",
    "lambda",
    "L",
    "m",
    "n",
    "segments",
    "asr_evaluated",
    "asr_acceptance_rate",
    "asr_mean_similarity",
    "mt_evaluated",
    "mt_acceptance_rate",
    "mt_mean_similarity",
    "draft_wer",
    "refined_wer",
    "failed",
)


def parse_list(value: str | None, convert: Any, flag: str) -> list[Any]:
    """Split a comma-separated flag value.

    Args:
        value: the flag value
        convert: conversion of one item
        flag: the flag name, for messages

    Raises:
        CommandError: if an item cannot be converted

    Returns:
        the converted items
    """
    if not value:
        return []
    try:
        return [convert(item.strip()) for item in value.split(",") if item.strip()]
    except ValueError as e:
        error = f"invalid {flag} {value!r}: {e}"
        raise usage_error(error) from e


def _split(item: str) -> dict[str, int]:
    m, sep, n = item.partition(":")
    if not sep:
        error = f"expected m:n, got {item!r}"
        raise ValueError(error)
    return {"m": int(m), "n": int(n)}


def sweep_points(
    lambdas: list[float], windows: list[int], splits: list[dict[str, int]]
) -> list[dict[str, Any]]:
    """Build the grid of config overrides.

    Window sizes and m:n splits are alternative context settings; each one
    is combined with every threshold.

    Args:
        lambdas: thresholds
        windows: context window sizes
        splits: short/long memory sizes

    Returns:
        one mapping of config keys per point (empty if nothing is swept)
    """
    contexts = [{"L": w} for w in windows]
    contexts += [{**s, "L": s["m"] + s["n"]} for s in splits]
    thresholds = [{"lambda": t} for t in lambdas]
    if not contexts and not thresholds:
        return []
    return [{**t, **c} for t, c in product(thresholds or [{}], contexts or [{}])]


def csv_row(
    point: str, config: PipelineConfig, result: CorpusResult, documents: list[Any]
) -> dict[str, Any]:
    """Summarize one point.

    Args:
        point: the point name
        config: its configuration
        result: its result
        documents: the corpus, for reference transcripts

    Returns:
        a row keyed by :data:`CSV_COLUMNS`
    """
    stats = gate_stats(result.records)
    scores = transcript_wer(result.records, documents)
    return {
        "point": point,
        "lambda": config.threshold,
        "L": config.window,
        "m": config.short_window,
        "n": config.long_window,
        "segments": len(result.records),
        "asr_evaluated": stats["asr"].evaluated,
        "asr_acceptance_rate": stats["asr"].acceptance_rate,
        "asr_mean_similarity": stats["asr"].mean_similarity,
        "mt_evaluated": stats["mt"].evaluated,
        "mt_acceptance_rate": stats["mt"].acceptance_rate,
        "mt_mean_similarity": stats["mt"].mean_similarity,
        "draft_wer": scores["draft_wer"],
        "refined_wer": scores["refined_wer"],
        "failed": result.failed,
    }


class Command(BaseCommand):
    """Sweep thresholds, window sizes and memory splits.

    Every point gets a ``point-XX`` directory with its output JSONL and
    manifest; ``sweep.csv`` gathers gate statistics and WER per point.
    """

    help = "Run a corpus once per threshold / context window setting."

    @overrides
    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--input", required=True, help="input JSONL corpus")
        parser.add_argument("--out-dir", required=True, help="sweep directory")
        parser.add_argument("--lambdas", help="comma-separated thresholds")
        parser.add_argument("--windows", help="comma-separated values of L")
        parser.add_argument("--splits", help="comma-separated m:n pairs")
        add_trace_argument(parser)
        add_config_arguments(parser)

    @overrides
    def handle(self, *args: Any, **options: Any) -> None:
        points = sweep_points(
            parse_list(options.get("lambdas"), float, "--lambdas"),
            parse_list(options.get("windows"), int, "--windows"),
            parse_list(options.get("splits"), _split, "--splits"),
        )
        if not points:
            error = "nothing to sweep: give --lambdas, --windows or --splits"
            raise usage_error(error)

        out_dir = Path(options["out_dir"])
        with command_errors():
            # every point is validated before the first run
            configs = [effective_config(options, **point) for point in points]
            documents = load_documents(options["input"])

            rows = []
            with trace_to(options.get("trace")):
                for number, config in enumerate(configs, start=1):
                    name = f"point-{number:02d}"
                    logger.info("sweep point", point=name, **points[number - 1])
                    result = run_corpus(documents, config)
                    target = out_dir / name
                    _mkdir(target)
                    result.write_jsonl(target / "output.jsonl")
                    manifest = target / "output.jsonl.manifest.json"
                    write_json(manifest, result.manifest())
                    rows.append(csv_row(name, config, result, documents))
                    self.stdout.write(
                        f"{name}  lambda={config.threshold} L={config.window} "
                        f"m={config.short_window} n={config.long_window}"
                    )
            _write_csv(out_dir / "sweep.csv", rows)

        self.stdout.write(str(out_dir / "sweep.csv"))
        if any(row["failed"] for row in rows):
            error = "some points have segments without translation"
            raise CommandError(error, returncode=EXIT_SEGMENT_FAILURES)


def _mkdir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        error = f"cannot create {path}: {e}"
        raise IoError(error) from e


def _write_csv(path: Path, rows: list[dict[str, Any]]) -> None:
    try:
        with path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        error = f"cannot write {path}: {e}"
        raise IoError(error) from e
