"""Evaluate the output of a run."""

import json
from argparse import ArgumentParser
from typing import Any

from django.core.management.base import BaseCommand
from overrides import overrides

from translation.cli import command_errors, gate_lines
from translation.core import load_documents
from translation.metrics import gate_stats, transcript_wer
from translation.pipelines import load_records


class Command(BaseCommand):
    """Print gate statistics and the WER of draft and refined transcripts."""

    help = "Evaluate an output JSONL against the references of its corpus."

    @overrides
    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--input", required=True, help="input JSONL corpus")
        parser.add_argument("--output", required=True, help="output JSONL of a run")
        parser.add_argument(
            "--json", action="store_true", help="print the results as JSON"
        )

    @overrides
    def handle(self, *args: Any, **options: Any) -> None:
        with command_errors():
            documents = load_documents(options["input"])
            records = load_records(options["output"])
        stats = gate_stats(records)
        scores = transcript_wer(records, documents)

        if options["json"]:
            report = {
                "segments": len(records),
                "gates": {k: v.to_dict() for k, v in stats.items()},
                "wer": scores,
            }
            self.stdout.write(json.dumps(report, ensure_ascii=False, indent=2))
            return

        self.stdout.write(f"segments    {len(records)}")
        for line in gate_lines(stats):
            self.stdout.write(line)
        if scores["segments"]:
            self.stdout.write(
                f"WER         draft {scores['draft_wer']:.2%}, "
                f"refined {scores['refined_wer']:.2%} "
                f"over {scores['segments']} segments"
            )
        else:
            self.stdout.write("WER         no reference transcripts")
