"""Translate a corpus of draft transcripts."""

from argparse import ArgumentParser
from pathlib import Path
from typing import Any

from django.core.management.base import BaseCommand, CommandError
from overrides import overrides

from translation.cli import (
    add_config_arguments,
    add_trace_argument,
    command_errors,
    effective_config,
    print_summary,
    trace_to,
    write_json,
)
from translation.core import load_documents
from translation.pipelines import run_corpus


class Command(BaseCommand):
    """Run the pipeline over an input JSONL file and write the output JSONL.

    Next to the output, ``<output>.manifest.json`` records the effective
    configuration and its digest.
    """

    help = "Translate a JSONL corpus of draft transcripts."

    @overrides
    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--input", required=True, help="input JSONL corpus")
        parser.add_argument("--output", required=True, help="output JSONL file")
        add_trace_argument(parser)
        add_config_arguments(parser)

    @overrides
    def handle(self, *args: Any, **options: Any) -> None:
        with command_errors():
            # configuration errors are reported before any call to the backend
            config = effective_config(options)
            documents = load_documents(options["input"])
            with trace_to(options.get("trace")):
                result = run_corpus(documents, config)
            result.write_jsonl(options["output"])
            write_json(
                Path(f"{options['output']}.manifest.json"),
                {**result.manifest(), "input": str(options["input"])},
            )

        print_summary(result, self.stdout.write)
        if result.failed:
            error = "some segments have no translation"
            raise CommandError(error, returncode=result.exit_code)
