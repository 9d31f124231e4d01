"""Export a run for external metrics."""

from argparse import ArgumentParser
from typing import Any

from django.core.management.base import BaseCommand
from overrides import overrides

from translation.cli import add_config_arguments, command_errors, run_config
from translation.core import load_documents
from translation.metrics import export_external
from translation.pipelines import load_records


class Command(BaseCommand):
    """Write aligned source, hypothesis and reference files.

    The configuration is read from the manifest of the run unless a config
    file or flags are given.
    """

    help = "Export an output JSONL as plain-text files for external scoring."

    @overrides
    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--input", required=True, help="input JSONL corpus")
        parser.add_argument("--output", required=True, help="output JSONL of a run")
        parser.add_argument("--out-dir", required=True, help="export directory")
        add_config_arguments(parser)

    @overrides
    def handle(self, *args: Any, **options: Any) -> None:
        with command_errors():
            config = run_config(options, options["output"])
            documents = load_documents(options["input"])
            records = load_records(options["output"])
            files = export_external(records, documents, options["out_dir"], config)
        for path in files:
            self.stdout.write(str(path))
