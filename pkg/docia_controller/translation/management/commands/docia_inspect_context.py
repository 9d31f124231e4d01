"""Show the context a segment was translated with."""

import json
from argparse import ArgumentParser
from typing import Any

from django.core.management.base import BaseCommand
from overrides import overrides

from translation.cli import add_config_arguments, command_errors, run_config
from translation.core import load_documents
from translation.pipelines import find_document, inspect_context, load_records


class Command(BaseCommand):
    """Print the short and long memory, BM25 scores and prompts of a segment."""

    help = "Dump the assembled context of one segment of a previous run as JSON."

    @overrides
    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--input", required=True, help="input JSONL corpus")
        parser.add_argument("--output", required=True, help="output JSONL of a run")
        parser.add_argument("--doc-id", required=True)
        parser.add_argument("--index", required=True, type=int, help="1-based")
        add_config_arguments(parser)

    @overrides
    def handle(self, *args: Any, **options: Any) -> None:
        with command_errors():
            config = run_config(options, options["output"])
            document = find_document(
                load_documents(options["input"]), options["doc_id"]
            )
            dump = inspect_context(
                document, load_records(options["output"]), options["index"], config
            )
        self.stdout.write(json.dumps(dump, ensure_ascii=False, indent=2))
