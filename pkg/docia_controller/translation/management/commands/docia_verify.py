"""Replay the built-in scenarios."""

from argparse import ArgumentParser
from typing import Any

from django.core.management.base import BaseCommand, CommandError
from overrides import overrides

from translation.cli import command_errors
from translation.pipelines import EXIT_SEGMENT_FAILURES
from translation.scenarios import (
    builtin_scenarios,
    read_digests,
    verify,
    write_digests,
)


class Command(BaseCommand):
    """Replay every scenario against its scripted backend.

    A scenario fails when its output differs from the hand-computed
    expectations or from the blessed digest. ``--bless`` records the current
    digests of the scenarios whose expectations hold.
    """

    help = "Replay the scripted scenarios and check their outputs."

    @overrides
    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument(
            "--scenario", action="append", help="only replay scenarios with this name"
        )
        parser.add_argument(
            "--bless", action="store_true", help="record the current output digests"
        )

    @overrides
    def handle(self, *args: Any, **options: Any) -> None:
        with command_errors():
            scenarios = builtin_scenarios()
            if options.get("scenario"):
                wanted = set(options["scenario"])
                scenarios = [
                    s
                    for s in scenarios
                    if s.name in wanted or s.name.split("/")[0] in wanted
                ]
            digests = read_digests()
            verdicts = verify(scenarios, digests)

            if options["bless"]:
                blessed = {
                    **digests,
                    **{v.name: v.digest for v in verdicts if v.status != "mismatch"},
                }
                write_digests(blessed)

        for verdict in verdicts:
            status = verdict.status
            if options["bless"] and status != "mismatch":
                status = "blessed"
            self.stdout.write(f"{status:>10}  {verdict.name}")
            for message in verdict.messages:
                self.stdout.write(f"{'':>10}  {message}")

        failed = [v for v in verdicts if not v.passed]
        if options["bless"]:
            failed = [v for v in failed if v.status == "mismatch"]
        if not verdicts:
            error = "no scenario to replay"
            raise CommandError(error, returncode=EXIT_SEGMENT_FAILURES)
        if failed:
            error = f"{len(failed)} of {len(verdicts)} scenarios failed"
            raise CommandError(error, returncode=EXIT_SEGMENT_FAILURES)
