import csv
import json
import tempfile
from io import StringIO
from pathlib import Path
from typing import Any

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from ..pipelines import load_records

ROWS = [
    {"doc_id": "talk", "index": 1, "draft_transcript": "the bank is open"},
    {
        "doc_id": "talk",
        "index": 2,
        "draft_transcript": "the bank is closed",
        "ref_transcript": "the bank is closed",
        "ref_translation": "die Bank ist geschlossen",
    },
    {"doc_id": "news", "index": 1, "draft_transcript": "rain today"},
]


class CommandTest(SimpleTestCase):
    def setUp(self) -> None:
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)
        self.input = self.tmp / "input.jsonl"
        self.input.write_text(
            "".join(json.dumps(row) + "\n" for row in ROWS), encoding="utf-8"
        )
        self.output = self.tmp / "output.jsonl"
        self.script = self.write_script("- {rule: echo}\n")

    def write_script(self, text: str) -> Path:
        path = self.tmp / "script.yaml"
        path.write_text(text, encoding="utf-8")
        return path

    def call(self, name: str, **options: Any) -> str:
        out = StringIO()
        call_command(name, stdout=out, **options)
        return out.getvalue()

    def run_pipeline(self, **options: Any) -> str:
        return self.call(
            "docia_run",
            input=str(self.input),
            output=str(self.output),
            backend_kind="scripted",
            script=str(self.script),
            **options,
        )

    def assert_exit(self, code: int, name: str, **options: Any) -> None:
        with self.assertRaises(CommandError) as caught:
            self.call(name, **options)
        assert caught.exception.returncode == code


class RunCommandTest(CommandTest):
    def test_writes_output_and_manifest(self) -> None:
        summary = self.run_pipeline()
        records = load_records(self.output)
        assert [str(r.id) for r in records] == ["news#1", "talk#1", "talk#2"]
        assert "LLM calls   9 primary, 0 extra" in summary

        manifest = json.loads(
            Path(f"{self.output}.manifest.json").read_text(encoding="utf-8")
        )
        assert manifest["segments"] == 3
        assert manifest["input"] == str(self.input)
        assert manifest["config"]["backend"]["kind"] == "scripted"
        assert len(manifest["config_digest"]) == 64

    def test_stage_flag(self) -> None:
        summary = self.run_pipeline(stages="a,m")
        assert "LLM calls   6 primary" in summary
        manifest = json.loads(
            Path(f"{self.output}.manifest.json").read_text(encoding="utf-8")
        )
        assert manifest["config"]["stages"] == ["asr_refine", "context_mt"]

    def test_trace(self) -> None:
        trace = self.tmp / "trace.jsonl"
        self.run_pipeline(mode="asr-smt", trace=str(trace))
        lines = trace.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3
        assert json.loads(lines[0])["backend"] == "scripted"

    def test_usage_errors(self) -> None:
        self.assert_exit(
            2,
            "docia_run",
            input=str(self.tmp / "missing.jsonl"),
            output=str(self.output),
        )
        self.assert_exit(
            2,
            "docia_run",
            input=str(self.input),
            output=str(self.output),
            threshold=1.5,
        )
        assert not self.output.exists()

    def test_lost_translations(self) -> None:
        self.write_script(
            "- {task: translate, doc_id: news, rule: fail}\n- {rule: echo}\n"
        )
        with self.assertRaises(CommandError) as caught:
            self.run_pipeline()
        assert caught.exception.returncode == 1
        news, talk, _ = load_records(self.output)
        assert news.failed
        assert not talk.failed


class ReportCommandsTest(CommandTest):
    def setUp(self) -> None:
        super().setUp()
        self.run_pipeline()

    def test_eval(self) -> None:
        report = json.loads(
            self.call(
                "docia_eval", input=str(self.input), output=str(self.output), json=True
            )
        )
        assert report["segments"] == 3
        assert report["gates"]["asr"]["accepted"] == 3
        assert report["wer"] == {"segments": 1, "draft_wer": 0.0, "refined_wer": 0.0}

        table = self.call("docia_eval", input=str(self.input), output=str(self.output))
        assert "WER         draft 0.00%, refined 0.00% over 1 segments" in table

    def test_export(self) -> None:
        out_dir = self.tmp / "export"
        printed = self.call(
            "docia_export",
            input=str(self.input),
            output=str(self.output),
            out_dir=str(out_dir),
        )
        assert len(printed.splitlines()) == 3
        sources = (out_dir / "en-de" / "src.txt").read_text(encoding="utf-8")
        assert sources.splitlines() == [
            "rain today",
            "the bank is open",
            "the bank is closed",
        ]
        assert not (out_dir / "en-de" / "ref.txt").exists()

    def test_inspect_context(self) -> None:
        dump = json.loads(
            self.call(
                "docia_inspect_context",
                input=str(self.input),
                output=str(self.output),
                doc_id="talk",
                index=2,
            )
        )
        assert dump["index"] == 2
        assert [e["index"] for e in dump["asr_context"]["short"]] == [1]
        assert dump["asr_context"]["short"][0]["transcript"] == "the bank is open"

    def test_inspect_unknown_segment(self) -> None:
        for doc_id, index in (("nope", 1), ("talk", 7)):
            with self.subTest(doc_id=doc_id, index=index):
                self.assert_exit(
                    2,
                    "docia_inspect_context",
                    input=str(self.input),
                    output=str(self.output),
                    doc_id=doc_id,
                    index=index,
                )


class SweepCommandTest(CommandTest):
    def sweep(self, **options: Any) -> str:
        return self.call(
            "docia_sweep",
            input=str(self.input),
            out_dir=str(self.tmp / "sweep"),
            backend_kind="scripted",
            script=str(self.script),
            **options,
        )

    def test_grid(self) -> None:
        self.sweep(lambdas="0.5,0.9", splits="2:1")
        sweep_dir = self.tmp / "sweep"
        with (sweep_dir / "sweep.csv").open(encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        assert [(r["point"], r["lambda"], r["L"], r["m"], r["n"]) for r in rows] == [
            ("point-01", "0.5", "3", "2", "1"),
            ("point-02", "0.9", "3", "2", "1"),
        ]
        assert all(r["failed"] == "False" for r in rows)
        assert len(load_records(sweep_dir / "point-02" / "output.jsonl")) == 3

    def test_nothing_to_sweep(self) -> None:
        with self.assertRaises(CommandError) as caught:
            self.sweep()
        assert caught.exception.returncode == 2

    def test_invalid_point(self) -> None:
        for options in ({"lambdas": "x"}, {"splits": "3"}, {"lambdas": "2.0"}):
            with self.subTest(**options), self.assertRaises(CommandError) as caught:
                self.sweep(**options)
            assert caught.exception.returncode == 2
        assert not (self.tmp / "sweep").exists()


class VerifyCommandTest(CommandTest):
    def test_selected_scenarios(self) -> None:
        printed = self.call("docia_verify", scenario=["call-counts"])
        lines = printed.splitlines()
        assert len(lines) == 5
        assert all(line.split()[1].startswith("call-counts/") for line in lines)
        assert all(line.split()[0] == "ok" for line in lines)

    def test_no_scenario(self) -> None:
        self.assert_exit(1, "docia_verify", scenario=["nope"])
