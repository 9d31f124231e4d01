import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from ..core import ConfigError
from ..scenarios import (
    builtin_scenarios,
    load_scenarios,
    read_digests,
    verify,
    write_digests,
)

SCENARIO = """\
name: tiny
documents:
  - {doc_id: d, index: 1, draft_transcript: "hello"}
script:
  - {rule: echo}
variants:
  - name: right
    expect: {llm_calls: 3, segments: {"d#1": {final_translation: "hello"}}}
  - name: wrong
    config: {mode: asr-smt}
    expect: {llm_calls: 3}
"""


class BuiltinScenarioTest(SimpleTestCase):
    def test_expectations_hold(self) -> None:
        scenarios = builtin_scenarios()
        assert len(scenarios) >= 5
        for scenario in scenarios:
            with self.subTest(scenario=scenario.name):
                outcome = scenario.replay()
                assert outcome.mismatches == ()

    def test_replay_is_reproducible(self) -> None:
        first = [s.replay().output for s in builtin_scenarios()]
        again = [s.replay().output for s in builtin_scenarios()]
        assert first == again

    def test_blessed_digests_match(self) -> None:
        scenarios = builtin_scenarios()
        digests = read_digests()
        assert set(digests) == {s.name for s in scenarios}
        for verdict in verify(scenarios, digests):
            with self.subTest(scenario=verdict.name):
                assert verdict.status == "ok", (verdict.status, verdict.messages)

    def test_golden_lines(self) -> None:
        (scenario,) = [s for s in builtin_scenarios() if s.name == "echo-everything"]
        lines = scenario.replay().output.splitlines()
        assert lines[3] == (
            '{"doc_id": "talk-b", "index": 2, "draft_transcript": "", '
            '"refined_transcript": "", "asr_gate": null, "draft_translation": "", '
            '"final_translation": "", "mt_gate": null, "llm_calls": 0, '
            '"extra_calls": 0, "skipped": true, "failures": [], '
            '"context_fingerprints": {}}'
        )
        empty = "4f53cda18c2baa0c0354bb5f9a3ecbe5ed12ab4d8e11ba873c2f11161202b945"
        assert lines[0] == (
            '{"doc_id": "talk-a", "index": 1, '
            '"draft_transcript": "so today I want to talk about trust", '
            '"refined_transcript": "so today I want to talk about trust", '
            '"asr_gate": {"similarity": 1.0, "accepted": true, "threshold": 0.7, '
            '"fallback": false, "ablated": false}, '
            '"draft_translation": "so today I want to talk about trust", '
            '"final_translation": "so today I want to talk about trust", '
            '"mt_gate": {"similarity": 1.0, "accepted": true, "threshold": 0.7, '
            '"fallback": false, "ablated": false}, '
            '"llm_calls": 3, "extra_calls": 0, "skipped": false, "failures": [], '
            f'"context_fingerprints": {{"asr_refine": "{empty}", '
            f'"context_mt": "{empty}", "mt_refine": "{empty}"}}}}'
        )


class ScenarioFileTest(SimpleTestCase):
    def setUp(self) -> None:
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)
        self.path = self.tmp / "tiny.yaml"
        self.path.write_text(SCENARIO, encoding="utf-8")

    def test_variants(self) -> None:
        right, wrong = load_scenarios(self.path)
        assert (right.name, wrong.name) == ("tiny/right", "tiny/wrong")
        assert str(wrong.config.mode) == "asr-smt"
        assert wrong.script == right.script

    def test_statuses(self) -> None:
        right, wrong = load_scenarios(self.path)
        digest = right.replay().digest
        verdicts = verify([right, wrong], {})
        assert [v.status for v in verdicts] == ["unblessed", "mismatch"]
        assert verdicts[1].messages == ("llm_calls: expected 3, got 1",)
        assert verify([right], {"tiny/right": digest})[0].status == "ok"
        changed = verify([right], {"tiny/right": "0" * 64})[0]
        assert changed.status == "changed"
        assert not changed.passed

    def test_digest_file(self) -> None:
        path = self.tmp / "digests.yaml"
        assert read_digests(path) == {}
        write_digests({"b": "2", "a": "1"}, path)
        assert read_digests(path) == {"a": "1", "b": "2"}
        assert path.read_text(encoding="utf-8").startswith("#")

    def test_missing_documents(self) -> None:
        self.path.write_text("name: empty\nscript: []\n", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_scenarios(self.path)
