import tempfile
from functools import cache
from pathlib import Path

from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from ..cli import gate_lines
from ..core import EmptyReference, GateDecision, documents_from_data, validate_config
from ..metrics import (
    corpus_wer,
    export_external,
    gate_stats,
    read_export,
    transcript_wer,
    wer,
    wer_counts,
)
from . import record

words = st.lists(st.sampled_from(["a", "b", "c", "A"]), max_size=8)


def edit_distance(hypothesis: tuple[str, ...], reference: tuple[str, ...]) -> int:
    @cache
    def distance(i: int, j: int) -> int:
        if i == 0 or j == 0:
            return i + j
        same = reference[i - 1] == hypothesis[j - 1]
        return min(
            distance(i - 1, j - 1) + (not same),
            distance(i - 1, j) + 1,
            distance(i, j - 1) + 1,
        )

    return distance(len(reference), len(hypothesis))


class WerTest(SimpleTestCase):
    def test_known_pairs(self) -> None:
        cases = (
            ("the cat sat", "the cat sat", 0.0),
            ("the cat", "the cat sat on", 0.5),
            ("a b c", "x y z", 1.0),
            ("", "a b", 1.0),
            ("a b c d", "a b", 1.0),
            ("The cat", "the cat", 0.5),
            ("cat.", "cat", 1.0),
            ("a  b\n", "a b", 0.0),
            ("a x c d", "a b c", 2 / 3),
            ("b c d e", "a b c d", 0.5),
        )
        for hypothesis, reference, expected in cases:
            with self.subTest(hypothesis=hypothesis, reference=reference):
                assert abs(wer(hypothesis, reference) - expected) < 1e-12

    def test_counts(self) -> None:
        counts = wer_counts("a x c d", "a b c")
        assert (counts.substitutions, counts.insertions, counts.deletions) == (
            1,
            1,
            0,
        )
        assert counts.reference_length == 3

    def test_empty_reference(self) -> None:
        for reference in ("", "   "):
            with self.subTest(reference=reference), self.assertRaises(EmptyReference):
                wer("a", reference)

    def test_corpus_pools_counts(self) -> None:
        pairs = [("a", "a b c d"), ("x", "x y z w v u")]
        assert corpus_wer(pairs) == 8 / 10
        with self.assertRaises(EmptyReference):
            corpus_wer([])

    @settings(max_examples=200, deadline=None)
    @given(hypothesis=words, reference=words)
    def test_minimal_alignment(self, hypothesis, reference) -> None:
        counts = wer_counts(" ".join(hypothesis), " ".join(reference))
        assert counts.errors == edit_distance(tuple(hypothesis), tuple(reference))
        assert counts.reference_length == len(reference)
        matched = len(reference) - counts.substitutions - counts.deletions
        assert matched + counts.substitutions + counts.insertions == len(hypothesis)


class GateStatsTest(SimpleTestCase):
    def test_aggregates(self) -> None:
        records = [
            record(1, "a", "A", asr_gate=GateDecision(0.95, True, 0.7)),
            record(2, "b", "B", asr_gate=GateDecision(0.5, False, 0.7)),
            record(3, "c", "C", asr_gate=GateDecision.failed(0.7)),
            record(4, "d", "D", asr_gate=GateDecision(1.0, True, 0.7)),
        ]
        stats = gate_stats(records)
        asr = stats["asr"]
        assert (asr.evaluated, asr.accepted, asr.rejected, asr.fallbacks) == (
            3,
            2,
            1,
            1,
        )
        assert asr.acceptance_rate == 2 / 3
        assert abs(asr.mean_similarity - 2.45 / 3) < 1e-12
        assert (asr.min_similarity, asr.max_similarity) == (0.5, 1.0)
        assert asr.histogram == (0, 0, 0, 0, 0, 1, 0, 0, 0, 2)
        assert sum(asr.histogram) == asr.evaluated

        mt = stats["mt"]
        assert mt.evaluated == 0
        assert mt.acceptance_rate is None
        assert mt.to_dict()["mean_similarity"] is None

    def test_ablated_decisions(self) -> None:
        ablated = GateDecision(0.3, True, 0.7, ablated=True)
        records = [
            record(1, "a", "A", asr_gate=ablated),
            record(2, "b", "B", asr_gate=ablated),
        ]
        asr = gate_stats(records)["asr"]
        assert (asr.evaluated, asr.accepted, asr.ablated) == (2, 2, 2)
        assert asr.to_dict()["ablated"] == 2
        header, row, _ = gate_lines(gate_stats(records))
        assert header.split()[5] == "ablated"
        assert row.split()[:6] == ["asr", "2", "2", "0", "0", "2"]


class TranscriptWerTest(SimpleTestCase):
    def test_drafts_and_refinements(self) -> None:
        documents = documents_from_data(
            [
                {
                    "doc_id": "d",
                    "index": 1,
                    "draft_transcript": "the the cat sat",
                    "ref_transcript": "the cat sat",
                },
                {"doc_id": "d", "index": 2, "draft_transcript": "uh"},
            ]
        )
        records = [
            record(1, "the cat sat", doc_id="d", draft="the the cat sat"),
            record(2, "", doc_id="d", draft="uh"),
        ]
        result = transcript_wer(records, documents)
        assert result == {"segments": 1, "draft_wer": 1 / 3, "refined_wer": 0.0}

    def test_without_references(self) -> None:
        documents = documents_from_data(
            [{"doc_id": "d", "index": 1, "draft_transcript": "x"}]
        )
        result = transcript_wer([record(1, "x", doc_id="d")], documents)
        assert result == {"segments": 0, "draft_wer": None, "refined_wer": None}


class ExportTest(SimpleTestCase):
    def setUp(self) -> None:
        self.rows = [
            {"doc_id": "b", "index": 1, "draft_transcript": "x"},
            {"doc_id": "a", "index": 1, "draft_transcript": "y"},
            {"doc_id": "a", "index": 2, "draft_transcript": "z"},
        ]
        for row, reference in zip(self.rows, "XYZ", strict=True):
            row["ref_translation"] = reference
        self.records = [
            record(1, "x", "Ex", doc_id="b"),
            record(2, "z", "Zed\nline", doc_id="a"),
            record(1, "y", "Why", doc_id="a"),
        ]
        self.config = validate_config({"source_lang": "en", "target_lang": "ja"})

    def test_round_trip(self) -> None:
        documents = documents_from_data(self.rows)
        with tempfile.TemporaryDirectory() as tmp:
            written = export_external(self.records, documents, tmp, self.config)
            assert [p.name for p in written] == [
                "src.txt",
                "hyp.txt",
                "ref.txt",
                "docs.json",
            ]
            exported = read_export(Path(tmp, "en-ja"))

        assert exported.sources == ("y", "z", "x")
        assert exported.hypotheses == ("Why", "Zed line", "Ex")
        assert exported.references == ("Y", "Z", "X")
        assert exported.segment_ids() == [("a", 1), ("a", 2), ("b", 1)]
        assert exported.manifest["pair"] == "en-ja"
        assert exported.manifest["config_digest"] == self.config.digest()
        assert exported.manifest["documents"][1] == {
            "doc_id": "b",
            "first_line": 3,
            "last_line": 3,
        }

    def test_missing_references(self) -> None:
        del self.rows[2]["ref_translation"]
        documents = documents_from_data(self.rows)
        with tempfile.TemporaryDirectory() as tmp:
            written = export_external(self.records, documents, tmp, self.config)
            exported = read_export(Path(tmp, "en-ja"))
        assert "ref.txt" not in [p.name for p in written]
        assert exported.references is None
        assert exported.manifest["has_ref"] is False
