from itertools import product

from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from ..contexts import EMPTY_CONTEXT, ContextEntry, ContextStore, MultiLevelContext
from ..core import Ablation, ContextMode, OutOfOrderSegmentError
from . import record

TEXTS = [
    "the bank approved the loan",
    "interest rates went up",
    "the river bank flooded",
    "everyone moved uphill",
    "the weather was fine",
    "we had a picnic",
    "the loan was repaid",
]


def filled_store(
    texts: list[str], mode: ContextMode = ContextMode.ONLINE
) -> ContextStore:
    store = ContextStore("doc", mode)
    for i, text in enumerate(texts, start=1):
        store.record_segment(record(i, text, text.upper(), draft=f"draft {i}"))
    return store


class ContextStoreTest(SimpleTestCase):
    def test_record_in_order(self) -> None:
        store = ContextStore("doc")
        store.record_segment(record(1, "a"))
        with self.assertRaises(OutOfOrderSegmentError):
            store.record_segment(record(3, "c"))
        with self.assertRaises(OutOfOrderSegmentError):
            store.record_segment(record(1, "a"))
        assert len(store) == 1

    def test_online_stores_refined(self) -> None:
        store = filled_store(TEXTS[:2])
        assert store.entry(2) == ContextEntry(2, TEXTS[1], TEXTS[1].upper())

    def test_offline_stores_drafts(self) -> None:
        store = ContextStore("doc", ContextMode.OFFLINE)
        store.record_segment(
            record(1, "Refined.", "Final.", draft="refined", draft_translation="draft")
        )
        assert store.entry(1) == ContextEntry(1, "refined", "draft")

    def test_short_memory(self) -> None:
        store = filled_store(TEXTS)
        assert [e.index for e in store.short_memory(8, 3)] == [5, 6, 7]
        assert [e.index for e in store.short_memory(2, 3)] == [1]
        assert store.short_memory(1, 3) == ()
        assert store.short_memory(8, 0) == ()

    def test_long_memory_pool(self) -> None:
        store = filled_store(TEXTS)
        # segment 7 is short memory for i=8, so only 1 and 3 can match "loan bank"
        long = store.long_memory("bank loan", 8, 3, 3)
        assert [e.index for e in long] == [1, 3]
        assert all(e.score > 0 for e in long)
        assert store.long_memory("bank loan", 4, 3, 3) == ()

    def test_assemble_context(self) -> None:
        store = filled_store(TEXTS)
        ctx = store.assemble_context(8, "bank loan", 3, 3)
        assert [e.index for e in ctx.long] == [1, 3]
        assert [e.index for e in ctx.short] == [5, 6, 7]
        assert [e.index for e in ctx.entries] == [1, 3, 5, 6, 7]
        assert ctx.query_used == "bank loan"
        assert len(ctx) == 5

    def test_first_segment_has_no_context(self) -> None:
        ctx = ContextStore("doc").assemble_context(1, "anything", 3, 3)
        assert len(ctx) == 0
        assert ctx.fingerprint() == EMPTY_CONTEXT.fingerprint()

    def test_without_short_memory(self) -> None:
        store = filled_store(TEXTS)
        ctx = store.assemble_context(
            8, "bank loan", 3, 3, ablations={Ablation.NO_SHORT_CTX}, window=6
        )
        assert ctx.short == ()
        assert [e.index for e in ctx.long] == [1, 3, 7]

    def test_without_long_memory(self) -> None:
        store = filled_store(TEXTS)
        ctx = store.assemble_context(
            8, "bank loan", 3, 3, ablations={Ablation.NO_LONG_CTX}, window=6
        )
        assert ctx.long == ()
        assert [e.index for e in ctx.short] == [2, 3, 4, 5, 6, 7]

    def test_all_preceding(self) -> None:
        store = filled_store(TEXTS)
        assert [e.index for e in store.all_preceding(8).entries] == list(range(1, 8))

    def test_fingerprint(self) -> None:
        a = MultiLevelContext(short=(ContextEntry(1, "x", "X"),))
        b = MultiLevelContext(long=(ContextEntry(1, "x", "X", score=2.0),))
        c = MultiLevelContext(short=(ContextEntry(1, "x", "Y"),))
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()
        assert a.to_dict()["short"] == [
            {"index": 1, "transcript": "x", "translation": "X"}
        ]

    @settings(max_examples=100, deadline=None)
    @given(
        i=st.integers(min_value=1, max_value=12),
        m=st.integers(min_value=0, max_value=5),
        n=st.integers(min_value=0, max_value=5),
        words=st.lists(st.sampled_from(["bank", "loan", "river", "rate"]), max_size=3),
    )
    def test_window_laws(self, i: int, m: int, n: int, words: list[str]) -> None:
        texts = [f"{TEXTS[j % len(TEXTS)]} {j}" for j in range(i - 1)]
        store = filled_store(texts)
        ctx = store.assemble_context(i, " ".join(words), m, n)
        short = [e.index for e in ctx.short]
        long = [e.index for e in ctx.long]
        assert short == list(range(max(1, i - m), i))
        assert len(long) <= n
        assert long == sorted(long)
        assert not set(short) & set(long)
        if short:
            assert all(j < short[0] for j in long)
        assert all(1 <= j < i for j in short + long)
        assert len(ctx) <= m + n

    def test_window_laws_exhaustive(self) -> None:
        queries = [
            " ".join(words)
            for words in product(["", "bank", "river"], ["", "loan", "rate"])
        ]
        queries += ["the", "interest rates", "fees", "the loan went up", "approved"]
        queries += ["river bank loan", "up up up"]
        cases = 0
        for i in range(1, 26):
            store = filled_store([f"{TEXTS[j % len(TEXTS)]} {j}" for j in range(i - 1)])
            for m, n, query in product(range(5), range(5), queries):
                ctx = store.assemble_context(i, query, m, n)
                short = [e.index for e in ctx.short]
                long = {e.index for e in ctx.long}
                assert len(short) == min(m, i - 1)
                assert long <= set(range(1, i - m))
                assert not long & set(short)
                cases += 1
        assert cases >= 10_000
