import math

from django.test import SimpleTestCase
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ..core import DuplicateSegmentError
from ..retrieval import Bm25Index, analyzer, tokenize

WORDS = [
    "cat", "dog", "bird", "fish", "tree", "sun", "moon", "river",
    "stone", "cloud", "rain", "wind", "fire", "road", "house", "bread",
]  # fmt: skip


def brute_force(
    texts: dict[int, str], query: str, pool: list[int], k1: float, b: float
) -> dict[int, float]:
    """Okapi BM25 evaluated from scratch for every pool member."""
    docs = {i: tokenize(t) for i, t in texts.items()}
    n = len(docs)
    avgdl = sum(len(d) for d in docs.values()) / n
    scores = {}
    for i in pool:
        score = 0.0
        for token in tokenize(query):
            df = sum(token in d for d in docs.values())
            tf = docs[i].count(token)
            if not df or not tf:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            dl = len(docs[i])
            score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
        scores[i] = score
    return scores


class TokenizeTest(SimpleTestCase):
    def test_split_and_lowercase(self) -> None:
        assert tokenize("Hello, World! It's 42_x") == [
            "hello",
            "world",
            "it",
            "s",
            "42",
            "x",
        ]
        assert tokenize("Straße ÄPFEL") == ["straße", "äpfel"]
        assert tokenize("") == []
        assert tokenize(" ... ") == []

    def test_stopwords(self) -> None:
        analyze = analyzer(stopwords=["The", "a"])
        assert analyze("The cat saw a dog") == ["cat", "saw", "dog"]

    def test_stemming(self) -> None:
        analyze = analyzer(stemming_language="en")
        assert analyze("Running runs") == ["run", "run"]

    def test_unknown_stemming_language(self) -> None:
        analyze = analyzer(stemming_language="tlh")
        assert analyze("Running") == ["running"]


class Bm25IndexTest(SimpleTestCase):
    def test_empty_index(self) -> None:
        index = Bm25Index()
        assert index.total_docs == 0
        assert index.avg_doc_len == 0.0
        assert index.top_n("cat", 3) == []

    def test_hand_computed_score(self) -> None:
        index = Bm25Index(k1=1.2, b=0.75)
        index.add_segment(1, "cat dog").add_segment(2, "dog")
        # idf = ln 2, avgdl = 1.5, dl = 2
        expected = math.log(2) * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 2 / 1.5))
        ((segment, score),) = index.top_n("cat", 5)
        assert segment == 1
        assert math.isclose(score, expected)

    def test_statistics(self) -> None:
        index = Bm25Index()
        index.add_segment(1, "a b c").add_segment(2, "a")
        assert index.total_docs == 2
        assert index.avg_doc_len == 2.0
        assert 1 in index
        assert 3 not in index
        assert index.idf("a") > 0
        assert index.idf("zzz") == 0.0

    def test_duplicate_segment(self) -> None:
        index = Bm25Index().add_segment(1, "cat")
        with self.assertRaises(DuplicateSegmentError):
            index.add_segment(1, "dog")

    def test_zero_scores_excluded(self) -> None:
        index = Bm25Index()
        for i, text in enumerate(["cat", "dog", "bird"], start=1):
            index.add_segment(i, text)
        assert index.top_n("fish", 3) == []
        assert [i for i, _ in index.top_n("dog", 3)] == [2]

    def test_ties_prefer_recent(self) -> None:
        index = Bm25Index()
        for i, text in enumerate(["cat", "dog", "cat", "cat"], start=1):
            index.add_segment(i, text)
        assert [i for i, _ in index.top_n("cat", 2)] == [4, 3]

    def test_pool(self) -> None:
        index = Bm25Index()
        for i, text in enumerate(["cat", "dog", "cat"], start=1):
            index.add_segment(i, text)
        assert [i for i, _ in index.top_n("cat", 3, pool=range(1, 3))] == [1]
        assert index.top_n("cat", 0) == []

    def test_five_document_ranking(self) -> None:
        texts = {
            1: "the cat sat on the mat",
            2: "dogs chase the cat",
            3: "a bird in the tree",
            4: "the cat and the dog and the cat",
            5: "sun over the tree",
        }
        index = Bm25Index(k1=1.2, b=0.75)
        for i, text in texts.items():
            index.add_segment(i, text)
        expected = brute_force(texts, "cat tree", list(texts), 1.2, 0.75)
        ranking = sorted(
            (i for i in expected if expected[i] > 0),
            key=lambda i: (-expected[i], -i),
        )
        assert [i for i, _ in index.top_n("cat tree", 5)] == ranking

    @settings(
        max_examples=300,
        deadline=None,
        suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
    )
    @given(
        texts=st.lists(
            st.lists(st.sampled_from(WORDS), max_size=20).map(" ".join),
            min_size=1,
            max_size=30,
        ),
        query=st.lists(st.sampled_from(WORDS), min_size=1, max_size=5).map(" ".join),
        n=st.integers(min_value=1, max_value=30),
        data=st.data(),
    )
    def test_matches_brute_force(
        self, texts: list[str], query: str, n: int, data: st.DataObject
    ) -> None:
        corpus = dict(enumerate(texts, start=1))
        pool = data.draw(st.lists(st.sampled_from(list(corpus)), unique=True))
        index = Bm25Index()
        for i, text in corpus.items():
            index.add_segment(i, text)
        if not any(tokenize(t) for t in texts):
            assert index.top_n(query, n, pool) == []
            return

        expected = brute_force(corpus, query, pool, 1.2, 0.75)
        ranked = index.top_n(query, n, pool)
        assert len(ranked) == min(n, sum(s > 0 for s in expected.values()))
        for i, score in ranked:
            assert math.isclose(score, expected[i], rel_tol=1e-9, abs_tol=1e-12)
        for (i, s), (j, t) in zip(ranked, ranked[1:], strict=False):
            assert s > t or (math.isclose(s, t) and i > j)
        if ranked:
            lowest = ranked[-1][1]
            returned = {i for i, _ in ranked}
            for i, score in expected.items():
                if score > lowest and not math.isclose(score, lowest):
                    assert i in returned
