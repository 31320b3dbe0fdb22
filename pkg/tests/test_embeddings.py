import numpy as np
import pytest

from ontoplace.embeddings import (
    ContextualMention,
    EmbeddingStore,
    TripletLossConfig,
    cosine,
    dot_score,
    embed_texts,
    search_concepts_embedding,
    search_edges_embedding,
    serialize_edge,
    serialize_mention,
    triplet_loss,
)
from ontoplace.errors import ProviderProtocolError
from ontoplace.ontology import Concept, Edge, Ontology


@pytest.fixture
def labelled_ontology():
    concepts = [
        Concept(id="a", label="A"),
        Concept(id="b", label="B"),
        Concept(
            id="x",
            label="complex x",
            complex=True,
            operator_tree={"some": ["DueTo", "Disease"]},
        ),
    ]
    return Ontology.from_pairs(concepts, {("a", "b"), ("x", "b")})


class TestSerializeMention:
    def test_no_context(self):
        m = ContextualMention(mention="CKD")
        assert serialize_mention(m) == "[CLS] [M_s] CKD [M_e] [SEP]"

    def test_markers_wrap_the_span(self):
        m = ContextualMention(
            mention="parathyroid carcinomas",
            context_left="an Italian cohort of 23 sporadic",
            context_right=", 12 atypical and 45 typical adenomas.",
        )
        text = serialize_mention(m)
        assert "[M_s] parathyroid carcinomas [M_e]" in text
        assert text.startswith("[CLS] ")
        assert text.endswith(" [SEP]")

    def test_budget_enforced(self):
        m = ContextualMention(
            mention="CKD",
            context_left=" ".join(f"l{i}" for i in range(50)),
            context_right=" ".join(f"r{i}" for i in range(50)),
        )
        text = serialize_mention(m, max_context_subtokens=32)
        assert len(text.split()) <= 32

    def test_truncation_keeps_words_nearest_the_mention(self):
        m = ContextualMention(
            mention="X",
            context_left="far1 far2 near1 near2",
            context_right="rnear1 rnear2 rfar1 rfar2",
        )
        text = serialize_mention(m, max_context_subtokens=9)
        # 5 fixed tokens put 2 on each side
        assert text == "[CLS] near1 near2 [M_s] X [M_e] rnear1 rnear2 [SEP]"

    def test_without_context_flag(self):
        m = ContextualMention(mention="CKD", context_left="left", context_right="right")
        assert serialize_mention(m, with_context=False) == "[CLS] [M_s] CKD [M_e] [SEP]"

    def test_unbalanced_contexts_reuse_spare_budget(self):
        m = ContextualMention(
            mention="X",
            context_left="",
            context_right=" ".join(f"r{i}" for i in range(10)),
        )
        text = serialize_mention(m, max_context_subtokens=11)
        assert len(text.split()) == 11
        assert "r5" in text


class TestSerializeEdge:
    def test_plain_edge(self, labelled_ontology):
        got = serialize_edge(labelled_ontology, Edge("a", "b"))
        assert got == "[CLS] A [P-TAG] B [C-TAG] [SEP]"

    def test_leaf_edge_uses_null_token(self, labelled_ontology):
        got = serialize_edge(labelled_ontology, Edge("a", None))
        assert got == "[CLS] A [P-TAG] [NULL] [C-TAG] [SEP]"

    def test_complex_parent_is_verbalized(self, labelled_ontology):
        got = serialize_edge(labelled_ontology, Edge("x", "b"))
        assert got == "[CLS] DueTo some Disease [P-TAG] B [C-TAG] [SEP]"

    def test_dangling_endpoint(self, labelled_ontology):
        from ontoplace.errors import DanglingEdgeError

        with pytest.raises(DanglingEdgeError):
            serialize_edge(labelled_ontology, Edge("zz", "b"))

    def test_budget_enforced(self):
        long_label = " ".join(f"w{i}" for i in range(100))
        onto = Ontology.from_pairs(
            [Concept(id="p", label=long_label), Concept(id="c", label=long_label)],
            {("p", "c")},
        )
        got = serialize_edge(onto, Edge("p", "c"), max_subtokens=40)
        assert len(got.split()) <= 40


class TestSimilarities:
    def test_cosine_identical(self):
        assert cosine(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 1.0

    def test_cosine_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_cosine_45_degrees(self):
        got = cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert got == pytest.approx(0.7071067811865475, abs=1e-6)

    def test_cosine_zero_norm(self):
        with pytest.raises(ValueError):
            cosine(np.zeros(2), np.array([1.0, 0.0]))

    def test_cosine_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cosine(np.ones(2), np.ones(3))

    def test_cosine_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            u, v = rng.standard_normal(8), rng.standard_normal(8)
            assert cosine(u, v) == pytest.approx(cosine(v, u), abs=1e-15)

    def test_dot_orthogonal(self):
        assert dot_score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_dot_unit_self(self):
        v = np.array([1.0, 0.0])
        assert dot_score(v, v) == 1.0

    def test_dot_arithmetic(self):
        assert dot_score(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0

    def test_dot_dimension_mismatch(self):
        with pytest.raises(ValueError):
            dot_score(np.ones(2), np.ones(3))

    def test_cosine_ranking_scale_invariant(self):
        rng = np.random.default_rng(9)
        mention = rng.standard_normal(6)
        vectors = {f"c{i}": rng.standard_normal(6) for i in range(10)}
        base = sorted(vectors, key=lambda c: -cosine(mention, vectors[c]))
        scaled = sorted(vectors, key=lambda c: -cosine(mention, 3.7 * vectors[c]))
        assert base == scaled


class TestTripletLoss:
    def m(self):
        return np.array([1.0, 0.0])

    def test_inactive_hinge(self):
        loss = triplet_loss(
            self.m(), np.array([1.0, 0.0]), [np.array([0.5, 0.0])], TripletLossConfig(0.2)
        )
        assert loss == 0.0

    def test_active_hinge(self):
        loss = triplet_loss(
            self.m(), np.array([1.0, 0.0]), [np.array([0.9, 0.0])], TripletLossConfig(0.2)
        )
        assert loss == pytest.approx(0.1, abs=1e-12)

    def test_no_negatives(self):
        assert triplet_loss(self.m(), np.array([1.0, 0.0]), []) == 0.0

    def test_zero_iff_all_negatives_below_margin_gap(self):
        rng = np.random.default_rng(13)
        cfg = TripletLossConfig(0.2)
        for _ in range(100):
            v_m = rng.standard_normal(4)
            gold = rng.standard_normal(4)
            negatives = [rng.standard_normal(4) for _ in range(5)]
            loss = triplet_loss(v_m, gold, negatives, cfg)
            gold_score = dot_score(v_m, gold)
            all_below = all(
                dot_score(v_m, n) <= gold_score - cfg.margin for n in negatives
            )
            assert (loss == 0.0) == all_below

    def test_monotone_in_negative_score(self):
        v_m = np.array([1.0, 0.0])
        gold = np.array([1.0, 0.0])
        losses = [
            triplet_loss(v_m, gold, [np.array([s, 0.0])], TripletLossConfig(0.2))
            for s in np.linspace(-1, 2, 25)
        ]
        assert all(b >= a for a, b in zip(losses, losses[1:]))

    def test_margin_validation(self):
        with pytest.raises(ValueError):
            TripletLossConfig(-0.1)
        with pytest.raises(ValueError):
            TripletLossConfig(float("nan"))


class TestEmbeddingStore:
    def test_put_get(self):
        store = EmbeddingStore()
        store.put("k", np.array([1.0, 2.0]))
        assert store.get("k").tolist() == [1.0, 2.0]

    def test_dimension_enforced(self):
        store = EmbeddingStore()
        store.put("k", np.ones(3))
        with pytest.raises(ValueError):
            store.put("k2", np.ones(4))

    def test_non_finite_rejected(self):
        store = EmbeddingStore()
        with pytest.raises(ValueError):
            store.put("k", np.array([1.0, float("inf")]))

    def test_save_load_round_trip(self, tmp_path):
        store = EmbeddingStore()
        store.put("alpha", np.array([1.5, -2.25]))
        store.put("beta gamma", np.array([0.1, 0.2]))
        path = tmp_path / "store.tsv"
        store.save(str(path))
        loaded = EmbeddingStore.load(str(path))
        assert loaded.dim == 2
        assert loaded.get("alpha").tolist() == [1.5, -2.25]
        assert loaded.get("beta gamma").tolist() == [0.1, 0.2]

    def test_tab_in_key_rejected_on_save(self, tmp_path):
        store = EmbeddingStore()
        store.put("bad\tkey", np.ones(2))
        with pytest.raises(ValueError):
            store.save(str(tmp_path / "s.tsv"))


class CountingClient:
    """Deterministic fake provider that counts embed calls."""

    def __init__(self, dim=4):
        self.dim = dim
        self.calls = 0
        self.texts_seen = []

    def embed(self, texts):
        self.calls += 1
        self.texts_seen.extend(texts)
        return [np.full(self.dim, float(len(t))) for t in texts]


class MiscountingClient:
    def embed(self, texts):
        return [np.zeros(2)] * (len(texts) + 1)


class TestEmbedTexts:
    def test_order_preserved(self):
        client = CountingClient()
        vectors = embed_texts(client, ["ab", "c"], EmbeddingStore())
        assert vectors[0][0] == 2.0
        assert vectors[1][0] == 1.0

    def test_second_request_hits_cache(self):
        client = CountingClient()
        store = EmbeddingStore()
        embed_texts(client, ["x", "y"], store)
        assert client.calls == 1
        embed_texts(client, ["x", "y"], store)
        assert client.calls == 1

    def test_partial_cache_only_fetches_misses(self):
        client = CountingClient()
        store = EmbeddingStore()
        embed_texts(client, ["x"], store)
        embed_texts(client, ["x", "y"], store)
        assert client.texts_seen == ["x", "y"]

    def test_count_mismatch_is_protocol_error(self):
        with pytest.raises(ProviderProtocolError):
            embed_texts(MiscountingClient(), ["a", "b"], EmbeddingStore())

    def test_empty_texts_rejected(self):
        with pytest.raises(ValueError):
            embed_texts(CountingClient(), [], EmbeddingStore())

    def test_parallel_batches_fill_store(self):
        client = CountingClient()
        store = EmbeddingStore()
        texts = [f"t{i}" for i in range(10)]
        embed_texts(client, texts, store, parallelism=4, batch_size=2)
        assert len(store) == 10


class TestVectorSearch:
    def test_single_concept(self):
        store = EmbeddingStore()
        store.put("m", np.array([1.0, 0.0]))
        store.put("c-key", np.array([0.5, 0.5]))
        got = search_concepts_embedding(store, "m", {"c": "c-key"}, 5)
        assert [cid for cid, _ in got] == ["c"]

    def test_identical_vector_scores_one(self):
        store = EmbeddingStore()
        store.put("m", np.array([0.3, 0.4]))
        store.put("same", np.array([0.3, 0.4]))
        store.put("other", np.array([-1.0, 0.0]))
        got = search_concepts_embedding(store, "m", {"a": "same", "b": "other"}, 2)
        assert got[0][0] == "a"
        assert got[0][1] == pytest.approx(1.0, abs=1e-12)

    def test_matches_exhaustive_cosine_oracle(self):
        rng = np.random.default_rng(21)
        store = EmbeddingStore()
        store.put("m", rng.standard_normal(8))
        keys = {}
        for i in range(20):
            key = f"vec{i}"
            store.put(key, rng.standard_normal(8))
            keys[f"c{i:02d}"] = key
        got = search_concepts_embedding(store, "m", keys, 20)
        brute = sorted(
            ((cid, cosine(store.get("m"), store.get(k))) for cid, k in keys.items()),
            key=lambda item: (-item[1], item[0]),
        )
        assert got == brute

    def test_missing_key(self):
        store = EmbeddingStore()
        store.put("m", np.ones(2))
        with pytest.raises(KeyError):
            search_concepts_embedding(store, "m", {"c": "absent"}, 1)

    def test_edge_search_matches_dot_oracle(self):
        rng = np.random.default_rng(29)
        store = EmbeddingStore()
        store.put("m", rng.standard_normal(4))
        edge_keys = {}
        for i in range(15):
            edge = Edge(f"p{i:02d}", None if i % 3 == 0 else f"c{i:02d}")
            key = f"e{i}"
            store.put(key, rng.standard_normal(4))
            edge_keys[edge] = key
        got = search_edges_embedding(store, "m", edge_keys, 15)
        brute = sorted(
            (
                (e, dot_score(store.get("m"), store.get(k)))
                for e, k in edge_keys.items()
            ),
            key=lambda item: (-item[1], item[0].sort_key()),
        )
        assert got == brute

    def test_dot_ranking_scale_invariant_for_edge_vectors(self):
        rng = np.random.default_rng(31)
        store_a = EmbeddingStore()
        store_b = EmbeddingStore()
        mention = rng.standard_normal(5)
        store_a.put("m", mention)
        store_b.put("m", mention)
        edge_keys = {}
        for i in range(12):
            edge = Edge(f"p{i:02d}", f"c{i:02d}")
            vec = rng.standard_normal(5)
            store_a.put(f"e{i}", vec)
            store_b.put(f"e{i}", 2.5 * vec)
            edge_keys[edge] = f"e{i}"
        rank_a = [e for e, _ in search_edges_embedding(store_a, "m", edge_keys, 12)]
        rank_b = [e for e, _ in search_edges_embedding(store_b, "m", edge_keys, 12)]
        assert rank_a == rank_b
