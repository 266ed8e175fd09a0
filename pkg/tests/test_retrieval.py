import random

import pytest

from kdmn.kgstore import KnowledgeGraph, Triple
from kdmn.retrieval import (ContextQuery, RetrievalConfig, WeightedSubgraph,
                            build_first_order_subgraph, extract_keywords,
                            format_ranked, init_node_weights,
                            make_context_query, propagate_scores, retrieve,
                            score_edges, select_top_n)

from oracles import oracle_edge_weights, oracle_scores, oracle_top_n


def path_graph():
    g = KnowledgeGraph()
    g.add("a", "UsedFor", "b")
    g.add("b", "UsedFor", "c")
    return g


def path_query():
    return ContextQuery(visual_mentions=[("a", 1.0), ("b", 1.0), ("c", 1.0)])


class TestExtractKeywords:
    def test_stopwords_removed(self):
        assert extract_keywords("What is the giraffe eating?") == \
            ["giraffe", "eating"]

    def test_splits_on_underscores_and_digits_kept(self):
        assert extract_keywords("use_3 there") == ["use", "3"]

    def test_order_and_duplicates_preserved(self):
        assert extract_keywords("dog chases dog") == ["dog", "chases", "dog"]


class TestConfig:
    def test_defaults(self):
        cfg = RetrievalConfig()
        assert (cfg.decay, cfg.max_hops, cfg.top_n) == (0.5, 3, 20)

    @pytest.mark.parametrize("kwargs", [
        {"decay": 0.0}, {"decay": 1.0}, {"max_hops": 0}, {"top_n": 0},
    ])
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            RetrievalConfig(**kwargs)


class TestContextQuery:
    def test_objects_linked_and_filtered(self):
        g = path_graph()
        q = make_context_query(g, [("A", 2.0), ("zebra", 1.0)], "")
        assert q.visual_mentions == [("a", 2.0)]

    def test_question_keywords_linked(self):
        g = KnowledgeGraph()
        g.add("hot dog", "IsA", "food")
        q = make_context_query(g, [], "is this a hot dog?")
        assert q.textual_mentions == ["hot_dog"]

    def test_negative_area_rejected(self):
        with pytest.raises(ValueError):
            make_context_query(path_graph(), [("a", -1.0)], "")


class TestNodeWeights:
    def test_visual_rescaled_to_mass(self):
        q = ContextQuery(visual_mentions=[("a", 3.0), ("b", 1.0)])
        w = init_node_weights(q, total_visual_mass=2.0)
        assert w == {"a": 1.5, "b": 0.5}

    def test_all_zero_areas_split_uniformly(self):
        q = ContextQuery(visual_mentions=[("a", 0.0), ("b", 0.0)])
        assert init_node_weights(q, 1.0) == {"a": 0.5, "b": 0.5}

    def test_textual_equal_shares_sum_to_one(self):
        q = ContextQuery(textual_mentions=["a", "b", "c", "a"])
        w = init_node_weights(q)
        assert sum(w.values()) == pytest.approx(1.0)
        assert w["a"] == pytest.approx(0.5)

    def test_visual_and_textual_accumulate(self):
        q = ContextQuery(visual_mentions=[("a", 1.0)], textual_mentions=["a"])
        assert init_node_weights(q, 1.0) == {"a": 2.0}


class TestSubgraph:
    def test_keeps_only_mention_incident_edges(self):
        g = path_graph()
        g.add("x", "UsedFor", "y")
        sub = build_first_order_subgraph(g, ContextQuery(
            visual_mentions=[("a", 1.0)]))
        assert sub.edges == [Triple("a", "UsedFor", "b")]
        assert sub.weights == {"a": 1.0, "b": 0.0}

    def test_empty_when_no_mentions_match(self):
        sub = build_first_order_subgraph(path_graph(), ContextQuery())
        assert sub.is_empty()


class TestPathFixture:
    """3-node path a - b - c, every node weight 1: score(b) = 2, the ends
    score 1.75, both edges weigh 3.75."""

    def test_scores(self):
        sub = build_first_order_subgraph(path_graph(), path_query(),
                                         total_visual_mass=3.0)
        scores = propagate_scores(sub, RetrievalConfig())
        assert scores["b"] == pytest.approx(2.0, abs=1e-12)
        assert scores["a"] == pytest.approx(1.75, abs=1e-12)
        assert scores["c"] == pytest.approx(1.75, abs=1e-12)

    def test_edge_weights(self):
        ranked = retrieve(path_graph(), path_query(), RetrievalConfig(),
                          total_visual_mass=3.0)
        assert [w for _, w in ranked.triples] == pytest.approx([3.75, 3.75])

    def test_formatting(self):
        ranked = retrieve(path_graph(), path_query(), RetrievalConfig(),
                          total_visual_mass=3.0)
        assert format_ranked(ranked) == (
            "a\tUsedFor\tb\t3.75\nb\tUsedFor\tc\t3.75\n")


def random_subgraph(rng: random.Random):
    n_nodes = rng.randint(2, 12)
    nodes = [f"n{i}" for i in range(n_nodes)]
    n_edges = rng.randint(1, 20)
    triples = []
    seen = set()
    for _ in range(n_edges):
        h, t = rng.choice(nodes), rng.choice(nodes)
        rel = rng.choice(["r1", "r2"])
        if (h, rel, t) not in seen:
            seen.add((h, rel, t))
            triples.append(Triple(h, rel, t))
    weights = {}
    for t in triples:
        weights.setdefault(t.head, 0.0)
        weights.setdefault(t.tail, 0.0)
    for node in weights:
        weights[node] = rng.uniform(0.0, 2.0)
    return WeightedSubgraph(weights=weights, edges=triples)


class TestScoringOracle:
    def test_random_graphs_match_brute_force(self):
        rng = random.Random(20240817)
        for trial in range(200):
            sub = random_subgraph(rng)
            decay = rng.choice([0.3, 0.5, 0.9])
            max_hops = rng.choice([1, 2, 3, 12])
            cfg = RetrievalConfig(decay=decay, max_hops=max_hops, top_n=20)
            scores = propagate_scores(sub, cfg)
            pairs = [(t.head, t.tail) for t in sub.edges]
            expected = oracle_scores(sub.weights, pairs, decay, max_hops)
            assert set(scores) == set(expected)
            for node in expected:
                assert scores[node] == pytest.approx(expected[node], abs=1e-9), \
                    f"trial {trial} node {node}"
            edge_w = score_edges(sub, scores)
            expected_edges = oracle_edge_weights(expected, sub.edges)
            for t in expected_edges:
                assert edge_w[t] == pytest.approx(expected_edges[t], abs=1e-9)
            n = rng.randint(1, len(sub.edges))
            assert select_top_n(edge_w, n).triples == oracle_top_n(edge_w, n)

    def test_uncapped_reference_on_small_diameter(self):
        # max_hops beyond the diameter equals the unbounded sum
        rng = random.Random(7)
        for _ in range(20):
            sub = random_subgraph(rng)
            big = propagate_scores(sub, RetrievalConfig(decay=0.5, max_hops=12))
            pairs = [(t.head, t.tail) for t in sub.edges]
            expected = oracle_scores(sub.weights, pairs, 0.5, 10 ** 9)
            for node in expected:
                assert big[node] == pytest.approx(expected[node], abs=1e-9)


class TestScoringProperties:
    def test_monotone_in_decay(self):
        sub = build_first_order_subgraph(path_graph(), path_query(), 3.0)
        low = propagate_scores(sub, RetrievalConfig(decay=0.3))
        high = propagate_scores(sub, RetrievalConfig(decay=0.9))
        assert all(high[n] >= low[n] for n in low)

    def test_scale_equivariance(self):
        rng = random.Random(3)
        sub = random_subgraph(rng)
        cfg = RetrievalConfig()
        base = propagate_scores(sub, cfg)
        doubled = WeightedSubgraph(
            weights={n: 2.0 * w for n, w in sub.weights.items()},
            edges=sub.edges)
        twice = propagate_scores(doubled, cfg)
        for node in base:
            assert twice[node] == pytest.approx(2.0 * base[node], rel=1e-12)

    def test_edge_weight_symmetric_under_reversal(self):
        g1 = KnowledgeGraph()
        g1.add("a", "r", "b")
        g2 = KnowledgeGraph()
        g2.add("b", "r", "a")
        q = ContextQuery(visual_mentions=[("a", 1.0), ("b", 2.0)])
        cfg = RetrievalConfig()
        w1 = score_edges(*(lambda s: (s, propagate_scores(s, cfg)))(
            build_first_order_subgraph(g1, q)))
        w2 = score_edges(*(lambda s: (s, propagate_scores(s, cfg)))(
            build_first_order_subgraph(g2, q)))
        assert list(w1.values()) == pytest.approx(list(w2.values()))


class TestSelectTopN:
    def test_ties_break_lexicographically(self):
        weights = {Triple("b", "r", "c"): 1.0,
                   Triple("a", "r", "z"): 1.0,
                   Triple("a", "r", "b"): 1.0}
        ranked = select_top_n(weights, 2)
        assert ranked.bare_triples() == [Triple("a", "r", "b"),
                                         Triple("a", "r", "z")]

    def test_fewer_edges_than_n(self):
        weights = {Triple("a", "r", "b"): 1.0}
        assert len(select_top_n(weights, 5)) == 1

    def test_bad_n(self):
        with pytest.raises(ValueError):
            select_top_n({}, 0)


class TestRetrieve:
    def test_empty_subgraph_gives_empty_ranking(self):
        ranked = retrieve(path_graph(), ContextQuery())
        assert ranked.is_empty()
        assert ranked.bare_triples() == []

    def test_question_only_retrieval(self):
        g = path_graph()
        ranked = retrieve(g, make_context_query(g, [], "what is b for?"))
        assert set(ranked.bare_triples()) == set(g.triples)
