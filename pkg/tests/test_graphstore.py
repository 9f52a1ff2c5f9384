import numpy as np
import pytest

from paretossl.errors import ConfigError, FormatError, SamplingError
from paretossl.graphstore import (
    AugmentationSpec,
    Graph,
    apply_augmentation,
    drop_edges,
    generate_sbm,
    greedy_partition,
    k_hop_sample,
    load_graph,
    mask_features,
    save_graph,
    shuffle_features,
    split_edges,
    uniform_node_sample,
    whole_graph_sample,
)
from paretossl.numcore import SparseAdjacency


def _toy_graph(n, pairs, d=2, labels=None):
    return Graph(n, SparseAdjacency.from_edges(n, pairs),
                 np.arange(n * d, dtype=np.float64).reshape(n, d),
                 None if labels is None else np.asarray(labels, dtype=np.int64))


def _two_cliques():
    pairs = [(u, v) for u in range(6) for v in range(u + 1, 6)]
    pairs += [(u + 6, v + 6) for u in range(6) for v in range(u + 1, 6)]
    return _toy_graph(12, pairs)


# ---------------------------------------------------------------------------
# generator


def test_sbm_degenerate_probabilities():
    g = generate_sbm(1, 2, 4, 1.0, 0.0, 2, 0.0)
    # round-robin labels [0,1,0,1]; only intra pairs (0,2) and (1,3) exist
    assert np.array_equal(g.labels, [0, 1, 0, 1])
    assert g.num_edges == 2
    assert g.adjacency.has_edge(0, 2) and g.adjacency.has_edge(1, 3)
    assert not g.adjacency.has_edge(0, 1)
    expected = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    assert np.array_equal(g.features, expected)


def test_sbm_edge_count_in_binomial_window():
    g = generate_sbm(7, 3, 600, 0.05, 0.005, 16, 0.5)
    # 3*C(200,2)*0.05 + 120000*0.005 = 3585, sd ~58.6
    assert 3410 <= g.num_edges <= 3760


def test_sbm_deterministic():
    a = generate_sbm(3, 2, 50, 0.2, 0.05, 4, 0.3)
    b = generate_sbm(3, 2, 50, 0.2, 0.05, 4, 0.3)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.adjacency.col_indices, b.adjacency.col_indices)
    assert np.array_equal(a.labels, b.labels)


def test_sbm_rejects_bad_config():
    with pytest.raises(ConfigError):
        generate_sbm(0, 5, 3, 0.1, 0.1, 2, 0.0)
    with pytest.raises(ConfigError):
        generate_sbm(0, 1, 10, 0.1, 0.1, 2, 0.0)
    with pytest.raises(ConfigError):
        generate_sbm(0, 2, 10, 1.5, 0.1, 2, 0.0)


# ---------------------------------------------------------------------------
# on-disk format


def test_save_load_round_trip(tmp_path):
    g = generate_sbm(5, 3, 30, 0.3, 0.05, 4, 0.7)
    save_graph(g, tmp_path / "g")
    h = load_graph(tmp_path / "g")
    assert h.n == g.n
    assert np.array_equal(h.features, g.features)
    assert np.array_equal(h.labels, g.labels)
    assert np.array_equal(h.adjacency.col_indices, g.adjacency.col_indices)
    assert np.array_equal(h.adjacency.row_offsets, g.adjacency.row_offsets)


def test_load_toy_directory(tmp_path):
    d = tmp_path / "toy"
    d.mkdir()
    (d / "meta.txt").write_text("n=2\nd=1\nhas_labels=0\n")
    (d / "edges.tsv").write_text("0\t1\n")
    (d / "features.tsv").write_text("0.5\n-1.25\n")
    g = load_graph(d)
    assert g.n == 2 and g.num_edges == 1
    assert g.adjacency.has_edge(0, 1)
    assert np.array_equal(g.features, [[0.5], [-1.25]])
    assert g.labels is None


def test_load_rejects_out_of_range_edge(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "meta.txt").write_text("n=2\nd=1\nhas_labels=0\n")
    (d / "edges.tsv").write_text("0\t2\n")
    (d / "features.tsv").write_text("0\n0\n")
    with pytest.raises(FormatError, match="line 1"):
        load_graph(d)


def test_load_rejects_unordered_edge(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "meta.txt").write_text("n=3\nd=1\nhas_labels=0\n")
    (d / "edges.tsv").write_text("0\t1\n2\t1\n")
    (d / "features.tsv").write_text("0\n0\n0\n")
    with pytest.raises(FormatError, match="line 2"):
        load_graph(d)


def test_load_missing_file(tmp_path):
    with pytest.raises(FormatError, match="meta.txt"):
        load_graph(tmp_path)


def test_load_feature_count_mismatch(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "meta.txt").write_text("n=3\nd=1\nhas_labels=0\n")
    (d / "edges.tsv").write_text("")
    (d / "features.tsv").write_text("0\n0\n")
    with pytest.raises(FormatError, match="features"):
        load_graph(d)


# ---------------------------------------------------------------------------
# sampling


def test_k_hop_on_path():
    g = _toy_graph(3, [(0, 1), (1, 2)])
    s = k_hop_sample(g, [0], 1)
    assert np.array_equal(s.node_ids, [0, 1])
    assert np.array_equal(s.seed_ids, [0])
    assert s.adjacency.num_edges == 1


def test_k_hop_saturates_with_all_seeds():
    g = generate_sbm(2, 2, 40, 0.2, 0.05, 4, 0.1)
    s = k_hop_sample(g, np.arange(40), 3)
    assert np.array_equal(s.node_ids, np.arange(40))
    assert s.adjacency.num_edges == g.num_edges


def test_k_hop_matches_bfs_oracle():
    g = generate_sbm(9, 3, 90, 0.08, 0.01, 4, 0.2)
    seeds = [4, 17]
    s = k_hop_sample(g, seeds, 2)
    # brute-force: two rounds of neighbor expansion
    reach = set(seeds)
    for _ in range(2):
        reach |= {int(w) for u in list(reach) for w in g.adjacency.neighbors(u)}
    assert set(s.node_ids.tolist()) == reach
    # induced-closure: every sample edge exists in the parent
    for i, j in s.adjacency.edge_pairs():
        u, v = s.node_ids[i], s.node_ids[j]
        assert g.adjacency.has_edge(u, v)


def test_k_hop_zero_returns_whole_graph():
    g = _toy_graph(5, [(0, 1), (2, 3)])
    s = k_hop_sample(g, [4], 0)
    assert np.array_equal(s.node_ids, np.arange(5))
    assert np.array_equal(s.seed_ids, [4])


def test_k_hop_rejects_empty_seeds():
    g = _toy_graph(3, [(0, 1)])
    with pytest.raises(ValueError):
        k_hop_sample(g, [], 1)


def test_uniform_sample_whole_and_single():
    g = _toy_graph(6, [(0, 1), (1, 2), (3, 4)])
    s = uniform_node_sample(g, 6, 0)
    assert np.array_equal(s.node_ids, np.arange(6))
    assert s.adjacency.num_edges == 3
    s1 = uniform_node_sample(g, 1, 0)
    assert s1.n == 1 and s1.adjacency.num_edges == 0


def test_uniform_sample_deterministic():
    g = generate_sbm(4, 2, 50, 0.2, 0.02, 4, 0.1)
    a = uniform_node_sample(g, 20, 123)
    b = uniform_node_sample(g, 20, 123)
    assert np.array_equal(a.node_ids, b.node_ids)
    assert np.array_equal(a.features, b.features)
    with pytest.raises(ValueError):
        uniform_node_sample(g, 0, 1)
    with pytest.raises(ValueError):
        uniform_node_sample(g, 51, 1)


def test_induced_features_match_parent():
    g = generate_sbm(4, 2, 50, 0.2, 0.02, 4, 0.1)
    s = uniform_node_sample(g, 20, 5)
    assert np.array_equal(s.features, g.features[s.node_ids])
    assert np.array_equal(s.node_ids, np.sort(np.unique(s.node_ids)))


# ---------------------------------------------------------------------------
# augmentation


def test_drop_edges_zero_is_identity():
    s = whole_graph_sample(_toy_graph(4, [(0, 1), (1, 2), (2, 3)]))
    out = drop_edges(s, 0.0, np.random.default_rng(0))
    assert out.adjacency.num_edges == 3


def test_drop_edges_can_empty_a_triangle():
    s = whole_graph_sample(_toy_graph(3, [(0, 1), (0, 2), (1, 2)]))
    out = drop_edges(s, 0.99, np.random.default_rng(0))
    assert out.adjacency.num_edges == 0
    assert out.n == 3
    assert np.array_equal(out.node_ids, s.node_ids)


def test_drop_edges_binomial_window():
    # exactly 10000 edges; survivors at ratio 0.35 within 3 sd of 6500
    rng = np.random.default_rng(99)
    pairs = set()
    while len(pairs) < 10000:
        u, v = rng.integers(0, 1000, 2)
        if u != v:
            pairs.add((min(u, v), max(u, v)))
    g = Graph(1000, SparseAdjacency.from_edges(1000, sorted(pairs), check=False),
              np.zeros((1000, 1)))
    s = whole_graph_sample(g)
    out = drop_edges(s, 0.35, np.random.default_rng(7))
    assert 6357 <= out.adjacency.num_edges <= 6643


def test_drop_edges_never_creates_edges():
    g = generate_sbm(6, 2, 40, 0.3, 0.05, 3, 0.1)
    s = whole_graph_sample(g)
    out = drop_edges(s, 0.5, np.random.default_rng(3))
    for u, v in out.adjacency.edge_pairs():
        assert g.adjacency.has_edge(u, v)


def test_mask_features_counts():
    g = _toy_graph(10, [(0, 1)])
    s = whole_graph_sample(g)
    _, none = mask_features(s, 0.0, np.random.default_rng(0))
    assert none.sum() == 0
    out, mask = mask_features(s, 0.5, np.random.default_rng(0))
    assert mask.sum() == 5
    assert np.all(out.features[mask] == 0.0)
    assert np.array_equal(out.features[~mask], s.features[~mask])
    # floor would give zero rows; at least one must be masked
    _, atleast = mask_features(s, 0.05, np.random.default_rng(0))
    assert atleast.sum() == 1


def test_mask_features_replay():
    g = generate_sbm(8, 2, 30, 0.2, 0.05, 4, 0.2)
    s = whole_graph_sample(g)
    _, m1 = mask_features(s, 0.4, np.random.default_rng(11))
    _, m2 = mask_features(s, 0.4, np.random.default_rng(11))
    assert np.array_equal(m1, m2)


def test_shuffle_features_preserves_multiset():
    g = generate_sbm(10, 2, 20, 0.2, 0.05, 3, 0.3)
    s = whole_graph_sample(g)
    out = shuffle_features(s, np.random.default_rng(2))
    before = sorted(map(tuple, s.features))
    after = sorted(map(tuple, out.features))
    assert before == after
    assert out.adjacency is s.adjacency
    one = whole_graph_sample(_toy_graph(1, []))
    assert np.array_equal(shuffle_features(one, np.random.default_rng(0)).features,
                          one.features)


def test_shuffle_features_deterministic():
    g = generate_sbm(10, 2, 20, 0.2, 0.05, 3, 0.3)
    s = whole_graph_sample(g)
    a = shuffle_features(s, np.random.default_rng(5))
    b = shuffle_features(s, np.random.default_rng(5))
    assert np.array_equal(a.features, b.features)


def test_augmentation_spec_validation():
    AugmentationSpec(0.5, 0.35, 2, 100)
    with pytest.raises(ConfigError):
        AugmentationSpec(feature_mask_ratio=1.0)
    with pytest.raises(ConfigError):
        AugmentationSpec(edge_drop_ratio=-0.1)
    with pytest.raises(ConfigError):
        AugmentationSpec(hop_order=-1)
    with pytest.raises(ConfigError):
        AugmentationSpec(seed_count=0)


def test_apply_augmentation_full_replay():
    g = generate_sbm(12, 3, 60, 0.1, 0.02, 4, 0.2)
    spec = AugmentationSpec(0.3, 0.2, 2, 10)
    s1, m1 = apply_augmentation(g, spec, np.random.default_rng(77))
    s2, m2 = apply_augmentation(g, spec, np.random.default_rng(77))
    assert np.array_equal(s1.node_ids, s2.node_ids)
    assert np.array_equal(s1.features, s2.features)
    assert np.array_equal(m1, m2)
    full, mask = apply_augmentation(g, AugmentationSpec(), np.random.default_rng(0))
    assert full.n == g.n and mask.sum() == 0


# ---------------------------------------------------------------------------
# edge split


def test_split_triangle_all_train():
    g = _toy_graph(3, [(0, 1), (0, 2), (1, 2)])
    with pytest.raises(SamplingError):
        # K3 is complete: no non-edges exist for negatives
        split_edges(g, (1.0, 0.0, 0.0), 0)


def test_split_counts_and_negatives():
    rng = np.random.default_rng(1)
    pairs = set()
    while len(pairs) < 1000:
        u, v = rng.integers(0, 200, 2)
        if u != v:
            pairs.add((min(u, v), max(u, v)))
    g = Graph(200, SparseAdjacency.from_edges(200, sorted(pairs), check=False),
              np.zeros((200, 2)))
    split = split_edges(g, (0.7, 0.1, 0.2), 42)
    assert abs(len(split.train_pos) - 700) <= 1
    assert abs(len(split.val_pos) - 100) <= 1
    total = len(split.train_pos) + len(split.val_pos) + len(split.test_pos)
    assert total == 1000
    # negatives: true non-edges, one per positive, disjoint across splits
    negs = np.concatenate([split.train_neg, split.val_neg, split.test_neg])
    assert len(negs) == 1000
    seen = set()
    for u, v in negs:
        assert not g.adjacency.has_edge(u, v)
        assert u != v
        assert (u, v) not in seen
        seen.add((u, v))
    # leakage guard: train graph has no val/test edge
    for u, v in np.concatenate([split.val_pos, split.test_pos]):
        assert not split.train_graph.adjacency.has_edge(u, v)
    for u, v in split.train_pos:
        assert split.train_graph.adjacency.has_edge(u, v)


def test_split_deterministic():
    g = generate_sbm(3, 2, 80, 0.2, 0.02, 4, 0.1)
    a = split_edges(g, (0.7, 0.1, 0.2), 9)
    b = split_edges(g, (0.7, 0.1, 0.2), 9)
    assert np.array_equal(a.train_pos, b.train_pos)
    assert np.array_equal(a.test_neg, b.test_neg)


def test_split_rejects_bad_ratios():
    g = _toy_graph(4, [(0, 1)])
    with pytest.raises(ValueError):
        split_edges(g, (0.5, 0.5, 0.5), 0)


# ---------------------------------------------------------------------------
# partitioning


def test_partition_separates_cliques():
    g = _two_cliques()
    labels = greedy_partition(g, 2, 0)
    # the zero-cut balanced 2-partition is unique up to part swap
    assert len(set(labels[:6])) == 1
    assert len(set(labels[6:])) == 1
    assert labels[0] != labels[6]
    cut = sum(labels[u] != labels[v] for u, v in g.adjacency.edge_pairs())
    assert cut == 0


def test_partition_each_node_own_part():
    g = _toy_graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
    labels = greedy_partition(g, 6, 3)
    assert np.array_equal(np.bincount(labels, minlength=6), np.ones(6))


def test_partition_balance_on_sbm():
    g = generate_sbm(7, 3, 600, 0.05, 0.005, 16, 0.5)
    labels = greedy_partition(g, 10, 1)
    sizes = np.bincount(labels, minlength=10)
    assert sizes.min() >= 1
    assert sizes.max() <= 1.5 * 60
    assert sizes.min() >= 60 / 1.5


def test_partition_validation_and_determinism():
    g = _toy_graph(5, [(0, 1), (1, 2)])
    with pytest.raises(ValueError):
        greedy_partition(g, 6, 0)
    with pytest.raises(ValueError):
        greedy_partition(g, 1, 0)
    a = greedy_partition(g, 2, 4)
    b = greedy_partition(g, 2, 4)
    assert np.array_equal(a, b)
    assert np.bincount(a, minlength=2).min() >= 1


# ---------------------------------------------------------------------------
# Graph type guards


def test_graph_rejects_self_loop():
    adj = SparseAdjacency(2, np.array([0, 1, 2]), np.array([0, 1]), np.ones(2))
    with pytest.raises(ConfigError):
        Graph(2, adj, np.zeros((2, 1)))


def test_graph_rejects_bad_shapes():
    adj = SparseAdjacency.from_edges(3, [(0, 1)])
    with pytest.raises(ConfigError):
        Graph(3, adj, np.zeros((2, 1)))
    with pytest.raises(ConfigError):
        Graph(3, adj, np.full((3, 1), np.nan))
    with pytest.raises(ConfigError):
        Graph(3, adj, np.zeros((3, 1)), np.array([0, 1]))
