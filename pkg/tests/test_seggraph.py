"""Line-graph construction against a brute-force endpoint oracle, plus
normalization and feature assembly contracts."""

from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from t4c.clustering import PriorMatrix
from t4c.data import NodeRec, RoadGraph, LabelBundle, SegmentLabel, VolumeRecord
from t4c.seggraph import (
    NormStats,
    assemble_features,
    build_line_graph,
    counter_slice_matrix,
    fit_normalization,
)

from conftest import make_segment


def graph_from_edges(edges, counters=None):
    """edges: list of (tail, head) node names."""
    node_names = sorted({n for e in edges for n in e})
    counters = counters or {}
    nodes = tuple(
        NodeRec(n, 48.0, 11.0, counters.get(n)) for n in node_names
    )
    segments = tuple(
        make_segment(f"e{i}", tail, head) for i, (tail, head) in enumerate(edges)
    )
    return RoadGraph(nodes=nodes, segments=segments, counters=counters)


def brute_force_adjacency(segments):
    """O(E^2) oracle: adjacent iff any endpoint is shared."""
    n = len(segments)
    out = [set() for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            ends_i = {segments[i].tail_node, segments[i].head_node}
            ends_j = {segments[j].tail_node, segments[j].head_node}
            if ends_i & ends_j:
                out[i].add(j)
    return [tuple(sorted(s)) for s in out]


def test_three_edges_through_one_node_all_adjacent():
    graph = graph_from_edges([("A", "B"), ("B", "C"), ("B", "A")])
    seg_graph = build_line_graph(graph)
    assert seg_graph.neighbors == ((1, 2), (0, 2), (0, 1))


def test_disconnected_edges_have_no_neighbors():
    graph = graph_from_edges([("A", "B"), ("C", "D")])
    seg_graph = build_line_graph(graph)
    assert seg_graph.neighbors == ((), ())


def test_star_spokes_all_pairwise_adjacent():
    spokes = [("X", f"L{i}") for i in range(5)]
    graph = graph_from_edges(spokes)
    seg_graph = build_line_graph(graph)
    assert seg_graph.neighbors == tuple(brute_force_adjacency(graph.segments))
    assert all(len(nbrs) == 4 for nbrs in seg_graph.neighbors)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 8), st.integers(1, 30))
def test_line_graph_matches_brute_force(seed, n_nodes, n_edges):
    rng = np.random.default_rng(seed)
    names = [f"n{i}" for i in range(n_nodes)]
    edges = []
    for _ in range(n_edges):
        a, b = rng.choice(n_nodes, size=2, replace=False)
        edges.append((names[a], names[b]))
    graph = graph_from_edges(edges)
    seg_graph = build_line_graph(graph)
    assert list(seg_graph.neighbors) == brute_force_adjacency(graph.segments)
    # symmetry and no self-loops
    for i, nbrs in enumerate(seg_graph.neighbors):
        assert i not in nbrs
        for j in nbrs:
            assert i in seg_graph.neighbors[j]


# -- normalization ------------------------------------------------------------------


def record(record_id, volumes):
    return VolumeRecord(record_id, date(2022, 1, 3), 30, volumes)


def test_constant_feature_floored_sigma(toy_graph):
    stats = fit_normalization(toy_graph, [record("r0", {})])
    # parsed_maxspeed is 50 for every segment
    assert stats.cont_std[0] == 1e-6
    normalized = (50.0 - stats.cont_mean[0]) / stats.cont_std[0]
    assert normalized == 0.0


def test_two_point_feature_gives_unit_sigma():
    graph = graph_from_edges([("A", "B"), ("B", "C")])
    segments = (
        make_segment("e0", "A", "B", length_meters=2.0),
        make_segment("e1", "B", "C", length_meters=1e-12),
    )
    # length column values {2, ~0}: mean 1, sigma 1
    graph = RoadGraph(nodes=graph.nodes, segments=segments, counters={})
    stats = fit_normalization(graph, [record("r0", {})])
    col = 2  # length_meters position
    assert abs(stats.cont_mean[col] - 1.0) < 1e-9
    assert abs(stats.cont_std[col] - 1.0) < 1e-9


def test_stats_invariant_under_record_permutation(toy_graph):
    records = [
        record("r0", {"A": (1, 2, 3, 4)}),
        record("r1", {"A": (5, 0, 0, 1)}),
        record("r2", {}),
    ]
    a = fit_normalization(toy_graph, records)
    b = fit_normalization(toy_graph, records[::-1])
    assert np.array_equal(a.counter_mean, b.counter_mean)
    assert np.array_equal(a.counter_std, b.counter_std)


def test_empty_training_set_rejected(toy_graph):
    with pytest.raises(ValueError):
        fit_normalization(toy_graph, [])


def test_speed_stats_come_from_labels_when_given(toy_graph):
    labels = [
        LabelBundle("r0", {"e1": SegmentLabel(speed_kph=10.0)}),
        LabelBundle("r1", {"e1": SegmentLabel(speed_kph=30.0)}),
    ]
    stats = fit_normalization(toy_graph, [record("r0", {})], labels)
    assert stats.speed_mean == 20.0
    assert stats.speed_std == 10.0


# -- feature assembly ------------------------------------------------------------------


def uniform_priors(graph, k=10):
    return {
        s.segment_id: PriorMatrix(s.segment_id, np.full((k, 3), 1 / 3), np.zeros(k, dtype=int))
        for s in graph.segments
    }


def identity_stats():
    return NormStats(
        cont_mean=np.zeros(5),
        cont_std=np.ones(5),
        counter_mean=np.zeros(8),
        counter_std=np.ones(8),
        speed_mean=0.0,
        speed_std=1.0,
    )


def test_counter_slice_uses_own_endpoints(toy_graph):
    rec = record("r0", {"A": (1, 2, 3, 4)})
    slice_ = counter_slice_matrix(toy_graph, rec)
    # e1 = A -> B: tail A has the counter, head B none
    assert slice_[0].tolist() == [1, 2, 3, 4, 0, 0, 0, 0]
    # e2 = B -> C: neither endpoint has a counter
    assert slice_[1].tolist() == [0] * 8
    # e3 = B -> A: head A has the counter
    assert slice_[2].tolist() == [0, 0, 0, 0, 1, 2, 3, 4]


def test_feature_at_training_mean_normalizes_to_zero(toy_graph):
    seg_graph = build_line_graph(toy_graph)
    stats = fit_normalization(toy_graph, [record("r0", {})])
    bundle = assemble_features(
        toy_graph, seg_graph, record("r0", {}), uniform_priors(toy_graph), stats
    )
    # limit_speed is 50 everywhere -> z-score exactly 0
    col = 4
    assert np.all(bundle.continuous[:, col] == 0.0)


def test_prior_row_lands_at_cluster_offset(toy_graph):
    seg_graph = build_line_graph(toy_graph)
    priors = uniform_priors(toy_graph, k=10)
    row = np.array([0.5, 0.25, 0.25])
    matrix = priors["e1"].matrix.copy()
    matrix[3] = row
    priors["e1"] = PriorMatrix("e1", matrix, np.zeros(10, dtype=int))
    bundle = assemble_features(
        toy_graph, seg_graph, record("r0", {}), priors, identity_stats()
    )
    assert bundle.prior_block.shape == (3, 30)
    assert bundle.prior_block[0, 9:12].tolist() == [0.5, 0.25, 0.25]


def test_active_row_mode_selects_single_row(toy_graph):
    seg_graph = build_line_graph(toy_graph)
    priors = uniform_priors(toy_graph, k=4)
    matrix = priors["e2"].matrix.copy()
    matrix[2] = [0.1, 0.2, 0.7]
    priors["e2"] = PriorMatrix("e2", matrix, np.zeros(4, dtype=int))
    bundle = assemble_features(
        toy_graph, seg_graph, record("r0", {}), priors, identity_stats(),
        prior_mode="active_row", cluster_index=2,
    )
    assert bundle.prior_block.shape == (3, 3)
    assert bundle.prior_block[1].tolist() == [0.1, 0.2, 0.7]


def test_active_row_requires_cluster_index(toy_graph):
    seg_graph = build_line_graph(toy_graph)
    with pytest.raises(ValueError):
        assemble_features(
            toy_graph, seg_graph, record("r0", {}), uniform_priors(toy_graph),
            identity_stats(), prior_mode="active_row",
        )


def test_missing_prior_rejected(toy_graph):
    seg_graph = build_line_graph(toy_graph)
    priors = uniform_priors(toy_graph)
    del priors["e2"]
    with pytest.raises(ValueError) as err:
        assemble_features(toy_graph, seg_graph, record("r0", {}), priors, identity_stats())
    assert "e2" in str(err.value)


def test_assembly_is_pure(toy_graph):
    seg_graph = build_line_graph(toy_graph)
    rec = record("r0", {"A": (1, 2, 3, 4)})
    stats = fit_normalization(toy_graph, [rec])
    priors = uniform_priors(toy_graph)
    a = assemble_features(toy_graph, seg_graph, rec, priors, stats)
    b = assemble_features(toy_graph, seg_graph, rec, priors, stats)
    assert np.array_equal(a.categorical, b.categorical)
    assert np.array_equal(a.continuous, b.continuous)
    assert np.array_equal(a.counter_slice, b.counter_slice)
    assert np.array_equal(a.prior_block, b.prior_block)
