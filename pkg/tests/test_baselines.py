"""Counting baselines against brute-force tallies, the K=1 degeneracy,
serialization, and node-GNN ordering runs."""

from datetime import date

import numpy as np
import pytest

from t4c.baselines import (
    fit_naive,
    fit_volume_cluster,
    load_baseline,
    naive_segment_probs,
    node_gnn_baseline,
    save_baseline,
)
from t4c.clustering import ClusterModel, fit_clusters, build_prior_matrices
from t4c.data import (
    LabelBundle,
    SegmentLabel,
    SuperSegment,
    SynthSpec,
    VolumeRecord,
    daytime_filter,
    generate_synthetic_city,
    labels_by_record,
    split_train_validation,
)
from t4c.evaluation import core_metric
from t4c.model import ModelConfig
from t4c.training import TrainConfig, train_one


def cc_bundle(record_id, cc_by_seg):
    return LabelBundle(record_id, {s: SegmentLabel(cc=c) for s, c in cc_by_seg.items()})


# -- naive count ------------------------------------------------------------------


def test_naive_per_segment_distribution():
    labels = [cc_bundle(f"r{i}", {"s": c}) for i, c in enumerate([1, 1, 2, 3, 1])]
    model = fit_naive(labels, [])
    assert np.allclose(model.cc_probs["s"], [0.6, 0.2, 0.2])


def test_naive_lower_median_eta():
    labels = [cc_bundle(f"r{i}", {"s": 1}) for i in range(4)]
    ss = SuperSegment("ss0", ("s",), {f"r{i}": eta for i, eta in enumerate([10.0, 20.0, 30.0, 40.0])})
    model = fit_naive(labels, [ss])
    assert model.eta_median["ss0"] == 20.0


def test_naive_unlabeled_segment_falls_back_to_global():
    labels = [cc_bundle("r0", {"a": 1}), cc_bundle("r1", {"a": 2})]
    model = fit_naive(labels, [])
    assert np.allclose(naive_segment_probs(model, "never_seen"), model.global_probs)
    assert np.allclose(model.global_probs, [0.5, 0.5, 0.0])


def test_naive_undefined_merges_into_green():
    labels = [cc_bundle("r0", {"a": 0}), cc_bundle("r1", {"a": 3})]
    model = fit_naive(labels, [])
    assert np.allclose(model.cc_probs["a"], [0.5, 0.0, 0.5])


def test_naive_requires_labels():
    with pytest.raises(ValueError):
        fit_naive([LabelBundle("r0", {})], [])


def test_naive_global_mode_applies_pooled_distribution():
    labels = [cc_bundle("r0", {"a": 1, "b": 3}), cc_bundle("r1", {"a": 1})]
    model = fit_naive(labels, [], per_segment=False)
    assert np.allclose(model.cc_probs["a"], model.global_probs)
    assert np.allclose(model.cc_probs["b"], model.global_probs)


def test_naive_eta_restricted_to_training_records():
    labels = [cc_bundle("r0", {"a": 1})]
    ss = SuperSegment("ss0", ("a",), {"r0": 10.0, "r_val": 99999.0})
    model = fit_naive(labels, [ss])
    assert model.eta_median["ss0"] == 10.0


def test_naive_matches_brute_force_tally(toy_graph):
    rng = np.random.default_rng(11)
    labels = []
    for i in range(50):
        edges = {}
        for seg in ("e1", "e2", "e3"):
            if rng.random() < 0.6:
                edges[seg] = int(rng.integers(0, 4))
        labels.append(cc_bundle(f"r{i:02d}", edges))
    model = fit_naive(labels, [])
    for seg in ("e1", "e2", "e3"):
        tally = np.zeros(3)
        for lb in labels:
            lab = lb.edges.get(seg)
            if lab is None or lab.cc is None:
                continue
            tally[{0: 0, 1: 0, 2: 1, 3: 2}[lab.cc]] += 1
        if tally.sum():
            assert np.array_equal(model.cc_probs[seg], tally / tally.sum())


# -- volume cluster -----------------------------------------------------------------


def _clustered_fixture(toy_graph):
    rng = np.random.default_rng(4)
    records = [
        VolumeRecord(f"r{i:02d}", date(2022, 1, 3), 30, {"A": (int(rng.integers(0, 30)), 0, 0, 0)})
        for i in range(30)
    ]
    model = fit_clusters(records, 3)
    labels = []
    for i in range(30):
        edges = {}
        for seg in ("e1", "e2", "e3"):
            if rng.random() < 0.8:
                edges[seg] = int(rng.integers(0, 4))
        labels.append(cc_bundle(f"r{i:02d}", edges))
    etas = {f"r{i:02d}": float(10 + 5 * (i % 7)) for i in range(30)}
    ss = SuperSegment("ss0", ("e1", "e2"), etas)
    return records, model, labels, [ss]


def test_volume_cluster_k1_reproduces_naive(toy_graph):
    records, _model, labels, sss = _clustered_fixture(toy_graph)
    k1 = fit_clusters(records, 1)
    vc = fit_volume_cluster(k1, labels, sss, toy_graph)
    naive = vc.naive
    for seg in ("e1", "e2", "e3"):
        assert np.array_equal(vc.cc_probs[seg][0], naive_segment_probs(naive, seg))
    assert vc.eta_median["ss0"][0] == naive.eta_median["ss0"]


def test_volume_cluster_median_per_cluster():
    labels = [cc_bundle(f"r{i}", {"s": 1}) for i in range(3)]
    model = ClusterModel(2, (100.0,), {"r0": 0, "r1": 0, "r2": 0})
    ss = SuperSegment("ss0", ("s",), {"r0": 100.0, "r1": 200.0, "r2": 300.0})

    from t4c.data import NodeRec, RoadGraph
    from conftest import make_segment

    graph = RoadGraph(
        nodes=(NodeRec("A", 0, 0, None), NodeRec("B", 0, 0, None)),
        segments=(make_segment("s", "A", "B"),),
        counters={},
    )
    vc = fit_volume_cluster(model, labels, [ss], graph)
    assert vc.eta_median["ss0"][0] == 200.0
    # cluster 1 has no data -> naive fallback
    assert vc.eta_median["ss0"][1] == vc.naive.eta_median["ss0"] == 200.0


def test_volume_cluster_zero_support_cc_falls_back_to_naive(toy_graph):
    records, model, labels, sss = _clustered_fixture(toy_graph)
    # drop every label in cluster 2 for e3
    filtered = []
    for lb in labels:
        if model.assignment[lb.record_id] == 2 and "e3" in lb.edges:
            edges = {k: v for k, v in lb.edges.items() if k != "e3"}
            filtered.append(LabelBundle(lb.record_id, edges))
        else:
            filtered.append(lb)
    vc = fit_volume_cluster(model, filtered, sss, toy_graph)
    naive_probs = naive_segment_probs(vc.naive, "e3")
    assert np.array_equal(vc.cc_probs["e3"][2], naive_probs)


def test_baseline_json_round_trip(toy_graph, tmp_path):
    records, model, labels, sss = _clustered_fixture(toy_graph)
    naive = fit_naive(labels, sss)
    path = save_baseline(tmp_path / "baseline_naive.json", naive)
    loaded = load_baseline(path)
    for seg in naive.cc_probs:
        assert np.array_equal(loaded.cc_probs[seg], naive.cc_probs[seg])
    assert loaded.eta_median == naive.eta_median

    vc = fit_volume_cluster(model, labels, sss, toy_graph)
    path = save_baseline(tmp_path / "baseline_vc.json", vc)
    loaded_vc = load_baseline(path)
    assert loaded_vc.num_clusters == vc.num_clusters
    assert loaded_vc.thresholds == vc.thresholds
    for seg in vc.cc_probs:
        assert np.array_equal(loaded_vc.cc_probs[seg], vc.cc_probs[seg])


# -- node GNN -------------------------------------------------------------------------


NODE_TRAIN = TrainConfig(epochs=4, batch_size=2, learning_rate=3e-3, ensemble_size=1)


def test_node_gnn_deterministic(tmp_path):
    spec = SynthSpec(num_nodes=20, counter_fraction=0.3, num_records=40, signal=0.9, records_per_day=8)
    dataset = generate_synthetic_city(spec, seed=3, out_dir=tmp_path / "city")
    a = node_gnn_baseline(dataset, NODE_TRAIN, seed=0)
    b = node_gnn_baseline(dataset, NODE_TRAIN, seed=0)
    assert a == b


def _validation_core_of_naive(dataset, train_cfg):
    records = daytime_filter(dataset.records, *train_cfg.daytime)
    train_records, val_records = split_train_validation(records, 1.0 - train_cfg.val_fraction, train_cfg.split_seed)
    label_map = labels_by_record(dataset.labels)
    naive = fit_naive([label_map[r.record_id] for r in train_records], dataset.supersegments)
    seg_ids = [s.segment_id for s in dataset.graph.segments]
    predictions = {
        r.record_id: {seg: naive_segment_probs(naive, seg) for seg in seg_ids}
        for r in val_records
    }
    return core_metric(predictions, [label_map[r.record_id] for r in val_records]).score


@pytest.mark.slow
def test_node_gnn_with_sparse_counters_loses_to_main_model(tmp_path):
    """10% counter coverage starves the node GNN; the segment model with
    its clustering priors stays ahead."""
    spec = SynthSpec(num_nodes=30, counter_fraction=0.1, num_records=80, signal=0.9, records_per_day=10)
    dataset = generate_synthetic_city(spec, seed=13, out_dir=tmp_path / "sparse")
    train_cfg = TrainConfig(epochs=12, batch_size=2, learning_rate=5e-3, ensemble_size=1)
    records = daytime_filter(dataset.records, *train_cfg.daytime)
    train_records, _ = split_train_validation(records, 0.8, train_cfg.split_seed)
    cluster_model = fit_clusters(train_records, 5)
    label_map = labels_by_record(dataset.labels)
    priors = build_prior_matrices(cluster_model, [label_map[r.record_id] for r in train_records], dataset.graph)
    model_cfg = ModelConfig(volume_hidden=(16,), static_hidden=(16,), gnn_layers=2, hidden=16, head_blocks=1, num_clusters=5)
    _ckpt, runlog = train_one(train_cfg, model_cfg, dataset, cluster_model, priors, seed=0)
    main_score = min(e.val_core for e in runlog.epochs)
    gnn_score = node_gnn_baseline(dataset, train_cfg, seed=0)
    assert gnn_score > main_score


@pytest.mark.slow
def test_node_gnn_with_full_counters_beats_naive(tmp_path):
    spec = SynthSpec(num_nodes=20, counter_fraction=1.0, num_records=80, signal=0.95, records_per_day=10)
    dataset = generate_synthetic_city(spec, seed=17, out_dir=tmp_path / "dense")
    train_cfg = TrainConfig(epochs=6, batch_size=2, learning_rate=3e-3, ensemble_size=1)
    gnn_score = node_gnn_baseline(dataset, train_cfg, seed=0)
    naive_score = _validation_core_of_naive(dataset, train_cfg)
    assert gnn_score < naive_score
