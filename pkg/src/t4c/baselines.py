"""Comparison systems: naive counting, volume clustering, and a node GNN.

* Naive Count scores every record the same way: the per-segment empirical
  congestion distribution over the training labels (undefined merged into
  green) and the per-supersegment median ETA (lower median).
* Volume Cluster conditions both statistics on the record's volume-sum
  cluster and falls back to the naive model where a cell has no data.
* The node GNN works on the original intersection graph: counter volumes
  are the node inputs (zeros elsewhere), message passing runs over nodes,
  and each segment's congestion logits are read from the concatenation of
  its endpoint states.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .clustering import ClusterModel, assign_cluster, build_prior_matrices
from .data import Dataset, LabelBundle, SuperSegment, VolumeRecord, daytime_filter, labels_by_record, split_train_validation
from .evaluation import core_metric
from .model import inverse_frequency_weights

__all__ = [
    "NaiveCountModel",
    "VolumeClusterModel",
    "fit_naive",
    "fit_volume_cluster",
    "node_gnn_baseline",
    "save_baseline",
    "load_baseline",
]

_CC_COLUMN = {0: 0, 1: 0, 2: 1, 3: 2}  # undefined merges into green


def _lower_median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


@dataclass(frozen=True, eq=False)
class NaiveCountModel:
    """Global per-segment congestion distributions and per-ss median ETAs."""

    cc_probs: dict[str, np.ndarray]  # segment_id -> (3,)
    global_probs: np.ndarray  # (3,) pooled over all segments
    eta_median: dict[str, float]  # ss_id -> seconds
    per_segment: bool = True


@dataclass(frozen=True, eq=False)
class VolumeClusterModel:
    """Cluster-conditioned distributions with naive fallback."""

    num_clusters: int
    thresholds: tuple[float, ...]
    cc_probs: dict[str, np.ndarray]  # segment_id -> (K, 3)
    eta_median: dict[str, np.ndarray]  # ss_id -> (K,)
    naive: NaiveCountModel

    def cluster_of(self, record: VolumeRecord) -> int:
        model = ClusterModel(self.num_clusters, self.thresholds, {})
        return assign_cluster(model, record)


def fit_naive(
    labels: Iterable[LabelBundle],
    supersegments: Sequence[SuperSegment],
    per_segment: bool = True,
) -> NaiveCountModel:
    """Tally training congestion labels and ETA medians.

    ``per_segment=False`` applies the pooled city-wide distribution to
    every segment instead of its own tally.
    """
    labels = list(labels)
    counts: dict[str, np.ndarray] = {}
    pooled = np.zeros(3, dtype=np.float64)
    n_labels = 0
    for bundle in labels:
        for seg_id, lab in bundle.edges.items():
            if lab.cc is None:
                continue
            column = _CC_COLUMN[lab.cc]
            counts.setdefault(seg_id, np.zeros(3, dtype=np.float64))[column] += 1.0
            pooled[column] += 1.0
            n_labels += 1
    if n_labels == 0:
        raise ValueError("fit_naive needs at least one congestion label")
    global_probs = pooled / pooled.sum()
    cc_probs: dict[str, np.ndarray] = {}
    for seg_id, c in counts.items():
        cc_probs[seg_id] = (c / c.sum()) if per_segment else global_probs.copy()

    record_ids = {bundle.record_id for bundle in labels}
    eta_median: dict[str, float] = {}
    for ss in supersegments:
        values = [eta for rid, eta in ss.etas.items() if rid in record_ids]
        if values:
            eta_median[ss.ss_id] = _lower_median(values)
    return NaiveCountModel(
        cc_probs=cc_probs, global_probs=global_probs, eta_median=eta_median, per_segment=per_segment
    )


def naive_segment_probs(model: NaiveCountModel, seg_id: str) -> np.ndarray:
    """Per-segment distribution, falling back to the pooled one."""
    probs = model.cc_probs.get(seg_id)
    return probs if probs is not None else model.global_probs


def fit_volume_cluster(
    cluster_model: ClusterModel,
    labels: Iterable[LabelBundle],
    supersegments: Sequence[SuperSegment],
    graph,
) -> VolumeClusterModel:
    """Cluster-conditioned congestion and ETA statistics.

    Congestion cells reuse the prior-matrix tally; cells without support
    (and supersegment clusters without ETAs) take the naive values.
    """
    labels = list(labels)
    naive = fit_naive(labels, supersegments)
    priors = build_prior_matrices(cluster_model, labels, graph)
    k = cluster_model.num_clusters

    cc_probs: dict[str, np.ndarray] = {}
    for seg_id, prior in priors.items():
        matrix = prior.matrix.copy()
        for row in range(k):
            if prior.support is None or prior.support[row] == 0:
                matrix[row] = naive_segment_probs(naive, seg_id)
        cc_probs[seg_id] = matrix

    by_record_cluster = cluster_model.assignment
    eta_median: dict[str, np.ndarray] = {}
    for ss in supersegments:
        per_cluster: list[list[float]] = [[] for _ in range(k)]
        for rid, eta in ss.etas.items():
            cluster = by_record_cluster.get(rid)
            if cluster is not None:
                per_cluster[cluster].append(eta)
        fallback = naive.eta_median.get(ss.ss_id)
        medians = np.empty(k, dtype=np.float64)
        for cluster in range(k):
            if per_cluster[cluster]:
                medians[cluster] = _lower_median(per_cluster[cluster])
            elif fallback is not None:
                medians[cluster] = fallback
            else:
                medians[cluster] = np.nan
        if not np.all(np.isnan(medians)):
            eta_median[ss.ss_id] = medians
    return VolumeClusterModel(
        num_clusters=k,
        thresholds=cluster_model.thresholds,
        cc_probs=cc_probs,
        eta_median=eta_median,
        naive=naive,
    )


def save_baseline(path, model: NaiveCountModel | VolumeClusterModel) -> Path:
    path = Path(path)
    if isinstance(model, NaiveCountModel):
        obj = {
            "kind": "naive",
            "per_segment": model.per_segment,
            "global_probs": model.global_probs.tolist(),
            "cc_probs": {k: model.cc_probs[k].tolist() for k in sorted(model.cc_probs)},
            "eta_median": {k: model.eta_median[k] for k in sorted(model.eta_median)},
        }
    else:
        obj = {
            "kind": "volume_cluster",
            "K": model.num_clusters,
            "thresholds": list(model.thresholds),
            "cc_probs": {k: model.cc_probs[k].tolist() for k in sorted(model.cc_probs)},
            "eta_median": {k: model.eta_median[k].tolist() for k in sorted(model.eta_median)},
            "naive": {
                "per_segment": model.naive.per_segment,
                "global_probs": model.naive.global_probs.tolist(),
                "cc_probs": {k: model.naive.cc_probs[k].tolist() for k in sorted(model.naive.cc_probs)},
                "eta_median": {k: model.naive.eta_median[k] for k in sorted(model.naive.eta_median)},
            },
        }
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def load_baseline(path) -> NaiveCountModel | VolumeClusterModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj["kind"] == "naive":
        return NaiveCountModel(
            cc_probs={k: np.asarray(v, dtype=np.float64) for k, v in obj["cc_probs"].items()},
            global_probs=np.asarray(obj["global_probs"], dtype=np.float64),
            eta_median=dict(obj["eta_median"]),
            per_segment=obj["per_segment"],
        )
    naive_obj = obj["naive"]
    naive = NaiveCountModel(
        cc_probs={k: np.asarray(v, dtype=np.float64) for k, v in naive_obj["cc_probs"].items()},
        global_probs=np.asarray(naive_obj["global_probs"], dtype=np.float64),
        eta_median=dict(naive_obj["eta_median"]),
        per_segment=naive_obj["per_segment"],
    )
    return VolumeClusterModel(
        num_clusters=obj["K"],
        thresholds=tuple(obj["thresholds"]),
        cc_probs={k: np.asarray(v, dtype=np.float64) for k, v in obj["cc_probs"].items()},
        eta_median={k: np.asarray(v, dtype=np.float64) for k, v in obj["eta_median"].items()},
        naive=naive,
    )


# ---------------------------------------------------------------------------
# node-level GNN baseline on the original intersection graph


def _node_graph(graph) -> tuple[dict[str, int], tuple[tuple[int, ...], ...]]:
    node_index = {n.node_id: i for i, n in enumerate(graph.nodes)}
    neighbor_sets: list[set[int]] = [set() for _ in graph.nodes]
    for seg in graph.segments:
        a = node_index[seg.tail_node]
        b = node_index[seg.head_node]
        if a != b:
            neighbor_sets[a].add(b)
            neighbor_sets[b].add(a)
    return node_index, tuple(tuple(sorted(s)) for s in neighbor_sets)


def _node_volume_features(graph, node_index, record: VolumeRecord) -> np.ndarray:
    out = np.zeros((len(node_index), 4), dtype=np.float64)
    for node_id, vec in record.volumes.items():
        out[node_index[node_id]] = vec
    return out


def node_gnn_baseline(
    dataset: Dataset,
    train_cfg,
    seed: int = 0,
    hidden: int = 32,
    layers: int = 2,
) -> float:
    """Train the intersection-level GNN and return its validation score.

    Node inputs are the raw counter volumes (zeros where no counter);
    after message passing, each segment's congestion logits come from the
    concatenated states of its two endpoints. Trained with the same
    regimen (batch accumulation, Adam, best-epoch selection) as the main
    model and scored with the same metric.
    """
    records = daytime_filter(dataset.records, *train_cfg.daytime)
    if not records:
        raise ValueError("no records left after the daytime filter")
    train_records, val_records = split_train_validation(
        records, 1.0 - train_cfg.val_fraction, train_cfg.split_seed
    )
    label_map = labels_by_record(dataset.labels)
    graph = dataset.graph
    node_index, node_neighbors = _node_graph(graph)
    tail_idx = np.array([node_index[s.tail_node] for s in graph.segments], dtype=np.int64)
    head_idx = np.array([node_index[s.head_node] for s in graph.segments], dtype=np.int64)
    seg_ids = [s.segment_id for s in graph.segments]

    # z-normalize volumes over the training (record, node) population
    total = np.zeros(4)
    total_sq = np.zeros(4)
    count = 0
    raw_feats = {r.record_id: _node_volume_features(graph, node_index, r) for r in records}
    for r in train_records:
        x = raw_feats[r.record_id]
        total += x.sum(axis=0)
        total_sq += (x * x).sum(axis=0)
        count += x.shape[0]
    mean = total / count
    std = np.maximum(np.sqrt(np.maximum(total_sq / count - mean**2, 0.0)), 1e-6)
    feats = {rid: (x - mean) / std for rid, x in raw_feats.items()}

    seg_pos = {seg_id: i for i, seg_id in enumerate(seg_ids)}

    def cc_targets(bundle: LabelBundle | None) -> np.ndarray:
        out = np.full(len(seg_ids), -1, dtype=np.int64)
        if bundle is not None:
            for seg_id, lab in bundle.edges.items():
                if lab.cc in (1, 2, 3):
                    out[seg_pos[seg_id]] = lab.cc - 1
        return out

    targets = {r.record_id: cc_targets(label_map.get(r.record_id)) for r in records}

    class _Arrays:
        def __init__(self, cc):
            self.cc = cc
            self.vol = np.full_like(cc, -1)

    weights = inverse_frequency_weights(
        [_Arrays(targets[r.record_id]) for r in train_records], "cc", 3
    )

    rng = np.random.default_rng(seed)
    store = ad.ParamStore()
    store.add("in_w", ad.glorot_uniform(rng, 4, hidden))
    store.add("in_b", np.zeros(hidden))
    for layer in range(layers):
        store.add(f"gnn{layer}_self_w", ad.glorot_uniform(rng, hidden, hidden))
        store.add(f"gnn{layer}_nbr_w", ad.glorot_uniform(rng, hidden, hidden))
        store.add(f"gnn{layer}_b", np.zeros(hidden))
    store.add("edge_w", ad.glorot_uniform(rng, 2 * hidden, 3))
    store.add("edge_b", np.zeros(3))

    def forward_logits(x: np.ndarray) -> ad.Tensor:
        h = ad.add(ad.matmul(ad.Tensor(x), store["in_w"]), store["in_b"])
        for layer in range(layers):
            self_part = ad.matmul(h, store[f"gnn{layer}_self_w"])
            nbr_part = ad.matmul(
                ad.mean_neighbor_aggregate(h, node_neighbors), store[f"gnn{layer}_nbr_w"]
            )
            h = ad.relu(ad.add(ad.add(self_part, nbr_part), store[f"gnn{layer}_b"]))
        pair = ad.concat([ad.getitem(h, tail_idx), ad.getitem(h, head_idx)], axis=1)
        return ad.add(ad.matmul(pair, store["edge_w"]), store["edge_b"])

    def val_score() -> float:
        predictions = {}
        for r in val_records:
            logits = forward_logits(feats[r.record_id])
            probs = ad.softmax_np(logits.data, axis=1)
            predictions[r.record_id] = {seg_id: probs[i] for i, seg_id in enumerate(seg_ids)}
        val_labels = [label_map[r.record_id] for r in val_records if r.record_id in label_map]
        score = core_metric(predictions, val_labels)
        if score.score is None:
            raise ValueError("validation split has no scored congestion labels")
        return score.score

    shuffler = random.Random(seed)
    best = float("inf")
    for _epoch in range(train_cfg.epochs):
        order = list(train_records)
        shuffler.shuffle(order)
        for i in range(0, len(order), train_cfg.batch_size):
            batch = order[i : i + train_cfg.batch_size]
            store.zero_grad()
            for r in batch:
                loss, _n = ad.weighted_cross_entropy(
                    forward_logits(feats[r.record_id]), targets[r.record_id], weights
                )
                loss.backward()
            store.scale_grads(1.0 / len(batch))
            ad.adam_step(store, lr=train_cfg.learning_rate)
        best = min(best, val_score())
    return best
