"""Equal-frequency volume clustering and per-segment congestion priors.

Records are keyed by their total counter volume (``volume_sum``), sorted,
and cut into K near-equal groups. For every road segment a K x 3 matrix
then holds the empirical distribution of congestion states (undefined and
green merged, yellow, red) conditioned on the cluster, which downstream
code feeds to the network as prior knowledge.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import LabelBundle, RoadGraph, VolumeRecord

__all__ = [
    "ClusterModel",
    "PriorMatrix",
    "volume_sum",
    "fit_clusters",
    "assign_cluster",
    "build_prior_matrices",
    "save_cluster_model",
    "load_cluster_model",
]

DEFAULT_NUM_CLUSTERS = 10
UNIFORM_ROW = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)


@dataclass(frozen=True)
class ClusterModel:
    """Fitted equal-frequency binning of records by total volume.

    ``thresholds`` holds the K-1 lower bin edges (the volume sum of the
    first record of each cluster above the first); ``assignment`` maps
    every training record to its fitted cluster.
    """

    num_clusters: int
    thresholds: tuple[float, ...]
    assignment: dict[str, int]


@dataclass(frozen=True, eq=False)
class PriorMatrix:
    """Per-segment K x 3 congestion distribution conditioned on cluster.

    ``support[i]`` counts the labeled records behind row i; rows without
    support carry the fallback distribution (the segment's all-cluster
    distribution, or uniform if the segment was never labeled).
    """

    segment_id: str
    matrix: np.ndarray  # (K, 3)
    support: np.ndarray | None = None  # (K,) int; None when loaded from disk


def volume_sum(record: VolumeRecord) -> float:
    """Total of all four bins over all counters present in the record."""
    return float(sum(sum(vec) for vec in record.volumes.values()))


def fit_clusters(records: Sequence[VolumeRecord], num_clusters: int = DEFAULT_NUM_CLUSTERS) -> ClusterModel:
    """Sort records by (volume_sum, record_id) and cut into K equal bins.

    The record with sort rank r goes to cluster floor(r * K / N), so the
    cluster sizes differ by at most one. Ties on the volume sum are broken
    by record id, which makes the fit independent of the input order.
    """
    n = len(records)
    if num_clusters < 1:
        raise ValueError(f"num_clusters must be >= 1, got {num_clusters}")
    if n < num_clusters:
        raise ValueError(f"need at least {num_clusters} records, got {n}")
    keyed = sorted(((volume_sum(r), r.record_id) for r in records))
    assignment: dict[str, int] = {}
    thresholds: list[float] = []
    previous_cluster = 0
    for rank, (vsum, record_id) in enumerate(keyed):
        cluster = (rank * num_clusters) // n
        if cluster != previous_cluster:
            thresholds.append(vsum)
            previous_cluster = cluster
        assignment[record_id] = cluster
    return ClusterModel(num_clusters=num_clusters, thresholds=tuple(thresholds), assignment=assignment)


def assign_cluster(model: ClusterModel, record: VolumeRecord) -> int:
    """Threshold lookup: the number of bin edges at or below the volume sum."""
    return bisect_right(model.thresholds, volume_sum(record))


def build_prior_matrices(
    model: ClusterModel,
    labels: Iterable[LabelBundle],
    graph: RoadGraph,
) -> dict[str, PriorMatrix]:
    """Tally congestion states per (segment, cluster) into K x 3 priors.

    State columns merge undefined (0) into green (1); yellow (2) and red
    (3) get their own columns. Each supported row is the plain empirical
    distribution counts / n_i; unsupported rows fall back to the segment's
    distribution over all clusters, or to uniform for unlabeled segments.
    """
    k = model.num_clusters
    seg_index = {s.segment_id: i for i, s in enumerate(graph.segments)}
    counts = np.zeros((len(seg_index), k, 3), dtype=np.float64)
    for bundle in labels:
        if bundle.record_id not in model.assignment:
            raise ValueError(f"record {bundle.record_id!r} is not in the cluster model's training set")
        cluster = model.assignment[bundle.record_id]
        for seg_id, lab in bundle.edges.items():
            if lab.cc is None:
                continue
            column = 0 if lab.cc in (0, 1) else (1 if lab.cc == 2 else 2)
            counts[seg_index[seg_id], cluster, column] += 1.0

    priors: dict[str, PriorMatrix] = {}
    for seg_id, i in seg_index.items():
        support = counts[i].sum(axis=1)
        total = counts[i].sum(axis=0)
        grand = total.sum()
        fallback = total / grand if grand > 0 else np.array(UNIFORM_ROW)
        matrix = np.empty((k, 3), dtype=np.float64)
        for row in range(k):
            if support[row] > 0:
                matrix[row] = counts[i, row] / support[row]
            else:
                matrix[row] = fallback
        priors[seg_id] = PriorMatrix(
            segment_id=seg_id, matrix=matrix, support=support.astype(np.int64)
        )
    return priors


def save_cluster_model(path, model: ClusterModel, priors: Mapping[str, PriorMatrix]) -> Path:
    """Write ``{K, thresholds, priors}`` as deterministic JSON."""
    path = Path(path)
    obj = {
        "K": model.num_clusters,
        "thresholds": list(model.thresholds),
        "priors": {seg_id: priors[seg_id].matrix.tolist() for seg_id in sorted(priors)},
    }
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def load_cluster_model(path) -> tuple[ClusterModel, dict[str, PriorMatrix]]:
    """Inverse of :func:`save_cluster_model`; the assignment is not stored."""
    path = Path(path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    for key in ("K", "thresholds", "priors"):
        if key not in obj:
            raise ValueError(f"{path}: missing key {key!r} in cluster model file")
    k = int(obj["K"])
    model = ClusterModel(num_clusters=k, thresholds=tuple(float(t) for t in obj["thresholds"]), assignment={})
    priors: dict[str, PriorMatrix] = {}
    for seg_id, rows in obj["priors"].items():
        matrix = np.asarray(rows, dtype=np.float64)
        if matrix.shape != (k, 3):
            raise ValueError(f"{path}: prior for {seg_id!r} has shape {matrix.shape}, expected ({k}, 3)")
        priors[seg_id] = PriorMatrix(segment_id=seg_id, matrix=matrix, support=None)
    return model, priors
