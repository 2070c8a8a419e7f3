"""Shared fixtures: a tiny hand-built city and finite-difference helpers."""

from __future__ import annotations

from datetime import date

import numpy as np
import pytest

from t4c.data import (
    Dataset,
    LabelBundle,
    NodeRec,
    RoadGraph,
    SegmentLabel,
    SegmentRec,
    SuperSegment,
    VolumeRecord,
)


def make_segment(seg_id, tail, head, **overrides):
    base = dict(
        segment_id=seg_id,
        tail_node=tail,
        head_node=head,
        importance=2,
        oneway=0,
        tunnel=0,
        lanes=2,
        parsed_maxspeed=50.0,
        flow_speed=40.0,
        length_meters=100.0,
        counter_distance=1.0,
        limit_speed=50.0,
    )
    base.update(overrides)
    return SegmentRec(**base)


@pytest.fixture
def toy_graph() -> RoadGraph:
    """Three nodes A, B, C; segments A->B, B->C, B->A; one counter at A."""
    nodes = (
        NodeRec("A", 48.1, 11.5, "c0"),
        NodeRec("B", 48.2, 11.6, None),
        NodeRec("C", 48.3, 11.7, None),
    )
    segments = (
        make_segment("e1", "A", "B", counter_distance=0.0),
        make_segment("e2", "B", "C", flow_speed=30.0, length_meters=200.0),
        make_segment("e3", "B", "A", counter_distance=0.0),
    )
    return RoadGraph(nodes=nodes, segments=segments, counters={"A": "c0"})


@pytest.fixture
def toy_dataset(toy_graph) -> Dataset:
    records = (
        VolumeRecord("r0", date(2022, 1, 3), 30, {"A": (1, 2, 3, 4)}),
        VolumeRecord("r1", date(2022, 1, 3), 40, {"A": (0, 0, 5, 0)}),
        VolumeRecord("r2", date(2022, 1, 4), 50, {}),
    )
    labels = (
        LabelBundle("r0", {
            "e1": SegmentLabel(cc=1, speed_kph=38.0, vol_class=1),
            "e2": SegmentLabel(cc=2, speed_kph=20.0, vol_class=3),
            "e3": SegmentLabel(cc=3, speed_kph=10.0, vol_class=5),
        }),
        LabelBundle("r1", {
            "e1": SegmentLabel(cc=0, speed_kph=None, vol_class=None),
            "e2": SegmentLabel(cc=1, speed_kph=29.0, vol_class=1),
        }),
        LabelBundle("r2", {
            "e2": SegmentLabel(cc=2, speed_kph=15.0, vol_class=3),
        }),
    )
    supersegments = (
        SuperSegment("ss0", ("e1", "e2"), {"r0": 30.0, "r1": 28.0, "r2": 35.0}),
    )
    return Dataset(toy_graph, records, labels, supersegments)


def central_diff_tensor(f, tensor, h=1e-5) -> np.ndarray:
    """Central finite differences of the scalar ``f()`` w.r.t. ``tensor``."""
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(tensor.data.shape)


def central_diff_store(f, store, h=1e-5) -> dict[str, np.ndarray]:
    return {name: central_diff_tensor(f, p, h) for name, p in store.items()}


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Relative error with an absolute floor of 1e-3 in the denominator."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))
