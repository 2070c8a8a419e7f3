"""Scoring: congestion cross entropy, ETA error, and the ablation harness.

The core score is the masked mean cross entropy over labeled segments:
for every (record, segment) pair whose congestion label is green, yellow
or red, it adds -log of the probability the predictor put on the true
class (clipped to [1e-15, 1]); undefined and missing labels are skipped.
The extended score is the mean absolute ETA error in seconds. ETAs are
synthesized from predicted speeds by summing per-segment travel times
with a floor on the speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Dataset, LabelBundle, SuperSegment

__all__ = [
    "CoreScore",
    "EtaScore",
    "core_metric",
    "eta_from_speeds",
    "eta_metric",
    "run_ablation",
    "ABLATION_VARIANTS",
    "PROB_CLIP",
    "SPEED_FLOOR_KPH",
]

PROB_CLIP = 1e-15
SPEED_FLOOR_KPH = 5.0

ABLATION_VARIANTS = ("full", "no_cluster", "no_static", "no_gnn")


@dataclass(frozen=True)
class CoreScore:
    """Masked mean congestion cross entropy; ``score`` is None when no
    segment was scored."""

    score: float | None
    per_record: dict[str, float]
    n_scored: int


@dataclass(frozen=True)
class EtaScore:
    """Mean absolute ETA error in seconds over labeled pairs."""

    score: float | None
    per_record: dict[str, float]
    n_scored: int


def core_metric(
    predictions: Mapping[str, Mapping[str, np.ndarray]],
    labels: Iterable[LabelBundle],
) -> CoreScore:
    """Score per-segment class probabilities against congestion labels.

    ``predictions`` maps record_id -> segment_id -> 3-vector over
    (green, yellow, red). Every labeled segment must be covered.
    """
    total = 0.0
    n = 0
    per_record: dict[str, float] = {}
    for bundle in labels:
        if bundle.record_id not in predictions:
            raise ValueError(f"no predictions for record {bundle.record_id!r}")
        record_preds = predictions[bundle.record_id]
        rec_total = 0.0
        rec_n = 0
        for seg_id, lab in bundle.edges.items():
            if lab.cc is None or lab.cc == 0:
                continue
            if seg_id not in record_preds:
                raise ValueError(
                    f"record {bundle.record_id!r}: no prediction for segment {seg_id!r}"
                )
            probs = np.asarray(record_preds[seg_id], dtype=np.float64)
            if probs.shape != (3,):
                raise ValueError(
                    f"record {bundle.record_id!r}, segment {seg_id!r}: "
                    f"expected a 3-vector, got shape {probs.shape}"
                )
            p = min(max(float(probs[lab.cc - 1]), PROB_CLIP), 1.0)
            rec_total += -np.log(p)
            rec_n += 1
        if rec_n > 0:
            per_record[bundle.record_id] = rec_total / rec_n
            total += rec_total
            n += rec_n
    return CoreScore(score=(total / n) if n > 0 else None, per_record=per_record, n_scored=n)


def eta_from_speeds(
    supersegment: SuperSegment,
    speeds_kph: Mapping[str, float],
    lengths_m: Mapping[str, float],
    speed_floor_kph: float = SPEED_FLOOR_KPH,
) -> float:
    """Sum of per-segment travel times: length / (max(speed, floor) / 3.6)."""
    if not supersegment.path:
        raise ValueError(f"supersegment {supersegment.ss_id!r} has an empty path")
    total = 0.0
    for seg_id in supersegment.path:
        if seg_id not in speeds_kph:
            raise ValueError(f"no predicted speed for segment {seg_id!r}")
        speed = max(float(speeds_kph[seg_id]), speed_floor_kph)
        total += float(lengths_m[seg_id]) / (speed / 3.6)
    return total


def eta_metric(
    predicted: Mapping[tuple[str, str], float],
    labeled: Mapping[tuple[str, str], float],
) -> EtaScore:
    """Mean absolute error in seconds over the labeled (record, ss) pairs."""
    total = 0.0
    n = 0
    per_record_sum: dict[str, float] = {}
    per_record_n: dict[str, int] = {}
    for key, truth in labeled.items():
        if key not in predicted:
            raise ValueError(f"no predicted eta for (record, supersegment) {key!r}")
        err = abs(float(predicted[key]) - float(truth))
        total += err
        n += 1
        record_id = key[0]
        per_record_sum[record_id] = per_record_sum.get(record_id, 0.0) + err
        per_record_n[record_id] = per_record_n.get(record_id, 0) + 1
    per_record = {rid: per_record_sum[rid] / per_record_n[rid] for rid in per_record_sum}
    return EtaScore(score=(total / n) if n > 0 else None, per_record=per_record, n_scored=n)


def eta_labels(supersegments: Sequence[SuperSegment], record_ids=None) -> dict[tuple[str, str], float]:
    """Flatten supersegment ETA labels to a (record_id, ss_id) -> seconds map."""
    out: dict[tuple[str, str], float] = {}
    for ss in supersegments:
        for record_id, eta in ss.etas.items():
            if record_ids is None or record_id in record_ids:
                out[(record_id, ss.ss_id)] = eta
    return out


@dataclass(frozen=True)
class AblationResult:
    scores: dict[str, float]  # variant -> validation core score
    best_epochs: dict[str, int]
    data_order_hashes: dict[str, str]

    def as_csv(self) -> str:
        lines = ["variant,val_core,best_epoch"]
        for variant in self.scores:
            lines.append(f"{variant},{self.scores[variant]:.6f},{self.best_epochs[variant]}")
        return "\n".join(lines) + "\n"


def run_ablation(
    dataset: Dataset,
    variants: Sequence[str],
    cluster_model,
    priors,
    train_cfg,
    model_cfg,
    seed: int,
) -> AblationResult:
    """Train one model per variant with identical seed/data and compare.

    ``no_cluster`` zeroes the prior block, ``no_static`` zeroes the static
    attribute inputs, ``no_gnn`` drops the message-passing layers so the
    heads read the pre-aggregation features. Everything else (seed, data
    order, epochs) is held fixed.
    """
    from dataclasses import replace

    from .training import train_one  # local import; training also uses this module

    for variant in variants:
        if variant not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation variant {variant!r}; options: {ABLATION_VARIANTS}")

    scores: dict[str, float] = {}
    best_epochs: dict[str, int] = {}
    hashes: dict[str, str] = {}
    for variant in variants:
        if variant == "full":
            cfg = model_cfg
        elif variant == "no_cluster":
            cfg = replace(model_cfg, use_prior_block=False)
        elif variant == "no_static":
            cfg = replace(model_cfg, use_static=False)
        else:  # no_gnn
            cfg = replace(model_cfg, gnn_layers=0)
        _ckpt, runlog = train_one(train_cfg, cfg, dataset, cluster_model, priors, seed)
        scores[variant] = runlog.epochs[runlog.best_epoch].val_core
        best_epochs[variant] = runlog.best_epoch
        hashes[variant] = runlog.data_order_hash
    return AblationResult(scores=scores, best_epochs=best_epochs, data_order_hashes=hashes)
