"""Training loop, validation-based checkpoint selection, and ensembling.

Each optimizer step accumulates gradients over a small batch of records
(every record is one full-graph forward), averages them, and applies one
Adam update. After every epoch the validation congestion score is
computed and the best epoch's parameters are kept. Ensemble members
differ only by their seed; ensemble prediction averages the members'
probabilities (and de-normalized speeds) in a fixed summation order.
"""

from __future__ import annotations

import hashlib
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint
from .clustering import ClusterModel, PriorMatrix, assign_cluster
from .data import Dataset, VolumeRecord, daytime_filter, labels_by_record, split_train_validation
from .evaluation import core_metric
from .model import (
    LabelArrays,
    ModelConfig,
    PredictionProbs,
    compute_loss,
    config_hash,
    forward,
    init_params,
    inverse_frequency_weights,
    make_label_arrays,
    predict_probabilities,
)
from .seggraph import SegmentGraph, assemble_features, build_line_graph, fit_normalization

__all__ = [
    "TrainConfig",
    "EpochLog",
    "RunLog",
    "TrainingDivergedError",
    "train_one",
    "train_ensemble",
    "ensemble_predict",
    "predict_record",
    "save_runlog",
    "load_runlog",
]


class TrainingDivergedError(RuntimeError):
    """Raised when a loss turns non-finite; reports the last finite state."""


@dataclass(frozen=True)
class TrainConfig:
    """Training regimen knobs (defaults: 20 epochs, batch 2, 9 members)."""

    epochs: int = 20
    batch_size: int = 2
    learning_rate: float = 1e-3
    ensemble_size: int = 9
    base_seed: int = 0
    member_seeds: tuple[int, ...] | None = None
    daytime: tuple[int, int] = (24, 88)
    val_fraction: float = 0.2
    split_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.ensemble_size < 1:
            raise ValueError(f"ensemble_size must be >= 1, got {self.ensemble_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")

    def seeds(self) -> tuple[int, ...]:
        if self.member_seeds is not None:
            if len(self.member_seeds) != self.ensemble_size:
                raise ValueError(
                    f"{len(self.member_seeds)} member seeds for ensemble of {self.ensemble_size}"
                )
            return tuple(self.member_seeds)
        return tuple(self.base_seed + k for k in range(self.ensemble_size))


@dataclass(frozen=True)
class EpochLog:
    train_loss: float
    train_loss_cc: float
    train_loss_speed: float
    train_loss_vol: float
    val_core: float


@dataclass(frozen=True)
class RunLog:
    """Per-epoch history plus the chosen checkpoint epoch.

    ``wall_time_s`` is informational only and excluded from the canonical
    serialization so that identical runs produce identical bytes.
    """

    epochs: tuple[EpochLog, ...]
    best_epoch: int
    seed: int
    data_order_hash: str
    wall_time_s: float | None = field(default=None, compare=False)


def save_runlog(path, runlog: RunLog) -> Path:
    path = Path(path)
    obj = {
        "epochs": [
            {
                "train_loss": e.train_loss,
                "train_loss_cc": e.train_loss_cc,
                "train_loss_speed": e.train_loss_speed,
                "train_loss_vol": e.train_loss_vol,
                "val_core": e.val_core,
            }
            for e in runlog.epochs
        ],
        "best_epoch": runlog.best_epoch,
        "seed": runlog.seed,
        "data_order_hash": runlog.data_order_hash,
    }
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def load_runlog(path) -> RunLog:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return RunLog(
        epochs=tuple(
            EpochLog(
                train_loss=e["train_loss"],
                train_loss_cc=e["train_loss_cc"],
                train_loss_speed=e["train_loss_speed"],
                train_loss_vol=e["train_loss_vol"],
                val_core=e["val_core"],
            )
            for e in obj["epochs"]
        ),
        best_epoch=obj["best_epoch"],
        seed=obj["seed"],
        data_order_hash=obj["data_order_hash"],
    )


def _chunks(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _record_features(
    dataset: Dataset,
    seg_graph: SegmentGraph,
    records: Sequence[VolumeRecord],
    priors: Mapping[str, PriorMatrix],
    norm_stats,
    model_cfg: ModelConfig,
    cluster_model: ClusterModel | None,
):
    features = {}
    for record in records:
        cluster_index = None
        if model_cfg.prior_mode == "active_row":
            if cluster_model is None:
                raise ValueError("prior_mode 'active_row' needs a cluster model at feature time")
            cluster_index = assign_cluster(cluster_model, record)
        features[record.record_id] = assemble_features(
            dataset.graph, seg_graph, record, priors, norm_stats,
            prior_mode=model_cfg.prior_mode, cluster_index=cluster_index,
        )
    return features


def _validation_score(
    store: ad.ParamStore,
    model_cfg: ModelConfig,
    seg_graph: SegmentGraph,
    features: Mapping[str, object],
    val_records: Sequence[VolumeRecord],
    label_map,
    norm_stats,
) -> float:
    predictions = {}
    for record in val_records:
        pred = forward(store, model_cfg, seg_graph, features[record.record_id])
        probs = predict_probabilities(pred, norm_stats)
        predictions[record.record_id] = {
            seg_id: probs.cc[i] for i, seg_id in enumerate(seg_graph.seg_ids)
        }
    val_labels = [label_map[r.record_id] for r in val_records if r.record_id in label_map]
    score = core_metric(predictions, val_labels)
    if score.score is None:
        raise ValueError("validation split has no scored congestion labels")
    return score.score


def train_one(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    dataset: Dataset,
    cluster_model: ClusterModel,
    priors: Mapping[str, PriorMatrix],
    seed: int,
) -> tuple[Checkpoint, RunLog]:
    """Train one model; deterministic given (configs, dataset, seed).

    Returns the parameters of the epoch with the lowest validation
    congestion score (earliest epoch wins ties) and the full run history.
    A non-finite loss aborts immediately with the last finite state in
    the error message.
    """
    t_start = time.perf_counter()
    records = daytime_filter(dataset.records, *train_cfg.daytime)
    if not records:
        raise ValueError("no records left after the daytime filter")
    train_records, val_records = split_train_validation(
        records, 1.0 - train_cfg.val_fraction, train_cfg.split_seed
    )
    label_map = labels_by_record(dataset.labels)
    train_labels = [label_map[r.record_id] for r in train_records if r.record_id in label_map]

    seg_graph = build_line_graph(dataset.graph)
    norm_stats = fit_normalization(dataset.graph, train_records, train_labels)
    features = _record_features(
        dataset, seg_graph, records, priors, norm_stats, model_cfg, cluster_model
    )
    targets: dict[str, LabelArrays] = {
        r.record_id: make_label_arrays(
            label_map.get(r.record_id), seg_graph, norm_stats, model_cfg.cc_classes
        )
        for r in records
    }
    train_targets = [targets[r.record_id] for r in train_records]
    cc_weights = inverse_frequency_weights(train_targets, "cc", model_cfg.cc_classes)
    vol_weights = inverse_frequency_weights(train_targets, "vol", 3)

    store = init_params(model_cfg, seed)
    shuffler = random.Random(seed)
    order_hash = hashlib.sha256()

    epoch_logs: list[EpochLog] = []
    best_epoch = -1
    best_score = float("inf")
    best_params: dict[str, np.ndarray] | None = None
    last_finite: tuple[int, float] | None = None

    for epoch in range(train_cfg.epochs):
        order = list(train_records)
        shuffler.shuffle(order)
        order_hash.update(",".join(r.record_id for r in order).encode("utf-8"))

        sums = np.zeros(4)
        for batch in _chunks(order, train_cfg.batch_size):
            store.zero_grad()
            for record in batch:
                loss, report = compute_loss(
                    forward(store, model_cfg, seg_graph, features[record.record_id]),
                    targets[record.record_id],
                    cc_weights,
                    vol_weights,
                    model_cfg.lambdas,
                )
                if not np.isfinite(report.loss):
                    state = f"last finite state: {last_finite}" if last_finite else "no finite step yet"
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, record {record.record_id!r}; {state}"
                    )
                last_finite = (epoch, report.loss)
                loss.backward()
                sums += (report.loss, report.loss_cc, report.loss_speed, report.loss_vol)
            store.scale_grads(1.0 / len(batch))
            ad.adam_step(store, lr=train_cfg.learning_rate)

        val_core = _validation_score(
            store, model_cfg, seg_graph, features, val_records, label_map, norm_stats
        )
        mean = sums / len(order)
        epoch_logs.append(
            EpochLog(
                train_loss=float(mean[0]),
                train_loss_cc=float(mean[1]),
                train_loss_speed=float(mean[2]),
                train_loss_vol=float(mean[3]),
                val_core=val_core,
            )
        )
        if val_core < best_score:
            best_score = val_core
            best_epoch = epoch
            best_params = store.state_arrays()

    assert best_params is not None
    ckpt = Checkpoint(
        params=best_params,
        norm_stats=norm_stats,
        config=model_cfg,
        cc_weights=cc_weights,
        vol_weights=vol_weights,
        config_hash=config_hash(model_cfg),
    )
    runlog = RunLog(
        epochs=tuple(epoch_logs),
        best_epoch=best_epoch,
        seed=seed,
        data_order_hash=order_hash.hexdigest(),
        wall_time_s=time.perf_counter() - t_start,
    )
    return ckpt, runlog


def train_ensemble(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    dataset: Dataset,
    cluster_model: ClusterModel,
    priors: Mapping[str, PriorMatrix],
) -> list[tuple[Checkpoint, RunLog]]:
    """Train the ensemble members sequentially; they differ only by seed."""
    return [
        train_one(train_cfg, model_cfg, dataset, cluster_model, priors, seed)
        for seed in train_cfg.seeds()
    ]


def load_store(ckpt: Checkpoint) -> ad.ParamStore:
    """Materialize a checkpoint's parameters into a fresh store."""
    store = init_params(ckpt.config, seed=0)
    store.load_arrays(ckpt.params)
    return store


def predict_record(
    ckpt: Checkpoint,
    dataset_graph,
    seg_graph: SegmentGraph,
    priors: Mapping[str, PriorMatrix],
    record: VolumeRecord,
    cluster_model: ClusterModel | None = None,
    store: ad.ParamStore | None = None,
) -> PredictionProbs:
    """Single-model probabilities for one record."""
    cluster_index = None
    if ckpt.config.prior_mode == "active_row":
        if cluster_model is None:
            raise ValueError("prior_mode 'active_row' needs a cluster model at predict time")
        cluster_index = assign_cluster(cluster_model, record)
    features = assemble_features(
        dataset_graph, seg_graph, record, priors, ckpt.norm_stats,
        prior_mode=ckpt.config.prior_mode, cluster_index=cluster_index,
    )
    if store is None:
        store = load_store(ckpt)
    pred = forward(store, ckpt.config, seg_graph, features)
    return predict_probabilities(pred, ckpt.norm_stats)


def ensemble_predict(
    checkpoints: Sequence[Checkpoint],
    dataset_graph,
    seg_graph: SegmentGraph,
    priors: Mapping[str, PriorMatrix],
    record: VolumeRecord,
    cluster_model: ClusterModel | None = None,
    stores: Sequence[ad.ParamStore] | None = None,
) -> PredictionProbs:
    """Mean of member probabilities and speeds, summed in member order.

    ``stores`` may carry pre-loaded parameter stores (one per checkpoint)
    to avoid rebuilding them when predicting many records.
    """
    if not checkpoints:
        raise ValueError("ensemble_predict needs at least one checkpoint")
    first_hash = checkpoints[0].config_hash
    for ckpt in checkpoints[1:]:
        if ckpt.config_hash != first_hash:
            raise ValueError(
                f"checkpoint config hash mismatch: {ckpt.config_hash} vs {first_hash}"
            )
    cc_sum = speed_sum = vol_sum = None
    for ckpt, store in zip(checkpoints, stores or [None] * len(checkpoints)):
        probs = predict_record(
            ckpt, dataset_graph, seg_graph, priors, record, cluster_model, store=store
        )
        if cc_sum is None:
            cc_sum = probs.cc.copy()
            speed_sum = probs.speed_kph.copy()
            vol_sum = probs.vol.copy()
        else:
            cc_sum += probs.cc
            speed_sum += probs.speed_kph
            vol_sum += probs.vol
    n = float(len(checkpoints))
    return PredictionProbs(cc=cc_sum / n, speed_kph=speed_sum / n, vol=vol_sum / n)
