"""The segment forecasting network and its multi-task loss.

Pipeline per record: the 8-dim counter slice runs through a small MLP
(volume feature); categorical embeddings, normalized continuous
attributes and the prior block are concatenated and encoded (static
feature); both are concatenated, projected to the hidden width and passed
through L rounds of message passing over the segment graph (each round
mixes the node's own state with the mean of its neighbors); three
residual-block head stacks then emit congestion logits, a speed value in
normalized space, and volume-class logits.

Losses: class-weighted cross entropy for congestion and volume class
(rows without a label are masked out), mean squared error on normalized
speed, combined as lambda1 * L_c + lambda2 * L_s + lambda3 * L_v with the
training default (0.03, 1, 1).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .data import LabelBundle
from .seggraph import FeatureBundle, NormStats, SegmentGraph

__all__ = [
    "ModelConfig",
    "PredictionBundle",
    "PredictionProbs",
    "LabelArrays",
    "LossReport",
    "VOCAB_SIZES",
    "init_params",
    "forward",
    "make_label_arrays",
    "compute_loss",
    "predict_probabilities",
    "inverse_frequency_weights",
    "config_hash",
]

# categorical vocabularies: importance 0..5, oneway 0/1, tunnel 0/1, lanes 1..4
VOCAB_SIZES = {"importance": 6, "oneway": 2, "tunnel": 2, "lanes": 4}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and loss-weighting knobs.

    The embedding widths (5/2/2/3) are the fixed defaults for the four
    categorical attributes; ``cc_classes`` is 3 (green/yellow/red, the
    undefined code masked) unless explicitly raised to 4 to keep the
    undefined state as its own class. ``use_prior_block`` / ``use_static``
    zero the matching feature slices for ablations.
    """

    importance_dim: int = 5
    oneway_dim: int = 2
    tunnel_dim: int = 2
    lanes_dim: int = 3
    volume_hidden: tuple[int, ...] = (32, 32)
    static_hidden: tuple[int, ...] = (32,)
    gnn_layers: int = 3
    hidden: int = 64
    head_blocks: int = 2
    lambdas: tuple[float, float, float] = (0.03, 1.0, 1.0)
    prior_mode: str = "full"  # or "active_row"
    num_clusters: int = 10
    cc_classes: int = 3
    use_prior_block: bool = True
    use_static: bool = True

    def __post_init__(self):
        if self.prior_mode not in ("full", "active_row"):
            raise ValueError(f"prior_mode must be 'full' or 'active_row', got {self.prior_mode!r}")
        if self.cc_classes not in (3, 4):
            raise ValueError(f"cc_classes must be 3 or 4, got {self.cc_classes}")
        if any(lam <= 0 for lam in self.lambdas):
            raise ValueError(f"lambda components must be > 0, got {self.lambdas}")
        if self.gnn_layers < 0:
            raise ValueError(f"gnn_layers must be >= 0, got {self.gnn_layers}")

    @property
    def prior_width(self) -> int:
        return 3 * self.num_clusters if self.prior_mode == "full" else 3

    @property
    def embedding_width(self) -> int:
        return self.importance_dim + self.oneway_dim + self.tunnel_dim + self.lanes_dim

    @property
    def static_input_width(self) -> int:
        # embeddings + 5 continuous attributes + prior block
        return self.embedding_width + 5 + self.prior_width


@dataclass(frozen=True, eq=False)
class PredictionBundle:
    """Raw head outputs for one record (autodiff tensors)."""

    cc_logits: Tensor  # (N, cc_classes)
    speed_pred: Tensor  # (N,), normalized space
    vol_logits: Tensor  # (N, 3)


@dataclass(frozen=True, eq=False)
class PredictionProbs:
    """Consumer-facing probabilities and de-normalized speeds."""

    cc: np.ndarray  # (N, 3) green/yellow/red
    speed_kph: np.ndarray  # (N,)
    vol: np.ndarray  # (N, 3) classes {1, 3, 5}


@dataclass(frozen=True, eq=False)
class LabelArrays:
    """Per-record training targets aligned to the dense segment index.

    Class arrays use -1 for masked rows. Speeds are stored in normalized
    space together with their presence mask.
    """

    cc: np.ndarray  # (N,) int
    speed: np.ndarray  # (N,) float, normalized
    speed_mask: np.ndarray  # (N,) bool
    vol: np.ndarray  # (N,) int


@dataclass(frozen=True)
class LossReport:
    loss_cc: float
    loss_speed: float
    loss_vol: float
    loss: float
    n_cc: int
    n_speed: int
    n_vol: int

    @property
    def all_masked(self) -> bool:
        return self.n_cc == 0 and self.n_speed == 0 and self.n_vol == 0


def config_hash(config: ModelConfig) -> str:
    """Stable digest used to refuse mismatched checkpoint/config pairs."""
    payload = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _add_linear(store: ParamStore, rng: np.random.Generator, name: str, fan_in: int, fan_out: int):
    store.add(f"{name}_w", ad.glorot_uniform(rng, fan_in, fan_out))
    store.add(f"{name}_b", np.zeros(fan_out))


def init_params(config: ModelConfig, seed: int) -> ParamStore:
    """Create all parameters in a fixed order from one seeded generator."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("emb_importance", ad.embedding_normal(rng, VOCAB_SIZES["importance"], config.importance_dim))
    store.add("emb_oneway", ad.embedding_normal(rng, VOCAB_SIZES["oneway"], config.oneway_dim))
    store.add("emb_tunnel", ad.embedding_normal(rng, VOCAB_SIZES["tunnel"], config.tunnel_dim))
    store.add("emb_lanes", ad.embedding_normal(rng, VOCAB_SIZES["lanes"], config.lanes_dim))

    width = 8
    for i, hidden in enumerate(config.volume_hidden):
        _add_linear(store, rng, f"vol{i}", width, hidden)
        width = hidden
    vol_out = width

    width = config.static_input_width
    for i, hidden in enumerate(config.static_hidden):
        _add_linear(store, rng, f"static{i}", width, hidden)
        width = hidden
    static_out = width

    _add_linear(store, rng, "combine", vol_out + static_out, config.hidden)
    for layer in range(config.gnn_layers):
        store.add(f"gnn{layer}_self_w", ad.glorot_uniform(rng, config.hidden, config.hidden))
        store.add(f"gnn{layer}_nbr_w", ad.glorot_uniform(rng, config.hidden, config.hidden))
        store.add(f"gnn{layer}_b", np.zeros(config.hidden))

    head_dims = {"cc": config.cc_classes, "speed": 1, "vol": 3}
    for task, out_dim in head_dims.items():
        for block in range(config.head_blocks):
            _add_linear(store, rng, f"head_{task}_block{block}_a", config.hidden, config.hidden)
            _add_linear(store, rng, f"head_{task}_block{block}_b", config.hidden, config.hidden)
        _add_linear(store, rng, f"head_{task}_out", config.hidden, out_dim)
    return store


def _mlp(store: ParamStore, prefix: str, count: int, x: Tensor) -> Tensor:
    for i in range(count):
        x = ad.relu(ad.add(ad.matmul(x, store[f"{prefix}{i}_w"]), store[f"{prefix}{i}_b"]))
    return x


def _head(store: ParamStore, config: ModelConfig, task: str, x: Tensor) -> Tensor:
    for block in range(config.head_blocks):
        inner = ad.relu(
            ad.add(ad.matmul(x, store[f"head_{task}_block{block}_a_w"]), store[f"head_{task}_block{block}_a_b"])
        )
        inner = ad.add(ad.matmul(inner, store[f"head_{task}_block{block}_b_w"]), store[f"head_{task}_block{block}_b_b"])
        x = ad.add(x, inner)  # identity skip
    return ad.add(ad.matmul(x, store[f"head_{task}_out_w"]), store[f"head_{task}_out_b"])


def forward(
    store: ParamStore,
    config: ModelConfig,
    seg_graph: SegmentGraph,
    features: FeatureBundle,
) -> PredictionBundle:
    """Run the full network on one record's features."""
    n = seg_graph.num_segments
    if features.categorical.shape[0] != n:
        raise ad.ShapeError(
            f"features for {features.categorical.shape[0]} segments vs graph with {n}"
        )
    if features.prior_block.shape[1] != config.prior_width:
        raise ad.ShapeError(
            f"prior block width {features.prior_block.shape[1]} vs config {config.prior_width}"
        )

    volume_feat = _mlp(store, "vol", len(config.volume_hidden), Tensor(features.counter_slice))

    embedded = ad.concat(
        [
            ad.embedding_lookup(store["emb_importance"], features.categorical[:, 0]),
            ad.embedding_lookup(store["emb_oneway"], features.categorical[:, 1]),
            ad.embedding_lookup(store["emb_tunnel"], features.categorical[:, 2]),
            ad.embedding_lookup(store["emb_lanes"], features.categorical[:, 3]),
        ],
        axis=1,
    )
    static_gate = 1.0 if config.use_static else 0.0
    prior_gate = 1.0 if config.use_prior_block else 0.0
    static_in = ad.concat(
        [
            ad.mul(embedded, Tensor(np.float64(static_gate))),
            Tensor(features.continuous * static_gate),
            Tensor(features.prior_block * prior_gate),
        ],
        axis=1,
    )
    static_feat = _mlp(store, "static", len(config.static_hidden), static_in)

    h = ad.add(
        ad.matmul(ad.concat([volume_feat, static_feat], axis=1), store["combine_w"]),
        store["combine_b"],
    )
    for layer in range(config.gnn_layers):
        self_part = ad.matmul(h, store[f"gnn{layer}_self_w"])
        nbr_part = ad.matmul(
            ad.mean_neighbor_aggregate(h, seg_graph.neighbors), store[f"gnn{layer}_nbr_w"]
        )
        h = ad.relu(ad.add(ad.add(self_part, nbr_part), store[f"gnn{layer}_b"]))

    cc_logits = _head(store, config, "cc", h)
    speed = ad.reshape(_head(store, config, "speed", h), (n,))
    vol_logits = _head(store, config, "vol", h)
    return PredictionBundle(cc_logits=cc_logits, speed_pred=speed, vol_logits=vol_logits)


def make_label_arrays(
    bundle: LabelBundle | None,
    seg_graph: SegmentGraph,
    norm_stats: NormStats,
    cc_classes: int = 3,
) -> LabelArrays:
    """Map one record's labels onto the dense segment index.

    With 3 congestion classes the codes 1/2/3 map to 0/1/2 and the
    undefined code 0 is masked; with 4 classes the code maps identically.
    Volume classes {1, 3, 5} map to {0, 1, 2}. Speeds are z-normalized.
    """
    n = seg_graph.num_segments
    cc = np.full(n, -1, dtype=np.int64)
    speed = np.zeros(n, dtype=np.float64)
    speed_mask = np.zeros(n, dtype=bool)
    vol = np.full(n, -1, dtype=np.int64)
    if bundle is not None:
        vol_map = {1: 0, 3: 1, 5: 2}
        for seg_id, lab in bundle.edges.items():
            i = seg_graph.index.get(seg_id)
            if i is None:
                raise ValueError(f"label for unknown segment {seg_id!r}")
            if lab.cc is not None:
                if cc_classes == 3:
                    if lab.cc in (1, 2, 3):
                        cc[i] = lab.cc - 1
                else:
                    cc[i] = lab.cc
            if lab.speed_kph is not None:
                speed[i] = (lab.speed_kph - norm_stats.speed_mean) / norm_stats.speed_std
                speed_mask[i] = True
            if lab.vol_class is not None:
                vol[i] = vol_map[lab.vol_class]
    return LabelArrays(cc=cc, speed=speed, speed_mask=speed_mask, vol=vol)


def compute_loss(
    pred: PredictionBundle,
    labels: LabelArrays,
    cc_weights: np.ndarray,
    vol_weights: np.ndarray,
    lambdas: tuple[float, float, float] = (0.03, 1.0, 1.0),
) -> tuple[Tensor, LossReport]:
    """Combined multi-task loss; returns the scalar tensor and a report.

    Tasks with no labeled segments contribute exactly zero to the value
    and the gradient; their counts in the report flag the condition.
    """
    lam1, lam2, lam3 = lambdas
    loss_cc, n_cc = ad.weighted_cross_entropy(pred.cc_logits, labels.cc, cc_weights)
    loss_speed, n_speed = ad.mse(pred.speed_pred, labels.speed, labels.speed_mask)
    loss_vol, n_vol = ad.weighted_cross_entropy(pred.vol_logits, labels.vol, vol_weights)
    total = ad.add(
        ad.add(ad.mul(loss_cc, Tensor(np.float64(lam1))), ad.mul(loss_speed, Tensor(np.float64(lam2)))),
        ad.mul(loss_vol, Tensor(np.float64(lam3))),
    )
    report = LossReport(
        loss_cc=loss_cc.item(),
        loss_speed=loss_speed.item(),
        loss_vol=loss_vol.item(),
        loss=total.item(),
        n_cc=n_cc,
        n_speed=n_speed,
        n_vol=n_vol,
    )
    return total, report


def predict_probabilities(pred: PredictionBundle, norm_stats: NormStats) -> PredictionProbs:
    """Softmax the logits and map speeds back to km/h.

    A 4-class congestion head (undefined kept) is reduced to the three
    scored classes by dropping the undefined column and renormalizing.
    """
    cc = ad.softmax_np(pred.cc_logits.data, axis=1)
    if cc.shape[1] == 4:
        cc = cc[:, 1:4]
        cc = cc / cc.sum(axis=1, keepdims=True)
    vol = ad.softmax_np(pred.vol_logits.data, axis=1)
    speed = pred.speed_pred.data * norm_stats.speed_std + norm_stats.speed_mean
    return PredictionProbs(cc=cc, speed_kph=speed, vol=vol)


def inverse_frequency_weights(
    label_arrays: Iterable[LabelArrays],
    task: str,
    num_classes: int,
    clip: tuple[float, float] = (0.1, 10.0),
) -> np.ndarray:
    """Class weights N / (C * N_k) over the training labels, clipped.

    Unobserved classes get the upper clip bound.
    """
    counts = np.zeros(num_classes, dtype=np.float64)
    for arrays in label_arrays:
        values = arrays.cc if task == "cc" else arrays.vol
        for cls in values[values >= 0]:
            counts[cls] += 1.0
    total = counts.sum()
    if total == 0:
        return np.ones(num_classes, dtype=np.float64)
    with np.errstate(divide="ignore"):
        weights = np.where(counts > 0, total / (num_classes * counts), np.inf)
    return np.clip(weights, clip[0], clip[1])
