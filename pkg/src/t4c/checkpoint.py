"""Deterministic binary checkpoint container.

Layout: a 4-byte magic, a little-endian uint32 format version, a
little-endian uint64 header length, the JSON header (sorted keys), then
the concatenated raw little-endian float64 buffers of all tensors in
header order. The same inputs always produce the same bytes, and values
round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig
from .seggraph import NormStats

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"T4CK"
VERSION = 1


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """A trained parameter snapshot plus everything needed to use it."""

    params: dict[str, np.ndarray]
    norm_stats: NormStats
    config: ModelConfig
    cc_weights: np.ndarray
    vol_weights: np.ndarray
    config_hash: str

    def equals(self, other: "Checkpoint") -> bool:
        if self.config != other.config or self.config_hash != other.config_hash:
            return False
        if set(self.params) != set(other.params):
            return False
        return all(np.array_equal(self.params[k], other.params[k]) for k in self.params)


def _norm_stats_obj(stats: NormStats) -> dict:
    return {
        "cont_mean": stats.cont_mean.tolist(),
        "cont_std": stats.cont_std.tolist(),
        "counter_mean": stats.counter_mean.tolist(),
        "counter_std": stats.counter_std.tolist(),
        "speed_mean": stats.speed_mean,
        "speed_std": stats.speed_std,
    }


def _norm_stats_from(obj: dict) -> NormStats:
    return NormStats(
        cont_mean=np.asarray(obj["cont_mean"], dtype=np.float64),
        cont_std=np.asarray(obj["cont_std"], dtype=np.float64),
        counter_mean=np.asarray(obj["counter_mean"], dtype=np.float64),
        counter_std=np.asarray(obj["counter_std"], dtype=np.float64),
        speed_mean=float(obj["speed_mean"]),
        speed_std=float(obj["speed_std"]),
    )


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    names = sorted(ckpt.params)
    tensors = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype=np.float64)
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {
        "tensors": tensors,
        "norm_stats": _norm_stats_obj(ckpt.norm_stats),
        "config": asdict(ckpt.config),
        "config_hash": ckpt.config_hash,
        "cc_weights": ckpt.cc_weights.tolist(),
        "vol_weights": ckpt.vol_weights.tolist(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for name in names:
            arr = np.ascontiguousarray(ckpt.params[name], dtype=np.float64)
            fh.write(arr.astype("<f8", copy=False).tobytes())
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = int.from_bytes(raw[4:8], "little")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header_len = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    payload = raw[16 + header_len :]

    params: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = spec["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(shape)
        params[spec["name"]] = arr.astype(np.float64).copy()

    # dataclass fields arrive as lists/JSON scalars; tuples restore the config
    cfg_obj = dict(header["config"])
    for key in ("volume_hidden", "static_hidden", "lambdas"):
        cfg_obj[key] = tuple(cfg_obj[key])
    config = ModelConfig(**cfg_obj)
    return Checkpoint(
        params=params,
        norm_stats=_norm_stats_from(header["norm_stats"]),
        config=config,
        cc_weights=np.asarray(header["cc_weights"], dtype=np.float64),
        vol_weights=np.asarray(header["vol_weights"], dtype=np.float64),
        config_hash=header["config_hash"],
    )
