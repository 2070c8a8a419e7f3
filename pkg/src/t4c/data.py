"""Road-graph data model, dataset directory IO and the synthetic city generator.

A dataset directory holds six text files (UTF-8, LF):

* ``meta.json``            -- ``{"format_version": 1, "city_name": ..., "num_day_slots": 96}``
* ``nodes.csv``            -- ``node_id,lat,lon,counter_id`` (counter_id empty when absent)
* ``edges.csv``            -- segment rows with static attributes
* ``volumes.jsonl``        -- one input record per line (omitted counters are zero)
* ``labels.jsonl``         -- per-record, per-segment congestion / speed / volume labels
* ``supersegments.json``   -- ordered segment paths plus observed ETA labels

Loading validates the schema strictly and reports file, line and field on
violations. All loaded structures are immutable after construction.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "SchemaError",
    "DanglingReferenceError",
    "NodeRec",
    "SegmentRec",
    "RoadGraph",
    "VolumeRecord",
    "SegmentLabel",
    "LabelBundle",
    "SuperSegment",
    "Dataset",
    "SynthSpec",
    "CONTINUOUS_FIELDS",
    "load_dataset",
    "write_dataset",
    "daytime_filter",
    "split_train_validation",
    "generate_synthetic_city",
    "labels_by_record",
]

FORMAT_VERSION = 1
NUM_DAY_SLOTS = 96
DAYTIME_SLOTS = (24, 88)  # 6:00-22:00 in 15-minute slots

CONTINUOUS_FIELDS = (
    "parsed_maxspeed",
    "flow_speed",
    "length_meters",
    "counter_distance",
    "limit_speed",
)

VALID_CC = (0, 1, 2, 3)
VALID_VOL_CLASS = (1, 3, 5)


class DatasetError(Exception):
    """Base class for dataset ingestion failures."""


class SchemaError(DatasetError):
    """A file violates the canonical schema; carries file, line and field."""

    def __init__(self, path, line: int | None, fieldname: str | None, message: str):
        self.path = str(path)
        self.line = line
        self.fieldname = fieldname
        where = self.path if line is None else f"{self.path}:{line}"
        what = message if fieldname is None else f"field {fieldname!r}: {message}"
        super().__init__(f"{where}: {what}")


class DanglingReferenceError(SchemaError):
    """An identifier refers to an entity that does not exist."""


@dataclass(frozen=True)
class NodeRec:
    node_id: str
    lat: float
    lon: float
    counter_id: str | None = None


@dataclass(frozen=True)
class SegmentRec:
    """One directed road segment with its static attributes.

    ``lanes`` is the bucketed lane count (1, 2, 3 or 4 meaning 4+);
    ``counter_distance`` is the hop count to the nearest counter node.
    """

    segment_id: str
    tail_node: str
    head_node: str
    importance: int
    oneway: int
    tunnel: int
    lanes: int
    parsed_maxspeed: float
    flow_speed: float
    length_meters: float
    counter_distance: float
    limit_speed: float


@dataclass(frozen=True)
class RoadGraph:
    nodes: tuple[NodeRec, ...]
    segments: tuple[SegmentRec, ...]
    counters: dict[str, str]  # node_id -> counter_id
    # (segment_id, attribute) pairs whose value was median-imputed at load time
    imputed: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    def node_ids(self) -> set[str]:
        return {n.node_id for n in self.nodes}

    def segment_ids(self) -> set[str]:
        return {s.segment_id for s in self.segments}


@dataclass(frozen=True)
class VolumeRecord:
    """One model input: per-counter volumes over four 15-minute bins.

    Counters absent from ``volumes`` are semantically zero.
    """

    record_id: str
    day: date
    t_index: int
    volumes: dict[str, tuple[int, int, int, int]]


@dataclass(frozen=True)
class SegmentLabel:
    cc: int | None = None
    speed_kph: float | None = None
    vol_class: int | None = None


@dataclass(frozen=True)
class LabelBundle:
    record_id: str
    edges: dict[str, SegmentLabel]


@dataclass(frozen=True)
class SuperSegment:
    ss_id: str
    path: tuple[str, ...]
    etas: dict[str, float]  # record_id -> seconds


class Dataset(NamedTuple):
    graph: RoadGraph
    records: tuple[VolumeRecord, ...]
    labels: tuple[LabelBundle, ...]
    supersegments: tuple[SuperSegment, ...]


def labels_by_record(labels: Iterable[LabelBundle]) -> dict[str, LabelBundle]:
    return {bundle.record_id: bundle for bundle in labels}


# ---------------------------------------------------------------------------
# loading


def _require_file(dir_path: Path, name: str) -> Path:
    path = dir_path / name
    if not path.is_file():
        raise FileNotFoundError(f"missing dataset file: {path}")
    return path


def _parse_int(raw, path, line, fieldname) -> int:
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise SchemaError(path, line, fieldname, f"expected an integer, got {raw!r}") from None
    return value


def _parse_float(raw, path, line, fieldname) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise SchemaError(path, line, fieldname, f"expected a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise SchemaError(path, line, fieldname, f"expected a finite number, got {raw!r}")
    return value


def _load_meta(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(path, exc.lineno, None, f"invalid JSON: {exc.msg}") from None
    if not isinstance(meta, dict):
        raise SchemaError(path, None, None, "meta must be a JSON object")
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaError(
            path, None, "format_version", f"expected {FORMAT_VERSION}, got {version!r}"
        )
    if meta.get("num_day_slots") != NUM_DAY_SLOTS:
        raise SchemaError(
            path, None, "num_day_slots", f"expected {NUM_DAY_SLOTS}, got {meta.get('num_day_slots')!r}"
        )
    return meta


def _load_nodes(path: Path) -> tuple[tuple[NodeRec, ...], dict[str, str]]:
    nodes: list[NodeRec] = []
    counters: dict[str, str] = {}
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["node_id", "lat", "lon", "counter_id"]
        if reader.fieldnames != expected:
            raise SchemaError(path, 1, None, f"expected header {expected}, got {reader.fieldnames}")
        for row in reader:
            line = reader.line_num
            node_id = (row["node_id"] or "").strip()
            if not node_id:
                raise SchemaError(path, line, "node_id", "must not be empty")
            if node_id in seen:
                raise SchemaError(path, line, "node_id", f"duplicate node id {node_id!r}")
            seen.add(node_id)
            lat = _parse_float(row["lat"], path, line, "lat")
            lon = _parse_float(row["lon"], path, line, "lon")
            counter_raw = (row["counter_id"] or "").strip()
            counter_id = counter_raw or None
            if counter_id is not None:
                counters[node_id] = counter_id
            nodes.append(NodeRec(node_id, lat, lon, counter_id))
    return tuple(nodes), counters


def _load_edges(path: Path, node_ids: set[str]) -> tuple[tuple[SegmentRec, ...], tuple[tuple[str, str], ...]]:
    expected = [
        "segment_id", "tail_node", "head_node", "importance", "oneway", "tunnel",
        "lanes", "parsed_maxspeed", "flow_speed", "length_meters",
        "counter_distance", "limit_speed",
    ]
    rows: list[dict] = []
    seen: set[str] = set()
    missing: dict[str, list[int]] = {name: [] for name in CONTINUOUS_FIELDS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != expected:
            raise SchemaError(path, 1, None, f"expected header {expected}, got {reader.fieldnames}")
        for row in reader:
            line = reader.line_num
            seg_id = (row["segment_id"] or "").strip()
            if not seg_id:
                raise SchemaError(path, line, "segment_id", "must not be empty")
            if seg_id in seen:
                raise SchemaError(path, line, "segment_id", f"duplicate segment id {seg_id!r}")
            seen.add(seg_id)
            for endpoint in ("tail_node", "head_node"):
                ref = (row[endpoint] or "").strip()
                if ref not in node_ids:
                    raise DanglingReferenceError(path, line, endpoint, f"unknown node {ref!r}")
            importance = _parse_int(row["importance"], path, line, "importance")
            if not 0 <= importance <= 5:
                raise SchemaError(path, line, "importance", f"must be in 0..5, got {importance}")
            oneway = _parse_int(row["oneway"], path, line, "oneway")
            tunnel = _parse_int(row["tunnel"], path, line, "tunnel")
            for name, value in (("oneway", oneway), ("tunnel", tunnel)):
                if value not in (0, 1):
                    raise SchemaError(path, line, name, f"must be 0 or 1, got {value}")
            lanes_raw = _parse_int(row["lanes"], path, line, "lanes")
            if lanes_raw < 1:
                raise SchemaError(path, line, "lanes", f"must be >= 1, got {lanes_raw}")
            parsed = dict(
                segment_id=seg_id,
                tail_node=row["tail_node"].strip(),
                head_node=row["head_node"].strip(),
                importance=importance,
                oneway=oneway,
                tunnel=tunnel,
                lanes=min(lanes_raw, 4),
            )
            for name in CONTINUOUS_FIELDS:
                raw = (row[name] or "").strip()
                if raw == "":
                    missing[name].append(len(rows))
                    parsed[name] = None
                else:
                    parsed[name] = _parse_float(raw, path, line, name)
            parsed["_line"] = line
            rows.append(parsed)

    imputed: list[tuple[str, str]] = []
    for name, holes in missing.items():
        if not holes:
            continue
        present = [r[name] for r in rows if r[name] is not None]
        if not present:
            raise SchemaError(path, None, name, "missing in every row; cannot impute")
        median = float(np.median(present))
        for i in holes:
            rows[i][name] = median
            imputed.append((rows[i]["segment_id"], name))

    segments: list[SegmentRec] = []
    for r in rows:
        line = r.pop("_line")
        if r["length_meters"] <= 0:
            raise SchemaError(path, line, "length_meters", f"must be > 0, got {r['length_meters']}")
        for name in ("parsed_maxspeed", "flow_speed", "limit_speed", "counter_distance"):
            if r[name] < 0:
                raise SchemaError(path, line, name, f"must be >= 0, got {r[name]}")
        segments.append(SegmentRec(**r))
    return tuple(segments), tuple(imputed)


def _load_volumes(path: Path, counters: dict[str, str], node_ids: set[str]) -> tuple[VolumeRecord, ...]:
    records: list[VolumeRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, line_no, None, f"invalid JSON: {exc.msg}") from None
            for key in ("record_id", "day", "t_index", "volumes"):
                if key not in obj:
                    raise SchemaError(path, line_no, key, "required key missing")
            record_id = str(obj["record_id"])
            if record_id in seen:
                raise SchemaError(path, line_no, "record_id", f"duplicate record id {record_id!r}")
            seen.add(record_id)
            try:
                day = date.fromisoformat(obj["day"])
            except (TypeError, ValueError):
                raise SchemaError(path, line_no, "day", f"expected YYYY-MM-DD, got {obj['day']!r}") from None
            t_index = _parse_int(obj["t_index"], path, line_no, "t_index")
            if not 0 <= t_index < NUM_DAY_SLOTS:
                raise SchemaError(path, line_no, "t_index", f"must be in 0..95, got {t_index}")
            if not isinstance(obj["volumes"], dict):
                raise SchemaError(path, line_no, "volumes", "must be an object")
            volumes: dict[str, tuple[int, int, int, int]] = {}
            for node_id, vec in obj["volumes"].items():
                if node_id not in node_ids:
                    raise DanglingReferenceError(path, line_no, "volumes", f"unknown node {node_id!r}")
                if node_id not in counters:
                    raise SchemaError(path, line_no, "volumes", f"node {node_id!r} has no counter")
                if not isinstance(vec, list) or len(vec) != 4:
                    raise SchemaError(
                        path, line_no, "volumes",
                        f"volume vector for {node_id!r} must have exactly 4 bins (one hour), got {vec!r}",
                    )
                counts = []
                for v in vec:
                    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v) or v < 0:
                        raise SchemaError(
                            path, line_no, "volumes",
                            f"counts must be nonnegative integers, got {v!r} for {node_id!r}",
                        )
                    counts.append(int(v))
                volumes[node_id] = tuple(counts)
            records.append(VolumeRecord(record_id, day, t_index, volumes))
    return tuple(records)


def _load_labels(path: Path, record_ids: set[str], segment_ids: set[str]) -> tuple[LabelBundle, ...]:
    bundles: list[LabelBundle] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, line_no, None, f"invalid JSON: {exc.msg}") from None
            record_id = str(obj.get("record_id"))
            if record_id not in record_ids:
                raise DanglingReferenceError(path, line_no, "record_id", f"unknown record {record_id!r}")
            if record_id in seen:
                raise SchemaError(path, line_no, "record_id", f"duplicate label bundle for {record_id!r}")
            seen.add(record_id)
            edges_obj = obj.get("edges")
            if not isinstance(edges_obj, dict):
                raise SchemaError(path, line_no, "edges", "must be an object")
            edges: dict[str, SegmentLabel] = {}
            for seg_id, lab in edges_obj.items():
                if seg_id not in segment_ids:
                    raise DanglingReferenceError(path, line_no, "edges", f"unknown segment {seg_id!r}")
                if not isinstance(lab, dict):
                    raise SchemaError(path, line_no, "edges", f"label for {seg_id!r} must be an object")
                cc = lab.get("cc")
                if cc is not None:
                    cc = _parse_int(cc, path, line_no, "cc")
                    if cc not in VALID_CC:
                        raise SchemaError(path, line_no, "cc", f"must be one of {VALID_CC}, got {cc}")
                speed = lab.get("speed_kph")
                if speed is not None:
                    speed = _parse_float(speed, path, line_no, "speed_kph")
                    if speed < 0:
                        raise SchemaError(path, line_no, "speed_kph", f"must be >= 0, got {speed}")
                vol = lab.get("vol_class")
                if vol is not None:
                    vol = _parse_int(vol, path, line_no, "vol_class")
                    if vol not in VALID_VOL_CLASS:
                        raise SchemaError(
                            path, line_no, "vol_class", f"must be one of {VALID_VOL_CLASS}, got {vol}"
                        )
                edges[seg_id] = SegmentLabel(cc=cc, speed_kph=speed, vol_class=vol)
            bundles.append(LabelBundle(record_id, edges))
    return tuple(bundles)


def _load_supersegments(
    path: Path, record_ids: set[str], segments: Sequence[SegmentRec]
) -> tuple[SuperSegment, ...]:
    seg_by_id = {s.segment_id: s for s in segments}
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(path, exc.lineno, None, f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict) or "paths" not in obj or "etas" not in obj:
        raise SchemaError(path, None, None, 'expected {"paths": ..., "etas": ...}')
    paths: dict[str, tuple[str, ...]] = {}
    for ss_id, raw_path in obj["paths"].items():
        if not isinstance(raw_path, list) or not raw_path:
            raise SchemaError(path, None, "paths", f"path for {ss_id!r} must be a non-empty list")
        for seg_id in raw_path:
            if seg_id not in seg_by_id:
                raise DanglingReferenceError(path, None, "paths", f"unknown segment {seg_id!r}")
        for a, b in zip(raw_path, raw_path[1:]):
            if seg_by_id[a].head_node != seg_by_id[b].tail_node:
                raise SchemaError(
                    path, None, "paths",
                    f"supersegment {ss_id!r}: {a!r} -> {b!r} is not chainable",
                )
        paths[ss_id] = tuple(raw_path)
    etas: dict[str, dict[str, float]] = {ss_id: {} for ss_id in paths}
    for entry in obj["etas"]:
        if not isinstance(entry, dict):
            raise SchemaError(path, None, "etas", f"expected objects, got {entry!r}")
        record_id = str(entry.get("record_id"))
        ss_id = str(entry.get("ss_id"))
        if record_id not in record_ids:
            raise DanglingReferenceError(path, None, "etas", f"unknown record {record_id!r}")
        if ss_id not in paths:
            raise DanglingReferenceError(path, None, "etas", f"unknown supersegment {ss_id!r}")
        eta = _parse_float(entry.get("eta_s"), path, None, "eta_s")
        if eta <= 0:
            raise SchemaError(path, None, "eta_s", f"must be > 0, got {eta}")
        if record_id in etas[ss_id]:
            raise SchemaError(path, None, "etas", f"duplicate eta for ({record_id!r}, {ss_id!r})")
        etas[ss_id][record_id] = eta
    return tuple(SuperSegment(ss_id, paths[ss_id], etas[ss_id]) for ss_id in paths)


def load_dataset(dir_path) -> Dataset:
    """Load and validate a canonical dataset directory."""
    dir_path = Path(dir_path)
    meta_path = _require_file(dir_path, "meta.json")
    nodes_path = _require_file(dir_path, "nodes.csv")
    edges_path = _require_file(dir_path, "edges.csv")
    volumes_path = _require_file(dir_path, "volumes.jsonl")
    labels_path = _require_file(dir_path, "labels.jsonl")
    ss_path = _require_file(dir_path, "supersegments.json")

    _load_meta(meta_path)
    nodes, counters = _load_nodes(nodes_path)
    node_ids = {n.node_id for n in nodes}
    segments, imputed = _load_edges(edges_path, node_ids)
    graph = RoadGraph(nodes=nodes, segments=segments, counters=counters, imputed=imputed)
    records = _load_volumes(volumes_path, counters, node_ids)
    record_ids = {r.record_id for r in records}
    labels = _load_labels(labels_path, record_ids, graph.segment_ids())
    supersegments = _load_supersegments(ss_path, record_ids, segments)
    return Dataset(graph, records, labels, supersegments)


# ---------------------------------------------------------------------------
# writing


def _fmt(value) -> str:
    # repr of a float round-trips exactly; ints stay ints
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _label_obj(label: SegmentLabel) -> dict:
    return {"cc": label.cc, "speed_kph": label.speed_kph, "vol_class": label.vol_class}


def write_dataset(dataset: Dataset, dir_path, city_name: str = "city") -> Path:
    """Write a dataset to a canonical directory; bytes are deterministic."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    graph, records, labels, supersegments = dataset

    meta = {"format_version": FORMAT_VERSION, "city_name": city_name, "num_day_slots": NUM_DAY_SLOTS}
    (dir_path / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["node_id", "lat", "lon", "counter_id"])
    for n in graph.nodes:
        writer.writerow([n.node_id, _fmt(n.lat), _fmt(n.lon), n.counter_id or ""])
    (dir_path / "nodes.csv").write_text(buf.getvalue(), encoding="utf-8")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([
        "segment_id", "tail_node", "head_node", "importance", "oneway", "tunnel",
        "lanes", "parsed_maxspeed", "flow_speed", "length_meters",
        "counter_distance", "limit_speed",
    ])
    for s in graph.segments:
        writer.writerow([
            s.segment_id, s.tail_node, s.head_node, s.importance, s.oneway, s.tunnel,
            s.lanes, _fmt(s.parsed_maxspeed), _fmt(s.flow_speed), _fmt(s.length_meters),
            _fmt(s.counter_distance), _fmt(s.limit_speed),
        ])
    (dir_path / "edges.csv").write_text(buf.getvalue(), encoding="utf-8")

    with open(dir_path / "volumes.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            obj = {
                "record_id": r.record_id,
                "day": r.day.isoformat(),
                "t_index": r.t_index,
                "volumes": {k: list(r.volumes[k]) for k in sorted(r.volumes)},
            }
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")

    with open(dir_path / "labels.jsonl", "w", encoding="utf-8") as fh:
        for bundle in labels:
            obj = {
                "record_id": bundle.record_id,
                "edges": {k: _label_obj(bundle.edges[k]) for k in sorted(bundle.edges)},
            }
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")

    ss_obj = {
        "paths": {ss.ss_id: list(ss.path) for ss in supersegments},
        "etas": [
            {"record_id": rid, "ss_id": ss.ss_id, "eta_s": ss.etas[rid]}
            for ss in supersegments
            for rid in sorted(ss.etas)
        ],
    }
    (dir_path / "supersegments.json").write_text(
        json.dumps(ss_obj, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return dir_path


# ---------------------------------------------------------------------------
# filtering and splitting


def daytime_filter(
    records: Sequence[VolumeRecord],
    start_slot: int = DAYTIME_SLOTS[0],
    end_slot: int = DAYTIME_SLOTS[1],
) -> tuple[VolumeRecord, ...]:
    """Keep records with start_slot <= t_index < end_slot, order preserved.

    The default window [24, 88) corresponds to 6:00-22:00.
    """
    if not (0 <= start_slot < end_slot <= NUM_DAY_SLOTS):
        raise ValueError(f"invalid slot bounds: ({start_slot}, {end_slot})")
    return tuple(r for r in records if start_slot <= r.t_index < end_slot)


def split_train_validation(
    records: Sequence[VolumeRecord], fraction: float, seed: int
) -> tuple[tuple[VolumeRecord, ...], tuple[VolumeRecord, ...]]:
    """Split whole days into train/validation by a seeded shuffle.

    All records of one day land on the same side, which avoids leakage
    between overlapping hours of a day. ``fraction`` is the train share.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    days = sorted({r.day for r in records})
    if len(days) < 2:
        raise ValueError(f"need at least 2 distinct days to split, got {len(days)}")
    shuffled = list(days)
    random.Random(seed).shuffle(shuffled)
    n_train = int(round(fraction * len(days)))
    n_train = min(max(n_train, 1), len(days) - 1)
    train_days = set(shuffled[:n_train])
    train = tuple(r for r in records if r.day in train_days)
    val = tuple(r for r in records if r.day not in train_days)
    return train, val


# ---------------------------------------------------------------------------
# synthetic city


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for the deterministic synthetic city generator.

    ``signal`` in [0, 1] controls how strongly congestion depends on the
    observable volumes: at 0 the labels are pure noise, at 1 they are a
    deterministic function of global demand, local counter volume and the
    segment's static propensity.
    """

    num_nodes: int = 50
    counter_fraction: float = 0.1
    num_records: int = 200
    signal: float = 0.9
    records_per_day: int = 16
    num_supersegments: int = 8
    city_name: str = "synthville"

    def validate(self) -> None:
        if self.num_nodes < 4:
            raise ValueError(f"num_nodes must be >= 4, got {self.num_nodes}")
        if not 0.0 < self.counter_fraction <= 1.0:
            raise ValueError(f"counter_fraction must be in (0, 1], got {self.counter_fraction}")
        if self.num_records < 1:
            raise ValueError(f"num_records must be >= 1, got {self.num_records}")
        if not 0.0 <= self.signal <= 1.0:
            raise ValueError(f"signal must be in [0, 1], got {self.signal}")
        if self.records_per_day < 1:
            raise ValueError(f"records_per_day must be >= 1, got {self.records_per_day}")
        if self.num_supersegments < 0:
            raise ValueError(f"num_supersegments must be >= 0, got {self.num_supersegments}")


# congestion score mixing weights (global demand, nearest-counter volume,
# static propensity) and the class thresholds
_W_GLOBAL = 0.45
_W_LOCAL = 0.35
_W_STATIC = 0.20
_THRESH_RED = 0.62
_THRESH_YELLOW = 0.45
_SPEED_FACTOR = {1: 1.0, 2: 0.65, 3: 0.35}

_LANE_CHOICES = (1, 2, 3, 4)
_LANE_WEIGHTS = (0.4, 0.3, 0.2, 0.1)
_LIMIT_CHOICES = (30.0, 50.0, 60.0, 80.0, 100.0)


def _node_adjacency(num_nodes: int, pairs: Iterable[tuple[int, int]]) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(num_nodes)]
    for a, b in pairs:
        adj[a].append(b)
        adj[b].append(a)
    return adj


def _nearest_counter(adj: list[list[int]], counter_nodes: Sequence[int]) -> tuple[list[int], list[int]]:
    """Multi-source BFS: hop distance and nearest counter node per node."""
    n = len(adj)
    dist = [-1] * n
    source = [-1] * n
    queue = deque()
    for c in counter_nodes:
        dist[c] = 0
        source[c] = c
        queue.append(c)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                source[v] = source[u]
                queue.append(v)
    # disconnected nodes (should not happen on a spanning tree) get a sentinel
    for i in range(n):
        if dist[i] < 0:
            dist[i] = n
    return dist, source


def generate_synthetic_city(spec: SynthSpec, seed: int, out_dir) -> Dataset:
    """Generate a learnable synthetic dataset and write it to ``out_dir``.

    Deterministic given (spec, seed): two runs produce byte-identical
    directories. Congestion probability increases with the record's total
    volume and with the volume at the segment's nearest counter; speed
    labels are the segment flow speed scaled down under congestion; ETAs
    follow from the generated speeds plus noise.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.num_nodes

    node_ids = [f"n{i:03d}" for i in range(n)]
    lat = np.round(rng.uniform(48.0, 48.2, size=n), 6)
    lon = np.round(rng.uniform(11.4, 11.7, size=n), 6)

    # spanning tree first so the city is connected, then extra chords
    pairs: list[tuple[int, int]] = []
    pair_set: set[frozenset] = set()
    for i in range(1, n):
        j = int(rng.integers(0, i))
        pairs.append((j, i))
        pair_set.add(frozenset((j, i)))
    target_pairs = max(n - 1, int(math.ceil(n * 5 / 3)))
    while len(pairs) < target_pairs:
        a = int(rng.integers(0, n))
        b = int(rng.integers(0, n))
        if a == b or frozenset((a, b)) in pair_set:
            continue
        pairs.append((a, b))
        pair_set.add(frozenset((a, b)))

    num_counters = int(math.ceil(spec.counter_fraction * n))
    counter_nodes = sorted(int(i) for i in rng.choice(n, size=num_counters, replace=False))
    counter_ids = {node: f"c{k:03d}" for k, node in enumerate(counter_nodes)}

    nodes = tuple(
        NodeRec(node_ids[i], float(lat[i]), float(lon[i]), counter_ids.get(i))
        for i in range(n)
    )

    adj = _node_adjacency(n, pairs)
    hop_dist, nearest = _nearest_counter(adj, counter_nodes)

    segments: list[SegmentRec] = []
    seg_dirs: list[tuple[int, int]] = []  # (tail, head) node indices per segment
    for a, b in pairs:
        one_way = rng.random() < 0.2
        directions = [(a, b)] if one_way else [(a, b), (b, a)]
        if one_way and rng.random() < 0.5:
            directions = [(b, a)]
        limit = float(rng.choice(_LIMIT_CHOICES))
        lanes = int(rng.choice(_LANE_CHOICES, p=_LANE_WEIGHTS))
        importance = int(rng.integers(0, 6))
        tunnel = int(rng.random() < 0.05)
        length = round(float(rng.uniform(60.0, 400.0)), 1)
        for tail, head in directions:
            flow = round(limit * float(rng.uniform(0.55, 0.95)), 1)
            segments.append(
                SegmentRec(
                    segment_id=f"s{len(segments):04d}",
                    tail_node=node_ids[tail],
                    head_node=node_ids[head],
                    importance=importance,
                    oneway=int(one_way),
                    tunnel=tunnel,
                    lanes=lanes,
                    parsed_maxspeed=limit,
                    flow_speed=flow,
                    length_meters=length,
                    counter_distance=float(min(hop_dist[tail], hop_dist[head])),
                    limit_speed=limit,
                )
            )
            seg_dirs.append((tail, head))

    graph = RoadGraph(nodes=nodes, segments=tuple(segments), counters={
        node_ids[node]: cid for node, cid in counter_ids.items()
    })

    # static congestion propensity, partially readable from the attributes
    seg_bias = np.array(
        [
            0.5 * s.importance / 5.0 + 0.3 * (s.lanes - 1) / 3.0 + 0.2 * rng.random()
            for s in segments
        ]
    )
    # nearest counter node for each segment (tail side wins ties)
    seg_counter = [
        nearest[tail] if hop_dist[tail] <= hop_dist[head] else nearest[head]
        for tail, head in seg_dirs
    ]

    base_rate = {node: float(rng.uniform(5.0, 20.0)) for node in counter_nodes}
    start_day = date(2022, 1, 3)

    records: list[VolumeRecord] = []
    demand = np.empty(spec.num_records)
    for ridx in range(spec.num_records):
        g = float(rng.uniform(0.2, 1.8))
        demand[ridx] = g
        volumes: dict[str, tuple[int, int, int, int]] = {}
        for node in counter_nodes:
            if rng.random() < 0.1:  # vacant counter this hour -> implicit zeros
                continue
            # per-counter multiplicative noise: one counter is only a noisy
            # witness of global demand, while the sum over all counters
            # (the clustering key) averages it out
            local = math.exp(0.7 * float(rng.normal()))
            lam = g * base_rate[node] * local / 4.0
            bins = tuple(int(v) for v in rng.poisson(lam, size=4))
            volumes[node_ids[node]] = bins
        records.append(
            VolumeRecord(
                record_id=f"r{ridx:04d}",
                day=start_day + timedelta(days=ridx // spec.records_per_day),
                t_index=int(rng.integers(DAYTIME_SLOTS[0], DAYTIME_SLOTS[1])),
                volumes=volumes,
            )
        )

    volume_sums = np.array([sum(sum(v) for v in r.volumes.values()) for r in records], dtype=float)
    order = np.argsort(volume_sums, kind="stable")
    ranks = np.empty(len(records))
    ranks[order] = np.arange(len(records))
    q_global = ranks / max(len(records) - 1, 1)

    labels: list[LabelBundle] = []
    true_speed = np.empty((spec.num_records, len(segments)))
    for ridx, record in enumerate(records):
        edges: dict[str, SegmentLabel] = {}
        for sidx, seg in enumerate(segments):
            counter_node = seg_counter[sidx]
            vec = record.volumes.get(node_ids[counter_node])
            local = sum(vec) if vec is not None else 0
            q_local = min(local / (2.0 * base_rate[counter_node]), 1.0)
            noise = rng.random()
            score = (
                spec.signal * (_W_GLOBAL * q_global[ridx] + _W_LOCAL * q_local + _W_STATIC * seg_bias[sidx])
                + (1.0 - spec.signal) * noise
            )
            cls = 3 if score >= _THRESH_RED else (2 if score >= _THRESH_YELLOW else 1)
            speed = seg.flow_speed * _SPEED_FACTOR[cls] * (1.0 + 0.08 * float(rng.normal()))
            speed = max(round(speed, 2), 2.0)
            true_speed[ridx, sidx] = speed

            cc: int | None = cls
            if rng.random() < 0.03:
                cc = 0  # undefined state
            if rng.random() > 0.85:
                cc = None
            speed_label = speed if rng.random() < 0.7 else None
            latent_count = int(rng.poisson(0.8 + 5.0 * score))
            if latent_count == 0:
                vol_class = None
            elif latent_count <= 2:
                vol_class = 1
            elif latent_count <= 4:
                vol_class = 3
            else:
                vol_class = 5
            if cc is not None or speed_label is not None or vol_class is not None:
                edges[seg.segment_id] = SegmentLabel(cc=cc, speed_kph=speed_label, vol_class=vol_class)
        labels.append(LabelBundle(record.record_id, edges))

    # supersegments: random chainable paths over the directed segments
    by_tail: dict[int, list[int]] = {}
    for sidx, (tail, _head) in enumerate(seg_dirs):
        by_tail.setdefault(tail, []).append(sidx)
    supersegments: list[SuperSegment] = []
    attempts = 0
    while len(supersegments) < spec.num_supersegments and attempts < spec.num_supersegments * 20:
        attempts += 1
        start = int(rng.integers(0, len(segments)))
        path = [start]
        target_len = int(rng.integers(3, 7))
        while len(path) < target_len:
            head = seg_dirs[path[-1]][1]
            options = [s for s in by_tail.get(head, []) if s not in path]
            if not options:
                break
            path.append(int(rng.choice(np.array(options))))
        if len(path) < 2:
            continue
        ss_id = f"ss{len(supersegments):02d}"
        etas: dict[str, float] = {}
        for ridx, record in enumerate(records):
            if rng.random() < 0.1:
                continue
            total = sum(
                segments[sidx].length_meters / (true_speed[ridx, sidx] / 3.6) for sidx in path
            )
            etas[record.record_id] = max(round(total * (1.0 + 0.05 * float(rng.normal())), 3), 0.001)
        supersegments.append(
            SuperSegment(ss_id, tuple(segments[s].segment_id for s in path), etas)
        )

    dataset = Dataset(graph, tuple(records), tuple(labels), tuple(supersegments))
    write_dataset(dataset, out_dir, city_name=spec.city_name)
    return dataset
