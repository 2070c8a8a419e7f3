"""Command-line pipeline: synth, fit-clusters, train, predict, eval, baselines,
ablation, and report rendering.

Stages communicate through files only (dataset directory, cluster model
JSON, binary checkpoints, prediction JSONL), so each one is independently
rerunnable; with unchanged inputs every stage rewrites byte-identical
artifacts. Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import fit_naive, fit_volume_cluster, naive_segment_probs, node_gnn_baseline, save_baseline
from .checkpoint import load_checkpoint, save_checkpoint
from .clustering import assign_cluster, build_prior_matrices, fit_clusters, load_cluster_model, save_cluster_model
from .data import (
    DatasetError,
    Dataset,
    SynthSpec,
    daytime_filter,
    generate_synthetic_city,
    labels_by_record,
    load_dataset,
    split_train_validation,
)
from .evaluation import ABLATION_VARIANTS, core_metric, eta_from_speeds, eta_labels, eta_metric, run_ablation
from .model import ModelConfig
from .seggraph import build_line_graph
from .training import TrainConfig, ensemble_predict, load_runlog, load_store, save_runlog, train_one

__all__ = ["main"]


class CLIError(Exception):
    """User-facing validation failure (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise CLIError(f"{self.prog}: {message}")


# -- pipeline config -------------------------------------------------------------

_CONFIG_SECTIONS = {
    "data": str,
    "workdir": str,
    "cluster": {"k"},
    "model": {
        "importance_dim", "oneway_dim", "tunnel_dim", "lanes_dim",
        "volume_hidden", "static_hidden", "gnn_layers", "hidden", "head_blocks",
        "lambdas", "prior_mode", "num_clusters", "cc_classes",
        "use_prior_block", "use_static",
    },
    "train": {
        "epochs", "batch_size", "learning_rate", "ensemble_size", "base_seed",
        "member_seeds", "daytime", "val_fraction", "split_seed",
    },
    "out": {"run_dir", "cluster_model", "predictions"},
}


def load_pipeline_config(path) -> dict:
    """Parse the JSON pipeline config, rejecting unknown keys."""
    path = Path(path)
    if not path.is_file():
        raise CLIError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise CLIError(f"{path}: config must be a JSON object")
    for key, value in obj.items():
        if key not in _CONFIG_SECTIONS:
            raise CLIError(f"{path}: unknown config key {key!r}")
        allowed = _CONFIG_SECTIONS[key]
        if isinstance(allowed, set):
            if not isinstance(value, dict):
                raise CLIError(f"{path}: section {key!r} must be an object")
            for sub in value:
                if sub not in allowed:
                    raise CLIError(f"{path}: unknown config key {key}.{sub}")
    return obj


def _pick(flag_value, config: dict, section: str, key: str, default):
    """Flag beats config beats default."""
    if flag_value is not None:
        return flag_value
    if section in config and key in config[section]:
        return config[section][key]
    return default


def _train_config_from(args, config: dict) -> TrainConfig:
    section = config.get("train", {})
    member_seeds = section.get("member_seeds")
    cfg_daytime = section.get("daytime", (24, 88))
    daytime = (
        args.daytime_start if args.daytime_start is not None else cfg_daytime[0],
        args.daytime_end if args.daytime_end is not None else cfg_daytime[1],
    )
    return TrainConfig(
        epochs=_pick(args.epochs, config, "train", "epochs", 20),
        batch_size=_pick(args.batch, config, "train", "batch_size", 2),
        learning_rate=_pick(args.lr, config, "train", "learning_rate", 1e-3),
        ensemble_size=_pick(args.members, config, "train", "ensemble_size", 9),
        base_seed=_pick(args.seed, config, "train", "base_seed", 0),
        member_seeds=tuple(member_seeds) if member_seeds is not None else None,
        daytime=daytime,
        val_fraction=_pick(args.val_fraction, config, "train", "val_fraction", 0.2),
        split_seed=_pick(args.split_seed, config, "train", "split_seed", 0),
    )


def _model_config_from(args, config: dict) -> ModelConfig:
    section = config.get("model", {})
    kwargs = dict(section)
    for key in ("volume_hidden", "static_hidden", "lambdas"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    cfg = ModelConfig(**kwargs)
    overrides = {}
    if args.gnn_layers is not None:
        overrides["gnn_layers"] = args.gnn_layers
    if args.hidden is not None:
        overrides["hidden"] = args.hidden
    if args.prior_mode is not None:
        overrides["prior_mode"] = args.prior_mode
    if args.cc_classes is not None:
        overrides["cc_classes"] = args.cc_classes
    if args.k is not None:
        overrides["num_clusters"] = args.k
    return replace(cfg, **overrides) if overrides else cfg


# -- shared helpers -----------------------------------------------------------------


def _resolve(workdir: Path, value) -> Path:
    path = Path(value)
    return path if path.is_absolute() else workdir / path


def _require_artifact(path: Path, producer: str) -> Path:
    if not path.exists():
        raise CLIError(f"{path} not found; produce it with `t4c {producer}`")
    return path


def _load_data(path: Path) -> Dataset:
    _require_artifact(path, "synth (or point --data at a dataset directory)")
    return load_dataset(path)


def _split_records(dataset, train_cfg: TrainConfig):
    records = daytime_filter(dataset.records, *train_cfg.daytime)
    if not records:
        raise CLIError("no records in the daytime window")
    return split_train_validation(records, 1.0 - train_cfg.val_fraction, train_cfg.split_seed)


def _select_records(dataset, train_cfg: TrainConfig, subset: str):
    if subset == "all":
        return daytime_filter(dataset.records, *train_cfg.daytime)
    train_records, val_records = _split_records(dataset, train_cfg)
    return train_records if subset == "train" else val_records


def _write_predictions(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def _read_predictions(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CLIError(f"{path}:{line_no}: invalid JSON: {exc.msg}") from None
    return rows


def _eta_predictions_from_speeds(dataset, segment_speeds: dict[str, float]) -> dict[str, float]:
    lengths = {s.segment_id: s.length_meters for s in dataset.graph.segments}
    return {
        ss.ss_id: eta_from_speeds(ss, segment_speeds, lengths)
        for ss in dataset.supersegments
    }


def _report_obj(score) -> dict:
    return {
        "metric": score.score,
        "per_record": {k: score.per_record[k] for k in sorted(score.per_record)},
        "n_scored": score.n_scored,
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# -- subcommands ---------------------------------------------------------------------


def cmd_synth(args, workdir: Path) -> int:
    spec = SynthSpec(
        num_nodes=args.nodes,
        counter_fraction=args.counter_frac,
        num_records=args.records,
        signal=args.signal,
        records_per_day=args.records_per_day,
        num_supersegments=args.supersegments,
        city_name=args.name,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    out = _resolve(workdir, args.out)
    generate_synthetic_city(spec, args.seed, out)
    print(f"wrote synthetic city to {out}")
    return 0


def cmd_fit_clusters(args, workdir: Path) -> int:
    config = load_pipeline_config(_resolve(workdir, args.config)) if args.config else {}
    train_cfg = _train_config_from(args, config)
    data_dir = _resolve(workdir, args.data or config.get("data") or "data")
    dataset = _load_data(data_dir)
    train_records, _ = _split_records(dataset, train_cfg)
    k = args.k if args.k is not None else config.get("cluster", {}).get("k", 10)
    try:
        model = fit_clusters(train_records, k)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    label_map = labels_by_record(dataset.labels)
    train_labels = [label_map[r.record_id] for r in train_records if r.record_id in label_map]
    priors = build_prior_matrices(model, train_labels, dataset.graph)
    out = _resolve(workdir, args.out)
    save_cluster_model(out, model, priors)
    print(f"fitted {k} clusters on {len(train_records)} training records -> {out}")
    return 0


def _train_member(job):
    train_cfg, model_cfg, dataset, cluster_model, priors, seed, member_dir = job
    ckpt, runlog = train_one(train_cfg, model_cfg, dataset, cluster_model, priors, seed)
    member_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(member_dir / "checkpoint.bin", ckpt)
    save_runlog(member_dir / "runlog.json", runlog)
    return seed, runlog


def cmd_train(args, workdir: Path) -> int:
    config = load_pipeline_config(_resolve(workdir, args.config)) if args.config else {}
    train_cfg = _train_config_from(args, config)
    model_cfg = _model_config_from(args, config)
    data_dir = _resolve(workdir, args.data or config.get("data") or "data")
    dataset = _load_data(data_dir)
    cluster_path = _resolve(workdir, args.cluster_model or config.get("out", {}).get("cluster_model", "cluster_model.json"))
    _require_artifact(cluster_path, "fit-clusters")
    cluster_file_model, priors = load_cluster_model(cluster_path)
    if cluster_file_model.num_clusters != model_cfg.num_clusters:
        raise CLIError(
            f"cluster model has K={cluster_file_model.num_clusters} but the model "
            f"config expects {model_cfg.num_clusters}"
        )
    run_dir = _resolve(workdir, args.out or config.get("out", {}).get("run_dir", "runs/run"))
    run_dir.mkdir(parents=True, exist_ok=True)

    jobs = [
        (train_cfg, model_cfg, dataset, cluster_file_model, priors, seed, run_dir / f"member_{k}")
        for k, seed in enumerate(train_cfg.seeds())
    ]
    threads = int(os.environ.get("T4C_THREADS", "1"))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_train_member, jobs))
    else:
        results = [_train_member(job) for job in jobs]
    for seed, runlog in results:
        best = runlog.epochs[runlog.best_epoch].val_core
        print(f"member seed={seed}: best epoch {runlog.best_epoch}, val core {best:.6f}")
    _write_json(
        run_dir / "train_config.json",
        {
            "train": {
                "epochs": train_cfg.epochs,
                "batch_size": train_cfg.batch_size,
                "learning_rate": train_cfg.learning_rate,
                "ensemble_size": train_cfg.ensemble_size,
                "base_seed": train_cfg.base_seed,
                "member_seeds": list(train_cfg.member_seeds) if train_cfg.member_seeds else None,
                "seeds": list(train_cfg.seeds()),
                "daytime": list(train_cfg.daytime),
                "val_fraction": train_cfg.val_fraction,
                "split_seed": train_cfg.split_seed,
            },
            "model": {
                "gnn_layers": model_cfg.gnn_layers,
                "hidden": model_cfg.hidden,
                "prior_mode": model_cfg.prior_mode,
                "num_clusters": model_cfg.num_clusters,
                "cc_classes": model_cfg.cc_classes,
            },
        },
    )
    return 0


def _member_index(path: Path) -> int:
    try:
        return int(path.name.split("_", 1)[1])
    except (IndexError, ValueError):
        return -1


def _member_dirs(run_dir: Path) -> list[Path]:
    found = [d for d in run_dir.iterdir() if d.is_dir() and d.name.startswith("member_")]
    if not found:
        raise CLIError(f"no member_* directories under {run_dir}; produce them with `t4c train`")
    return sorted(found, key=_member_index)


def _member_checkpoints(run_dir: Path):
    return [
        load_checkpoint(_require_artifact(d / "checkpoint.bin", "train"))
        for d in _member_dirs(run_dir)
    ]


def cmd_predict(args, workdir: Path) -> int:
    config = load_pipeline_config(_resolve(workdir, args.config)) if args.config else {}
    train_cfg = _train_config_from(args, config)
    data_dir = _resolve(workdir, args.data or config.get("data") or "data")
    dataset = _load_data(data_dir)
    cluster_path = _resolve(workdir, args.cluster_model or config.get("out", {}).get("cluster_model", "cluster_model.json"))
    _require_artifact(cluster_path, "fit-clusters")
    cluster_model, priors = load_cluster_model(cluster_path)
    run_dir = _resolve(workdir, args.run)
    _require_artifact(run_dir, "train")
    checkpoints = _member_checkpoints(run_dir)
    stores = [load_store(c) for c in checkpoints]
    seg_graph = build_line_graph(dataset.graph)
    records = _select_records(dataset, train_cfg, args.records)

    rows = []
    for record in records:
        probs = ensemble_predict(
            checkpoints, dataset.graph, seg_graph, priors, record, cluster_model, stores=stores
        )
        segments = {}
        speeds = {}
        for i, seg_id in enumerate(seg_graph.seg_ids):
            segments[seg_id] = {
                "cc": probs.cc[i].tolist(),
                "speed": probs.speed_kph[i],
                "vol": probs.vol[i].tolist(),
            }
            speeds[seg_id] = probs.speed_kph[i]
        rows.append(
            {
                "record_id": record.record_id,
                "segments": segments,
                "etas": _eta_predictions_from_speeds(dataset, speeds),
            }
        )
    out = _resolve(workdir, args.out)
    _write_predictions(out, rows)
    print(f"wrote predictions for {len(rows)} records ({len(checkpoints)} members) -> {out}")
    return 0


def _labels_for_predictions(dataset, rows):
    label_map = labels_by_record(dataset.labels)
    bundles = []
    for row in rows:
        bundle = label_map.get(row["record_id"])
        if bundle is not None:
            bundles.append(bundle)
    return bundles


def cmd_eval_core(args, workdir: Path) -> int:
    dataset = _load_data(_resolve(workdir, args.data))
    pred_path = _require_artifact(_resolve(workdir, args.pred), "predict (or baseline <name>)")
    rows = _read_predictions(pred_path)
    predictions = {}
    for row in rows:
        segments = row.get("segments") or {}
        predictions[row["record_id"]] = {
            seg_id: np.asarray(entry["cc"], dtype=np.float64)
            for seg_id, entry in segments.items()
            if entry.get("cc") is not None
        }
    try:
        score = core_metric(predictions, _labels_for_predictions(dataset, rows))
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    if score.score is None:
        raise CLIError("no scored segments: predictions cover no labeled records")
    print(f"{score.score:.6f}")
    if args.out:
        _write_json(_resolve(workdir, args.out), _report_obj(score))
    if args.csv:
        lines = ["record_id,core_score"]
        lines += [f"{rid},{score.per_record[rid]:.6f}" for rid in sorted(score.per_record)]
        _resolve(workdir, args.csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_eval_eta(args, workdir: Path) -> int:
    dataset = _load_data(_resolve(workdir, args.data))
    pred_path = _require_artifact(_resolve(workdir, args.pred), "predict (or baseline <name>)")
    rows = _read_predictions(pred_path)
    predicted = {}
    for row in rows:
        for ss_id, eta in (row.get("etas") or {}).items():
            predicted[(row["record_id"], ss_id)] = float(eta)
    record_ids = {row["record_id"] for row in rows}
    labeled = eta_labels(dataset.supersegments, record_ids)
    try:
        score = eta_metric(predicted, labeled)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    if score.score is None:
        raise CLIError("no labeled (record, supersegment) pairs to score")
    print(f"{score.score:.6f}")
    if args.out:
        _write_json(_resolve(workdir, args.out), _report_obj(score))
    if args.csv:
        lines = ["record_id,eta_mae_s"]
        lines += [f"{rid},{score.per_record[rid]:.6f}" for rid in sorted(score.per_record)]
        _resolve(workdir, args.csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_baseline(args, workdir: Path) -> int:
    config = load_pipeline_config(_resolve(workdir, args.config)) if args.config else {}
    train_cfg = _train_config_from(args, config)
    data_dir = _resolve(workdir, args.data or config.get("data") or "data")
    dataset = _load_data(data_dir)
    out_dir = _resolve(workdir, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_records, val_records = _split_records(dataset, train_cfg)
    label_map = labels_by_record(dataset.labels)
    train_labels = [label_map[r.record_id] for r in train_records if r.record_id in label_map]
    seg_ids = [s.segment_id for s in dataset.graph.segments]

    if args.name == "node_gnn":
        score = node_gnn_baseline(dataset, train_cfg, seed=train_cfg.base_seed)
        _write_json(out_dir / "baseline_node_gnn.json", {"val_core": score})
        print(f"node gnn validation core: {score:.6f}")
        return 0

    try:
        if args.name == "naive":
            model = fit_naive(train_labels, dataset.supersegments, per_segment=not args.global_probs)
            seg_probs = {seg: naive_segment_probs(model, seg) for seg in seg_ids}

            def probs_for(record):
                return seg_probs

            def etas_for(record):
                return dict(model.eta_median)

        else:  # volume_cluster
            k = args.k if args.k is not None else config.get("cluster", {}).get("k", 10)
            cluster_model = fit_clusters(train_records, k)
            model = fit_volume_cluster(cluster_model, train_labels, dataset.supersegments, dataset.graph)

            def probs_for(record):
                cluster = assign_cluster(cluster_model, record)
                return {seg: model.cc_probs[seg][cluster] for seg in seg_ids}

            def etas_for(record):
                cluster = assign_cluster(cluster_model, record)
                return {ss_id: float(m[cluster]) for ss_id, m in model.eta_median.items()}

    except ValueError as exc:
        raise CLIError(str(exc)) from None

    save_baseline(out_dir / f"baseline_{args.name}.json", model)
    rows = []
    for record in val_records:
        probs = probs_for(record)
        rows.append(
            {
                "record_id": record.record_id,
                "segments": {seg: {"cc": probs[seg].tolist(), "speed": None, "vol": None} for seg in seg_ids},
                "etas": etas_for(record),
            }
        )
    pred_path = out_dir / f"predictions_{args.name}.jsonl"
    _write_predictions(pred_path, rows)
    print(f"wrote baseline_{args.name}.json and {pred_path.name} ({len(rows)} validation records)")
    return 0


def cmd_ablate(args, workdir: Path) -> int:
    config = load_pipeline_config(_resolve(workdir, args.config)) if args.config else {}
    train_cfg = _train_config_from(args, config)
    model_cfg = _model_config_from(args, config)
    data_dir = _resolve(workdir, args.data or config.get("data") or "data")
    dataset = _load_data(data_dir)
    cluster_path = _resolve(workdir, args.cluster_model or config.get("out", {}).get("cluster_model", "cluster_model.json"))
    _require_artifact(cluster_path, "fit-clusters")
    cluster_model, priors = load_cluster_model(cluster_path)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    try:
        result = run_ablation(
            dataset, variants, cluster_model, priors, train_cfg, model_cfg,
            seed=train_cfg.base_seed,
        )
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    out_dir = _resolve(workdir, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(
        out_dir / "ablation.json",
        {
            "scores": result.scores,
            "best_epochs": result.best_epochs,
            "data_order_hashes": result.data_order_hashes,
        },
    )
    (out_dir / "ablation.csv").write_text(result.as_csv(), encoding="utf-8")
    for variant in variants:
        print(f"{variant}: {result.scores[variant]:.6f}")
    return 0


def _svg_curves(curves: dict[str, list[float]], width=640, height=360) -> str:
    """Minimal SVG line chart of validation score per epoch per member."""
    pad = 40
    all_values = [v for series in curves.values() for v in series]
    lo, hi = min(all_values), max(all_values)
    if hi - lo < 1e-12:
        hi = lo + 1e-12
    max_len = max(len(s) for s in curves.values())
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="13">validation core score by epoch</text>',
    ]
    colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22"]
    for idx, (name, series) in enumerate(sorted(curves.items())):
        points = []
        for i, value in enumerate(series):
            x = pad + (width - 2 * pad) * (i / max(max_len - 1, 1))
            y = height - pad - (height - 2 * pad) * ((value - lo) / (hi - lo))
            points.append(f"{x:.1f},{y:.1f}")
        color = colors[idx % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(points)}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{20 + 14 * idx}" font-size="11" fill="{color}">{name}</text>')
    parts.append(f'<text x="{pad}" y="{height - 8}" font-size="11">epoch 0..{max_len - 1}; score {lo:.4f}..{hi:.4f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(args, workdir: Path) -> int:
    run_dir = _resolve(workdir, args.runs)
    _require_artifact(run_dir, "train")
    member_dirs = _member_dirs(run_dir)
    out_dir = _resolve(workdir, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = ["member,seed,best_epoch,best_val_core,final_train_loss"]
    curves: dict[str, list[float]] = {}
    for member in member_dirs:
        runlog = load_runlog(_require_artifact(member / "runlog.json", "train"))
        best = runlog.epochs[runlog.best_epoch].val_core
        lines.append(
            f"{member.name},{runlog.seed},{runlog.best_epoch},{best:.6f},"
            f"{runlog.epochs[-1].train_loss:.6f}"
        )
        curves[member.name] = [e.val_core for e in runlog.epochs]
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "val_curves.svg").write_text(_svg_curves(curves), encoding="utf-8")
    if args.ablation:
        ablation_path = _require_artifact(_resolve(workdir, args.ablation), "ablate")
        obj = json.loads(ablation_path.read_text(encoding="utf-8"))
        rows = ["variant,val_core,best_epoch"]
        for variant in obj["scores"]:
            rows.append(f"{variant},{obj['scores'][variant]:.6f},{obj['best_epochs'][variant]}")
        (out_dir / "ablation.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote report.csv and val_curves.svg -> {out_dir}")
    return 0


# -- parser ---------------------------------------------------------------------------


def _add_split_flags(sub):
    sub.add_argument("--daytime-start", type=int, default=None, help="first daytime slot (default: 24)")
    sub.add_argument("--daytime-end", type=int, default=None, help="one past the last daytime slot (default: 88)")
    sub.add_argument("--val-fraction", type=float, default=None, help="validation day share (default: 0.2)")
    sub.add_argument("--split-seed", type=int, default=None, help="day split shuffle seed (default: 0)")


def _add_train_flags(sub):
    sub.add_argument("--epochs", type=int, default=None, help="training epochs (default: 20)")
    sub.add_argument("--batch", type=int, default=None, help="records per optimizer step (default: 2)")
    sub.add_argument("--lr", type=float, default=None, help="Adam learning rate (default: 0.001)")
    sub.add_argument("--members", type=int, default=None, help="ensemble size (default: 9)")
    sub.add_argument("--seed", type=int, default=None, help="base seed; member k uses seed+k (default: 0)")
    _add_split_flags(sub)


def _add_model_flags(sub):
    sub.add_argument("--gnn-layers", type=int, default=None, help="message passing rounds (default: 3)")
    sub.add_argument("--hidden", type=int, default=None, help="hidden width (default: 64)")
    sub.add_argument("--prior-mode", choices=["full", "active_row"], default=None,
                     help="feed the whole prior matrix or only the record's cluster row (default: full)")
    sub.add_argument("--cc-classes", type=int, choices=[3, 4], default=None,
                     help="congestion head size; 4 keeps the undefined code (default: 3)")
    sub.add_argument("--k", type=int, default=None, help="number of volume clusters (default: 10)")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="t4c",
        description="Sparse loop-counter traffic forecasting pipeline.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--workdir", default=".", help="base directory for all relative paths")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("synth", help="generate a deterministic synthetic city",
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub.add_argument("--out", required=True, help="dataset directory to write")
    sub.add_argument("--nodes", type=int, default=50, help="number of intersections")
    sub.add_argument("--counter-frac", type=float, default=0.1, help="fraction of nodes with counters")
    sub.add_argument("--records", type=int, default=200, help="number of volume records")
    sub.add_argument("--signal", type=float, default=0.9, help="label signal strength in [0, 1]")
    sub.add_argument("--seed", type=int, default=1, help="generator seed")
    sub.add_argument("--records-per-day", type=int, default=16, help="records per calendar day")
    sub.add_argument("--supersegments", type=int, default=8, help="number of supersegments")
    sub.add_argument("--name", default="synthville", help="city name in meta.json")

    sub = commands.add_parser("fit-clusters", help="fit volume clusters and congestion priors")
    sub.add_argument("--data", default=None, help="dataset directory")
    sub.add_argument("--out", default="cluster_model.json", help="cluster model file to write")
    sub.add_argument("--k", type=int, default=None, help="number of clusters (default: 10)")
    sub.add_argument("--config", default=None, help="pipeline config JSON")
    # unused train knobs accepted for config symmetry
    sub.add_argument("--epochs", type=int, default=None, help=argparse.SUPPRESS)
    sub.add_argument("--batch", type=int, default=None, help=argparse.SUPPRESS)
    sub.add_argument("--lr", type=float, default=None, help=argparse.SUPPRESS)
    sub.add_argument("--members", type=int, default=None, help=argparse.SUPPRESS)
    sub.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    _add_split_flags(sub)

    sub = commands.add_parser("train", help="train the ensemble")
    sub.add_argument("--data", default=None, help="dataset directory")
    sub.add_argument("--cluster-model", default=None, help="cluster model JSON from fit-clusters")
    sub.add_argument("--out", default=None, help="run directory (default: runs/run)")
    sub.add_argument("--config", default=None, help="pipeline config JSON")
    _add_train_flags(sub)
    _add_model_flags(sub)

    sub = commands.add_parser("predict", help="ensemble predictions to JSONL")
    sub.add_argument("--data", default=None, help="dataset directory")
    sub.add_argument("--cluster-model", default=None, help="cluster model JSON")
    sub.add_argument("--run", required=True, help="run directory with member_* checkpoints")
    sub.add_argument("--records", choices=["validation", "train", "all"], default="validation",
                     help="which record subset to predict")
    sub.add_argument("--out", required=True, help="predictions JSONL to write")
    sub.add_argument("--config", default=None, help="pipeline config JSON")
    sub.add_argument("--epochs", type=int, default=None, help=argparse.SUPPRESS)
    sub.add_argument("--batch", type=int, default=None, help=argparse.SUPPRESS)
    sub.add_argument("--lr", type=float, default=None, help=argparse.SUPPRESS)
    sub.add_argument("--members", type=int, default=None, help=argparse.SUPPRESS)
    sub.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    _add_split_flags(sub)

    for name, handler_help in (("eval-core", "score congestion predictions"),
                               ("eval-eta", "score supersegment ETA predictions")):
        sub = commands.add_parser(name, help=handler_help,
                                  formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sub.add_argument("--data", required=True, help="dataset directory")
        sub.add_argument("--pred", required=True, help="predictions JSONL")
        sub.add_argument("--out", default=None, help="JSON report to write")
        sub.add_argument("--csv", default=None, help="per-record CSV to write")

    sub = commands.add_parser("baseline", help="fit a comparison system")
    sub.add_argument("name", choices=["naive", "volume_cluster", "node_gnn"])
    sub.add_argument("--data", default=None, help="dataset directory")
    sub.add_argument("--out", default="baselines", help="output directory")
    sub.add_argument("--k", type=int, default=None, help="clusters for volume_cluster (default: 10)")
    sub.add_argument("--global", dest="global_probs", action="store_true",
                     help="naive: one pooled distribution for every segment")
    sub.add_argument("--config", default=None, help="pipeline config JSON")
    _add_train_flags(sub)

    sub = commands.add_parser("ablate", help="train ablation variants and compare")
    sub.add_argument("--data", default=None, help="dataset directory")
    sub.add_argument("--cluster-model", default=None, help="cluster model JSON")
    sub.add_argument("--variants", default=",".join(ABLATION_VARIANTS),
                     help="comma-separated subset of full,no_cluster,no_static,no_gnn")
    sub.add_argument("--out", default="ablation", help="output directory")
    sub.add_argument("--config", default=None, help="pipeline config JSON")
    _add_train_flags(sub)
    _add_model_flags(sub)

    sub = commands.add_parser("report", help="render metric tables and score curves",
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub.add_argument("--runs", required=True, help="run directory from train")
    sub.add_argument("--ablation", default=None, help="ablation.json from ablate")
    sub.add_argument("--out", default="report", help="output directory")

    return parser


_HANDLERS = {
    "synth": cmd_synth,
    "fit-clusters": cmd_fit_clusters,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval-core": cmd_eval_core,
    "eval-eta": cmd_eval_eta,
    "baseline": cmd_baseline,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        workdir = Path(args.workdir)
        return _HANDLERS[args.command](args, workdir)
    except CLIError as exc:
        print(f"t4c: error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"t4c: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except Exception as exc:  # runtime failure
        print(f"t4c: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
