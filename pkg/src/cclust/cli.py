"""Command-line surface: train, ablate, diagnose, evaluate.

Every command reads a JSON run-config file (the single source of truth;
flags only override). Exit codes: 0 success, 1 runtime failure, 2
usage/config error. Outputs are deterministic for a fixed config+seed,
byte for byte. Set CCLUST_LOG=debug|info|warning|error for verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import clustering, metrics, nn, trainer
from .augment import AugmentSpec
from .core import (
    Dataset,
    TrainConfig,
    load_dataset,
    make_synthetic,
    write_trace_csv,
)
from .errors import ConfigError, ParseError, SchemaError

log = logging.getLogger("cclust.cli")

_RUN_KEYS = {"dataset", "synthetic", "augment", "n_seeds", "out_dir", "histogram_bins"}
_SYNTHETIC_KEYS = {
    "k",
    "n_per_cluster",
    "dim",
    "separation",
    "noise_sigma",
    "imbalance_ratio",
    "seed",
}


@dataclass
class RunConfig:
    train: TrainConfig
    dataset_path: str | None = None
    dataset_format: str | None = None
    synthetic: dict | None = None
    augment: AugmentSpec | None = None
    n_seeds: int = 1
    out_dir: str | None = None
    histogram_bins: int = 50


def load_run_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: run config must be a JSON object")
    train_dict = {k: v for k, v in raw.items() if k not in _RUN_KEYS}
    train_cfg = TrainConfig.from_dict(train_dict)

    dataset = raw.get("dataset")
    synthetic = raw.get("synthetic")
    if (dataset is None) == (synthetic is None):
        raise ConfigError("exactly one data source required: 'dataset' or 'synthetic'")
    if dataset is not None:
        if not isinstance(dataset, dict) or "path" not in dataset:
            raise ConfigError("'dataset' must be an object with a 'path'")
        extra = set(dataset) - {"path", "format"}
        if extra:
            raise ConfigError(f"unknown dataset keys: {sorted(extra)}")
    if synthetic is not None:
        if not isinstance(synthetic, dict):
            raise ConfigError("'synthetic' must be an object")
        extra = set(synthetic) - _SYNTHETIC_KEYS
        if extra:
            raise ConfigError(f"unknown synthetic keys: {sorted(extra)}")
        missing = {"k", "n_per_cluster", "dim", "separation", "noise_sigma"} - set(synthetic)
        if missing:
            raise ConfigError(f"missing synthetic keys: {sorted(missing)}")

    augment_raw = raw.get("augment")
    augment = AugmentSpec.from_dict(augment_raw) if augment_raw is not None else None
    n_seeds = int(raw.get("n_seeds", 1))
    if n_seeds < 1:
        raise ConfigError(f"n_seeds must be >= 1, got {n_seeds}")
    bins = int(raw.get("histogram_bins", 50))
    if bins < 1:
        raise ConfigError(f"histogram_bins must be >= 1, got {bins}")
    return RunConfig(
        train=train_cfg,
        dataset_path=dataset["path"] if dataset else None,
        dataset_format=dataset.get("format") if dataset else None,
        synthetic=synthetic,
        augment=augment,
        n_seeds=n_seeds,
        out_dir=raw.get("out_dir"),
        histogram_bins=bins,
    )


def resolve_dataset(run: RunConfig) -> Dataset:
    if run.dataset_path is not None:
        return load_dataset(run.dataset_path, run.dataset_format)
    s = dict(run.synthetic)
    s.setdefault("imbalance_ratio", 1.0)
    s.setdefault("seed", 0)
    return make_synthetic(**s)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return None if math.isnan(v) else v
    if isinstance(x, np.integer):
        return int(x)
    return x


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")


def _out_dir(args, run: RunConfig) -> Path:
    out = args.out or run.out_dir
    if not out:
        raise ConfigError("no output directory: set 'out_dir' in the config or pass --out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _apply_overrides(cfg: TrainConfig, args) -> TrainConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "eta_on", None) is not None:
        cfg = replace(cfg, eta_on=args.eta_on)
    return cfg


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    cfg = _apply_overrides(run.train, args)
    out = _out_dir(args, run)
    dataset = resolve_dataset(run)
    params, trace = trainer.train(dataset, cfg, augmenter=run.augment)
    nn.save_checkpoint(out / "checkpoint.json", params, cfg)
    write_trace_csv(trace, out / "trace.csv")
    report = trainer.evaluate_params(params, dataset, cfg, seed=cfg.seed)
    _dump_json(out / "metrics.json", report)
    log.info("train: wrote checkpoint.json, trace.csv, metrics.json to %s", out)
    return 0


def cmd_ablate(args) -> int:
    run = load_run_config(args.config)
    cfg = _apply_overrides(run.train, args)
    out = _out_dir(args, run)
    dataset = resolve_dataset(run)
    rows = trainer.run_ablation(dataset, cfg, run.n_seeds, augmenter=run.augment)
    payload = {
        "n_seeds": run.n_seeds,
        "rows": [
            {
                "mode": r.mode,
                "acc_mean": r.acc_mean,
                "acc_sd": r.acc_sd,
                "nmi_mean": r.nmi_mean,
                "nmi_sd": r.nmi_sd,
                "n_seeds": r.n_seeds,
            }
            for r in rows
        ],
    }
    _dump_json(out / "ablation.json", payload)
    with (out / "ablation.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "acc_mean", "acc_sd", "nmi_mean", "nmi_sd", "n_seeds"])
        for r in rows:
            writer.writerow(
                [r.mode, repr(r.acc_mean), repr(r.acc_sd), repr(r.nmi_mean),
                 repr(r.nmi_sd), r.n_seeds]
            )
    return 0


def _geometry_payload(geom: metrics.ClusterGeometry) -> dict:
    return {
        "intra": geom.intra,
        "inter": geom.inter,
        "mean_intra": geom.mean_intra,
        "mean_inter": geom.mean_inter,
    }


def cmd_diagnose(args) -> int:
    run = load_run_config(args.config)
    out = _out_dir(args, run)
    params, ckpt_cfg = nn.load_checkpoint(args.checkpoint)
    dataset = resolve_dataset(run)
    e, _ = nn.encode(params, dataset.vectors)
    q = clustering.soft_assign(e, params.centroids, ckpt_cfg.alpha)
    pred = np.argmax(q, axis=1)
    geom_pred = metrics.cluster_geometry(e, pred)
    geom_true = (
        metrics.cluster_geometry(e, dataset.labels) if dataset.labels is not None else None
    )
    similarity = None
    if dataset.has_augmentations:
        e1, _ = nn.encode(params, dataset.aug1)
        e2, _ = nn.encode(params, dataset.aug2)
        h1 = metrics.aug_similarity_histogram(e, e1, bins=run.histogram_bins)
        h2 = metrics.aug_similarity_histogram(e, e2, bins=run.histogram_bins)
        similarity = {
            "aug1": {"counts": h1.counts, "edges": h1.edges},
            "aug2": {"counts": h2.counts, "edges": h2.edges},
        }
    payload = {
        "k": ckpt_cfg.n_clusters,
        "n": dataset.n,
        "geometry_true": _geometry_payload(geom_true) if geom_true is not None else None,
        "geometry_pred": _geometry_payload(geom_pred),
        "aug_similarity": similarity,
    }
    _dump_json(out / "diagnostics.json", payload)
    with (out / "diagnostics_geometry.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["labeling", "cluster", "intra", "inter"])
        for name, geom in (("true", geom_true), ("pred", geom_pred)):
            if geom is None:
                continue
            for i in range(geom.intra.size):
                writer.writerow([name, i, repr(float(geom.intra[i])), repr(float(geom.inter[i]))])
    with (out / "diagnostics_histogram.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view", "bin_lo", "bin_hi", "count"])
        if similarity is not None:
            for view in ("aug1", "aug2"):
                h = similarity[view]
                for i in range(len(h["counts"])):
                    writer.writerow(
                        [view, repr(float(h["edges"][i])), repr(float(h["edges"][i + 1])),
                         int(h["counts"][i])]
                    )
    return 0


def cmd_evaluate(args) -> int:
    run = load_run_config(args.config)
    out = _out_dir(args, run)
    params, ckpt_cfg = nn.load_checkpoint(args.checkpoint)
    dataset = resolve_dataset(run)
    if dataset.labels is None:
        raise ConfigError("evaluate requires ground-truth labels in the dataset")
    seed = args.seed if args.seed is not None else ckpt_cfg.seed
    report = trainer.evaluate_params(params, dataset, ckpt_cfg, seed=seed)
    _dump_json(out / "metrics.json", report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cclust",
        description="Joint contrastive + clustering training over embedding vectors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run-config file")
    common.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, default=None, help="seed override")
    common.add_argument(
        "--eta-on",
        dest="eta_on",
        choices=["cluster", "instance"],
        default=None,
        help="which loss term the eta weight multiplies",
    )

    p_train = sub.add_parser("train", parents=[common], help="run one training job")
    p_train.set_defaults(func=cmd_train)
    p_ablate = sub.add_parser("ablate", parents=[common], help="compare all four modes")
    p_ablate.set_defaults(func=cmd_ablate)
    p_diag = sub.add_parser("diagnose", parents=[common], help="geometry + similarity diagnostics")
    p_diag.add_argument("--checkpoint", required=True)
    p_diag.set_defaults(func=cmd_diagnose)
    p_eval = sub.add_parser("evaluate", parents=[common], help="k-means evaluation of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("CCLUST_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("command failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
