"""CLI contract: exit codes, output files, determinism, JSON schemas."""

import json
from pathlib import Path

import jsonschema
import pytest

from cclust.cli import main

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "cclust" / "schemas"


def _schema(name):
    return json.loads((SCHEMA_DIR / f"{name}.schema.json").read_text())


def _base_config(**overrides):
    cfg = {
        "n_clusters": 3,
        "embed_dim": 6,
        "contrast_dim": 4,
        "batch_size": 16,
        "max_iters": 8,
        "log_every": 4,
        "lr_backbone": 1e-3,
        "lr_heads": 1e-3,
        "seed": 0,
        "synthetic": {
            "k": 3,
            "n_per_cluster": 10,
            "dim": 6,
            "separation": 4.0,
            "noise_sigma": 0.6,
            "seed": 7,
        },
    }
    cfg.update(overrides)
    return cfg


def _write_config(tmp_path, name="run.json", **overrides):
    path = tmp_path / name
    path.write_text(json.dumps(_base_config(**overrides)))
    return path


def test_train_writes_three_files(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "checkpoint.json").exists()
    assert (out / "metrics.json").exists()
    assert (out / "trace.csv").exists()
    jsonschema.validate(json.loads((out / "metrics.json").read_text()),
                        _schema("metrics_report"))
    jsonschema.validate(json.loads((out / "checkpoint.json").read_text()),
                        _schema("checkpoint"))


def test_train_missing_data_source_exits_2(tmp_path):
    raw = _base_config()
    del raw["synthetic"]
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(raw))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_train_both_data_sources_exits_2(tmp_path):
    cfg = _write_config(tmp_path, dataset={"path": "x.jsonl"})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_unknown_config_key_exits_2(tmp_path):
    cfg = _write_config(tmp_path, learning_rate=0.1)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file_exits_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o")]) == 2


def test_usage_error_exits_2(tmp_path):
    assert main(["train"]) == 2
    assert main(["frobnicate"]) == 2


def test_rerun_is_byte_identical(tmp_path):
    cfg = _write_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(out2)]) == 0
    for name in ("checkpoint.json", "metrics.json", "trace.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_seed_override_changes_trace(tmp_path):
    cfg = _write_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(out2), "--seed", "5"]) == 0
    assert (out1 / "trace.csv").read_bytes() != (out2 / "trace.csv").read_bytes()


def test_ablate_four_rows_zero_sd(tmp_path):
    cfg = _write_config(tmp_path, n_seeds=1, max_iters=4)
    out = tmp_path / "out"
    assert main(["ablate", "--config", str(cfg), "--out", str(out)]) == 0
    payload = json.loads((out / "ablation.json").read_text())
    jsonschema.validate(payload, _schema("ablation"))
    assert [r["mode"] for r in payload["rows"]] == [
        "joint", "instance_only", "cluster_only", "sequential"]
    assert all(r["acc_sd"] == 0.0 for r in payload["rows"])
    csv_lines = (out / "ablation.csv").read_text().strip().split("\n")
    assert len(csv_lines) == 5


def test_diagnose_outputs(tmp_path):
    cfg = _write_config(tmp_path, max_iters=0)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    diag = tmp_path / "diag"
    assert main(["diagnose", "--config", str(cfg),
                 "--checkpoint", str(out / "checkpoint.json"),
                 "--out", str(diag)]) == 0
    payload = json.loads((diag / "diagnostics.json").read_text())
    jsonschema.validate(payload, _schema("diagnostics"))
    assert payload["geometry_true"] is not None
    n = payload["n"]
    for view in ("aug1", "aug2"):
        assert sum(payload["aug_similarity"][view]["counts"]) == n
    assert (diag / "diagnostics_geometry.csv").exists()
    assert (diag / "diagnostics_histogram.csv").exists()


def test_diagnose_unlabeled_dataset(tmp_path):
    import numpy as np

    from cclust.core import Dataset, write_dataset

    rng = np.random.default_rng(0)
    ds = Dataset(vectors=rng.normal(size=(12, 6)),
                 aug1=rng.normal(size=(12, 6)),
                 aug2=rng.normal(size=(12, 6)))
    data_path = tmp_path / "d.jsonl"
    write_dataset(ds, data_path)
    cfg = _write_config(tmp_path, max_iters=0)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0

    raw = _base_config(max_iters=0)
    del raw["synthetic"]
    raw["dataset"] = {"path": str(data_path)}
    cfg2 = tmp_path / "run2.json"
    cfg2.write_text(json.dumps(raw))
    diag = tmp_path / "diag"
    assert main(["diagnose", "--config", str(cfg2),
                 "--checkpoint", str(out / "checkpoint.json"),
                 "--out", str(diag)]) == 0
    payload = json.loads((diag / "diagnostics.json").read_text())
    assert payload["geometry_true"] is None
    assert payload["geometry_pred"] is not None


def test_evaluate_requires_labels(tmp_path):
    import numpy as np

    from cclust.core import Dataset, write_dataset

    ds = Dataset(vectors=np.random.default_rng(0).normal(size=(10, 6)))
    data_path = tmp_path / "d.jsonl"
    write_dataset(ds, data_path)
    cfg = _write_config(tmp_path, max_iters=0)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0

    raw = _base_config(max_iters=0)
    del raw["synthetic"]
    raw["dataset"] = {"path": str(data_path)}
    cfg2 = tmp_path / "run2.json"
    cfg2.write_text(json.dumps(raw))
    assert main(["evaluate", "--config", str(cfg2),
                 "--checkpoint", str(out / "checkpoint.json"),
                 "--out", str(tmp_path / "e")]) == 2


def test_evaluate_deterministic_and_valid(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    e1, e2 = tmp_path / "e1", tmp_path / "e2"
    for e in (e1, e2):
        assert main(["evaluate", "--config", str(cfg),
                     "--checkpoint", str(out / "checkpoint.json"),
                     "--out", str(e)]) == 0
    assert (e1 / "metrics.json").read_bytes() == (e2 / "metrics.json").read_bytes()
    report = json.loads((e1 / "metrics.json").read_text())
    jsonschema.validate(report, _schema("metrics_report"))
    assert report["acc"] is not None


def test_perfect_separation_checkpoint_evaluates_to_one(tmp_path):
    cfg = _write_config(
        tmp_path,
        synthetic={"k": 3, "n_per_cluster": 12, "dim": 6, "separation": 40.0,
                   "noise_sigma": 0.3, "seed": 1},
        max_iters=0,
        encoder_depth=0,
        embed_dim=6,
    )
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["evaluate", "--config", str(cfg),
                 "--checkpoint", str(out / "checkpoint.json"),
                 "--out", str(tmp_path / "e")]) == 0
    report = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert report["acc"] == 1.0
