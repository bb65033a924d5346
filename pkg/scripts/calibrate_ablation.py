"""Scratch calibration for the ablation experiment configuration.

Runs all four modes over a few seeds for one or more candidate configs
and prints the mean ACC per mode plus the geometry direction counts for
joint mode. Not part of the test suite.
"""

import sys
import time
from dataclasses import replace

import numpy as np

sys.path.insert(0, "src")

from cclust.core import Mode, TrainConfig, make_synthetic
from cclust.metrics import accuracy, kmeans
from cclust.trainer import evaluate_params, train


def run(config, dataset, n_seeds=3):
    t0 = time.time()
    results = {}
    geometry = []
    for mode in (Mode.JOINT, Mode.INSTANCE_ONLY, Mode.CLUSTER_ONLY, Mode.SEQUENTIAL):
        accs = []
        for s in range(n_seeds):
            cfg = replace(config, mode=mode, seed=config.seed + s)
            params, trace = train(dataset, cfg)
            rep = evaluate_params(params, dataset, cfg, seed=cfg.seed)
            accs.append(rep["acc"])
            if mode is Mode.JOINT:
                geometry.append(
                    (trace[0].intra_true, trace[-1].intra_true,
                     trace[0].inter_true, trace[-1].inter_true)
                )
        results[mode.value] = accs
    dt = time.time() - t0
    print(f"  elapsed {dt:.1f}s")
    for mode, accs in results.items():
        print(f"  {mode:14s} mean={np.mean(accs):.4f}  {[round(a, 3) for a in accs]}")
    intra_ok = sum(1 for a, b, _, _ in geometry if b < a)
    inter_ok = sum(1 for _, _, c, d in geometry if d > c)
    print(f"  joint geometry: intra decreased {intra_ok}/{len(geometry)}, "
          f"inter increased {inter_ok}/{len(geometry)}")
    for g in geometry:
        print(f"    intra {g[0]:.3f}->{g[1]:.3f}  inter {g[2]:.3f}->{g[3]:.3f}")
    return results


def main():
    dataset = make_synthetic(k=4, n_per_cluster=500, dim=16, separation=2.0,
                             noise_sigma=1.0, seed=100)
    _, pred = kmeans(dataset.vectors, 4, seed=0)
    print(f"raw kmeans acc: {accuracy(dataset.labels, pred):.4f}")

    candidates = {
        "A depth1 embed16 lr1e-3 eta10 b256 it300": TrainConfig(
            n_clusters=4, embed_dim=16, contrast_dim=32, temperature=0.5, alpha=1.0,
            eta=10.0, batch_size=256, lr_backbone=1e-3, lr_heads=1e-3, max_iters=300,
            seed=0, encoder_depth=1, log_every=300),
        "B depth2 embed8 lr1e-3 eta10 b256 it300": TrainConfig(
            n_clusters=4, embed_dim=8, contrast_dim=32, temperature=0.5, alpha=1.0,
            eta=10.0, batch_size=256, lr_backbone=1e-3, lr_heads=1e-3, max_iters=300,
            seed=0, encoder_depth=2, log_every=300),
        "C depth2 embed16 lr5e-4/5e-3 eta10 b400 it400": TrainConfig(
            n_clusters=4, embed_dim=16, contrast_dim=32, temperature=0.5, alpha=1.0,
            eta=10.0, batch_size=400, lr_backbone=5e-4, lr_heads=5e-3, max_iters=400,
            seed=0, encoder_depth=2, log_every=400),
    }
    for name, cfg in candidates.items():
        print(name)
        run(cfg, dataset)


if __name__ == "__main__":
    main()
