"""Joint optimization loop: contrastive path over augmented pairs,
clustering path over original instances, combined per the configured mode.

Modes:
  joint          both losses every step, total = instance + eta * cluster
                 (eta_on="instance" flips which term carries eta)
  instance_only  contrastive path only; centroids are never touched
  cluster_only   clustering path only; the projection head is never used
  sequential     instance_only for the first phase, then cluster_only,
                 with centroids (re-)initialized at the phase boundary

Centroids are initialized by k-means over the encoded dataset. All
randomness derives from the config seed, so a run is bit-reproducible.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from . import augment as augment_mod
from . import clustering, contrastive, metrics, nn
from .core import (
    ClusterLossVariant,
    Dataset,
    EpochSampler,
    Minibatch,
    Mode,
    TraceRecord,
    TrainConfig,
    interleave_pairs,
    sample_minibatch,
)
from .errors import ConfigError, ContractError

log = logging.getLogger("cclust.trainer")

# fixed stream tags so every purpose-specific rng is independent of the others
_PROBE_STREAM = 11
_EVAL_STREAM = 13
_FINAL_EVAL_STREAM = 17


@dataclass
class StepRecord:
    loss_total: float
    loss_cluster: float | None
    loss_instance: float | None


@dataclass
class LossesAndGrads:
    loss_total: float
    loss_instance: float | None
    loss_cluster: float | None
    grads: nn.ParamGrads
    frozen_targets: object


@dataclass
class TrainerState:
    params: nn.ModelParams
    adam: nn.AdamState
    config: TrainConfig
    iter: int = 0
    centroids_ready: bool = False
    trace: list[TraceRecord] = field(default_factory=list)


def init_centroids(
    params: nn.ModelParams, dataset: Dataset, config: TrainConfig, rng
) -> nn.ModelParams:
    """Encode the full dataset with the current encoder and write the
    k-means centroids of the embeddings into the clustering head."""
    if config.n_clusters > dataset.n:
        raise ConfigError(
            f"n_clusters={config.n_clusters} exceeds dataset size {dataset.n}"
        )
    e, _ = nn.encode(params, dataset.vectors)
    centroids, _ = metrics.kmeans_restarts(e, config.n_clusters, EVAL_KMEANS_RESTARTS, seed=rng)
    params.centroids[...] = centroids
    return params


def _uses_instance(mode: Mode) -> bool:
    return mode in (Mode.JOINT, Mode.INSTANCE_ONLY)


def _uses_cluster(mode: Mode) -> bool:
    return mode in (Mode.JOINT, Mode.CLUSTER_ONLY)


def _needs_aug(mode: Mode, variant: ClusterLossVariant) -> bool:
    if _uses_instance(mode):
        return True
    return variant is not ClusterLossVariant.ORIGINAL


def compute_losses(
    params: nn.ModelParams,
    batch: Minibatch,
    config: TrainConfig,
    mode: Mode | None = None,
    frozen_targets=None,
) -> LossesAndGrads:
    """Forward both paths as the mode requires and return the combined
    loss with gradients for every parameter tensor.

    ``frozen_targets`` re-applies a previously captured target
    distribution instead of recomputing it, mirroring the constant-target
    convention for probes of the composed objective.
    """
    mode = config.mode if mode is None else mode
    if mode is Mode.SEQUENTIAL:
        raise ContractError("sequential resolves to a concrete phase mode per step")
    variant = config.cluster_loss_variant
    use_instance = _uses_instance(mode)
    use_cluster = _uses_cluster(mode)

    if mode is Mode.JOINT:
        w_inst, w_clu = (1.0, config.eta) if config.eta_on == "cluster" else (config.eta, 1.0)
    else:
        w_inst = w_clu = 1.0

    caches = nn.ForwardCaches()
    e_aug = None
    if _needs_aug(mode, variant):
        if batch.aug is None:
            raise ContractError("this mode requires the augmented batch")
        e_aug, caches.aug_encode = nn.encode(params, batch.aug)

    loss_instance = None
    grad_z = None
    if use_instance:
        z, caches.project = nn.project(params, e_aug)
        cres = contrastive.instance_cl_loss(z, config.temperature)
        loss_instance = cres.loss
        grad_z = w_inst * cres.grad_z

    loss_cluster = None
    grad_e_orig = None
    grad_e_aug = None
    grad_mu = None
    targets = None
    if use_cluster:
        if variant is not ClusterLossVariant.ANCHOR_SWAP:
            e_orig, caches.orig_encode = nn.encode(params, batch.orig)
        else:
            e_orig = None
        aug_pair = None
        if variant is not ClusterLossVariant.ORIGINAL:
            aug_pair = (e_aug[0::2], e_aug[1::2])
        cl = clustering.cluster_loss(
            e_orig,
            params.centroids,
            config.alpha,
            variant,
            aug_e=aug_pair,
            frozen_targets=frozen_targets,
        )
        loss_cluster = cl.loss
        targets = cl.targets
        grad_mu = w_clu * cl.grad_mu
        if variant is ClusterLossVariant.ORIGINAL:
            grad_e_orig = w_clu * cl.grad_e
        else:
            grad_e_aug = w_clu * interleave_pairs(cl.grad_aug1, cl.grad_aug2)
            if variant is ClusterLossVariant.ORIGINAL_ANCHOR:
                grad_e_orig = w_clu * cl.grad_e  # identically zero: targets are constant

    grads = nn.backward(
        params,
        caches,
        grad_e_orig=grad_e_orig,
        grad_z=grad_z,
        grad_e_aug=grad_e_aug,
    )
    if grad_mu is not None:
        grads["centroids"] += grad_mu

    if mode is Mode.JOINT:
        loss_total = w_inst * loss_instance + w_clu * loss_cluster
    elif mode is Mode.INSTANCE_ONLY:
        loss_total = loss_instance
    else:
        loss_total = loss_cluster
    return LossesAndGrads(
        loss_total=float(loss_total),
        loss_instance=loss_instance,
        loss_cluster=loss_cluster,
        grads=grads,
        frozen_targets=targets,
    )


def train_step(
    state: TrainerState, batch: Minibatch, mode: Mode | None = None
) -> StepRecord:
    """One optimization step in the given (or configured) concrete mode."""
    mode = state.config.mode if mode is None else mode
    if _uses_cluster(mode) and not state.centroids_ready:
        raise ContractError("centroids must be initialized before a clustering step")
    result = compute_losses(state.params, batch, state.config, mode)
    nn.adam_step(
        state.params,
        result.grads,
        state.adam,
        state.config.lr_backbone,
        state.config.lr_heads,
    )
    state.iter += 1
    return StepRecord(
        loss_total=result.loss_total,
        loss_cluster=result.loss_cluster,
        loss_instance=result.loss_instance,
    )


def _probe_batch(
    dataset: Dataset,
    config: TrainConfig,
    augmenter,
    need_aug: bool,
) -> Minibatch:
    """Deterministic batch (the first rows) used only to report losses for
    the iteration-0 trace row."""
    m = min(config.batch_size, dataset.n)
    idx = np.arange(m)
    orig = dataset.vectors[idx]
    aug = None
    if need_aug:
        if augmenter is not None:
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, _PROBE_STREAM]))
            a1, a2 = augment_mod.augment_matrix_pairs(orig, augmenter, rng)
            aug = interleave_pairs(a1, a2)
        else:
            aug = interleave_pairs(dataset.aug1[idx], dataset.aug2[idx])
    return Minibatch(orig=orig, aug=aug, orig_indices=idx)


EVAL_KMEANS_RESTARTS = 10


def _metrics_snapshot(
    params: nn.ModelParams, dataset: Dataset, config: TrainConfig, iteration: int
) -> dict:
    """ACC/NMI via the k-means evaluation protocol (best of several
    restarts by objective) plus geometry under both labelings; requires
    ground-truth labels."""
    e, _ = nn.encode(params, dataset.vectors)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _EVAL_STREAM, iteration]))
    _, pred = metrics.kmeans_restarts(e, config.n_clusters, EVAL_KMEANS_RESTARTS, seed=rng)
    g_true = metrics.cluster_geometry(e, dataset.labels)
    g_pred = metrics.cluster_geometry(e, pred)
    return {
        "acc": metrics.accuracy(dataset.labels, pred),
        "nmi": metrics.nmi(dataset.labels, pred),
        "intra_true": g_true.mean_intra,
        "inter_true": g_true.mean_inter,
        "intra_pred": g_pred.mean_intra,
        "inter_pred": g_pred.mean_inter,
    }


def _trace_record(
    iteration: int,
    rec: StepRecord | None,
    params: nn.ModelParams,
    dataset: Dataset,
    config: TrainConfig,
) -> TraceRecord:
    out = TraceRecord(iter=iteration)
    if rec is not None:
        out.loss_total = rec.loss_total
        out.loss_cluster = rec.loss_cluster
        out.loss_instance = rec.loss_instance
    if dataset.labels is not None:
        for key, value in _metrics_snapshot(params, dataset, config, iteration).items():
            setattr(out, key, value)
    return out


def _effective_mode(config: TrainConfig, step: int) -> Mode:
    """Concrete mode for 1-based step number ``step``."""
    if config.mode is not Mode.SEQUENTIAL:
        return config.mode
    return Mode.INSTANCE_ONLY if step <= config.resolved_phase_split() else Mode.CLUSTER_ONLY


def train(
    dataset: Dataset,
    config: TrainConfig,
    augmenter: augment_mod.AugmentSpec | None = None,
) -> tuple[nn.ModelParams, list[TraceRecord]]:
    """Full training run; returns final parameters and the trace.

    The trace is empty for max_iters=0; otherwise it opens with an
    iteration-0 snapshot (losses on a fixed probe batch, metrics on the
    initialized embeddings) and then records every ``log_every`` steps
    plus the final one.
    """
    if dataset.n == 0:
        raise ContractError("cannot train on an empty dataset")
    variant = config.cluster_loss_variant
    any_aug_needed = any(
        _needs_aug(_effective_mode(config, s), variant)
        for s in range(1, config.max_iters + 1)
    )
    if any_aug_needed and augmenter is None and not dataset.has_augmentations:
        raise ContractError(
            "mode requires augmentations: provide precomputed pairs or an augmenter"
        )

    ss = np.random.SeedSequence(config.seed)
    init_rng, kmeans_rng, sampler_rng, aug_rng = map(np.random.default_rng, ss.spawn(4))
    params = nn.init_params(config, dataset.dim, init_rng)
    state = TrainerState(params=params, adam=nn.AdamState.init(params), config=config)

    if config.mode in (Mode.JOINT, Mode.CLUSTER_ONLY):
        init_centroids(params, dataset, config, kmeans_rng)
        state.centroids_ready = True
    if config.max_iters == 0:
        return params, state.trace

    first_mode = _effective_mode(config, 1)
    probe = _probe_batch(dataset, config, augmenter, _needs_aug(first_mode, variant))
    if _uses_cluster(first_mode) and not state.centroids_ready:
        # sequential with an empty instance phase: initialize before probing
        init_centroids(params, dataset, config, kmeans_rng)
        state.centroids_ready = True
    probe_losses = compute_losses(params, probe, config, first_mode)
    state.trace.append(
        _trace_record(
            0,
            StepRecord(probe_losses.loss_total, probe_losses.loss_cluster,
                       probe_losses.loss_instance),
            params,
            dataset,
            config,
        )
    )

    sampler = EpochSampler(dataset.n, config.batch_size, sampler_rng)
    phase_split = config.resolved_phase_split()
    for step in range(1, config.max_iters + 1):
        mode = _effective_mode(config, step)
        if config.mode is Mode.SEQUENTIAL and step == phase_split + 1 and not state.centroids_ready:
            init_centroids(params, dataset, config, kmeans_rng)
            state.centroids_ready = True
        batch = sample_minibatch(
            dataset,
            sampler,
            augmenter=augmenter,
            aug_rng=aug_rng,
            need_aug=_needs_aug(mode, variant),
        )
        rec = train_step(state, batch, mode)
        if step % config.log_every == 0 or step == config.max_iters:
            state.trace.append(_trace_record(step, rec, params, dataset, config))
            log.info(
                "iter %d: total=%.6f instance=%s cluster=%s",
                step,
                rec.loss_total,
                f"{rec.loss_instance:.6f}" if rec.loss_instance is not None else "-",
                f"{rec.loss_cluster:.6f}" if rec.loss_cluster is not None else "-",
            )
    return params, state.trace


def evaluate_params(
    params: nn.ModelParams, dataset: Dataset, config: TrainConfig, seed: int
) -> dict:
    """Post-training evaluation protocol: encode the dataset, cluster the
    embeddings with k-means (K = n_clusters), score against ground truth
    when labels exist. Geometry fields cover both labelings."""
    e, _ = nn.encode(params, dataset.vectors)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _FINAL_EVAL_STREAM]))
    _, pred = metrics.kmeans_restarts(e, config.n_clusters, EVAL_KMEANS_RESTARTS, seed=rng)
    g_pred = metrics.cluster_geometry(e, pred)
    report = {
        "acc": None,
        "nmi": None,
        "mean_intra_true": None,
        "mean_inter_true": None,
        "mean_intra_pred": g_pred.mean_intra,
        "mean_inter_pred": g_pred.mean_inter,
        "k": config.n_clusters,
        "n": dataset.n,
        "seed": int(seed),
    }
    if dataset.labels is not None:
        g_true = metrics.cluster_geometry(e, dataset.labels)
        report["acc"] = metrics.accuracy(dataset.labels, pred)
        report["nmi"] = metrics.nmi(dataset.labels, pred)
        report["mean_intra_true"] = g_true.mean_intra
        report["mean_inter_true"] = g_true.mean_inter
    return report


ABLATION_MODES = (Mode.JOINT, Mode.INSTANCE_ONLY, Mode.CLUSTER_ONLY, Mode.SEQUENTIAL)


@dataclass(frozen=True)
class AblationRow:
    mode: str
    acc_mean: float
    acc_sd: float
    nmi_mean: float
    nmi_sd: float
    n_seeds: int


def run_ablation(
    dataset: Dataset,
    config: TrainConfig,
    n_seeds: int,
    augmenter: augment_mod.AugmentSpec | None = None,
) -> list[AblationRow]:
    """Train every mode over ``n_seeds`` consecutive seeds and tabulate
    mean and sample standard deviation of the final ACC/NMI."""
    if dataset.labels is None:
        raise ContractError("the ablation comparison requires ground-truth labels")
    rows = []
    for mode in ABLATION_MODES:
        accs, nmis = [], []
        for s in range(n_seeds):
            cfg = replace(config, mode=mode, seed=config.seed + s)
            params, _ = train(dataset, cfg, augmenter=augmenter)
            report = evaluate_params(params, dataset, cfg, seed=cfg.seed)
            accs.append(report["acc"])
            nmis.append(report["nmi"])
            log.info("ablation %s seed %d: acc=%.4f nmi=%.4f", mode.value, cfg.seed,
                     report["acc"], report["nmi"])
        rows.append(
            AblationRow(
                mode=mode.value,
                acc_mean=statistics.fmean(accs),
                acc_sd=statistics.stdev(accs) if n_seeds > 1 else 0.0,
                nmi_mean=statistics.fmean(nmis),
                nmi_sd=statistics.stdev(nmis) if n_seeds > 1 else 0.0,
                n_seeds=n_seeds,
            )
        )
    return rows
