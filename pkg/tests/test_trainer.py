"""Training loop: mode semantics, composed gradients, determinism."""

import math

import numpy as np
import pytest

from helpers import fd_param_grads, max_rel_err

from cclust.core import (
    ClusterLossVariant,
    Dataset,
    Minibatch,
    Mode,
    TrainConfig,
    interleave_pairs,
    make_synthetic,
    synthetic_centroids,
)
from cclust.errors import ConfigError, ContractError
from cclust.nn import AdamState, init_params
from cclust.trainer import (
    TrainerState,
    compute_losses,
    evaluate_params,
    init_centroids,
    run_ablation,
    train,
    train_step,
)


def _config(**kwargs):
    base = dict(
        n_clusters=3,
        embed_dim=6,
        contrast_dim=4,
        batch_size=12,
        max_iters=10,
        log_every=5,
        lr_backbone=1e-3,
        lr_heads=1e-3,
        seed=0,
    )
    base.update(kwargs)
    return TrainConfig(**base)


def _dataset(seed=0, k=3, n_per=12, dim=6, separation=5.0, sigma=0.6):
    return make_synthetic(k=k, n_per_cluster=n_per, dim=dim, separation=separation,
                          noise_sigma=sigma, seed=seed)


def _batch_from(dataset, m=6):
    idx = np.arange(m)
    aug = interleave_pairs(dataset.aug1[idx], dataset.aug2[idx])
    return Minibatch(orig=dataset.vectors[idx], aug=aug, orig_indices=idx)


def _state(config, dataset, centroids_ready=True):
    rng = np.random.default_rng(config.seed)
    params = init_params(config, dataset.dim, rng)
    for name, t in params.tensors().items():
        if name.endswith(".b"):
            t[...] = 0.05 * rng.normal(size=t.shape)
    if centroids_ready:
        init_centroids(params, dataset, config, np.random.default_rng(1))
    return TrainerState(params=params, adam=AdamState.init(params), config=config,
                        centroids_ready=centroids_ready)


# ---------------------------------------------------------------------------
# init_centroids
# ---------------------------------------------------------------------------

def test_centroids_of_k_distinct_points():
    cfg = _config(n_clusters=3, embed_dim=2, encoder_depth=0, batch_size=3)
    ds = Dataset(vectors=np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]]))
    params = init_params(cfg, 2, np.random.default_rng(0))
    init_centroids(params, ds, cfg, np.random.default_rng(0))
    assert {tuple(c) for c in params.centroids} == {(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)}


def test_init_centroids_deterministic():
    cfg = _config()
    ds = _dataset()
    results = []
    for _ in range(2):
        params = init_params(cfg, ds.dim, np.random.default_rng(3))
        init_centroids(params, ds, cfg, np.random.default_rng(4))
        results.append(params.centroids.copy())
    assert np.array_equal(results[0], results[1])


def test_init_centroids_recovers_blob_means():
    k, dim, sep, sigma, seed = 2, 4, 12.0, 0.4, 5
    ds = make_synthetic(k=k, n_per_cluster=300, dim=dim, separation=sep,
                        noise_sigma=sigma, seed=seed)
    cfg = _config(n_clusters=2, embed_dim=4, encoder_depth=0, batch_size=16)
    params = init_params(cfg, dim, np.random.default_rng(0))
    init_centroids(params, ds, cfg, np.random.default_rng(1))
    truth = synthetic_centroids(k, dim, sep, seed)
    # match found centroids to generator means, order-free
    for t in truth:
        nearest = params.centroids[np.argmin(np.linalg.norm(params.centroids - t, axis=1))]
        assert np.linalg.norm(nearest - t) < sigma


def test_init_centroids_too_many_clusters():
    cfg = _config(n_clusters=3, embed_dim=2, encoder_depth=0, batch_size=2)
    ds = Dataset(vectors=np.zeros((2, 2)))
    params = init_params(cfg, 2, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        init_centroids(params, ds, cfg, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# compute_losses / train_step
# ---------------------------------------------------------------------------

def test_eta_zero_total_equals_instance_loss():
    ds = _dataset()
    cfg = _config(eta=0.0)
    state = _state(cfg, ds)
    rec = train_step(state, _batch_from(ds))
    assert rec.loss_total == pytest.approx(rec.loss_instance, abs=1e-15)


def test_joint_total_is_weighted_sum():
    ds = _dataset()
    cfg = _config(eta=7.5)
    state = _state(cfg, ds)
    rec = train_step(state, _batch_from(ds))
    assert rec.loss_total == pytest.approx(rec.loss_instance + 7.5 * rec.loss_cluster,
                                           abs=1e-12)


def test_eta_on_instance_flips_weighting():
    ds = _dataset()
    cfg = _config(eta=7.5, eta_on="instance")
    state = _state(cfg, ds)
    rec = train_step(state, _batch_from(ds))
    assert rec.loss_total == pytest.approx(7.5 * rec.loss_instance + rec.loss_cluster,
                                           abs=1e-12)


def test_cluster_fixed_point_leaves_params_unchanged():
    # a batch equidistant from both centroids sits exactly (in floats) at
    # the p = q fixed point: zero gradients, so Adam is a bitwise no-op
    cfg = _config(mode=Mode.CLUSTER_ONLY, n_clusters=2, embed_dim=2, encoder_depth=0,
                  batch_size=2)
    ds = Dataset(vectors=np.array([[0.0, 0.0], [5.0, 5.0]]))
    params = init_params(cfg, 2, np.random.default_rng(0))
    params.centroids[...] = np.array([[1.0, 0.0], [-1.0, 0.0]])
    state = TrainerState(params=params, adam=AdamState.init(params), config=cfg,
                         centroids_ready=True)
    batch = Minibatch(orig=np.array([[0.0, 0.0], [0.0, 2.0]]), aug=None,
                      orig_indices=np.array([0, 1]))
    before = {n: t.copy() for n, t in params.tensors().items()}
    rec = train_step(state, batch)
    assert rec.loss_total == pytest.approx(0.0, abs=1e-12)
    for name, t in params.tensors().items():
        assert np.array_equal(t, before[name]), name


def test_instance_only_never_touches_centroids():
    ds = _dataset()
    cfg = _config(mode=Mode.INSTANCE_ONLY, max_iters=6)
    params, _ = train(ds, cfg)
    assert np.all(params.centroids == 0.0)


def test_cluster_only_never_evaluates_projection_head():
    ds = _dataset()
    cfg = _config(mode=Mode.CLUSTER_ONLY, max_iters=6)
    params, _ = train(ds, cfg)
    # g tensors keep their initialization values exactly
    ref_rng, _, _, _ = map(np.random.default_rng, np.random.SeedSequence(cfg.seed).spawn(4))
    ref = init_params(cfg, ds.dim, ref_rng)
    assert np.array_equal(params.g_hidden.w, ref.g_hidden.w)
    assert np.array_equal(params.g_out.w, ref.g_out.w)


def test_cluster_path_ignores_augmented_rows_in_original_variant():
    ds = _dataset()
    cfg = _config(mode=Mode.CLUSTER_ONLY)
    state = _state(cfg, ds)
    idx = np.arange(6)
    base = Minibatch(orig=ds.vectors[idx], aug=None, orig_indices=idx)
    res = compute_losses(state.params, base, cfg, Mode.CLUSTER_ONLY)
    noisy_aug = interleave_pairs(ds.aug1[idx] + 9.0, ds.aug2[idx] - 9.0)
    res2 = compute_losses(
        state.params,
        Minibatch(orig=ds.vectors[idx], aug=noisy_aug, orig_indices=idx),
        cfg,
        Mode.CLUSTER_ONLY,
    )
    assert res.loss_cluster == res2.loss_cluster
    for name in res.grads:
        assert np.array_equal(res.grads[name], res2.grads[name])


def test_uninitialized_centroids_rejected():
    ds = _dataset()
    cfg = _config(mode=Mode.CLUSTER_ONLY)
    state = _state(cfg, ds, centroids_ready=False)
    with pytest.raises(ContractError):
        train_step(state, _batch_from(ds))


@pytest.mark.parametrize("variant", list(ClusterLossVariant))
@pytest.mark.parametrize("eta_on", ["cluster", "instance"])
def test_composed_gradient_matches_finite_differences(variant, eta_on):
    # the whole pipeline: encoder + head + both losses, targets frozen at
    # the base point on both sides of the comparison
    cfg = _config(
        n_clusters=3,
        embed_dim=4,
        contrast_dim=3,
        encoder_depth=2,
        eta=2.0,
        eta_on=eta_on,
        cluster_loss_variant=variant,
        batch_size=4,
    )
    rng = np.random.default_rng(17)
    ds = Dataset(vectors=rng.normal(size=(8, 5)),
                 aug1=rng.normal(size=(8, 5)),
                 aug2=rng.normal(size=(8, 5)))
    state = _state(cfg, ds)
    batch = _batch_from(ds, m=4)
    base = compute_losses(state.params, batch, cfg, Mode.JOINT)

    def frozen_loss(params):
        return compute_losses(params, batch, cfg, Mode.JOINT,
                              frozen_targets=base.frozen_targets).loss_total

    fd = fd_param_grads(frozen_loss, state.params)
    for name in base.grads:
        assert max_rel_err(base.grads[name], fd[name]) < 1e-5, (variant, eta_on, name)


# ---------------------------------------------------------------------------
# train()
# ---------------------------------------------------------------------------

def test_zero_iterations_returns_initial_params_and_empty_trace():
    ds = _dataset()
    cfg = _config(max_iters=0)
    params, trace = train(ds, cfg)
    assert trace == []
    ref_rng, _, _, _ = map(np.random.default_rng, np.random.SeedSequence(cfg.seed).spawn(4))
    ref = init_params(cfg, ds.dim, ref_rng)
    assert np.array_equal(params.encoder[0].w, ref.encoder[0].w)


def test_trace_additivity_in_joint_mode():
    ds = _dataset()
    cfg = _config(eta=3.0, max_iters=8, log_every=2)
    _, trace = train(ds, cfg)
    assert trace[0].iter == 0
    for rec in trace:
        assert abs(rec.loss_total - (rec.loss_instance + 3.0 * rec.loss_cluster)) < 1e-12


def test_trace_iters_strictly_increasing_with_final_row():
    ds = _dataset()
    cfg = _config(max_iters=7, log_every=3)
    _, trace = train(ds, cfg)
    iters = [r.iter for r in trace]
    assert iters == sorted(set(iters))
    assert iters[0] == 0 and iters[-1] == 7


def test_bitwise_determinism():
    ds = _dataset()
    cfg = _config(max_iters=9, log_every=3)
    p1, t1 = train(ds, cfg)
    p2, t2 = train(ds, cfg)
    assert t1 == t2
    for name, t in p1.tensors().items():
        assert np.array_equal(t, p2.tensors()[name])


def test_unlabeled_dataset_logs_losses_only():
    rng = np.random.default_rng(1)
    ds = Dataset(vectors=rng.normal(size=(20, 6)),
                 aug1=rng.normal(size=(20, 6)),
                 aug2=rng.normal(size=(20, 6)))
    cfg = _config(max_iters=4, log_every=2)
    _, trace = train(ds, cfg)
    for rec in trace:
        assert rec.loss_total is not None
        assert rec.acc is None and rec.intra_true is None


def test_sequential_phases():
    ds = _dataset()
    cfg = _config(mode=Mode.SEQUENTIAL, max_iters=8, phase_split=4, log_every=1)
    params, trace = train(ds, cfg)
    # phase 1 rows carry instance loss only; phase 2 rows cluster loss only
    for rec in trace[1:]:
        if rec.iter <= 4:
            assert rec.loss_instance is not None and rec.loss_cluster is None
        else:
            assert rec.loss_cluster is not None and rec.loss_instance is None
    assert not np.all(params.centroids == 0.0)  # boundary re-init happened


def test_sequential_instance_phase_leaves_centroids_zero():
    ds = _dataset()
    cfg = _config(mode=Mode.SEQUENTIAL, max_iters=4, phase_split=4)
    params, _ = train(ds, cfg)
    assert np.all(params.centroids == 0.0)


def test_mode_requires_augmentations():
    rng = np.random.default_rng(0)
    ds = Dataset(vectors=rng.normal(size=(10, 6)))
    with pytest.raises(ContractError):
        train(ds, _config(max_iters=2))
    # cluster-only with the original variant runs without augmentations
    params, trace = train(ds, _config(mode=Mode.CLUSTER_ONLY, max_iters=2))
    assert trace[-1].iter == 2


def test_synthetic_joint_run_improves_accuracy():
    ds = make_synthetic(k=4, n_per_cluster=60, dim=8, separation=3.0, noise_sigma=1.0, seed=2)
    cfg = _config(n_clusters=4, embed_dim=8, batch_size=48, max_iters=120,
                  log_every=120, lr_backbone=2e-3, lr_heads=2e-3, eta=1.0)
    _, trace = train(ds, cfg)
    assert trace[-1].acc >= trace[0].acc


# ---------------------------------------------------------------------------
# evaluation / ablation plumbing
# ---------------------------------------------------------------------------

def test_evaluate_params_report_fields():
    ds = _dataset()
    cfg = _config(max_iters=3)
    params, _ = train(ds, cfg)
    report = evaluate_params(params, ds, cfg, seed=cfg.seed)
    assert set(report) == {
        "acc", "nmi", "mean_intra_true", "mean_inter_true",
        "mean_intra_pred", "mean_inter_pred", "k", "n", "seed",
    }
    assert 0.0 <= report["acc"] <= 1.0
    assert report["k"] == 3 and report["n"] == ds.n


def test_run_ablation_rows():
    ds = _dataset(n_per=8)
    cfg = _config(max_iters=4, log_every=4, batch_size=8)
    rows = run_ablation(ds, cfg, n_seeds=1)
    assert [r.mode for r in rows] == ["joint", "instance_only", "cluster_only", "sequential"]
    assert all(r.acc_sd == 0.0 and r.nmi_sd == 0.0 for r in rows)
    assert all(0.0 <= r.acc_mean <= 1.0 for r in rows)
