"""Student's-t soft cluster assignment, the self-training target
distribution, and the KL clustering loss with its exact gradients.

The target distribution is treated as a constant within each loss
evaluation (no gradient flows through it); it is recomputed from the
current batch every time the loss is called. Cluster frequencies are
batch-local column sums of the assignment matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClusterLossVariant, ensure_matrix, pairwise_sqdist
from .errors import ConfigError, ContractError, DimensionMismatchError


def soft_assign(e: np.ndarray, mu: np.ndarray, alpha: float) -> np.ndarray:
    """Row-normalized Student's-t kernel between embeddings and centroids.

    Entry (j, k) is proportional to (1 + ||e_j - mu_k||^2 / alpha)
    raised to -(alpha + 1) / 2. Computed in log space for stability;
    every row sums to 1 and every entry is strictly positive.
    """
    e = ensure_matrix(e, "e")
    mu = ensure_matrix(mu, "mu")
    if alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    if mu.shape[0] < 2:
        raise ConfigError(f"need at least 2 clusters, got {mu.shape[0]}")
    if e.shape[1] != mu.shape[1]:
        raise DimensionMismatchError(
            f"embedding dim {e.shape[1]} != centroid dim {mu.shape[1]}"
        )
    log_kernel = -0.5 * (alpha + 1.0) * np.log1p(pairwise_sqdist(e, mu) / alpha)
    log_kernel -= log_kernel.max(axis=1, keepdims=True)
    q = np.exp(log_kernel)
    q /= q.sum(axis=1, keepdims=True)
    return q


@dataclass
class TargetDistribution:
    """Sharpened, frequency-normalized assignments plus the batch-local
    soft cluster frequencies they were normalized by."""

    probs: np.ndarray
    freqs: np.ndarray


def target_distribution(q: np.ndarray) -> TargetDistribution:
    """Square the assignments, divide by the soft cluster frequencies
    (column sums over this batch), renormalize rows."""
    q = ensure_matrix(q, "q")
    freqs = q.sum(axis=0)
    unnorm = np.square(q) / freqs
    probs = unnorm / unnorm.sum(axis=1, keepdims=True)
    return TargetDistribution(probs=probs, freqs=freqs)


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q); terms with p == 0 contribute zero."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=1)


@dataclass
class ClusterLossResult:
    """Loss, per-row losses, and gradients. ``grad_e`` covers the
    original-batch embeddings (identically zero under the alternatives,
    where the target is the only thing the original batch feeds and the
    target is held constant); ``grad_aug1``/``grad_aug2`` cover the two
    augmented views and are None for the original variant. ``targets``
    echoes the constant target distribution(s) used, enabling independent
    re-evaluation of the loss with the targets frozen."""

    loss: float
    per_instance: np.ndarray
    grad_e: np.ndarray
    grad_mu: np.ndarray
    grad_aug1: np.ndarray | None = None
    grad_aug2: np.ndarray | None = None
    targets: object = None


def _frozen_kl_grads(
    p: np.ndarray,
    q: np.ndarray,
    e: np.ndarray,
    mu: np.ndarray,
    alpha: float,
    scale: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of scale * sum_j KL(p_j || q_j) w.r.t. e and mu, with p
    constant and q the Student's-t assignment of (e, mu)."""
    w = 1.0 / (1.0 + pairwise_sqdist(e, mu) / alpha)
    a = (p - q) * w
    c = scale * (alpha + 1.0) / alpha
    grad_e = c * (a.sum(axis=1, keepdims=True) * e - a @ mu)
    grad_mu = -c * (a.T @ e - a.sum(axis=0)[:, None] * mu)
    return grad_e, grad_mu


def cluster_loss(
    e: np.ndarray | None,
    mu: np.ndarray,
    alpha: float,
    variant: ClusterLossVariant = ClusterLossVariant.ORIGINAL,
    aug_e: tuple[np.ndarray, np.ndarray] | None = None,
    frozen_targets=None,
) -> ClusterLossResult:
    """Mean KL clustering loss over a batch, in one of three variants.

    * original: targets from the original embeddings, assignments from the
      same embeddings.
    * anchor_swap: each augmented view's assignments are pushed toward the
      target computed from the other view.
    * original_anchor: both views' assignments are pushed toward the target
      computed from the original embeddings.

    Each target distribution is computed from the batch of its own view
    (frequencies included) and then held constant; ``frozen_targets``
    overrides it with a previously captured value, which is what a
    finite-difference probe of the stop-gradient behavior needs.
    """
    variant = ClusterLossVariant(variant)
    mu = ensure_matrix(mu, "mu")
    if variant is not ClusterLossVariant.ANCHOR_SWAP or e is not None:
        if e is None:
            raise ContractError(f"{variant.value} requires the original embeddings")
        e = ensure_matrix(e, "e")

    if variant is ClusterLossVariant.ORIGINAL:
        m = e.shape[0]
        q = soft_assign(e, mu, alpha)
        p = target_distribution(q).probs if frozen_targets is None else frozen_targets
        per = kl_rows(p, q)
        grad_e, grad_mu = _frozen_kl_grads(p, q, e, mu, alpha, 1.0 / m)
        result = ClusterLossResult(
            loss=float(per.mean()),
            per_instance=per,
            grad_e=grad_e,
            grad_mu=grad_mu,
            targets=p,
        )
    else:
        if aug_e is None:
            raise ContractError(f"{variant.value} requires the augmented embeddings")
        e1 = ensure_matrix(aug_e[0], "aug_e[0]")
        e2 = ensure_matrix(aug_e[1], "aug_e[1]")
        if e1.shape != e2.shape:
            raise DimensionMismatchError("augmented views must have equal shapes")
        m = e1.shape[0]
        q1 = soft_assign(e1, mu, alpha)
        q2 = soft_assign(e2, mu, alpha)
        if variant is ClusterLossVariant.ANCHOR_SWAP:
            if frozen_targets is None:
                p1 = target_distribution(q1).probs
                p2 = target_distribution(q2).probs
            else:
                p1, p2 = frozen_targets
            per = kl_rows(p1, q2) + kl_rows(p2, q1)
            g2, gmu2 = _frozen_kl_grads(p1, q2, e2, mu, alpha, 1.0 / m)
            g1, gmu1 = _frozen_kl_grads(p2, q1, e1, mu, alpha, 1.0 / m)
            targets = (p1, p2)
        else:  # ORIGINAL_ANCHOR
            q0 = soft_assign(e, mu, alpha)
            p0 = target_distribution(q0).probs if frozen_targets is None else frozen_targets
            if e.shape[0] != m:
                raise DimensionMismatchError("original batch and views must align")
            per = kl_rows(p0, q1) + kl_rows(p0, q2)
            g1, gmu1 = _frozen_kl_grads(p0, q1, e1, mu, alpha, 1.0 / m)
            g2, gmu2 = _frozen_kl_grads(p0, q2, e2, mu, alpha, 1.0 / m)
            targets = p0
        grad_e = np.zeros_like(e) if e is not None else np.zeros_like(e1)
        result = ClusterLossResult(
            loss=float(per.mean()),
            per_instance=per,
            grad_e=grad_e,
            grad_mu=gmu1 + gmu2,
            grad_aug1=g1,
            grad_aug2=g2,
            targets=targets,
        )

    if not np.isfinite(result.loss) or not np.all(np.isfinite(result.grad_mu)):
        raise ContractError("clustering loss produced non-finite values")
    return result
