"""Instance-wise contrastive (NT-Xent) loss over an interleaved augmented
batch, with its exact gradient.

Rows ``2i`` and ``2i+1`` of the input are the positive pair for original
instance ``i``, so the partner of row ``r`` is ``r ^ 1``. Similarity is
the cosine (dot product of L2-normalized rows); for each anchor the
denominator sums the temperature-scaled similarities to every other row,
the positive included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ensure_matrix
from .errors import ContractError, DegenerateVectorError


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two nonzero vectors, clipped into [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class ContrastiveResult:
    loss: float
    grad_z: np.ndarray
    per_instance: np.ndarray


def instance_cl_loss(z: np.ndarray, tau: float) -> ContrastiveResult:
    """Mean NT-Xent loss over all 2M rows of ``z`` plus d(loss)/dz.

    The gradient includes the normalization Jacobian, i.e. it is the
    gradient with respect to the raw (unnormalized) projections.
    """
    z = ensure_matrix(z, "z")
    n = z.shape[0]
    if n < 2 or n % 2 != 0:
        raise ContractError(f"need an even row count >= 2, got {n}")
    if tau <= 0:
        raise ContractError(f"temperature must be > 0, got {tau}")
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateVectorError("zero-norm row in contrastive batch")

    u = z / norms[:, None]
    logits = (u @ u.T) / tau
    np.fill_diagonal(logits, -np.inf)
    partner = np.arange(n) ^ 1

    # per-row log-sum-exp with the row max subtracted (value-preserving)
    row_max = logits.max(axis=1)
    shifted = np.exp(logits - row_max[:, None])
    lse = row_max + np.log(shifted.sum(axis=1))
    per_instance = lse - logits[np.arange(n), partner]
    loss = float(per_instance.mean())

    # softmax over non-self entries minus the positive indicator
    weights = np.exp(logits - lse[:, None])
    coeff = weights.copy()
    coeff[np.arange(n), partner] -= 1.0
    coeff /= n * tau
    grad_u = (coeff + coeff.T) @ u
    # back through u = z / ||z||
    grad_z = (grad_u - (grad_u * u).sum(axis=1, keepdims=True) * u) / norms[:, None]

    if not (np.isfinite(loss) and np.all(np.isfinite(grad_z))):
        raise ContractError("contrastive loss produced non-finite values")
    return ContrastiveResult(loss=loss, grad_z=grad_z, per_instance=per_instance)
