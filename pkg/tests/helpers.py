"""Shared test utilities: finite-difference gradients and independent
scalar-loop oracles for the loss formulas.

The oracles deliberately avoid the library's vectorized code paths:
everything is computed entry by entry with math.* so they can serve as
an independent reference.
"""

import math

import numpy as np


def max_rel_err(analytic, fd, floor=1e-3):
    """Worst-case relative error with an absolute floor on the denominator
    so near-zero entries are compared at floor*rtol absolute scale instead
    of amplifying finite-difference roundoff."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return float(np.max(np.abs(a - f) / denom))


def central_diff(fn, x, h=1e-5):
    """Central finite-difference gradient of scalar fn w.r.t. array x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = fn(x)
        x[idx] = orig - h
        fm = fn(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def fd_param_grads(loss_fn, params, h=1e-5):
    """Central differences over every entry of every parameter tensor.

    ``loss_fn`` takes the (mutated in place) params object and returns a
    scalar; tensors are restored after probing.
    """
    grads = {}
    for name, tensor in params.tensors().items():
        g = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + h
            fp = loss_fn(params)
            tensor[idx] = orig - h
            fm = loss_fn(params)
            tensor[idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
        grads[name] = g
    return grads


# ---------------------------------------------------------------------------
# Scalar oracles
# ---------------------------------------------------------------------------

def oracle_cosine(a, b):
    na = math.sqrt(sum(v * v for v in a))
    nb = math.sqrt(sum(v * v for v in b))
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def oracle_ntxent(z, tau):
    """Per-instance contrastive losses and their mean, entry by entry."""
    z = [list(map(float, row)) for row in np.asarray(z)]
    n = len(z)
    per = []
    for i in range(n):
        partner = i ^ 1
        num = math.exp(oracle_cosine(z[i], z[partner]) / tau)
        den = sum(
            math.exp(oracle_cosine(z[i], z[j]) / tau) for j in range(n) if j != i
        )
        per.append(-math.log(num / den))
    return np.array(per), sum(per) / n


def oracle_soft_assign(e, mu, alpha):
    e = np.asarray(e, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    m, k = e.shape[0], mu.shape[0]
    q = np.zeros((m, k))
    for j in range(m):
        kernel = []
        for c in range(k):
            d = sum((e[j, x] - mu[c, x]) ** 2 for x in range(e.shape[1]))
            kernel.append((1.0 + d / alpha) ** (-(alpha + 1.0) / 2.0))
        total = sum(kernel)
        for c in range(k):
            q[j, c] = kernel[c] / total
    return q


def oracle_target(q):
    q = np.asarray(q, dtype=np.float64)
    m, k = q.shape
    freqs = [sum(q[j, c] for j in range(m)) for c in range(k)]
    p = np.zeros_like(q)
    for j in range(m):
        unnorm = [q[j, c] ** 2 / freqs[c] for c in range(k)]
        total = sum(unnorm)
        for c in range(k):
            p[j, c] = unnorm[c] / total
    return p


def oracle_kl_row(p_row, q_row):
    return sum(
        p * math.log(p / q) for p, q in zip(p_row, q_row) if p > 0
    )


def oracle_frozen_cluster_loss(e, mu, alpha, variant, aug_e, frozen):
    """Mean KL clustering loss with the target(s) held at ``frozen``.

    Mirrors the three variants; assignments are recomputed from the given
    embeddings via the scalar oracle, targets are NOT recomputed.
    """
    if variant == "original":
        q = oracle_soft_assign(e, mu, alpha)
        rows = [oracle_kl_row(frozen[j], q[j]) for j in range(q.shape[0])]
    elif variant == "anchor_swap":
        p1, p2 = frozen
        q1 = oracle_soft_assign(aug_e[0], mu, alpha)
        q2 = oracle_soft_assign(aug_e[1], mu, alpha)
        rows = [
            oracle_kl_row(p1[j], q2[j]) + oracle_kl_row(p2[j], q1[j])
            for j in range(q1.shape[0])
        ]
    else:  # original_anchor
        p0 = frozen
        q1 = oracle_soft_assign(aug_e[0], mu, alpha)
        q2 = oracle_soft_assign(aug_e[1], mu, alpha)
        rows = [
            oracle_kl_row(p0[j], q1[j]) + oracle_kl_row(p0[j], q2[j])
            for j in range(q1.shape[0])
        ]
    return sum(rows) / len(rows)


def brute_force_accuracy(true_labels, pred_labels):
    """Max matched fraction over all one-to-one cluster-to-class maps,
    by exhaustive permutation of the zero-padded square table."""
    import itertools

    t = list(np.asarray(true_labels).ravel())
    p = list(np.asarray(pred_labels).ravel())
    tv = sorted(set(t))
    pv = sorted(set(p))
    size = max(len(tv), len(pv))
    table = np.zeros((size, size), dtype=int)
    for a, b in zip(t, p):
        table[tv.index(a), pv.index(b)] += 1
    best = 0
    for perm in itertools.permutations(range(size)):
        best = max(best, sum(table[perm[j], j] for j in range(size)))
    return best / len(t)
