"""Pure numpy kernels; the fallback when the compiled extension is missing.

Conventions shared with ``_kernels.pyx``:

* ``status`` entries are int8: 0 free, 1 split active (z >= 0), -1 split
  inactive (z < 0).  The split sign matrix entry is ``s = -status``.
* Bounds of split neurons are consulted only through their status.
* ``q`` is the dual norm order; ``inf`` is passed as ``math.inf``.
"""
import math

import numpy as np


def relax_layer(A, lower, upper, status, alpha):
    """Per-row ReLU relaxation slopes and intercepts for coefficient rows ``A``.

    Returns ``(d, bcheck, uses_alpha)``, each of the same shape as ``A``.
    """
    unstable = (status == 0) & (lower < 0) & (upper > 0)
    active = (status == 1) | ((status == 0) & (upper > 0) & (lower >= 0))
    width = np.where(unstable, upper - lower, 1.0)
    up_slope = np.where(unstable, upper / width, 0.0)
    up_icpt = np.where(unstable, -upper * lower / width, 0.0)
    nonneg = A >= 0
    uses_alpha = unstable & nonneg
    d = np.where(active, 1.0, 0.0) + np.where(uses_alpha, alpha, 0.0) \
        + np.where(unstable & ~nonneg, up_slope, 0.0)
    bcheck = np.where(unstable & ~nonneg, up_icpt, 0.0)
    return d, bcheck, uses_alpha


def dual_norm(a, q):
    if q == 1.0:
        return np.abs(a).sum(axis=1)
    if math.isinf(q):
        return np.abs(a).max(axis=1)
    return np.linalg.norm(a, ord=q, axis=1)


def dual_norm_grad(a, q):
    """A subgradient of the row-wise q-norm; zero rows and entries get 0."""
    if q == 1.0:
        return np.sign(a)
    g = np.zeros_like(a)
    if math.isinf(q):
        idx = np.argmax(np.abs(a), axis=1)
        rows = np.arange(a.shape[0])
        g[rows, idx] = np.sign(a[rows, idx])
        return g
    norms = np.linalg.norm(a, ord=q, axis=1)
    nz = norms > 0
    g[nz] = np.sign(a[nz]) * (np.abs(a[nz]) / norms[nz, None]) ** (q - 1.0)
    return g


def backward_pass(weights, biases, lower, upper, status, alpha, beta,
                  C, x0, eps, q, row_weights=None, need_grad=True):
    """Back-substitute objective rows ``C`` over ``z(k)`` down to the input.

    ``weights``/``biases`` hold layers 1..k; ``lower``, ``upper``, ``status``,
    ``alpha`` and ``beta`` hold hidden layers 1..k-1.  ``alpha`` and ``beta``
    are shared by every row.

    Returns ``(bound, a, c, grad_alpha, grad_beta)`` where ``bound[r]`` is the
    concretized lower bound of row r, ``a``/``c`` the linear bound before
    concretization, and the gradients are of ``sum_r row_weights[r] * bound[r]``
    (``None`` when ``need_grad`` is false).
    """
    k = len(weights)
    m = C.shape[0]
    lam = np.array(C, dtype=np.float64)
    const = np.zeros(m)
    tape = []
    for i in range(k, 0, -1):
        const += lam @ biases[i - 1]
        A = lam @ weights[i - 1]
        if i == 1:
            break
        j = i - 2
        d, bcheck, uses_alpha = relax_layer(A, lower[j], upper[j], status[j], alpha[j])
        const += np.einsum("ij,ij->i", A, bcheck)
        s = -status[j].astype(np.float64)
        lam = A * d + beta[j] * s
        tape.append((A, d, bcheck, uses_alpha, s))
    a = A
    bound = a @ x0 - eps * dual_norm(a, q) + const
    if not need_grad:
        return bound, a, const, None, None

    rw = np.ones(m) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    bar_A = rw[:, None] * (x0[None, :] - eps * dual_norm_grad(a, q))
    bar_const = rw
    grad_alpha = [None] * (k - 1)
    grad_beta = [None] * (k - 1)
    for j, (A, d, bcheck, uses_alpha, s) in enumerate(reversed(tape)):
        # lam over hidden layer j fed the next A via lam @ W[j] and const += lam @ b[j]
        bar_lam = bar_A @ weights[j].T + bar_const[:, None] * biases[j]
        grad_beta[j] = (bar_lam * s).sum(axis=0)
        grad_alpha[j] = np.where(uses_alpha, bar_lam * A, 0.0).sum(axis=0)
        bar_A = bar_lam * d + bar_const[:, None] * bcheck
    return bound, a, const, grad_alpha, grad_beta


def pivot(T, r, c):
    """Gauss-Jordan pivot of tableau ``T`` on entry (r, c), in place."""
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])
    T[:, c] = 0.0
    T[r, c] = 1.0
