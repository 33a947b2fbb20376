"""Plain CROWN written out with explicit diagonal matrices.

Shares no code with the bound engine; used to cross-check it when all
multipliers are zero and nothing is split.
"""
from __future__ import annotations

import numpy as np

from ..model import InputRegion, Network


def _ibp(net, region):
    W = net.weights[0]
    c = W @ region.x0 + net.biases[0]
    r = region.epsilon * np.abs(W).sum(axis=1)
    lows, ups = [c - r], [c + r]
    for W, b in zip(net.weights[1:-1], net.biases[1:-1]):
        lo, up = np.maximum(lows[-1], 0.0), np.maximum(ups[-1], 0.0)
        Wp, Wn = np.maximum(W, 0.0), np.minimum(W, 0.0)
        lows.append(Wp @ lo + Wn @ up + b)
        ups.append(Wp @ up + Wn @ lo + b)
    return lows, ups


def _relaxation(l, u, alpha):
    """Diagonal lower/upper slope matrices and the upper intercept vector."""
    n = l.shape[0]
    DL, DU, bU = np.zeros((n, n)), np.zeros((n, n)), np.zeros(n)
    for j in range(n):
        if u[j] <= 0:
            continue
        if l[j] >= 0:
            DL[j, j] = DU[j, j] = 1.0
            continue
        s = u[j] / (u[j] - l[j])
        DU[j, j] = s
        bU[j] = -s * l[j]
        DL[j, j] = alpha[j]
    return DL, DU, bU


def _lower_bound(Ws, bs, lows, ups, alphas, C, region):
    """Lower bound of ``C @ z_k`` where ``Ws``/``bs`` end at layer k."""
    Lam = C.copy()
    const = np.zeros(C.shape[0])
    for i in range(len(Ws) - 1, 0, -1):
        const = const + Lam @ bs[i]
        A = Lam @ Ws[i]
        DL, DU, bU = _relaxation(lows[i - 1], ups[i - 1], alphas[i - 1])
        Ap, An = np.maximum(A, 0.0), np.minimum(A, 0.0)
        const = const + An @ bU
        Lam = Ap @ DL + An @ DU
    const = const + Lam @ bs[0]
    A0 = Lam @ Ws[0]
    return A0 @ region.x0 - region.epsilon * np.abs(A0).sum(axis=1) + const


def crown_reference(net: Network, region: InputRegion, alphas=None) -> float:
    """CROWN lower bound of the scalar output on the l-inf ball.

    Every hidden layer is bounded by its own CROWN pass with the same fixed
    lower slopes ``alphas`` (default 1) and intersected with interval bounds.
    """
    dims = net.hidden_dims
    alphas = [np.ones(d) for d in dims] if alphas is None else alphas
    ibp_l, ibp_u = _ibp(net, region)
    lows, ups = [ibp_l[0]], [ibp_u[0]]
    for h in range(1, len(dims)):
        Ws, bs = list(net.weights[:h + 1]), list(net.biases[:h + 1])
        eye = np.eye(dims[h])
        lo = _lower_bound(Ws, bs, lows, ups, alphas, eye, region)
        up = -_lower_bound(Ws, bs, lows, ups, alphas, -eye, region)
        lows.append(np.maximum(lo, ibp_l[h]))
        ups.append(np.minimum(up, ibp_u[h]))
    out = _lower_bound(list(net.weights), list(net.biases), lows, ups, alphas,
                       np.ones((1, 1)), region)
    return float(out[0])
