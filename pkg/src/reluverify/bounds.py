"""Split-aware linear bound propagation for ReLU networks.

Hidden layers are indexed from 0 here: hidden layer ``h`` is the ReLU layer fed
by ``net.weights[h]``.  Split constraints enter the backward pass as
``beta * s`` added to the coefficients over ``z(h)``, with ``s = -1`` for an
active split (z >= 0) and ``s = +1`` for an inactive split (z < 0), so every
nonnegative ``beta`` gives a valid lower bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import DimensionError, InputRegion, Network

FREE, POS, NEG = 0, 1, -1


class InfeasibleDomainError(ValueError):
    """Sound bounds prove that the constrained input set is empty."""


@dataclass
class SplitSet:
    """Per-neuron split status of every hidden layer (int8: 0 free, 1 active, -1 inactive)."""

    status: list

    @classmethod
    def empty(cls, net: Network) -> "SplitSet":
        return cls([np.zeros(d, dtype=np.int8) for d in net.hidden_dims])

    def copy(self) -> "SplitSet":
        return SplitSet([s.copy() for s in self.status])

    def with_split(self, layer: int, index: int, sign: int) -> "SplitSet":
        if sign not in (POS, NEG):
            raise ValueError(f"split sign must be {POS} or {NEG}, got {sign}")
        if self.status[layer][index] != FREE:
            raise ValueError(f"neuron ({layer}, {index}) is already split")
        child = self.copy()
        child.status[layer][index] = sign
        return child

    def sign_vector(self, layer: int) -> np.ndarray:
        """Diagonal of the split sign matrix for ``layer``."""
        return -self.status[layer].astype(np.float64)

    @property
    def num_splits(self) -> int:
        return int(sum(np.count_nonzero(s) for s in self.status))

    def splits(self):
        """Yield ``(layer, index, sign)`` for every split neuron."""
        for h, s in enumerate(self.status):
            for j in np.flatnonzero(s):
                yield h, int(j), int(s[j])

    def key(self) -> bytes:
        return b"|".join(s.tobytes() for s in self.status)


@dataclass
class PreActBounds:
    """Elementwise bounds ``lower[h] <= z(h) <= upper[h]`` for every hidden layer."""

    lower: list
    upper: list

    def copy(self) -> "PreActBounds":
        return PreActBounds([l.copy() for l in self.lower], [u.copy() for u in self.upper])

    def __len__(self):
        return len(self.lower)

    def clamped(self, splits: SplitSet) -> "PreActBounds":
        """Intersect with the split signs: active gives l >= 0, inactive gives u <= 0."""
        out = self.copy()
        for h, st in enumerate(splits.status):
            out.lower[h] = np.where(st == POS, np.maximum(out.lower[h], 0.0), out.lower[h])
            out.upper[h] = np.where(st == NEG, np.minimum(out.upper[h], 0.0), out.upper[h])
        return out

    def unstable_mask(self, layer: int, splits: SplitSet | None = None) -> np.ndarray:
        mask = (self.lower[layer] < 0) & (self.upper[layer] > 0)
        if splits is not None:
            mask &= splits.status[layer] == FREE
        return mask

    def num_unstable(self, splits: SplitSet | None = None) -> int:
        return int(sum(np.count_nonzero(self.unstable_mask(h, splits)) for h in range(len(self))))

    def intersect(self, other: "PreActBounds") -> "PreActBounds":
        return PreActBounds([np.maximum(a, b) for a, b in zip(self.lower, other.lower)],
                            [np.minimum(a, b) for a, b in zip(self.upper, other.upper)])


@dataclass
class RelaxCoeffs:
    d: np.ndarray
    bcheck: np.ndarray


@dataclass
class LinearBound:
    """``f(x) >= a @ x + c`` on the constrained domain."""

    a: np.ndarray
    c: float


def _check_layer_bounds(lower, upper):
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
        raise ValueError("NaN in pre-activation bounds")
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")


def relu_layer_relaxation(lower, upper, status, coeff, alpha) -> RelaxCoeffs:
    """Linear lower relaxation of ``coeff @ relu(z)`` for ``lower <= z <= upper``.

    Stable-active and active-split neurons get slope 1, stable-inactive and
    inactive-split neurons slope 0.  An unstable free neuron uses its slope
    ``alpha`` when its coefficient is nonnegative and the upper chord
    ``u/(u-l)`` with intercept ``-u*l/(u-l)`` otherwise.
    """
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    coeff = np.asarray(coeff, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_layer_bounds(lower, upper)
    if np.any(np.isnan(coeff)) or np.any(np.isnan(alpha)):
        raise ValueError("NaN in coefficients or slopes")
    d, bcheck, _ = kernels.relax_layer(coeff[None, :], lower, upper,
                                       np.asarray(status, dtype=np.int8), alpha)
    return RelaxCoeffs(d[0], bcheck[0])


def _layer_args(net, bounds, splits, alpha, beta, k):
    n = k - 1
    lower = [np.ascontiguousarray(bounds.lower[h], dtype=np.float64) for h in range(n)]
    upper = [np.ascontiguousarray(bounds.upper[h], dtype=np.float64) for h in range(n)]
    status = [np.ascontiguousarray(splits.status[h], dtype=np.int8) for h in range(n)]
    if alpha is None:
        alpha = [np.ones(d) for d in net.hidden_dims[:n]]
    if beta is None:
        beta = [np.zeros(d) for d in net.hidden_dims[:n]]
    alpha = [np.ascontiguousarray(alpha[h], dtype=np.float64) for h in range(n)]
    beta = [np.ascontiguousarray(beta[h], dtype=np.float64) for h in range(n)]
    for h in range(n):
        d = net.hidden_dims[h]
        if not (alpha[h].shape == beta[h].shape == lower[h].shape == (d,)):
            raise DimensionError(f"hidden layer {h}: parameter or bound shape does not match width {d}")
    return list(net.weights[:k]), list(net.biases[:k]), lower, upper, status, alpha, beta


def propagate(net: Network, bounds: PreActBounds, splits: SplitSet, alpha, beta,
              rows, layer: int | None = None, region: InputRegion | None = None,
              row_weights=None, need_grad: bool = False, backend=None):
    """Run the backward pass for objective ``rows`` over ``z(layer)``.

    ``layer`` counts affine layers (``net.num_layers`` targets the output).
    Returns the kernel tuple ``(bound, a, c, grad_alpha, grad_beta)``; without
    a region the bound column is meaningless.
    """
    k = net.num_layers if layer is None else layer
    if not 1 <= k <= net.num_layers:
        raise DimensionError(f"objective layer {k} outside 1..{net.num_layers}")
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != net.weights[k - 1].shape[0]:
        raise DimensionError(f"objective rows have {rows.shape[1]} columns, z({k}) "
                             f"has {net.weights[k - 1].shape[0]} entries")
    ws, bs, lo, up, st, al, be = _layer_args(net, bounds, splits, alpha, beta, k)
    if region is None:
        x0, eps, q = np.zeros(net.input_dim), 0.0, 1.0
    else:
        x0, eps, q = region.x0, region.epsilon, region.dual_norm
    impl = kernels.get_backend(backend)
    return impl.backward_pass(ws, bs, lo, up, st, al, be, rows, x0, eps, q,
                              row_weights, need_grad)


def backward_bound(net: Network, bounds: PreActBounds, splits: SplitSet, alpha=None,
                   beta=None, objective=None) -> LinearBound:
    """Linear lower bound of an objective in terms of the input.

    ``objective`` is ``(layer, row)`` for ``row @ z(layer)``; the default is
    the network output.  ``alpha``/``beta`` default to 1 and 0.
    """
    if objective is None:
        layer, row = net.num_layers, np.ones(net.output_dim)
    else:
        layer, row = objective
    _, a, c, _, _ = propagate(net, bounds, splits, alpha, beta, row, layer)
    return LinearBound(a[0], float(c[0]))


def concretize(lb: LinearBound, region: InputRegion) -> float:
    """Minimum of ``a @ x + c`` over the region (Hölder)."""
    a = np.asarray(lb.a, dtype=np.float64)
    q = region.dual_norm
    norm = np.abs(a).sum() if q == 1.0 else np.linalg.norm(a, ord=q)
    return float(a @ region.x0 - region.epsilon * norm + lb.c)


def argmin_input(lb: LinearBound, region: InputRegion) -> np.ndarray:
    """Corner of the l-inf box minimizing ``a @ x``; zero coefficients keep the center."""
    if not math.isinf(region.p):
        raise ValueError("argmin_input is only defined for the l-inf ball")
    return region.x0 - region.epsilon * np.sign(lb.a)


def interval_bounds(net: Network, region: InputRegion, with_output: bool = False):
    """Interval-arithmetic pre-activation bounds.

    With ``with_output`` the output layer bounds are returned as a second
    value ``(lower, upper)``.
    """
    w0 = net.weights[0]
    center = w0 @ region.x0 + net.biases[0]
    q = region.dual_norm
    if q == 1.0:
        radius = region.epsilon * np.abs(w0).sum(axis=1)
    else:
        radius = region.epsilon * np.linalg.norm(w0, ord=q, axis=1)
    lower, upper = [center - radius], [center + radius]
    for w, b in zip(net.weights[1:], net.biases[1:]):
        lo = np.maximum(lower[-1], 0.0)
        hi = np.maximum(upper[-1], 0.0)
        mid, rad = (hi + lo) / 2, (hi - lo) / 2
        c = w @ mid + b
        r = np.abs(w) @ rad
        lower.append(c - r)
        upper.append(c + r)
    hidden = PreActBounds(lower[:-1], upper[:-1])
    if with_output:
        return hidden, (lower[-1], upper[-1])
    return hidden


def output_interval_floor(net: Network, bounds: PreActBounds, splits: SplitSet | None = None) -> float:
    """Interval lower bound of the scalar output from the last hidden layer's stored bounds.

    Sound whenever ``bounds`` are; with ``splits`` the bounds are first clamped
    to the split signs.
    """
    if len(bounds) == 0:
        return -math.inf
    if splits is not None:
        bounds = bounds.clamped(splits)
    lo = np.maximum(bounds.lower[-1], 0.0)
    hi = np.maximum(bounds.upper[-1], 0.0)
    mid, rad = (hi + lo) / 2, (hi - lo) / 2
    w, b = net.weights[-1], net.biases[-1]
    return float((w @ mid + b - np.abs(w) @ rad)[0])


def _settle(lower, upper, tol=1e-9):
    """Resolve tiny crossings left by rounding; raise on a real one."""
    gap = lower - upper
    scale = 1.0 + np.maximum(np.abs(lower), np.abs(upper))
    if np.any(gap > tol * scale):
        raise InfeasibleDomainError("pre-activation lower bound exceeds upper bound")
    cross = gap > 0
    if np.any(cross):
        mid = (lower + upper) / 2
        lower = np.where(cross, mid, lower)
        upper = np.where(cross, mid, upper)
    return lower, upper


def layer_bounds(net: Network, region: InputRegion, bounds: PreActBounds, splits: SplitSet,
                 layer: int, lower_params=None, upper_params=None, backend=None):
    """Bounds on hidden layer ``layer`` (>= 1) from those of the layers below it.

    ``lower_params``/``upper_params`` are ``(alpha, beta)`` lists over hidden
    layers ``0..layer-1``.  Returns ``(lower, upper)`` without clamping or
    intersection.
    """
    d = net.hidden_dims[layer]
    eye = np.eye(d)
    lo_a, lo_b = lower_params if lower_params is not None else (None, None)
    up_a, up_b = upper_params if upper_params is not None else (None, None)
    low, *_ = propagate(net, bounds, splits, lo_a, lo_b, eye, layer + 1, region, backend=backend)
    neg, *_ = propagate(net, bounds, splits, up_a, up_b, -eye, layer + 1, region, backend=backend)
    return low, -neg


def compute_intermediate_bounds(net: Network, region: InputRegion, splits: SplitSet,
                                params=None, previous: PreActBounds | None = None,
                                backend=None) -> PreActBounds:
    """Layer-by-layer linear bounds on every hidden pre-activation.

    The first hidden layer gets exact interval bounds.  Layer ``h`` is bounded
    by back-substitution through layers ``< h`` using only their splits and
    the per-layer parameter copies ``params.inter[h]`` (defaults: slope 1,
    multiplier 0).  Results are intersected with interval bounds, with
    ``previous`` when given, and with the split signs.

    Raises
    ------
    InfeasibleDomainError
        If some lower bound exceeds its upper bound.
    """
    base = interval_bounds(net, region)
    if previous is not None:
        base = base.intersect(previous)
    base = base.clamped(splits)
    out = PreActBounds([base.lower[0].copy()], [base.upper[0].copy()])
    out.lower[0], out.upper[0] = _settle(out.lower[0], out.upper[0])
    for h in range(1, len(base)):
        lp = up = None
        if params is not None and h in params.inter:
            low_set, up_set = params.inter[h]
            lp, up = (low_set.alpha, low_set.beta), (up_set.alpha, up_set.beta)
        lo, hi = layer_bounds(net, region, out, splits, h, lp, up, backend=backend)
        lo = np.maximum(lo, base.lower[h])
        hi = np.minimum(hi, base.upper[h])
        st = splits.status[h]
        lo = np.where(st == POS, np.maximum(lo, 0.0), lo)
        hi = np.where(st == NEG, np.minimum(hi, 0.0), hi)
        lo, hi = _settle(lo, hi)
        out.lower.append(lo)
        out.upper.append(hi)
    return out


def coefficient_rows(net: Network, bounds: PreActBounds, splits: SplitSet, alpha=None, beta=None):
    """Coefficients of the output over each post-activation, before relaxing that layer.

    Entry ``h`` is the row vector multiplying ``relu(z(h))`` during the
    backward pass.
    """
    n = net.num_layers - 1
    alpha = alpha if alpha is not None else [np.ones(d) for d in net.hidden_dims]
    beta = beta if beta is not None else [np.zeros(d) for d in net.hidden_dims]
    rows = [None] * n
    lam = np.ones((1, net.output_dim))
    for i in range(n, 0, -1):
        A = lam @ net.weights[i]
        h = i - 1
        rows[h] = A[0].copy()
        d, _, _ = kernels.relax_layer(A, bounds.lower[h], bounds.upper[h],
                                      np.asarray(splits.status[h], dtype=np.int8),
                                      np.asarray(alpha[h], dtype=np.float64))
        lam = A * d + beta[h] * splits.sign_vector(h)
    return rows
