"""Projected first-order ascent on the relaxation slopes and split multipliers.

Every iterate gives a sound bound, so the ascent keeps the best value seen.
When the bound is a concave polyhedral function of the parameters (all free
unstable neurons sit in the last hidden layer, which covers the fully split
case) the bound is maximized exactly after the first-order iterations by
writing it as a small linear program over the parameters; an unbounded
program means the subproblem is empty.  The final parameters are always
re-evaluated by the backward pass, so the reported bound stays sound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .bounds import (FREE, InfeasibleDomainError, LinearBound, PreActBounds, SplitSet,
                     compute_intermediate_bounds, interval_bounds, output_interval_floor, propagate,
                     _settle)
from .model import InputRegion, Network

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_ITERS = 20
DEFAULT_LR_ALPHA = 0.1
DEFAULT_LR_BETA = 0.05
DEFAULT_DECAY = 0.98


def stretched_decay(iters: int, decay: float = DEFAULT_DECAY, horizon: int = DEFAULT_ITERS) -> float:
    """Per-step decay giving ``iters`` steps the same total shrinkage as ``horizon`` steps of ``decay``."""
    if iters <= 0:
        return decay
    return decay ** (horizon / iters)


@dataclass
class LayerParams:
    """Slopes and multipliers over a run of hidden layers, plus Adam moments."""

    alpha: list
    beta: list
    m_alpha: list = None
    v_alpha: list = None
    m_beta: list = None
    v_beta: list = None
    steps: int = 0

    def __post_init__(self):
        if self.m_alpha is None:
            self.reset_moments()

    @classmethod
    def initial(cls, dims) -> "LayerParams":
        return cls([np.ones(d) for d in dims], [np.zeros(d) for d in dims])

    def reset_moments(self):
        self.m_alpha = [np.zeros_like(a) for a in self.alpha]
        self.v_alpha = [np.zeros_like(a) for a in self.alpha]
        self.m_beta = [np.zeros_like(b) for b in self.beta]
        self.v_beta = [np.zeros_like(b) for b in self.beta]
        self.steps = 0

    def copy(self, moments: bool = True) -> "LayerParams":
        out = LayerParams([a.copy() for a in self.alpha], [b.copy() for b in self.beta])
        if moments:
            out.m_alpha = [m.copy() for m in self.m_alpha]
            out.v_alpha = [v.copy() for v in self.v_alpha]
            out.m_beta = [m.copy() for m in self.m_beta]
            out.v_beta = [v.copy() for v in self.v_beta]
            out.steps = self.steps
        return out

    def project(self, splits: SplitSet | None = None):
        """Clamp slopes to [0, 1] and multipliers to [0, inf); zero multipliers of free neurons."""
        for h in range(len(self.alpha)):
            np.clip(self.alpha[h], 0.0, 1.0, out=self.alpha[h])
            np.maximum(self.beta[h], 0.0, out=self.beta[h])
            if splits is not None:
                self.beta[h][splits.status[h] == FREE] = 0.0
        return self


@dataclass
class ParamState:
    """All optimizable parameters of one subproblem.

    ``final`` parameterizes the output bound.  ``inter[h]`` holds independent
    ``(lower, upper)`` parameter sets used to bound hidden layer ``h``; each
    spans hidden layers ``0..h-1`` and is shared by all neurons of layer ``h``.
    """

    final: LayerParams
    inter: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, net: Network) -> "ParamState":
        dims = net.hidden_dims
        inter = {h: (LayerParams.initial(dims[:h]), LayerParams.initial(dims[:h]))
                 for h in range(1, len(dims))}
        return cls(LayerParams.initial(dims), inter)

    def copy(self, moments: bool = True) -> "ParamState":
        return ParamState(self.final.copy(moments),
                          {h: (lo.copy(moments), up.copy(moments))
                           for h, (lo, up) in self.inter.items()})

    @property
    def alpha(self):
        return self.final.alpha

    @property
    def beta(self):
        return self.final.beta


@dataclass
class AscentResult:
    bound: float
    linear: LinearBound | None
    params: LayerParams
    history: list
    unbounded: bool = False


def evaluate(net, region, bounds, splits, params: LayerParams, backend=None) -> tuple:
    """Bound value and its linear form at ``params``."""
    b, a, c, _, _ = propagate(net, bounds, splits, params.alpha, params.beta, np.ones(1),
                              None, region, backend=backend)
    return float(b[0]), LinearBound(a[0], float(c[0]))


def gradient(net: Network, region: InputRegion, splits: SplitSet, state, bounds: PreActBounds,
             backend=None):
    """Reverse-mode gradient of the output bound with respect to the final slopes and multipliers.

    Returns ``(value, grad_alpha, grad_beta)`` with one array per hidden layer.
    """
    params = state.final if isinstance(state, ParamState) else state
    b, _, _, ga, gb = propagate(net, bounds, splits, params.alpha, params.beta, np.ones(1),
                                None, region, need_grad=True, backend=backend)
    return float(b[0]), ga, gb


def _adam_step(params: LayerParams, ga, gb, lr_alpha, lr_beta, splits):
    params.steps += 1
    t = params.steps
    c1 = 1.0 - ADAM_B1 ** t
    c2 = 1.0 - ADAM_B2 ** t
    for h in range(len(params.alpha)):
        for p, g, m, v, lr in ((params.alpha[h], ga[h], params.m_alpha[h], params.v_alpha[h], lr_alpha),
                               (params.beta[h], gb[h], params.m_beta[h], params.v_beta[h], lr_beta)):
            m *= ADAM_B1
            m += (1.0 - ADAM_B1) * g
            v *= ADAM_B2
            v += (1.0 - ADAM_B2) * g * g
            p += lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    params.project(splits)


def is_polyhedral(bounds: PreActBounds, splits: SplitSet) -> bool:
    """True when the output bound is concave piecewise-linear in the final parameters."""
    return all(not np.any(bounds.unstable_mask(h, splits)) for h in range(len(bounds) - 1))


def ascend(net: Network, region: InputRegion, splits: SplitSet, bounds: PreActBounds,
           params: LayerParams, iters: int = DEFAULT_ITERS, lr_alpha: float = DEFAULT_LR_ALPHA,
           lr_beta: float = DEFAULT_LR_BETA, decay: float = DEFAULT_DECAY,
           line_search: bool = True, target: float | None = None, backend=None) -> AscentResult:
    """Maximize the output bound over slopes in [0, 1] and multipliers >= 0.

    Parameters
    ----------
    params : LayerParams
        Starting point; not modified.
    line_search : bool
        Run the exact polyhedral phase after the first-order iterations
        (skipped when ``iters == 0``).  It only takes effect when the bound is polyhedral in the parameters,
        e.g. once every unstable neuron outside the last hidden layer is split.
    target : float, optional
        Stop early once the bound exceeds this value; an unbounded
        subproblem is pushed past it.

    Returns
    -------
    AscentResult
        Best bound seen, its linear form, and the parameters attaining it.
    """
    cur = params.copy()
    cur.project(splits)
    best_val, best_lin, best_params = -math.inf, None, cur.copy()
    history = []
    lra, lrb = lr_alpha, lr_beta
    for it in range(iters + 1):
        b, a, c, ga, gb = propagate(net, bounds, splits, cur.alpha, cur.beta, np.ones(1),
                                    None, region, need_grad=it < iters, backend=backend)
        val = float(b[0])
        if math.isfinite(val) and val > best_val:
            best_val, best_lin, best_params = val, LinearBound(a[0], float(c[0])), cur.copy()
        history.append(best_val)
        if it == iters or (target is not None and best_val > target):
            break
        if not all(np.all(np.isfinite(g)) for g in ga + gb):
            break
        _adam_step(cur, ga, gb, lra, lrb, splits)
        lra *= decay
        lrb *= decay

    result = AscentResult(best_val, best_lin, best_params, history)
    if line_search and iters > 0 and math.isinf(region.p) and is_polyhedral(bounds, splits) \
            and (target is None or best_val <= target):
        result = _polyhedral_phase(net, region, splits, bounds, result, target, backend)
    return result


# -- exact phase for the polyhedral case --------------------------------------

def _free_coords(net, bounds, splits):
    """Parameter coordinates the output bound depends on: (kind, layer, index)."""
    coords = []
    last = len(bounds) - 1
    if last >= 0:
        w_out = net.weights[-1][0]
        mask = bounds.unstable_mask(last, splits) & (w_out >= 0)
        coords += [("alpha", last, int(j)) for j in np.flatnonzero(mask)]
    for h in range(len(bounds)):
        coords += [("beta", h, int(j)) for j in np.flatnonzero(splits.status[h] != FREE)]
    return coords


def _set_coords(params: LayerParams, coords, theta):
    for (kind, h, j), t in zip(coords, theta):
        getattr(params, kind)[h][j] = t


def _get_coords(params: LayerParams, coords):
    return np.array([getattr(params, kind)[h][j] for kind, h, j in coords])


def _polyhedral_phase(net, region, splits, bounds, start: AscentResult, target, backend):
    coords = _free_coords(net, bounds, splits)
    if not coords:
        return start
    n = len(coords)
    lo = np.zeros(n)
    hi = np.array([1.0 if kind == "alpha" else math.inf for kind, _, _ in coords])
    base = start.params.copy(moments=False)

    def linear_form(theta):
        _set_coords(base, coords, theta)
        _, a, c, _, _ = propagate(net, bounds, splits, base.alpha, base.beta, np.ones(1),
                                  backend=backend)
        return a[0], float(c[0])

    # the map theta -> (a, c) is affine here; read it off column by column
    a0, c0 = linear_form(np.zeros(n))
    P = np.empty((a0.shape[0], n))
    r = np.empty(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        ak, ck = linear_form(e)
        P[:, k] = ak - a0
        r[k] = ck - c0
    x0, eps = region.x0, region.epsilon
    lin = P.T @ x0 + r
    const = a0 @ x0 + c0

    def g(theta):
        return const + lin @ theta - eps * np.abs(a0 + P @ theta).sum()

    m = a0.shape[0]
    # variables (theta, t) with t >= |a0 + P theta|; minimize eps*sum(t) - lin @ theta
    cost = np.concatenate([-lin, np.full(m, eps)])
    A_ub = np.block([[P, -np.eye(m)], [-P, -np.eye(m)]])
    b_ub = np.concatenate([-a0, a0])
    box = [(l, None if math.isinf(h) else h) for l, h in zip(lo, hi)] + [(0.0, None)] * m
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=box, method="highs")
    unbounded = res.status == 3
    if res.status == 0:
        theta = np.clip(res.x[:n], lo, hi)
    elif unbounded:
        # recession direction of the multipliers along which the bound grows without limit
        ray = hi == math.inf
        cost_r = np.concatenate([-lin[ray], np.full(m, eps)])
        A_r = np.block([[P[:, ray], -np.eye(m)], [-P[:, ray], -np.eye(m)]])
        norm = np.concatenate([np.ones(int(ray.sum())), np.zeros(m)])[None, :]
        rr = linprog(cost_r, A_ub=np.vstack([A_r, norm]),
                     b_ub=np.concatenate([np.zeros(2 * m), [1.0]]),
                     bounds=[(0.0, None)] * (int(ray.sum()) + m), method="highs")
        theta = np.clip(_get_coords(start.params, coords), lo, hi)
        if rr.status == 0 and -rr.fun > 0:
            direction = np.zeros(n)
            direction[ray] = rr.x[:int(ray.sum())]
            val = g(theta)
            goal = (target if target is not None else val) + 1.0 + abs(val)
            step = 1.0
            for _ in range(200):
                trial = theta + step * direction
                if g(trial) > goal:
                    break
                step *= 2.0
            theta = trial
        else:
            unbounded = False
    else:
        return start

    params = start.params.copy()
    _set_coords(params, coords, theta)
    params.project(splits)
    b, lin_bound = evaluate(net, region, bounds, splits, params, backend)
    if b > start.bound:
        return AscentResult(b, lin_bound, params, start.history + [b], unbounded)
    return AscentResult(start.bound, start.linear, start.params, start.history, unbounded)


# -- intermediate layers ------------------------------------------------------

def _ascend_layer(net, region, bounds, splits, layer, params: LayerParams, sign, iters,
                  lr_alpha, lr_beta, decay, backend):
    """Ascend one shared parameter set for the lower (sign=+1) or upper (-1) bounds of ``layer``.

    Returns the elementwise best bound over iterates (as bounds on ``sign * z``)
    and the parameters of the best summed objective.
    """
    d = net.hidden_dims[layer]
    rows = sign * np.eye(d)
    cur = params.copy()
    cur.project(splits)
    best_rows = np.full(d, -np.inf)
    best_sum, best_params = -np.inf, cur.copy()
    lra, lrb = lr_alpha, lr_beta
    for it in range(iters + 1):
        b, _, _, ga, gb = propagate(net, bounds, splits, cur.alpha, cur.beta, rows, layer + 1,
                                    region, need_grad=it < iters, backend=backend)
        best_rows = np.maximum(best_rows, b)
        total = float(b.sum())
        if total > best_sum:
            best_sum, best_params = total, cur.copy()
        if it == iters or not all(np.all(np.isfinite(g)) for g in ga + gb):
            break
        _adam_step(cur, ga, gb, lra, lrb, splits)
        lra *= decay
        lrb *= decay
    return best_rows, best_params


def optimize_intermediate_bounds(net: Network, region: InputRegion, splits: SplitSet,
                                 state: ParamState, previous: PreActBounds | None = None,
                                 iters: int = DEFAULT_ITERS, lr_alpha: float = DEFAULT_LR_ALPHA,
                                 lr_beta: float = DEFAULT_LR_BETA, decay: float = DEFAULT_DECAY,
                                 backend=None) -> PreActBounds:
    """One round of layer-by-layer bound tightening with per-layer ascended parameters.

    Updates ``state.inter`` in place.  Bounds only tighten relative to
    ``previous`` and interval bounds.
    """
    base = interval_bounds(net, region)
    if previous is not None:
        base = base.intersect(previous)
    base = base.clamped(splits)
    lo0, hi0 = _settle(base.lower[0], base.upper[0])
    out = PreActBounds([lo0], [hi0])
    for h in range(1, len(base)):
        low_set, up_set = state.inter[h]
        lo, low_set = _ascend_layer(net, region, out, splits, h, low_set, 1.0, iters,
                                    lr_alpha, lr_beta, decay, backend)
        neg, up_set = _ascend_layer(net, region, out, splits, h, up_set, -1.0, iters,
                                    lr_alpha, lr_beta, decay, backend)
        state.inter[h] = (low_set, up_set)
        st = splits.status[h]
        lo = np.maximum(lo, base.lower[h])
        hi = np.minimum(-neg, base.upper[h])
        lo = np.where(st == 1, np.maximum(lo, 0.0), lo)
        hi = np.where(st == -1, np.minimum(hi, 0.0), hi)
        lo, hi = _settle(lo, hi)
        out.lower.append(lo)
        out.upper.append(hi)
    return out


@dataclass
class JointResult:
    bound: float
    linear: LinearBound | None
    bounds: PreActBounds
    state: ParamState
    unbounded: bool = False


def joint_optimize(net: Network, region: InputRegion, splits: SplitSet, state: ParamState,
                   rounds: int = 1, iters: int = DEFAULT_ITERS,
                   lr_alpha: float = DEFAULT_LR_ALPHA, lr_beta: float = DEFAULT_LR_BETA,
                   decay: float = DEFAULT_DECAY, line_search: bool = True,
                   previous: PreActBounds | None = None, backend=None) -> JointResult:
    """Alternate intermediate-bound tightening and output-bound ascent.

    ``rounds = 0`` keeps interval bounds (intersected with ``previous`` and the
    split signs).  Otherwise the output parameters are first ascended on the
    plain layer-wise bounds; each round then re-bounds every hidden layer with
    its own ascended parameters and ascends the output parameters again.
    Intermediate bounds only ever tighten and the best bound is kept.  The reported bound is never below the interval
    bound of the output computed from the final intermediate bounds.  An empty
    domain is reported as an infinite bound.
    """
    state = state.copy()
    try:
        bounds = interval_bounds(net, region)
        if previous is not None:
            bounds = bounds.intersect(previous)
        bounds = bounds.clamped(splits)
        for h in range(len(bounds)):
            bounds.lower[h], bounds.upper[h] = _settle(bounds.lower[h], bounds.upper[h])
    except InfeasibleDomainError:
        return JointResult(math.inf, None, previous or interval_bounds(net, region), state, True)
    best = None
    if rounds > 0:
        # baseline: ascent on the plain layer-wise bounds, so rounds can only improve on it
        try:
            bounds = compute_intermediate_bounds(net, region, splits, state, bounds, backend)
        except InfeasibleDomainError:
            return JointResult(math.inf, None, bounds, state, True)
        best = ascend(net, region, splits, bounds, state.final, iters, lr_alpha, lr_beta, decay,
                      line_search, backend=backend)
        state.final = best.params
    for _ in range(max(rounds, 0)):
        try:
            bounds = optimize_intermediate_bounds(net, region, splits, state, bounds, iters,
                                                  lr_alpha, lr_beta, decay, backend)
        except InfeasibleDomainError:
            return JointResult(math.inf, None, bounds, state, True)
        res = ascend(net, region, splits, bounds, state.final, iters, lr_alpha, lr_beta, decay,
                     line_search, backend=backend)
        state.final = res.params
        if best is None or res.bound >= best.bound:
            best = res
    if best is None:
        best = ascend(net, region, splits, bounds, state.final, iters, lr_alpha, lr_beta, decay,
                      line_search, backend=backend)
        state.final = best.params
    bound = max(best.bound, output_interval_floor(net, bounds, splits))
    return JointResult(bound, best.linear, bounds, state, best.unbounded)
