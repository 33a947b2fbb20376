"""Branch and bound over ReLU sign splits.

Domains sit in a min-heap keyed on their certified lower bound.  Each
iteration pops a batch, picks one unstable neuron per domain, bounds both
children with warm-started parameters, and drops children that are verified
(lower >= 0) or cannot contain the minimum (lower > global upper bound, which
also removes empty subdomains whose bound diverges).
"""
from __future__ import annotations

import enum
import heapq
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .bounds import (FREE, NEG, POS, InfeasibleDomainError, LinearBound, PreActBounds, SplitSet,
                     argmin_input, coefficient_rows, output_interval_floor, propagate)
from .model import InputRegion, Network, forward_eval
from .optimizer import (DEFAULT_DECAY, DEFAULT_ITERS, DEFAULT_LR_ALPHA, DEFAULT_LR_BETA,
                        LayerParams, ParamState, ascend, joint_optimize)
from .oracle.attack import pgd_attack


class Status(str, enum.Enum):
    VERIFIED = "Verified"
    FALSIFIED = "Falsified"
    UNKNOWN = "Unknown"


class FullySplit(ValueError):
    """The domain has no unstable free neuron left to branch on."""


@dataclass
class BabConfig:
    batch: int = 8
    delta: float = 1e-6
    eta: int = 10**6
    timeout: float | None = None
    branching: str = "babsr"
    fsb_k: int = 3
    incomplete: bool = False
    iters: int = DEFAULT_ITERS
    lr_alpha: float = DEFAULT_LR_ALPHA
    lr_beta: float = DEFAULT_LR_BETA
    decay: float = DEFAULT_DECAY
    root_rounds: int = 1
    recompute_intermediate: bool = False
    pgd_steps: int = 200
    pgd_restarts: int = 5
    seed: int = 0
    threads: int = 1
    max_iterations: int | None = None

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.branching not in ("babsr", "fsb"):
            raise ValueError(f"unknown branching rule {self.branching!r}")
        if self.fsb_k < 1:
            raise ValueError("fsb_k must be at least 1")
        if self.delta < 0 or self.eta < 1:
            raise ValueError("delta must be >= 0 and eta >= 1")


@dataclass
class Domain:
    splits: SplitSet
    lower: float
    upper: float
    params: ParamState
    bounds: PreActBounds
    depth: int = 0
    linear: LinearBound | None = None
    witness: np.ndarray | None = None
    seq: int = 0

    def __lt__(self, other):
        return (self.lower, self.seq) < (other.lower, other.seq)


@dataclass
class Verdict:
    status: Status
    global_lower: float
    global_upper: float
    counterexample: np.ndarray | None = None
    stats: dict = field(default_factory=dict)
    log: list = field(default_factory=list)


# -- branching ----------------------------------------------------------------

def babsr_score(net: Network, domain: Domain) -> list:
    """Scores ``(layer, index, score, weight)`` for every unstable free neuron.

    ``score`` is the intercept the upper chord ``-u*l/(u-l)`` adds to the
    bound in a multiplier-free backward pass: the chord intercept times the
    neuron's coefficient when that coefficient is negative, else zero.
    ``weight`` is the intercept times the coefficient magnitude and only
    breaks ties between equal scores.

    Raises
    ------
    FullySplit
        If no neuron is left to branch on.
    """
    rows = coefficient_rows(net, domain.bounds, domain.splits, domain.params.alpha, None)
    out = []
    for h, A in enumerate(rows):
        lo, up = domain.bounds.lower[h], domain.bounds.upper[h]
        for j in np.flatnonzero(domain.bounds.unstable_mask(h, domain.splits)):
            icpt = -up[j] * lo[j] / (up[j] - lo[j])
            out.append((h, int(j), float(max(-A[j], 0.0) * icpt), float(abs(A[j]) * icpt)))
    if not out:
        raise FullySplit("no unstable free neuron left")
    return out


def _ranked(scores):
    return sorted(scores, key=lambda t: (-t[2], -t[3], t[0], t[1]))


def babsr_choice(net: Network, domain: Domain) -> tuple:
    h, j, _, _ = _ranked(babsr_score(net, domain))[0]
    return h, j


def _cheap_child_bound(net, region, domain, h, j, sign) -> float:
    splits = domain.splits.with_split(h, j, sign)
    bounds = domain.bounds.clamped(splits)
    b, *_ = propagate(net, bounds, splits, domain.params.alpha, None, np.ones(1), None, region)
    return float(b[0])


def fsb_branching(net: Network, region: InputRegion, domain: Domain, k: int = 3) -> tuple:
    """Filtered strong branching over the top ``k`` candidates of the score ranking."""
    if k < 1:
        raise ValueError("k must be at least 1")
    cands = _ranked(babsr_score(net, domain))[:k]
    if len(cands) == 1:
        return cands[0][0], cands[0][1]
    best, best_val = None, -math.inf
    for h, j, _, _ in cands:
        val = min(_cheap_child_bound(net, region, domain, h, j, POS),
                  _cheap_child_bound(net, region, domain, h, j, NEG))
        if val > best_val:
            best, best_val = (h, j), val
    return best if best is not None else (cands[0][0], cands[0][1])


def choose_neuron(net, region, domain, config: BabConfig) -> tuple:
    if config.branching == "fsb":
        return fsb_branching(net, region, domain, config.fsb_k)
    return babsr_choice(net, domain)


# -- bounding -----------------------------------------------------------------

def batch_split(domains: list, choices: list) -> list:
    """Two children per domain, active split first; parameters are copied with fresh moments."""
    children = []
    for dom, (h, j) in zip(domains, choices):
        if dom.splits.status[h][j] != FREE:
            raise ValueError(f"neuron ({h}, {j}) is already split in this domain")
        for sign in (POS, NEG):
            splits = dom.splits.with_split(h, j, sign)
            params = dom.params.copy(moments=False)
            params.final.reset_moments()
            params.final.beta[h][j] = 0.0
            children.append(Domain(splits, dom.lower, math.inf, params, dom.bounds.clamped(splits),
                                   dom.depth + 1, dom.linear))
    return children


def _pattern_map(net, bounds, splits):
    """Affine piece ``f(x) = c @ x + c0`` and sign rows ``R @ x <= r`` of a fully split domain."""
    G, g = np.eye(net.input_dim), np.zeros(net.input_dim)
    rows, rhs = [], []
    for h in range(net.num_layers - 1):
        Z = net.weights[h] @ G
        z0 = net.weights[h] @ g + net.biases[h]
        st = splits.status[h]
        lo, up = bounds.lower[h], bounds.upper[h]
        active = (st == POS) | ((st == FREE) & (lo >= 0) & (up > 0))
        for j in np.flatnonzero(st == POS):
            rows.append(-Z[j])
            rhs.append(z0[j])
        for j in np.flatnonzero(st == NEG):
            rows.append(Z[j])
            rhs.append(-z0[j])
        m = active.astype(np.float64)
        G, g = m[:, None] * Z, m * z0
    c = (net.weights[-1] @ G)[0]
    c0 = float((net.weights[-1] @ g + net.biases[-1])[0])
    return c, c0, rows, rhs


def recover_primal(net: Network, region: InputRegion, domain: Domain):
    """Minimize the affine piece of a fully split domain; ``None`` if the domain is empty."""
    c, c0, rows, rhs = _pattern_map(net, domain.bounds, domain.splits)
    res = linprog(c, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rows else None,
                  bounds=list(zip(region.lower, region.upper)), method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        return region.x0.copy()
    return np.clip(res.x, region.lower, region.upper)


def _is_fully_split(domain: Domain) -> bool:
    return domain.bounds.num_unstable(domain.splits) == 0


def bound_domain(net: Network, region: InputRegion, domain: Domain, config: BabConfig,
                 target: float) -> Domain:
    """Optimize the bound of a freshly split child in place and attach an upper bound."""
    parent_lower = domain.lower
    if config.recompute_intermediate:
        jr = joint_optimize(net, region, domain.splits, domain.params, rounds=1, iters=config.iters,
                            lr_alpha=config.lr_alpha, lr_beta=config.lr_beta, decay=config.decay,
                            previous=domain.bounds)
        bound, linear, domain.params, domain.bounds = jr.bound, jr.linear, jr.state, jr.bounds
    else:
        try:
            for h in range(len(domain.bounds)):
                if np.any(domain.bounds.lower[h] > domain.bounds.upper[h]):
                    raise InfeasibleDomainError("crossed bounds")
            res = ascend(net, region, domain.splits, domain.bounds, domain.params.final,
                         config.iters, config.lr_alpha, config.lr_beta, config.decay,
                         target=target)
            bound = max(res.bound, output_interval_floor(net, domain.bounds, domain.splits))
            linear = res.linear
            domain.params.final = res.params
        except InfeasibleDomainError:
            bound, linear = math.inf, None
    domain.lower = max(bound, parent_lower) if not math.isnan(bound) else parent_lower
    if linear is not None:
        domain.linear = linear
    if domain.linear is not None and math.isinf(region.p):
        x = argmin_input(domain.linear, region)
        domain.upper, domain.witness = float(forward_eval(net, x)), x
    if math.isfinite(domain.lower) and domain.lower < min(target, 0.0) and _is_fully_split(domain):
        x = recover_primal(net, region, domain)
        if x is None:
            domain.lower = math.inf
        else:
            val = float(forward_eval(net, x))
            if val < domain.upper:
                domain.upper, domain.witness = val, x
    return domain


def domain_filter(children: list, global_upper: float):
    """Split children into ``(kept, verified, pruned)``; kept ones have lower < 0 and <= global_upper."""
    kept, verified, pruned = [], [], []
    for ch in children:
        if ch.lower >= 0:
            verified.append(ch)
        elif ch.lower > global_upper:
            pruned.append(ch)
        else:
            kept.append(ch)
    return kept, verified, pruned


# -- main loop ----------------------------------------------------------------

def root_domain(net: Network, region: InputRegion, config: BabConfig, rng=None) -> Domain:
    state = ParamState.initial(net)
    splits = SplitSet.empty(net)
    jr = joint_optimize(net, region, splits, state, rounds=config.root_rounds, iters=config.iters,
                        lr_alpha=config.lr_alpha, lr_beta=config.lr_beta, decay=config.decay)
    dom = Domain(splits, jr.bound, math.inf, jr.state, jr.bounds, 0, jr.linear)
    if jr.linear is not None and math.isinf(region.p):
        x = argmin_input(jr.linear, region)
        dom.upper, dom.witness = float(forward_eval(net, x)), x
    if config.pgd_steps > 0 and math.isinf(region.p):
        rng = np.random.default_rng(config.seed) if rng is None else rng
        val, x = pgd_attack(net, region, config.pgd_steps, config.pgd_restarts, rng)
        if val < dom.upper:
            dom.upper, dom.witness = val, x
    if dom.lower < 0 and _is_fully_split(dom):
        x = recover_primal(net, region, dom)
        if x is not None and float(forward_eval(net, x)) < dom.upper:
            dom.upper, dom.witness = float(forward_eval(net, x)), x
    return dom


def run_bab(net: Network, region: InputRegion, config: BabConfig | None = None,
            log=None, clock=time.perf_counter) -> Verdict:
    """Verify ``f(x) > 0`` over the region, or bound its minimum in incomplete mode.

    Parameters
    ----------
    log : callable, optional
        Called after the root pass and every iteration with a row dict
        ``wall_seconds, domains_live, domains_visited, global_lower, global_upper``.
        With ``threads == 1`` the wall time is left out (``None``) so logs of
        equal runs are identical.

    Returns
    -------
    Verdict
    """
    config = config or BabConfig()
    if net.output_dim != 1:
        raise ValueError("run_bab needs a scalar-output network; merge a specification row first")
    start = clock()
    deterministic = config.threads <= 1
    rng = np.random.default_rng(config.seed)
    seq = itertools.count()

    root = root_domain(net, region, config, rng)
    root.seq = next(seq)
    visited = 1
    branches = 0
    global_upper, witness = root.upper, root.witness
    resolved_lower = math.inf
    exhausted = []
    heap = []
    if root.lower >= 0:
        resolved_lower = root.lower
    elif _is_fully_split(root):
        exhausted.append(root)
    else:
        heap.append(root)
    history = []
    rows = []

    def global_lower():
        vals = [resolved_lower]
        if heap:
            vals.append(heap[0].lower)
        vals.extend(d.lower for d in exhausted)
        return min(vals)

    def record():
        gl = global_lower()
        history.append(gl)
        row = {"wall_seconds": None if deterministic else round(clock() - start, 6),
               "domains_live": len(heap), "domains_visited": visited,
               "global_lower": gl, "global_upper": global_upper}
        rows.append(row)
        if log is not None:
            log(row)
        return gl

    def stop_reason(gl):
        if not config.incomplete and global_upper < 0:
            return "counterexample"
        if not heap:
            return "exhausted"
        if global_upper - gl <= config.delta:
            return "gap"
        if len(heap) >= config.eta:
            return "domain_limit"
        if config.timeout is not None and clock() - start >= config.timeout:
            return "timeout"
        if config.max_iterations is not None and len(history) > config.max_iterations:
            return "iteration_limit"
        return None

    gl = record()
    reason = stop_reason(gl)
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    mapper = pool.map if pool is not None else map
    try:
        while reason is None:
            n = min(config.batch, len(heap))
            batch = [heapq.heappop(heap) for _ in range(n)]
            choices = list(mapper(lambda d: choose_neuron(net, region, d, config), batch))
            children = batch_split(batch, choices)
            branches += n
            target = min(global_upper, 0.0)
            children = list(mapper(lambda d: bound_domain(net, region, d, config, target), children))
            visited += len(children)
            for ch in children:
                if ch.upper < global_upper:
                    global_upper, witness = ch.upper, ch.witness
            kept, verified, pruned = domain_filter(children, global_upper)
            for ch in verified + pruned:
                resolved_lower = min(resolved_lower, ch.lower)
            for ch in kept:
                ch.seq = next(seq)
                if _is_fully_split(ch):
                    exhausted.append(ch)
                else:
                    heapq.heappush(heap, ch)
            gl = record()
            reason = stop_reason(gl)
    finally:
        if pool is not None:
            pool.shutdown()

    gl = global_lower()
    if gl >= 0 and not (global_upper < 0):
        status = Status.VERIFIED
    elif global_upper < 0 and witness is not None and float(forward_eval(net, witness)) < 0:
        status = Status.FALSIFIED
    else:
        status = Status.UNKNOWN
    stats = {"domains_visited": visited, "branches": branches, "iterations": len(history) - 1,
             "domains_live": len(heap), "exhausted_domains": len(exhausted), "stop_reason": reason,
             "wall_seconds": None if deterministic else clock() - start,
             "lower_history": history}
    return Verdict(status, gl, global_upper, witness if status is Status.FALSIFIED else None,
                   stats, rows)
