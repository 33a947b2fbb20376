"""Exact minimization by activation-pattern enumeration, and the triangle LP relaxation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..model import InputRegion, Network
from .simplex import LPProblem, LPStatus, simplex_solve

MAX_UNSTABLE = 20


class EmptyDomain(ValueError):
    """No input in the region satisfies the split constraints."""


class GuardExceeded(RuntimeError):
    """The instance has too many unstable neurons for exhaustive enumeration."""


@dataclass
class PatternResult:
    pattern: tuple
    feasible: bool
    min_value: float
    argmin: np.ndarray | None


def _status_rows(net, splits):
    if splits is None:
        return [np.zeros(d, dtype=np.int8) for d in net.hidden_dims]
    status = getattr(splits, "status", splits)
    return [np.asarray(s, dtype=np.int8) for s in status]


def _box(region: InputRegion):
    if not math.isinf(region.p):
        raise ValueError("the oracle handles the l-inf ball only")
    return region.x0 - region.epsilon, region.x0 + region.epsilon


def _interval(G, g, lo, hi):
    mid, rad = (lo + hi) / 2, (hi - lo) / 2
    c = G @ mid + g
    r = np.abs(G) @ rad
    return c - r, c + r


def count_unstable(net: Network, region: InputRegion, splits=None) -> int:
    """Free neurons whose interval-arithmetic range straddles zero."""
    lo, hi = _box(region)
    status = _status_rows(net, splits)
    count = 0
    a, b = lo, hi
    for h, (W, bias) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
        zl, zu = _interval(W, bias, a, b)
        st = status[h]
        zl = np.where(st == 1, np.maximum(zl, 0.0), zl)
        zu = np.where(st == -1, np.minimum(zu, 0.0), zu)
        count += int(np.count_nonzero((st == 0) & (zl < 0) & (zu > 0)))
        a, b = np.maximum(zl, 0.0), np.maximum(zu, 0.0)
    return count


def enumerate_patterns(net: Network, region: InputRegion, splits=None,
                       max_unstable: int = MAX_UNSTABLE) -> list:
    """Solve one LP per activation pattern consistent with ``splits``.

    Neurons whose sign is fixed over the box by interval arithmetic of the
    current affine piece are not branched on.  Each branch on an unstable
    neuron is kept only if its sign constraints still admit a point, so only
    nonempty patterns reach a leaf.
    """
    n_unstable = count_unstable(net, region, splits)
    if n_unstable > max_unstable:
        raise GuardExceeded(f"{n_unstable} unstable neurons exceed the enumeration guard of {max_unstable}")
    lo, hi = _box(region)
    status = _status_rows(net, splits)
    d0 = net.input_dim
    results = []

    def leaf(G, g, rows, rhs, pattern):
        c = net.weights[-1] @ G
        c0 = net.weights[-1] @ g + net.biases[-1]
        lp = LPProblem(c[0], np.array(rows).reshape(-1, d0) if rows else None,
                       np.array(rhs) if rows else None, lo=lo, hi=hi)
        res = simplex_solve(lp)
        if res.status is LPStatus.INFEASIBLE:
            results.append(PatternResult(tuple(pattern), False, math.inf, None))
        else:
            results.append(PatternResult(tuple(pattern), True, res.value + float(c0[0]), res.x))

    def feasible(rows, rhs):
        lp = LPProblem(np.zeros(d0), np.array(rows), np.array(rhs), lo=lo, hi=hi)
        return simplex_solve(lp).status is LPStatus.OPTIMAL

    def visit(h, G, g, rows, rhs, pattern):
        if h == net.num_layers - 1:
            leaf(G, g, rows, rhs, pattern)
            return
        Z = net.weights[h] @ G
        z0 = net.weights[h] @ g + net.biases[h]
        zl, zu = _interval(Z, z0, lo, hi)
        st = status[h]
        signs = np.zeros(Z.shape[0], dtype=np.int8)
        rows, rhs, free = list(rows), list(rhs), []
        for j in range(Z.shape[0]):
            if st[j] == 1:
                if zu[j] < 0:
                    return
                signs[j] = 1
                rows.append(-Z[j])
                rhs.append(z0[j])
            elif st[j] == -1:
                if zl[j] > 0:
                    return
                signs[j] = -1
                rows.append(Z[j])
                rhs.append(-z0[j])
            elif zl[j] >= 0:
                signs[j] = 1
            elif zu[j] <= 0:
                signs[j] = -1
            else:
                free.append(j)
        if rows and any(st != 0) and not feasible(rows, rhs):
            return

        def branch(t, signs, rows, rhs, choice):
            if t == len(free):
                mask = (signs == 1).astype(np.float64)
                visit(h + 1, mask[:, None] * Z, mask * z0, rows, rhs, pattern + choice)
                return
            j = free[t]
            for s in (1, -1):
                r2 = rows + [-Z[j] if s == 1 else Z[j]]
                b2 = rhs + [z0[j] if s == 1 else -z0[j]]
                if not feasible(r2, b2):
                    continue
                sg = signs.copy()
                sg[j] = s
                branch(t + 1, sg, r2, b2, choice + [(h, j, s)])

        branch(0, signs, rows, rhs, [])

    visit(0, np.eye(d0), np.zeros(d0), [], [], [])
    return results


def exact_min(net: Network, region: InputRegion, splits=None,
              max_unstable: int = MAX_UNSTABLE) -> tuple:
    """Exact minimum of the (scalar) network over the region and split constraints.

    Returns ``(value, argmin)``.  Inactive splits are enforced as ``z <= 0``;
    the network is continuous, so this closure leaves the infimum unchanged.

    Raises
    ------
    EmptyDomain
        If no pattern is feasible.
    GuardExceeded
        If more than ``max_unstable`` neurons would need enumerating.
    """
    best = None
    for res in enumerate_patterns(net, region, splits, max_unstable):
        if res.feasible and (best is None or res.min_value < best.min_value):
            best = res
    if best is None:
        raise EmptyDomain("split constraints leave no feasible input")
    return best.min_value, best.argmin


def exact_range(net: Network, region: InputRegion, layer: int, index: int, splits=None,
                max_unstable: int = MAX_UNSTABLE) -> tuple:
    """Exact ``(min, max)`` of hidden pre-activation ``z[layer][index]`` (0-based hidden layer)."""
    sub_w = list(net.weights[:layer + 1])
    sub_b = list(net.biases[:layer + 1])
    row_w, row_b = sub_w[-1][index:index + 1], sub_b[-1][index:index + 1]
    status = _status_rows(net, splits)[:layer]
    lo_net = Network(sub_w[:-1] + [row_w], sub_b[:-1] + [row_b])
    hi_net = Network(sub_w[:-1] + [-row_w], sub_b[:-1] + [-row_b])
    low, _ = exact_min(lo_net, region, status, max_unstable)
    neg, _ = exact_min(hi_net, region, status, max_unstable)
    return low, -neg


def build_triangle_lp(net: Network, region: InputRegion, bounds, splits=None):
    """Triangle relaxation LP over ``(x, post-activations)``; returns ``(LPProblem, constant)``.

    Stable-active and active-split neurons satisfy ``zhat = z``, stable-inactive
    and inactive-split neurons ``zhat = 0``; splits add ``z >= 0`` or ``z <= 0``;
    unstable free neurons get ``zhat >= 0``, ``zhat >= z`` and the upper chord.
    """
    lo_x, hi_x = _box(region)
    status = _status_rows(net, splits)
    dims = [net.input_dim] + list(net.hidden_dims)
    offs = np.concatenate([[0], np.cumsum(dims)])
    n = int(offs[-1])
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    lo[:dims[0]], hi[:dims[0]] = lo_x, hi_x
    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
    for h in range(len(dims) - 1):
        W, b = net.weights[h], net.biases[h]
        prev = slice(offs[h], offs[h + 1])
        l, u = np.asarray(bounds.lower[h]), np.asarray(bounds.upper[h])
        for j in range(dims[h + 1]):
            var = offs[h + 1] + j
            zrow = np.zeros(n)
            zrow[prev] = W[j]
            st = status[h][j]
            if st == 1 or (st == 0 and l[j] >= 0 and u[j] > 0):
                row = -zrow.copy()
                row[var] = 1.0
                eq_rows.append(row)
                eq_rhs.append(b[j])
                if st == 1:
                    ub_rows.append(-zrow)
                    ub_rhs.append(b[j])
            elif st == -1 or u[j] <= 0:
                lo[var] = hi[var] = 0.0
                if st == -1:
                    ub_rows.append(zrow)
                    ub_rhs.append(-b[j])
            else:
                lo[var] = 0.0
                row = zrow.copy()
                row[var] = -1.0
                ub_rows.append(row)
                ub_rhs.append(-b[j])
                s = u[j] / (u[j] - l[j])
                row = -s * zrow
                row[var] = 1.0
                ub_rows.append(row)
                ub_rhs.append(s * (b[j] - l[j]))
    c = np.zeros(n)
    c[offs[-2]:offs[-1]] = net.weights[-1][0]
    lp = LPProblem(c, np.array(ub_rows) if ub_rows else None, np.array(ub_rhs) if ub_rows else None,
                   np.array(eq_rows) if eq_rows else None, np.array(eq_rhs) if eq_rows else None,
                   lo, hi)
    return lp, float(net.biases[-1][0])


def lp_relaxation_min(net: Network, region: InputRegion, bounds, splits=None,
                      return_argmin: bool = False):
    """Optimal value of the triangle LP with fixed intermediate bounds and split constraints.

    Raises
    ------
    EmptyDomain
        If the LP is infeasible.
    """
    lp, const = build_triangle_lp(net, region, bounds, splits)
    res = simplex_solve(lp)
    if res.status is LPStatus.INFEASIBLE:
        raise EmptyDomain("triangle relaxation is infeasible under the split constraints")
    value = res.value + const
    if return_argmin:
        return value, res.x[:net.input_dim]
    return value
