"""Dense two-phase simplex with Bland's smallest-index rule.

Small and slow on purpose: it exists to produce trusted reference values for
problems with at most a few hundred variables.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .. import kernels

MAX_PIVOTS = 10**6
PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9


class SimplexError(RuntimeError):
    """Hard failure: pivot cap hit, unbounded problem, or a solution that fails re-checking."""


class LPStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"


@dataclass
class LPProblem:
    """``min c @ x`` s.t. ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq``, ``lo <= x <= hi``.

    Missing constraint blocks may be ``None``; ``lo``/``hi`` default to 0 and
    +inf and may hold infinities.
    """

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        n = self.c.shape[0]

        def block(A, b):
            if A is None:
                return np.zeros((0, n)), np.zeros(0)
            A = np.atleast_2d(np.asarray(A, dtype=np.float64))
            b = np.asarray(b, dtype=np.float64).reshape(-1)
            if A.shape != (b.shape[0], n):
                raise ValueError(f"constraint block shape {A.shape} does not match {b.shape[0]} rows x {n} vars")
            return A, b

        self.A_ub, self.b_ub = block(self.A_ub, self.b_ub)
        self.A_eq, self.b_eq = block(self.A_eq, self.b_eq)
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=np.float64)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=np.float64)
        for arr in (self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP data must be finite")
        if np.any(np.isnan(self.lo)) or np.any(np.isnan(self.hi)):
            raise ValueError("NaN in variable bounds")

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    def residual(self, x) -> float:
        """Largest constraint violation of ``x``."""
        viol = [0.0]
        if self.A_ub.shape[0]:
            viol.append(float(np.max(self.A_ub @ x - self.b_ub)))
        if self.A_eq.shape[0]:
            viol.append(float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        viol.append(float(np.max(self.lo - x, initial=0.0)))
        viol.append(float(np.max(x - self.hi, initial=0.0)))
        return max(viol)


@dataclass
class LPResult:
    status: LPStatus
    value: float
    x: np.ndarray | None
    pivots: int = 0
    extra: dict = field(default_factory=dict)


def _standard_form(lp: LPProblem):
    """Rewrite as ``min c' y + k`` s.t. ``A y = b``, ``y >= 0``; returns a map back to x."""
    n = lp.num_vars
    cols = []      # (var, sign, offset) per standard column: x_var += sign * y
    shift = np.zeros(n)
    extra_ub = []  # (var, bound) for finite two-sided ranges
    for j in range(n):
        lo, hi = lp.lo[j], lp.hi[j]
        if lo > hi:
            return None
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                extra_ub.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    ny = len(cols)
    T = np.zeros((n, ny))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s
    # x = shift + T y
    A_ub = lp.A_ub @ T
    b_ub = lp.b_ub - lp.A_ub @ shift
    if extra_ub:
        rows = np.zeros((len(extra_ub), ny))
        for r, (k, bnd) in enumerate(extra_ub):
            rows[r, k] = 1.0
        A_ub = np.vstack([A_ub, rows])
        b_ub = np.concatenate([b_ub, [b for _, b in extra_ub]])
    A_eq = lp.A_eq @ T
    b_eq = lp.b_eq - lp.A_eq @ shift
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    A = np.zeros((m_ub + m_eq, ny + m_ub))
    A[:m_ub, :ny] = A_ub
    A[:m_ub, ny:] = np.eye(m_ub)
    A[m_ub:, :ny] = A_eq
    b = np.concatenate([b_ub, b_eq])
    c = np.concatenate([lp.c @ T, np.zeros(m_ub)])
    k0 = float(lp.c @ shift)
    return A, b, c, k0, T, shift


def _run(Tab, basis, ncols, pivots, pivot):
    """Bland-rule iterations on tableau ``Tab`` whose last row holds reduced costs."""
    m = Tab.shape[0] - 1
    while True:
        red = Tab[-1, :ncols]
        scale = 1.0 + np.abs(red).max(initial=0.0)
        enter = np.flatnonzero(red < -PIVOT_TOL * scale)
        if enter.size == 0:
            return pivots
        c = int(enter[0])
        col = Tab[:m, c]
        pos = np.flatnonzero(col > PIVOT_TOL)
        if pos.size == 0:
            raise SimplexError("LP is unbounded")
        ratios = Tab[pos, -1] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * (1.0 + abs(best))]
        r = int(min(ties, key=lambda i: basis[i]))
        pivot(Tab, r, c)
        basis[r] = c
        pivots += 1
        if pivots > MAX_PIVOTS:
            raise SimplexError(f"pivot cap of {MAX_PIVOTS} exceeded")


def simplex_solve(lp: LPProblem, backend=None) -> LPResult:
    """Solve ``lp`` to optimality or prove it infeasible.

    Raises
    ------
    SimplexError
        On an unbounded objective, the pivot cap, or a returned point that
        violates the constraints by more than 1e-9.
    """
    pivot = kernels.get_backend(backend).pivot
    sf = _standard_form(lp)
    if sf is None:
        return LPResult(LPStatus.INFEASIBLE, np.inf, None)
    A, b, c, k0, T, shift = sf
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase one: artificial basis
    Tab = np.zeros((m + 1, n + m + 1))
    Tab[:m, :n] = A
    Tab[:m, n:n + m] = np.eye(m)
    Tab[:m, -1] = b
    Tab[-1, :n] = -A.sum(axis=0)
    Tab[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    pivots = _run(Tab, basis, n + m, 0, pivot)
    bscale = 1.0 + np.abs(b).max(initial=0.0)
    if -Tab[-1, -1] > FEAS_TOL * bscale:
        return LPResult(LPStatus.INFEASIBLE, np.inf, None, pivots)

    # drive artificials out of the basis, dropping redundant rows
    keep = []
    for r in range(m):
        if basis[r] < n:
            keep.append(r)
            continue
        row = Tab[r, :n]
        cand = np.flatnonzero(np.abs(row) > 1e-9)
        if cand.size:
            pivot(Tab, r, int(cand[0]))
            basis[r] = int(cand[0])
            pivots += 1
            keep.append(r)
    Tab = np.vstack([Tab[keep][:, list(range(n)) + [n + m]], np.zeros((1, n + 1))])
    Tab = np.ascontiguousarray(Tab)
    basis = [basis[r] for r in keep]

    # phase two
    Tab[-1, :n] = c
    for r, j in enumerate(basis):
        if Tab[-1, j] != 0.0:
            Tab[-1] -= Tab[-1, j] * Tab[r]
    pivots = _run(Tab, basis, n, pivots, pivot)
    y = np.zeros(n)
    for r, j in enumerate(basis):
        y[j] = Tab[r, -1]
    y = np.maximum(y, 0.0)
    x = shift + T @ y[:T.shape[1]]
    scale = 1.0 + max(np.abs(lp.b_ub).max(initial=0.0), np.abs(lp.b_eq).max(initial=0.0),
                      np.abs(x).max(initial=0.0))
    if lp.residual(x) > FEAS_TOL * scale:
        raise SimplexError(f"solution violates constraints by {lp.residual(x):.3e}")
    return LPResult(LPStatus.OPTIMAL, float(lp.c @ x), x, pivots)
