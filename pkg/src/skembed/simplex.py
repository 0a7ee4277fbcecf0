"""Dense two-phase revised simplex.

Solves ``min c.x`` subject to ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``x >= 0``.
The basis is refactorized (LU with partial pivoting) at every pivot, which is
cheap at the sizes this package targets (a few hundred rows).

Pricing is Dantzig's rule until a run of degenerate pivots is seen, after
which Bland's rule takes over for good; Bland's rule cannot cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import NumericalBreakdown

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-12
RATIO_PIVOT_TOL = 1e-9  # smallest pivot element admitted by the ratio test


@dataclass
class LPResult:
    status: str
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals_eq: Optional[np.ndarray] = None
    duals_ub: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    farkas: Optional[np.ndarray] = None  # y with y.A <= 0, y.b > 0 on the standard form
    farkas_eq: Optional[np.ndarray] = None
    farkas_ub: Optional[np.ndarray] = None
    ray: Optional[np.ndarray] = None
    iterations: int = 0
    bland: bool = False
    redundant_rows: list = field(default_factory=list)


class _Basis:
    def __init__(self, A, basis):
        self.A = A
        self.set(basis)

    def set(self, basis):
        self.basis = np.array(basis, dtype=int)
        B = self.A[:, self.basis]
        self.lu = scipy.linalg.lu_factor(B, check_finite=False)
        d = np.abs(np.diag(self.lu[0]))
        if d.size and d.min() < PIVOT_TOL * max(1.0, np.abs(B).max()):
            raise NumericalBreakdown(f"basis pivot {d.min():.2e} below {PIVOT_TOL:g}")

    def solve(self, v):
        return scipy.linalg.lu_solve(self.lu, v, check_finite=False)

    def solve_t(self, v):
        return scipy.linalg.lu_solve(self.lu, v, trans=1, check_finite=False)


def _simplex(A, b, c, basis, allowed, rule, max_iter, stall_limit=50):
    """Core loop on an already-feasible basis."""
    m, nvar = A.shape
    B = _Basis(A, basis)
    use_bland = rule == "bland"
    degenerate_run = 0
    it = 0
    scale_c = 1.0 + np.abs(c).max(initial=0.0)
    scale_b = 1.0 + np.abs(b).max(initial=0.0)
    harris = FEAS_TOL * scale_b
    best_obj = np.inf
    while it < max_iter:
        it += 1
        xB = B.solve(b)
        y = B.solve_t(c[B.basis])
        d = c - A.T @ y
        d[B.basis] = 0.0
        d[~allowed] = 0.0
        cand = np.flatnonzero(d < -OPT_TOL * scale_c)
        if cand.size == 0:
            return OPTIMAL, B, y, d, it, use_bland, None
        j = int(cand[0]) if use_bland else int(cand[np.argmin(d[cand])])
        w = B.solve(A[:, j])
        pos = np.flatnonzero(w > RATIO_PIVOT_TOL * max(1.0, np.abs(w).max()))
        if pos.size == 0:
            ray = np.zeros(nvar)
            ray[B.basis] = -w
            ray[j] = 1.0
            return UNBOUNDED, B, y, d, it, use_bland, ray
        xb = np.maximum(xB[pos], 0.0)
        ratios = xb / w[pos]
        best = ratios.min()
        if use_bland:
            ties = pos[ratios <= best + 1e-12 * (1.0 + best)]
            r = int(ties[np.argmin(B.basis[ties])])
        else:
            # Harris two-pass test: among rows blocking within a small
            # feasibility slack, take the largest pivot element
            theta = ((xb + harris) / w[pos]).min()
            ties = pos[ratios <= theta]
            r = int(ties[np.argmax(w[ties])])
        step = max(xB[r], 0.0) / w[r]
        obj = float(c[B.basis] @ xB) + d[j] * step
        # a pivot counts as degenerate unless the objective drops measurably
        if step <= 1e-11 * scale_b or obj > best_obj - 1e-13 * scale_c * scale_b:
            degenerate_run += 1
            if degenerate_run >= stall_limit:
                use_bland = True
        else:
            degenerate_run = 0
        best_obj = min(best_obj, obj)
        nb = B.basis.copy()
        nb[r] = j
        B.set(nb)
    raise NumericalBreakdown(f"simplex did not terminate in {max_iter} pivots")


def solve_lp(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, sense: str = "min",
             rule: str = "dantzig", max_iter: int = 50_000) -> LPResult:
    """Solve a dense LP over ``x >= 0``; see the module docstring."""
    c = np.asarray(c, dtype=float).ravel()
    nx = c.size
    A_eq = np.zeros((0, nx)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, nx)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    A_ub = np.zeros((0, nx)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, nx)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    me, mu_ = A_eq.shape[0], A_ub.shape[0]
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    sgn = 1.0 if sense == "min" else -1.0

    # standard form: [A_eq 0; A_ub I] [x; slack] = b
    m = me + mu_
    A = np.zeros((m, nx + mu_))
    A[:me, :nx] = A_eq
    A[me:, :nx] = A_ub
    A[me:, nx:] = np.eye(mu_)
    b = np.concatenate([b_eq, b_ub])
    cs = np.concatenate([sgn * c, np.zeros(mu_)])
    flip = np.where(b < 0, -1.0, 1.0)
    A = A * flip[:, None]
    b = b * flip
    nstd = nx + mu_

    if m == 0:
        if np.any(cs < -OPT_TOL):
            ray = np.zeros(nx)
            ray[int(np.argmin(cs[:nx]))] = 1.0
            return LPResult(UNBOUNDED, ray=ray)
        return LPResult(OPTIMAL, np.zeros(nx), 0.0, np.zeros(0), np.zeros(0), sgn * cs[:nx], np.zeros(0, dtype=int))

    # phase 1 with one artificial per row
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(nstd), np.ones(m)])
    allowed = np.ones(nstd + m, dtype=bool)
    status, B, y, d, it1, bland1, _ = _simplex(A1, b, c1, np.arange(nstd, nstd + m), allowed, rule, max_iter)
    xB = B.solve(b)
    infeas = float(c1[B.basis] @ xB)
    scale_b = 1.0 + np.abs(b).max(initial=0.0)
    if infeas > FEAS_TOL * scale_b:
        # phase-1 duals: A^T y <= 0 on structural columns, b.y = infeas > 0
        yy = y.copy()
        ry = yy * flip
        return LPResult(
            INFEASIBLE, farkas=ry, farkas_eq=ry[:me], farkas_ub=ry[me:],
            iterations=it1, bland=bland1, objective=None,
        )

    # absorb the (tolerated) leftover artificial values into b so the
    # phase-1 point is exactly feasible; artificials then leave degenerately
    art = B.basis >= nstd
    if np.any(art):
        b = b - np.bincount(B.basis[art] - nstd, weights=xB[art], minlength=m)

    # drive artificials out of the basis; drop redundant rows
    basis = B.basis.copy()
    keep_rows = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] < nstd:
            continue
        Binv_row = B.solve_t(np.eye(m)[r])
        row = Binv_row @ A
        row[basis[basis < nstd]] = 0.0
        cand = np.flatnonzero(np.abs(row) > 1e-7 * max(1.0, np.abs(row).max()))
        if cand.size:
            basis[r] = int(cand[np.argmax(np.abs(row[cand]))])
            B.set(basis)
        else:
            keep_rows[r] = False
    redundant = [int(r) for r in np.flatnonzero(~keep_rows)]
    A2 = A[keep_rows]
    b2 = b[keep_rows]
    basis2 = basis[keep_rows]
    if np.any(basis2 >= nstd):
        raise NumericalBreakdown("artificial variable left in the basis")
    status, B, y, d, it2, bland2, ray = _simplex(A2, b2, cs, basis2, np.ones(nstd, dtype=bool), rule, max_iter)
    iters = it1 + it2
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, ray=ray[:nx], iterations=iters, bland=bland1 or bland2)
    xB = B.solve(b2)
    x = np.zeros(nstd)
    x[B.basis] = np.maximum(xB, 0.0)
    y_full = np.zeros(m)
    y_full[keep_rows] = y
    y_full = y_full * flip * sgn
    d_full = d * sgn
    return LPResult(
        OPTIMAL,
        x=x[:nx],
        objective=float(c @ x[:nx]),
        duals_eq=y_full[:me],
        duals_ub=y_full[me:],
        reduced_costs=d_full[:nx],
        basis=B.basis,
        iterations=iters,
        bland=bland1 or bland2,
        redundant_rows=redundant,
    )
