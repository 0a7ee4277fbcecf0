"""Iterative dual solvers for ``U(psi)`` over the box ``[-K, 0]``.

``U(psi) = int psi dnu - E^mu[G_0^psi]`` is concave and polyhedral; the
cemetery value is pinned at 0. Two methods share the same supergradient
oracle (one Snell solve and one pushforward per evaluation):

``"cutting-plane"`` (default) maximizes the piecewise-linear model built from
every supergradient seen so far (Kelley's method). Each step is a small LP in
``n + 1`` variables, the model maximum is an upper bound on ``U`` so the gap
is certified without the embedding LP, and on a polyhedral objective it stops
after finitely many cuts.

``"ascent"`` is projected supergradient ascent. Every ``polish_every`` steps
the iterate is replaced by the normalized, maximized potential
``(psi - psi_re)^max``, which never lowers ``U``. When a target value is known (the LP optimum) the step is Polyak's,
``(target - U) / |d|^2``, along a deflected direction
``d = g + beta d_prev`` with ``beta = max(0, -1.5 g.d_prev / |d_prev|^2)``
(Camerini, Fratta and Maffioli), which damps the zig-zag of plain
supergradient steps. Without a target the step is ``eta0 / sqrt(k)`` along
``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chain import Chain, as_measure, lu_solve
from .costs import AugmentedChain, CostModel, check_semi_supermartingale
from .errors import NoProgress
from .lp import StoppingRule, dual_value_of
from .simplex import OPTIMAL, solve_lp
from .snell import normalize_psi, psi_max, snell_envelope

DEFLECTION = 1.5
STALL_ITERATIONS = 100


def dual_value(aug: AugmentedChain, cost: CostModel, mu, nu, psi) -> float:
    V = snell_envelope(aug, cost, psi).V
    return dual_value_of(aug, mu, nu, psi, V)


def contact_hitting_rule(aug: AugmentedChain, psi, V, tol: float = 1e-9) -> StoppingRule:
    """Stop at the first visit to ``{V <= psi + tol}`` (ties stop)."""
    psi = np.asarray(psi, dtype=float)
    scale = 1.0 + float(np.abs(V).max(initial=0.0))
    return StoppingRule(((V - psi[aug.proj_x]) <= tol * scale).astype(float))


def supergradient(aug: AugmentedChain, cost: CostModel, mu, nu, psi, V=None):
    """``nu - law(X_T*)`` for the earliest optimal stopping time ``T*``.

    Returns ``(g, U, V)``; ``g`` lives on the base states and sums to
    ``law(T*)(cemetery) - nu(cemetery)``.
    """
    from .verify import pushforward

    n = aug.base.n
    mu_m, nu_m = as_measure(mu, n), as_measure(nu, n)
    if V is None:
        V = snell_envelope(aug, cost, psi).V
    rule = contact_hitting_rule(aug, psi, V)
    pf = pushforward(aug, cost, rule, mu_m)
    g = np.asarray(nu_m.mass) - pf.law_x
    U = dual_value_of(aug, mu_m, nu_m, psi, V)
    return g, U, V


def choose_K(aug: AugmentedChain, cost: CostModel, mu=None) -> float:
    """Box size for the dual potential.

    Lambda-type costs use the largest reachable cost value; running costs
    fall back to ``10 * D* * max lifetime``. Either way the result is raised
    to the largest expected remaining cost ``(I - P_aug)^-1 ell`` over
    reachable states, which bounds ``-psi^max`` even when Lambda takes
    negative values (for ``Lambda >= 0`` it never exceeds the table max).
    """
    reach = aug.reachable(mu)
    remaining = lu_solve(np.eye(aug.N) - aug.P, np.asarray(cost.lagrangian, dtype=float))
    floor = float(remaining[reach].max(initial=0.0))
    if cost.lam is not None:
        vals = [cost.lam[reach].max(initial=0.0)]
        if cost.lam_cemetery is not None:
            vals.append(cost.lam_cemetery[np.unique(aug.proj_a[reach])].max(initial=0.0))
        K = float(max(vals))
        if math.isfinite(K):
            return max(K, floor, 0.0)
    D = check_semi_supermartingale(aug, cost, mu=mu)["D_star"]
    e = lu_solve(np.eye(aug.N) - aug.P, np.ones(aug.N))
    return float(max(max(D, 0.0) * e.max() * 10.0, floor))


@dataclass
class DualDiagnostics:
    iterations: int
    best_value: float
    gap: Optional[float]
    K: float
    touches_lower_box: bool
    history: list = field(default_factory=list)
    converged: bool = False
    method: str = "cutting-plane"
    upper_bound: Optional[float] = None  # model maximum (cutting planes only)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "upper_bound": self.upper_bound,
            "iterations": self.iterations,
            "best_value": self.best_value,
            "gap": self.gap,
            "K_box": self.K,
            "touches_lower_box": self.touches_lower_box,
            "converged": self.converged,
        }


def _polish(chain, aug, cost, psi, mu_m, lo):
    bar, _ = normalize_psi(chain, aug, cost, psi, mu_m, check=False)
    Vb = snell_envelope(aug, cost, bar).V
    return np.clip(psi_max(aug, cost, bar, Vb, mu_m), lo, 0.0)


def _model_max(cuts_g, cuts_r, K):
    """Maximize ``min_j (r_j + g_j . psi)`` over ``-K <= psi <= 0``.

    Variables are ``z = psi + K`` in ``[0, K]`` and ``t = t+ - t-``.
    """
    G = np.asarray(cuts_g)
    m, n = G.shape
    A = np.zeros((m + n, n + 2))
    b = np.zeros(m + n)
    A[:m, :n] = -G
    A[:m, n] = 1.0
    A[:m, n + 1] = -1.0
    b[:m] = np.asarray(cuts_r) - K * G.sum(axis=1)
    A[m:, :n] = np.eye(n)
    b[m:] = K
    c = np.zeros(n + 2)
    c[n], c[n + 1] = 1.0, -1.0
    res = solve_lp(c, A_ub=A, b_ub=b, sense="max")
    if res.status != OPTIMAL:
        return None, None
    z = res.x
    return np.clip(z[:n] - K, -K, 0.0), float(z[n] - z[n + 1])


def solve_dual_iterative(
    chain: Chain,
    aug: AugmentedChain,
    cost: CostModel,
    mu,
    nu,
    target: Optional[float] = None,
    tol: float = 1e-6,
    max_iter: int = 10_000,
    polish_every: int = 25,
    K: Optional[float] = None,
    psi0=None,
    raise_on_stall: bool = False,
    method: str = "cutting-plane",
):
    """Maximize ``U`` over the box ``-K <= psi <= 0``; returns ``(psi*, diagnostics)``.

    Stops when ``|target - U| <= tol`` (target given) or, for cutting planes,
    when the model bound is within ``tol`` of the best value.
    """
    if method not in ("cutting-plane", "ascent"):
        raise ValueError("method must be 'cutting-plane' or 'ascent'")
    n = aug.base.n
    mu_m, nu_m = as_measure(mu, n), as_measure(nu, n)
    if K is None:
        K = choose_K(aug, cost, mu_m)
    lo = -K
    psi = np.zeros(n) if psi0 is None else np.clip(np.asarray(psi0, dtype=float), lo, 0.0)
    if method == "cutting-plane":
        best_psi, best_U, history, it, bound = _cutting_plane(chain, aug, cost, mu_m, nu_m, psi, K, target, tol,
                                                              max_iter, polish_every)
    else:
        best_psi, best_U, history, it = _ascent(chain, aug, cost, mu_m, nu_m, psi, K, target, tol, max_iter,
                                                polish_every)
        bound = None
    gap = None if target is None else float(target - best_U)
    if gap is not None:
        converged = abs(gap) <= tol
    else:
        converged = bound is not None and bound - best_U <= tol
    diag = DualDiagnostics(
        it, best_U, gap, K, bool(K > 0 and np.any(best_psi <= lo + 1e-9)), history, converged, method, bound,
    )
    if raise_on_stall and not converged:
        shown = gap if gap is not None else (math.nan if bound is None else bound - best_U)
        raise NoProgress(f"dual {method} stalled with gap {shown:.3e}", psi=best_psi, gap=gap)
    return best_psi, diag


def _cutting_plane(chain, aug, cost, mu_m, nu_m, psi, K, target, tol, max_iter, polish_every):
    cuts_g, cuts_r = [], []
    best_psi, best_U = psi.copy(), -math.inf
    history = []
    bound = math.inf
    it = 0
    last_gain = 0  # iteration of the last real improvement of best or bound
    seen_best = -math.inf

    def add(point):
        nonlocal best_psi, best_U
        g, U, _ = supergradient(aug, cost, mu_m, nu_m, point)
        history.append(U)
        cuts_g.append(g)
        cuts_r.append(U - float(g @ point))
        if U > best_U:
            best_U, best_psi = U, point.copy()

    for it in range(max_iter + 1):
        add(psi)
        if it and it % polish_every == 0:
            add(_polish(chain, aug, cost, best_psi, mu_m, -K))
        if target is not None and abs(target - best_U) <= tol:
            break
        nxt, ub = _model_max(cuts_g, cuts_r, K)
        if nxt is None:
            break
        floor = 1e-12 * (1.0 + abs(best_U))
        if ub < bound - floor or best_U > seen_best + floor:
            last_gain = it
        seen_best = max(seen_best, best_U)
        bound = min(bound, ub)
        if bound - best_U <= (tol if target is None else min(tol, floor)):
            break
        if it - last_gain >= STALL_ITERATIONS:
            break  # cuts no longer move: supergradients are only accurate to the contact tolerance
        psi = nxt
    # the polished potential has the same value process and is never worse
    pol = _polish(chain, aug, cost, best_psi, mu_m, -K)
    U = dual_value(aug, cost, mu_m, nu_m, pol)
    if U >= best_U:
        best_U, best_psi = U, pol
    return best_psi, best_U, history, it, (None if not math.isfinite(bound) else bound)


def _ascent(chain, aug, cost, mu_m, nu_m, psi, K, target, tol, max_iter, polish_every):
    lo = -K
    eta0 = K / (1.0 + float(np.abs(np.asarray(nu_m.mass) - np.asarray(mu_m.mass)).sum()))
    if eta0 == 0.0:
        eta0 = 1.0
    best_psi, best_U = psi.copy(), -math.inf
    history = []
    d = np.zeros(psi.size)
    it = 0
    for it in range(max_iter + 1):
        if it and it % polish_every == 0:
            psi = _polish(chain, aug, cost, psi, mu_m, lo)
            d[:] = 0.0  # the polish jumps; stale directions only hurt
        g, U, _ = supergradient(aug, cost, mu_m, nu_m, psi)
        history.append(U)
        if U > best_U:
            best_U, best_psi = U, psi.copy()
        if target is not None and abs(target - best_U) <= tol:
            break
        if target is not None:
            # deflect against the previous direction when they disagree
            dd = float(d @ d)
            beta = max(0.0, -DEFLECTION * float(g @ d) / dd) if dd > 0 else 0.0
            d = g + beta * d
            dd = float(d @ d)
            if dd <= 1e-30:
                break  # zero supergradient: psi is optimal
            step = max(target - U, 0.0) / dd
            if step == 0.0:
                break
        else:
            d = g
            if float(g @ g) <= 1e-30:
                break
            step = eta0 / math.sqrt(it + 1)
        psi = np.clip(psi + step * d, lo, 0.0)
    return best_psi, best_U, history, it
