"""Occupation-measure linear programs for embedding problems.

Variables per augmented state: ``u`` (expected visits that continue) and
``s`` (mass stopped there). For initial law ``mu~`` the constraints are

    u + s - P_aug^T u = mu~           (flow balance)
    sum_a s(a, x)     = nu(x)         (target marginal)
    u, s >= 0

The killed mass ``sum u * kill`` then equals ``nu(cemetery)`` automatically,
and the objective ``sum u * ell`` is the expected cost ``E[S_T]``.
The LP dual is ``max nu.psi - mu~.V`` over ``V >= psi o proj_x`` and
``V >= P_aug V - ell``, the discrete dual of the embedding problem.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain import Chain, as_measure, require_ergodic
from .costs import AugmentedChain, CostModel
from .errors import GapTooLarge, Infeasible, NumericalBreakdown, Unbounded
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LPResult, solve_lp

GAP_TOL = 1e-8
CLAMP_TOL = 1e-9

__all__ = [
    "OccupationSolution",
    "StoppingRule",
    "DualSolution",
    "solve_lp",
    "embedding_constraints",
    "primal_embedding_lp",
    "dual_from_lp",
    "complementary_dual",
    "dual_value_of",
    "ergodic_filling_lp",
    "extract_stopping_rule",
]


@dataclass
class OccupationSolution:
    u: np.ndarray
    s: np.ndarray
    killed_mass: float
    objective: float
    lp: Optional[LPResult] = None

    @property
    def expected_time(self) -> float:
        return float(self.u.sum())

    def to_dict(self) -> dict:
        return {
            "u": self.u.tolist(),
            "s": self.s.tolist(),
            "killed_mass": self.killed_mass,
            "objective": self.objective,
            "expected_time": self.expected_time,
        }


@dataclass
class StoppingRule:
    p: np.ndarray  # stopping probability per augmented state

    @property
    def deterministic(self) -> bool:
        return bool(np.all((self.p <= 1e-9) | (self.p >= 1 - 1e-9)))


def embedding_constraints(aug: AugmentedChain, mu, nu):
    """Equality system ``(A, b)`` over ``[u, s]``."""
    n, N = aug.base.n, aug.N
    mu = as_measure(mu, n)
    nu = as_measure(nu, n)
    A = np.zeros((N + n, 2 * N))
    A[:N, :N] = np.eye(N) - aug.P.T
    A[:N, N:] = np.eye(N)
    A[N + aug.proj_x, N + np.arange(N)] = 1.0
    b = np.concatenate([aug.initial_law(mu), np.asarray(nu.mass)])
    return A, b


def _occupation(aug, x, c_u, lp=None) -> OccupationSolution:
    N = aug.N
    u, s = x[:N].copy(), x[N:].copy()
    return OccupationSolution(u, s, float(u @ aug.kill), float(c_u @ u), lp)


def primal_embedding_lp(aug: AugmentedChain, cost: CostModel, mu, nu, objective=None,
                        rule: str = "dantzig") -> OccupationSolution:
    """Minimize ``E[S_T]`` over stopping rules embedding ``nu`` from ``mu``.

    ``objective`` optionally replaces the cost vector over ``[u, s]`` (used to
    visit other vertices of the feasible polytope).
    """
    N = aug.N
    A, b = embedding_constraints(aug, mu, nu)
    c = np.concatenate([cost.lagrangian, np.zeros(N)]) if objective is None else np.asarray(objective, dtype=float)
    res = solve_lp(c, A, b, rule=rule)
    if res.status == INFEASIBLE:
        y = res.farkas_eq
        w = y[:N]
        # a zero-cost base-chain certificate is a supermedian phi = -w (see check_balayage)
        phi = _certificate_potential(aug, w)
        raise Infeasible("target law is not reachable by stopping", farkas=y, certificate=phi)
    if res.status == UNBOUNDED:
        raise Unbounded("embedding LP unbounded; the cost is not a submartingale", ray=res.ray)
    occ = _occupation(aug, res.x, cost.lagrangian, res)
    if objective is not None:
        occ.objective = float(cost.lagrangian @ occ.u)
    return occ


def _certificate_potential(aug: AugmentedChain, w) -> Optional[np.ndarray]:
    n = aug.base.n
    if aug.N != n:
        return None
    phi = -np.asarray(w, dtype=float)
    scale = np.abs(phi).max(initial=0.0)
    return phi / scale if scale > 0 else phi


@dataclass
class DualSolution:
    psi: np.ndarray
    V_lp: np.ndarray
    V: np.ndarray  # Snell envelope of psi, solved independently of the LP
    dual_value: float  # U(psi) from the Snell solve
    lp_dual_objective: float
    primal_objective: float
    gap: float

    def to_dict(self) -> dict:
        return {
            "psi": self.psi.tolist(),
            "dual_value": self.dual_value,
            "lp_dual_objective": self.lp_dual_objective,
            "primal_objective": self.primal_objective,
            "gap": self.gap,
        }


def dual_value_of(aug: AugmentedChain, mu, nu, psi, V) -> float:
    """``U(psi) = int psi dnu - E^mu[V(a_0(X_0), X_0)]``."""
    n = aug.base.n
    nu = as_measure(nu, n)
    mu = as_measure(mu, n)
    return float(np.dot(nu.mass, psi) - aug.initial_law(mu) @ V)


def dual_from_lp(aug: AugmentedChain, cost: CostModel, mu, nu, occ: OccupationSolution,
                 tol: float = GAP_TOL) -> DualSolution:
    """Read ``(psi, V)`` off the LP multipliers and certify the gap by a Snell solve."""
    from .snell import snell_envelope

    if occ.lp is None or occ.lp.duals_eq is None:
        raise ValueError("occupation solution carries no LP multipliers")
    n, N = aug.base.n, aug.N
    y = occ.lp.duals_eq
    V_lp = -y[:N]
    psi = y[N:].copy()
    # cemetery gauge is pinned by the implicit 0 cemetery value; clamp rounding noise
    psi[(psi > 0) & (psi <= CLAMP_TOL)] = 0.0
    mu_m = as_measure(mu, n)
    nu_m = as_measure(nu, n)
    lp_obj = float(np.dot(nu_m.mass, psi) - aug.initial_law(mu_m) @ V_lp)
    V = snell_envelope(aug, cost, psi).V
    U = dual_value_of(aug, mu_m, nu_m, psi, V)
    gap = occ.objective - U
    if abs(gap) > tol * (1.0 + abs(occ.objective)):
        raise GapTooLarge(f"duality gap {gap:.3e} exceeds {tol:g}")
    return DualSolution(psi, V_lp, V, U, lp_obj, occ.objective, float(gap))


def ergodic_filling_lp(chain: Chain, mu, nu) -> OccupationSolution:
    """Minimize ``sum u`` subject to ``mu + P^T u - u = nu``, ``u >= 0``."""
    require_ergodic(chain)
    n = chain.n
    mu = as_measure(mu, n)
    nu = as_measure(nu, n)
    A = np.eye(n) - chain.P.T
    b = np.asarray(mu.mass) - np.asarray(nu.mass)
    res = solve_lp(np.ones(n), A, b)
    if res.status != OPTIMAL:
        raise NumericalBreakdown(f"ergodic filling LP returned {res.status}")
    u = res.x
    return OccupationSolution(u, np.asarray(nu.mass).copy(), 0.0, float(u.sum()), res)


def extract_stopping_rule(occ: OccupationSolution, tol: float = 1e-13) -> StoppingRule:
    """Memoryless rule ``p = s / (s + u)``; states never reached stop (p = 1)."""
    tot = occ.s + occ.u
    p = np.ones_like(tot)
    live = tot > tol
    p[live] = occ.s[live] / tot[live]
    return StoppingRule(np.clip(p, 0.0, 1.0))


def complementary_dual(aug: AugmentedChain, cost: CostModel, mu, nu, occ: OccupationSolution,
                       tol: float = 1e-13, value_slack: float = 1e-10) -> DualSolution:
    """Optimal dual with as much contact slack as possible where ``occ`` continues.

    Plain LP multipliers often tie ``V = psi`` on states the primal passes
    through, which makes the contact set too large for a hitting rule. This
    solves a second LP over ``(V, psi, t)``: keep ``U`` at the primal optimum
    and maximize ``sum t`` with ``V - psi o proj_x >= t``, ``0 <= t <= 1`` on
    the continuation support.
    """
    from .snell import snell_envelope

    n, N = aug.base.n, aug.N
    mu_m, nu_m = as_measure(mu, n), as_measure(nu, n)
    cont = np.flatnonzero(occ.u > tol)
    k = cont.size
    # columns: V+ (N), V- (N), psi+ (n), psi- (n), t (k)
    nv = 2 * N + 2 * n + k
    rows, rhs = [], []
    proj = np.zeros((N, n))
    proj[np.arange(N), aug.proj_x] = 1.0
    # psi(x_i) - V_i + t_i <= 0
    blk = np.zeros((N, nv))
    blk[:, :N] = -np.eye(N)
    blk[:, N:2 * N] = np.eye(N)
    blk[:, 2 * N:2 * N + n] = proj
    blk[:, 2 * N + n:2 * N + 2 * n] = -proj
    blk[cont, 2 * N + 2 * n + np.arange(k)] = 1.0
    rows.append(blk)
    rhs.append(np.zeros(N))
    # P V - V <= ell
    G = aug.P - np.eye(N)
    blk = np.zeros((N, nv))
    blk[:, :N] = G
    blk[:, N:2 * N] = -G
    rows.append(blk)
    rhs.append(np.asarray(cost.lagrangian, dtype=float))
    # t <= 1
    blk = np.zeros((k, nv))
    blk[np.arange(k), 2 * N + 2 * n + np.arange(k)] = 1.0
    rows.append(blk)
    rhs.append(np.ones(k))
    # nu.psi - mu~.V >= opt - slack
    m0 = aug.initial_law(mu_m)
    nm = np.asarray(nu_m.mass)
    row = np.zeros((1, nv))
    row[0, :N] = m0
    row[0, N:2 * N] = -m0
    row[0, 2 * N:2 * N + n] = -nm
    row[0, 2 * N + n:2 * N + 2 * n] = nm
    rows.append(row)
    rhs.append(np.array([-(occ.objective - value_slack * (1.0 + abs(occ.objective)))]))
    c = np.zeros(nv)
    c[2 * N + 2 * n:] = 1.0
    res = solve_lp(c, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), sense="max")
    if res.status != OPTIMAL:
        raise NumericalBreakdown(f"complementary dual LP returned {res.status}")
    z = res.x
    V_lp = z[:N] - z[N:2 * N]
    psi = z[2 * N:2 * N + n] - z[2 * N + n:2 * N + 2 * n]
    V = snell_envelope(aug, cost, psi).V
    U = dual_value_of(aug, mu_m, nu_m, psi, V)
    lp_obj = float(nm @ psi - m0 @ V_lp)
    return DualSolution(psi, V_lp, V, U, lp_obj, occ.objective, float(occ.objective - U))
