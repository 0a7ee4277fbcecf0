"""Optimality certificates, contact sets and barrier extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain import Chain, as_measure, lu_solve
from .costs import AugmentedChain, CostModel, TwistReport
from .errors import MassLeak
from .lp import OccupationSolution, StoppingRule, dual_value_of, extract_stopping_rule

SUPPORT_TOL = 1e-10

__all__ = [
    "ContactSet",
    "StoppingRule",
    "PushforwardResult",
    "contact_set",
    "hitting_rule",
    "pushforward",
    "verify_optimality",
    "check_stop_go",
    "local_time_check",
    "barrier_report",
]


@dataclass
class ContactSet:
    mask: np.ndarray
    slack: np.ndarray  # V - psi o proj_x
    ctol: float

    def to_dict(self) -> dict:
        return {"ctol": self.ctol, "size": int(self.mask.sum()), "mask": self.mask.astype(int).tolist()}


def contact_set(aug: AugmentedChain, psi, V, ctol: Optional[float] = None) -> ContactSet:
    V = np.asarray(getattr(V, "V", V), dtype=float)
    psi = np.asarray(psi, dtype=float)
    if ctol is None:
        ctol = 1e-7 * (1.0 + float(np.abs(V).max(initial=0.0)))
    slack = V - psi[aug.proj_x]
    return ContactSet(slack <= ctol, slack, float(ctol))


def hitting_rule(contact: ContactSet) -> StoppingRule:
    return StoppingRule(contact.mask.astype(float))


@dataclass
class PushforwardResult:
    u: np.ndarray
    s: np.ndarray
    law_x: np.ndarray
    killed: float
    expected_time: float
    expected_cost: float  # sum u * ell
    terminal_cost: Optional[float]  # E[Lambda(A_T, X_T)] read off the stopped law directly
    mass_defect: float

    @property
    def law_with_cemetery(self) -> np.ndarray:
        return np.append(self.law_x, self.killed)

    def occupation(self) -> OccupationSolution:
        return OccupationSolution(self.u, self.s, self.killed, self.expected_cost)


def pushforward(aug: AugmentedChain, cost: CostModel, rule: StoppingRule, mu, tol: float = 1e-9) -> PushforwardResult:
    """Exact law of ``(A_T, X_T)`` and occupation under a memoryless rule.

    Arrivals solve ``r = mu~ + P_aug^T ((1 - p) r)``; then ``s = p r`` and
    ``u = (1 - p) r``.
    """
    mu = as_measure(mu, aug.base.n)
    p = np.clip(np.asarray(rule.p, dtype=float), 0.0, 1.0)
    go = 1.0 - p
    A = np.eye(aug.N) - aug.P.T * go[None, :]
    r = lu_solve(A, aug.initial_law(mu))
    r = np.maximum(r, 0.0)
    s = p * r
    u = go * r
    killed = float(u @ aug.kill)
    law_x = np.bincount(aug.proj_x, weights=s, minlength=aug.base.n)
    total = float(s.sum() + killed)
    defect = abs(total - (1.0 - mu.cemetery))
    if defect > tol:
        raise MassLeak(f"pushforward loses {defect:.3e} of mass")
    term = None
    if cost.lam is not None:
        term = float(s @ cost.lam + (u * aug.kill) @ cost.lam_cemetery[aug.proj_a])
    return PushforwardResult(u, s, law_x, killed + mu.cemetery, float(u.sum()),
                             float(u @ cost.lagrangian), term, defect)


def _worst(aug, values, idx):
    if idx.size == 0:
        return None
    i = int(idx[np.argmax(values[idx])])
    return {"index": i, "aux": int(aug.proj_a[i]), "x": int(aug.proj_x[i]), "value": float(values[i])}


def verify_optimality(aug: AugmentedChain, cost: CostModel, mu, nu, psi, V, occ,
                      ctol: Optional[float] = None, gap_tol: float = 1e-8,
                      martingale_tol: float = 1e-8) -> dict:
    """Check the three optimality conditions for a primal/dual pair.

    (1) stopped mass sits on the contact set, (2) no compensator increase on
    continuation mass, (3) zero duality gap. Also reports whether ``occ``
    embeds ``nu``.
    """
    n = aug.base.n
    V = np.asarray(getattr(V, "V", V), dtype=float)
    psi = np.asarray(psi, dtype=float)
    mu_m, nu_m = as_measure(mu, n), as_measure(nu, n)
    cs = contact_set(aug, psi, V, ctol)
    alpha = V - (aug.P @ V - cost.lagrangian)
    s_supp = np.flatnonzero(occ.s > SUPPORT_TOL)
    off = s_supp[~cs.mask[s_supp]]
    support_ok = off.size == 0
    mart = float(occ.u @ np.maximum(alpha, 0.0))
    U = dual_value_of(aug, mu_m, nu_m, psi, V)
    gap = float(occ.objective - U)
    law = np.bincount(aug.proj_x, weights=occ.s, minlength=n)
    embed_err = float(np.abs(law - nu_m.mass).max(initial=0.0))
    return {
        "stopped_on_contact": {"passed": bool(support_ok), "worst": _worst(aug, cs.slack, off), "ctol": cs.ctol},
        "martingale_on_continuation": {"passed": bool(mart <= martingale_tol), "sum_u_alpha": mart,
                                       "worst": _worst(aug, occ.u * alpha, np.flatnonzero(occ.u > SUPPORT_TOL))},
        "duality_gap": {"passed": bool(abs(gap) <= gap_tol * (1.0 + abs(occ.objective))), "gap": gap,
                        "primal": float(occ.objective), "dual": U},
        "embeds_nu": {"passed": bool(embed_err <= 1e-9), "max_error": embed_err},
        "passed": bool(support_ok and mart <= martingale_tol and abs(gap) <= gap_tol * (1.0 + abs(occ.objective))),
    }


# ------------------------------------------------------------ stop-go audit


def _pair_increments(aug: AugmentedChain, p, ell, i1: int, i2: int, psi=None):
    """Expected accumulated ``ell`` along two copies started at ``i1`` and ``i2``.

    Both copies share the X-path. Given the X-step to ``y``, each copy moves
    its auxiliary coordinate by its own conditional law, independently, and
    dies with whatever probability its row leaves unassigned (truncation
    rows kill one copy while the other goes on). The stopping time is ``p``
    read on the first copy, with the first step forced; a dead second copy
    stays dead.

    Returns ``(E1, E2, T1, T2, mismatch)``: accumulated costs, the expected
    ``psi`` at the stopping time for each copy (cemetery counts 0; zeros
    when ``psi`` is None) and the probability that exactly one copy is dead
    at that time.
    """
    Pb = aug.base.P
    px = aug.proj_x
    idx = {}
    states = []
    trans = []  # (from, to, prob)

    def node(key):
        k = idx.get(key)
        if k is None:
            k = idx[key] = len(states)
            states.append(key)
        return k

    # conditional moves of one copy given the X-step: {y: [(j, prob), ...]}
    moves = {}

    def cond(a):
        m = moves.get(a)
        if m is None:
            m = {}
            x = px[a]
            for j in np.flatnonzero(aug.P[a] > 0):
                y = int(px[j])
                m.setdefault(y, []).append((int(j), aug.P[a, j] / Pb[x, y]))
            moves[a] = m
        return m

    DEAD = -1
    start = node((True, i1, i2))
    # probability mass that ends with exactly one copy dead, per source node
    solo_end = []  # (node, prob, which copy is alive)
    head = 0
    while head < len(states):
        first, a1, a2 = states[head]
        src = head
        head += 1
        if not first and p[a1] >= 1.0:
            continue
        x = px[a1]
        m1 = cond(a1)
        m2 = cond(a2) if a2 != DEAD else {}
        for y in np.flatnonzero(Pb[x] > 0):
            y = int(y)
            pxy = Pb[x, y]
            o1 = m1.get(y, [])
            o2 = m2.get(y, []) if a2 != DEAD else []
            d1 = max(0.0, 1.0 - sum(q for _, q in o1))
            d2 = 0.0 if a2 == DEAD else max(0.0, 1.0 - sum(q for _, q in o2))
            for j1, q1 in o1:
                for j2, q2 in o2:
                    trans.append((src, node((False, j1, j2)), pxy * q1 * q2))
                if a2 == DEAD or d2 > 0:
                    w = 1.0 if a2 == DEAD else d2
                    trans.append((src, node((False, j1, DEAD)), pxy * q1 * w))
            if d1 > 0:
                # copy 1 dies here; copy 2 (if alive) stops after its move
                for j2, q2 in o2:
                    solo_end.append((src, pxy * d1 * q2, j2))
    M = len(states)
    go = np.array([1.0 if k[0] else 1.0 - p[k[1]] for k in states])
    Q = np.zeros((M, M))
    for a, b, pr in trans:
        Q[a, b] += pr
    e0 = np.zeros(M)
    e0[start] = 1.0
    w = lu_solve(np.eye(M) - Q.T * go[None, :], e0)
    cont = go * w
    stop = w - cont
    l1 = np.array([ell[k[1]] for k in states])
    l2 = np.array([0.0 if k[2] == DEAD else ell[k[2]] for k in states])
    E1, E2 = float(cont @ l1), float(cont @ l2)
    alive2 = np.array([k[2] != DEAD for k in states])
    mismatch = float(stop[~alive2].sum()) + sum(cont[s] * pr for s, pr, _ in solo_end)
    T1 = T2 = 0.0
    if psi is not None:
        psi = np.asarray(psi, dtype=float)
        at = np.array([psi[px[k[1]]] for k in states])
        T1 = float(stop @ at)
        T2 = float(stop[alive2] @ at[alive2]) + sum(cont[s] * pr * psi[px[j2]] for s, pr, j2 in solo_end)
    return E1, E2, T1, T2, mismatch


def check_stop_go(aug: AugmentedChain, cost: CostModel, occ: OccupationSolution, rule: Optional[StoppingRule] = None,
                  tol: float = 1e-9, max_pairs: int = 5000, psi=None) -> dict:
    """Look for stop-go pairs in the support of an occupation solution.

    A pair is a continuing state ``(a1, x)`` and a stopping state ``(a2, x)``.
    Running the first copy's continuation ``sigma`` on the second copy (same
    X-path) must not be cheaper than what the first copy pays:
    ``E1 - E2 <= E psi(X1_sigma) - E psi(X2_sigma)``. The right side vanishes
    unless one copy can die while the other survives (a truncated horizon);
    such pairs need ``psi`` and are skipped without it. The check is on
    Markov states ``(a, x)``.
    """
    if rule is None:
        rule = extract_stopping_rule(occ)
    p = np.asarray(rule.p, dtype=float)
    ell = cost.lagrangian
    go_states = np.flatnonzero(occ.u > tol)
    stop_states = np.flatnonzero(occ.s > tol)
    violations = []
    checked = skipped = 0
    worst = 0.0
    for x in range(aug.base.n):
        g = go_states[aug.proj_x[go_states] == x]
        s = stop_states[aug.proj_x[stop_states] == x]
        for i1 in g:
            for i2 in s:
                if i1 == i2 or checked + skipped >= max_pairs:
                    continue
                E1, E2, T1, T2, mis = _pair_increments(aug, p, ell, int(i1), int(i2), psi)
                if mis > tol and psi is None:
                    skipped += 1
                    continue
                checked += 1
                slack = 1e-9 * (1.0 + abs(E1) + abs(E2) + abs(T1) + abs(T2))
                excess = (E1 - E2) - (T1 - T2)
                worst = max(worst, excess)
                if excess > slack:
                    violations.append({
                        "go": {"index": int(i1), "aux": int(aug.proj_a[i1]), "x": int(x)},
                        "stop": {"index": int(i2), "aux": int(aug.proj_a[i2]), "x": int(x)},
                        "E_go": E1,
                        "E_stop": E2,
                        "horizon_mismatch": float(mis),
                    })
    return {
        "passed": not violations,
        "pairs_checked": checked,
        "pairs_skipped": skipped,
        "violations": violations,
        "max_excess": worst,
        "note": "inequality checked on Markov states (a, x) of the augmented chain",
    }


def local_time_check(chain: Chain, occ: OccupationSolution, x_bar: int, tol: float = 1e-9) -> dict:
    v = float(occ.u[x_bar])
    return {"x_bar": int(x_bar), "local_time": v, "optimal": bool(v <= tol)}


# ------------------------------------------------------------ barriers


def _aux_neighbour(aug: AugmentedChain, axis: int, sign: int) -> np.ndarray:
    """Next auxiliary value along ``axis`` in direction ``sign`` (-1 if none)."""
    C = aug.aux_coords
    out = -np.ones(aug.n_aux, dtype=int)
    others = [k for k in range(C.shape[1]) if k != axis]
    for a in range(aug.n_aux):
        same = np.all(C[:, others] == C[a, others], axis=1) if others else np.ones(aug.n_aux, dtype=bool)
        step = sign * (C[:, axis] - C[a, axis])
        cand = np.flatnonzero(same & (step > 0))
        if cand.size:
            out[a] = int(cand[np.argmin(step[cand])])
    return out


def barrier_violations(aug: AugmentedChain, stopped: np.ndarray, region: np.ndarray, axis: int, sign: int) -> list:
    """Stopped states whose neighbour along the twist direction is in ``region`` but not stopped."""
    nb = _aux_neighbour(aug, axis, sign)
    lookup = {(int(a), int(x)): i for i, (a, x) in enumerate(zip(aug.proj_a, aug.proj_x))}
    bad = []
    for i in np.flatnonzero(stopped & region):
        a2 = nb[aug.proj_a[i]]
        if a2 < 0:
            continue
        j = lookup.get((int(a2), int(aug.proj_x[i])))
        if j is not None and region[j] and not stopped[j]:
            bad.append({"stopped": int(i), "continuing_neighbour": int(j),
                        "x": int(aug.proj_x[i]), "aux": int(aug.proj_a[i])})
    return bad


def barrier_report(aug: AugmentedChain, cost: CostModel, mu, nu, psi, V, occ: OccupationSolution,
                   twist: TwistReport, ctol: Optional[float] = None, law_tol: float = 1e-10) -> dict:
    """Compare the LP optimum with the first hitting time of the contact set.

    Passing means: the LP rule is bang-bang, its stopped set is monotone along
    the twist direction, and hitting the contact set reproduces ``nu`` and the
    optimal cost. Agreement is evidence of uniqueness, not a proof.
    """
    n = aug.base.n
    nu_m = as_measure(nu, n)
    out = {"twist": twist.to_dict(),
           "caveat": "uniqueness is evidenced by agreement of the LP vertex and the hitting rule; "
                     "differentiability of the value in the auxiliary variable is not checked"}
    rule = extract_stopping_rule(occ)
    visited = (occ.u + occ.s) > SUPPORT_TOL
    frac = rule.p[visited]
    bang = bool(np.all((frac <= 1e-9) | (frac >= 1 - 1e-9)))
    out["bang_bang"] = bang
    reach = aug.reachable(mu)
    stopped = rule.p >= 1 - 1e-9
    if twist.direction is not None:
        axis, sign = twist.direction
        out["direction"] = {"axis": axis, "sign": sign, "shape": "barrier" if sign > 0 else "reverse barrier"}
        viol = barrier_violations(aug, stopped, reach, axis, sign)
        out["monotone"] = not viol
        out["monotone_violations"] = viol[:20]
    else:
        out["monotone"] = None
    cs = contact_set(aug, psi, V, ctol)
    pf = pushforward(aug, cost, hitting_rule(cs), mu)
    law_err = float(np.abs(pf.law_x - nu_m.mass).max(initial=0.0))
    cost_err = float(abs(pf.expected_cost - occ.objective))
    out["hitting_rule"] = {
        "law_error": law_err,
        "cost": pf.expected_cost,
        "cost_error": cost_err,
        "reproduces_nu": bool(law_err <= law_tol),
        "reproduces_cost": bool(cost_err <= 1e-8 * (1.0 + abs(occ.objective))),
        "ctol": cs.ctol,
    }
    out["passed"] = bool(twist.holds == "yes" and bang and out["monotone"]
                         and out["hitting_rule"]["reproduces_nu"] and out["hitting_rule"]["reproduces_cost"])
    return out


# ------------------------------------------------------------ ergodic


def regularized_time_check(chain: Chain, occ: OccupationSolution, mu, value: float,
                           betas=(1e-2, 1e-3, 1e-4), tol: float = 1e-6) -> dict:
    """Run the filling rule on killed copies of an ergodic chain.

    ``E_beta[T]`` should tend to ``value`` as ``beta -> 0``; the last two
    points are combined by Richardson extrapolation (error linear in beta).
    """
    from .chain import killed
    from .costs import build_augmented, running_cost

    rule = extract_stopping_rule(occ)
    rows = []
    for beta in betas:
        kc = killed(chain, float(beta))
        aug = build_augmented(kc)
        pf = pushforward(aug, running_cost(aug, np.ones(chain.n)), rule, mu)
        rows.append({"beta": float(beta), "expected_time": pf.expected_time, "killed_mass": pf.killed})
    out = {"schedule": rows, "value": float(value)}
    if len(rows) >= 2:
        (b1, e1), (b2, e2) = [(r["beta"], r["expected_time"]) for r in rows[-2:]]
        extra = e2 + (e2 - e1) * b2 / (b1 - b2)
        out["extrapolated"] = float(extra)
        out["error"] = float(abs(extra - value))
        out["passed"] = bool(abs(extra - value) <= tol * (1.0 + abs(value)))
    return out
