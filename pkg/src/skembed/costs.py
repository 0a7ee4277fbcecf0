"""Costs of the form ``S_t = Lambda(A_t, X_t)`` on an auxiliary x base product chain.

The product ("augmented") chain lives on pairs ``(a, x)``; its X-marginal
must be the base chain. A cost is a table ``Lambda(a, x)`` plus a frozen
cemetery value ``Lambda(a, cemetery)`` per auxiliary state, from which the
per-step Lagrangian

    ell(a, x) = sum P_aug((a,x),(a',x')) Lambda(a',x') + kill(a,x) Lambda(a, cem) - Lambda(a, x)

is derived. Path-additive ("running") costs ``S_t = sum_{s<t} c(X_s)`` are
carried by their Lagrangian alone.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .chain import Chain, Measure, _frozen, survival_tail
from .errors import (
    DimensionMismatch,
    MarginalMismatch,
    MissingCemeteryValue,
    NoGradient,
)

TIME = "time"
INITIAL_STATE = "initial-state"
EXPLICIT = "explicit"
TRIVIAL = "none"

MARGINAL_TOL = 1e-12
TWIST_MARGIN = 1e-9


class HorizonTooSmall(UserWarning):
    """Mass survives past the Time horizon and is routed to the cemetery."""


@dataclass(frozen=True)
class AugmentedChain:
    base: Chain
    P: np.ndarray  # N x N kernel on augmented states
    proj_x: np.ndarray  # base coordinate of each augmented state
    proj_a: np.ndarray  # auxiliary coordinate (index into aux_coords)
    aux_coords: np.ndarray  # n_aux x d embedding of the auxiliary values
    initial_aux: np.ndarray  # a_0(x) per base state, -1 where undefined
    kind: str = TRIVIAL
    truncated: np.ndarray = field(default=None)  # forced-kill rows (Time horizon)
    truncation_mass: float = 0.0
    T_max: Optional[int] = None

    @property
    def N(self) -> int:
        return self.P.shape[0]

    @property
    def n_aux(self) -> int:
        return self.aux_coords.shape[0]

    @property
    def kill(self) -> np.ndarray:
        return np.clip(1.0 - self.P.sum(axis=1), 0.0, 1.0)

    def index(self, a: int, x: int) -> int:
        hits = np.flatnonzero((self.proj_a == a) & (self.proj_x == x))
        if hits.size == 0:
            raise KeyError((a, x))
        return int(hits[0])

    def initial_states(self, mu=None) -> np.ndarray:
        """Augmented indices ``(a_0(x), x)`` for x in the support of ``mu``."""
        xs = range(self.base.n) if mu is None else np.flatnonzero(_mass(mu, self.base.n) > 0)
        out = []
        for x in xs:
            a0 = int(self.initial_aux[x])
            if a0 < 0:
                raise DimensionMismatch(f"no initial auxiliary state for base state {x}")
            out.append(self.index(a0, int(x)))
        return np.array(out, dtype=int)

    def initial_law(self, mu) -> np.ndarray:
        """Initial law on augmented states, ``mu~(a_0(x), x) = mu(x)``."""
        m = _mass(mu, self.base.n)
        out = np.zeros(self.N)
        for x in np.flatnonzero(m > 0):
            out[self.index(int(self.initial_aux[x]), int(x))] += m[x]
        return out

    def reachable(self, mu=None) -> np.ndarray:
        """Mask of augmented states reachable with positive probability from supp(mu)."""
        seen = np.zeros(self.N, dtype=bool)
        queue = deque(int(i) for i in self.initial_states(mu))
        for i in queue:
            seen[i] = True
        adj = self.P > 1e-15
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(adj[i] & ~seen):
                seen[j] = True
                queue.append(int(j))
        return seen

    def marginal_defect(self) -> float:
        """Largest gap between the X-marginal of P_aug and the base kernel.

        Truncation rows of a Time chain are exempt (they are forced kills by design).
        """
        n = self.base.n
        worst = 0.0
        for i in range(self.N):
            if self.truncated is not None and self.truncated[i]:
                continue
            row = np.bincount(self.proj_x, weights=self.P[i], minlength=n)
            worst = max(worst, float(np.abs(row - self.base.P[self.proj_x[i]]).max()))
        return worst


def _mass(mu, n) -> np.ndarray:
    if isinstance(mu, Measure):
        return np.asarray(mu.mass)
    m = np.asarray(mu, dtype=float).ravel()
    return m[:n]


def build_augmented(
    base: Chain,
    kind: str = TRIVIAL,
    *,
    T_max: Optional[int] = None,
    horizon_tol: float = 1e-9,
    support: Optional[Sequence[int]] = None,
    coords=None,
    P_aug=None,
    proj_x=None,
    proj_a=None,
    initial_aux=None,
    aux_coords=None,
) -> AugmentedChain:
    """Build the product chain for one of the supported auxiliary processes.

    ``kind`` is one of ``"none"`` (single auxiliary value), ``"time"``
    (``a = t``, truncated at ``T_max``; chosen from the survival tail when
    omitted), ``"initial-state"`` (``a = X_0`` frozen, for ``X_0`` in
    ``support``) or ``"explicit"`` (user-supplied coupled kernel).
    """
    n = base.n
    P = base.P
    kind = kind.lower()
    if kind == TRIVIAL:
        aug = AugmentedChain(
            base, _frozen(P), np.arange(n), np.zeros(n, dtype=int), np.zeros((1, 0)),
            np.zeros(n, dtype=int), TRIVIAL, np.zeros(n, dtype=bool),
        )
    elif kind == TIME:
        if T_max is None:
            T_max = max(1, survival_tail(P, horizon_tol))
        T_max = int(T_max)
        if T_max < 1:
            raise DimensionMismatch("T_max must be >= 1")
        N = (T_max + 1) * n
        Pa = np.zeros((N, N))
        for t in range(T_max):
            Pa[t * n:(t + 1) * n, (t + 1) * n:(t + 2) * n] = P
        trunc = np.zeros(N, dtype=bool)
        trunc[T_max * n:] = True
        surv = np.ones(n)
        for _ in range(T_max):
            surv = P @ surv
        tail = float(surv.max())
        if tail > horizon_tol:
            warnings.warn(
                f"survival past T_max={T_max} is {tail:.3e} > {horizon_tol:g}; "
                "that mass is routed to the cemetery",
                HorizonTooSmall,
                stacklevel=2,
            )
        aug = AugmentedChain(
            base, _frozen(Pa), np.tile(np.arange(n), T_max + 1), np.repeat(np.arange(T_max + 1), n),
            np.arange(T_max + 1, dtype=float).reshape(-1, 1), np.zeros(n, dtype=int), TIME,
            trunc, tail, T_max,
        )
    elif kind == INITIAL_STATE:
        sup = list(range(n)) if support is None else sorted(int(x) for x in support)
        k = len(sup)
        Pa = np.kron(np.eye(k), P)
        init = -np.ones(n, dtype=int)
        for a, x0 in enumerate(sup):
            init[x0] = a
        if coords is None:
            cc = np.array(sup, dtype=float).reshape(-1, 1)
        else:
            cc = np.asarray(coords, dtype=float)
            cc = cc.reshape(n, -1)[sup]
        aug = AugmentedChain(
            base, _frozen(Pa), np.tile(np.arange(n), k), np.repeat(np.arange(k), n), _frozen(cc),
            init, INITIAL_STATE, np.zeros(k * n, dtype=bool),
        )
    elif kind == EXPLICIT:
        if P_aug is None or proj_x is None or proj_a is None or initial_aux is None:
            raise DimensionMismatch("explicit auxiliary needs P_aug, proj_x, proj_a and initial_aux")
        Pa = np.asarray(P_aug, dtype=float)
        px = np.asarray(proj_x, dtype=int)
        pa = np.asarray(proj_a, dtype=int)
        if Pa.ndim != 2 or Pa.shape[0] != Pa.shape[1] or px.shape != (Pa.shape[0],) or pa.shape != px.shape:
            raise DimensionMismatch("explicit kernel and projections have inconsistent shapes")
        n_aux = int(pa.max()) + 1
        cc = np.arange(n_aux, dtype=float).reshape(-1, 1) if aux_coords is None else np.asarray(aux_coords, dtype=float)
        if cc.ndim == 1:
            cc = cc.reshape(-1, 1)
        if np.any(Pa < 0):
            raise MarginalMismatch("augmented kernel has negative entries")
        aug = AugmentedChain(
            base, _frozen(Pa), px, pa, _frozen(cc), np.asarray(initial_aux, dtype=int), EXPLICIT,
            np.zeros(Pa.shape[0], dtype=bool),
        )
    else:
        raise DimensionMismatch(f"unknown auxiliary kind {kind!r}")

    defect = aug.marginal_defect()
    if defect > 1e-9:
        raise MarginalMismatch(f"X-marginal of the augmented kernel differs from P by {defect:.3e}")
    return aug


@dataclass(frozen=True)
class CostModel:
    lagrangian: np.ndarray  # ell per augmented state
    lam: Optional[np.ndarray] = None  # Lambda(a, x); None for running costs
    lam_cemetery: Optional[np.ndarray] = None  # Lambda(a, cemetery) per aux state
    grad: Optional[np.ndarray] = None  # N x d
    grad_cemetery: Optional[np.ndarray] = None  # n_aux x d
    D: Optional[float] = None

    @property
    def is_running(self) -> bool:
        return self.lam is None


def lagrangian(aug: AugmentedChain, lam, lam_cemetery) -> np.ndarray:
    """One-step expected increment of ``Lambda`` with the frozen-at-death convention."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape[0] != aug.N:
        raise DimensionMismatch(f"Lambda table has {lam.shape[0]} rows, augmented chain has {aug.N}")
    if lam_cemetery is None:
        raise MissingCemeteryValue("Lambda needs a cemetery value for every auxiliary state")
    cem = np.asarray(lam_cemetery, dtype=float)
    if cem.shape[0] != aug.n_aux or not np.isfinite(cem).all():
        raise MissingCemeteryValue("Lambda needs a finite cemetery value for every auxiliary state")
    kill = aug.kill
    if lam.ndim == 1:
        return aug.P @ lam + kill * cem[aug.proj_a] - lam
    return aug.P @ lam + kill[:, None] * cem[aug.proj_a] - lam


def cost_from_lambda(aug: AugmentedChain, lam, lam_cemetery, grad=None, grad_cemetery=None, D=None) -> CostModel:
    lam = _frozen(lam)
    cem = _frozen(lam_cemetery) if lam_cemetery is not None else None
    ell = _frozen(lagrangian(aug, lam, cem))
    g = gc = None
    if grad is not None:
        g = np.asarray(grad, dtype=float).reshape(aug.N, -1)
        if grad_cemetery is None:
            raise MissingCemeteryValue("gradient table needs cemetery values")
        gc = np.asarray(grad_cemetery, dtype=float).reshape(aug.n_aux, -1)
        g, gc = _frozen(g), _frozen(gc)
    return CostModel(ell, lam, cem, g, gc, D)


def running_cost(aug: AugmentedChain, rate, D=None) -> CostModel:
    """``S_t = sum_{s<t} rate(X_s)``; the death step is charged like any other step."""
    rate = np.asarray(rate, dtype=float)
    if rate.shape == (aug.base.n,):
        rate = rate[aug.proj_x]
    if rate.shape != (aug.N,):
        raise DimensionMismatch("running cost must be given per base or per augmented state")
    return CostModel(_frozen(rate), D=D)


def time_cost(aug: AugmentedChain, profile, grad_profile=None, D=None) -> CostModel:
    """``Lambda(t, x) = f(t)`` on a Time chain, frozen at death as ``f(t)``."""
    if aug.kind != TIME:
        raise DimensionMismatch("time_cost needs a Time auxiliary")
    f = np.asarray(profile, dtype=float)
    if f.shape != (aug.T_max + 1,):
        raise DimensionMismatch(f"profile must have T_max + 1 = {aug.T_max + 1} values")
    lam = f[aug.proj_a]
    grad = gcem = None
    if grad_profile is not None:
        gp = np.asarray(grad_profile, dtype=float)
        grad, gcem = gp[aug.proj_a].reshape(-1, 1), gp.reshape(-1, 1)
    return cost_from_lambda(aug, lam, f, grad, gcem, D)


def initial_state_cost(aug: AugmentedChain, c, c_cemetery, grad=None, grad_cemetery=None, D=None) -> CostModel:
    """``Lambda(x0, x) = c[x0, x]`` on an initial-state chain (``c`` is n x n)."""
    if aug.kind != INITIAL_STATE:
        raise DimensionMismatch("initial_state_cost needs an initial-state auxiliary")
    n = aug.base.n
    c = np.asarray(c, dtype=float)
    if c.shape != (n, n):
        raise DimensionMismatch("c must be an n x n table indexed by (x0, x)")
    sup = np.array([x0 for x0 in range(n) if aug.initial_aux[x0] >= 0])
    order = np.argsort(aug.initial_aux[sup])
    sup = sup[order]
    lam = c[sup[aug.proj_a], aug.proj_x]
    if c_cemetery is None:
        raise MissingCemeteryValue("c needs a cemetery value c(x0, cemetery) per initial state")
    cem = np.asarray(c_cemetery, dtype=float)[sup]
    g = gc = None
    if grad is not None:
        gr = np.asarray(grad, dtype=float).reshape(n, n, -1)
        g = gr[sup[aug.proj_a], aug.proj_x]
        if grad_cemetery is None:
            raise MissingCemeteryValue("gradient table needs cemetery values")
        gc = np.asarray(grad_cemetery, dtype=float).reshape(n, -1)[sup]
    return cost_from_lambda(aug, lam, cem, g, gc, D)


# ---------------------------------------------------------------- checks


def check_submartingale(aug: AugmentedChain, cost: CostModel, mu=None, tol: float = 1e-12) -> dict:
    reach = aug.reachable(mu)
    ell = cost.lagrangian
    idx = np.flatnonzero(reach)
    worst = int(idx[np.argmin(ell[idx])])
    start_ok = True
    start_worst = 0.0
    if cost.lam is not None:
        init = aug.initial_states(mu)
        start_worst = float(np.abs(cost.lam[init]).max(initial=0.0))
        start_ok = start_worst <= tol
    ok = bool(ell[worst] >= -tol) and start_ok
    return {
        "passed": ok,
        "min_lagrangian": float(ell[worst]),
        "worst_state": _state_repr(aug, worst),
        "initial_lambda_max": start_worst,
    }


def check_semi_supermartingale(aug: AugmentedChain, cost: CostModel, D: Optional[float] = None, mu=None) -> dict:
    reach = aug.reachable(mu)
    ell = cost.lagrangian
    idx = np.flatnonzero(reach)
    worst = int(idx[np.argmax(ell[idx])])
    D_star = float(ell[worst])
    declared = cost.D if D is None else D
    return {
        "D_star": D_star,
        "declared": declared,
        "passed": None if declared is None else bool(D_star <= declared + 1e-12),
        "worst_state": _state_repr(aug, worst),
    }


@dataclass
class TwistReport:
    holds: str  # "yes" | "no" | "inconclusive"
    direction: Optional[tuple] = None  # (axis, +1/-1)
    witness: dict = field(default_factory=dict)
    drift: Optional[np.ndarray] = None
    excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "holds": self.holds,
            "direction": None if self.direction is None else {"axis": self.direction[0], "sign": self.direction[1]},
            "witness": self.witness,
            "excluded_dead_end_states": self.excluded,
        }


def gradient_drift(aug: AugmentedChain, cost: CostModel) -> np.ndarray:
    if cost.grad is None or cost.grad.shape[1] == 0:
        raise NoGradient("twist check needs a gradient table with d >= 1")
    g, gc = cost.grad, cost.grad_cemetery
    return aug.P @ g + aug.kill[:, None] * gc[aug.proj_a] - g


def check_twist(aug: AugmentedChain, cost: CostModel, mu=None, margin: float = TWIST_MARGIN) -> TwistReport:
    """Sufficient monotone-drift test for the twist condition.

    Succeeds along axis ``k`` with sign ``+1`` (``-1``) if the drift of
    ``d Lambda / d a_k`` is ``>= margin`` (``<= -margin``) at every reachable
    state that survives a step with positive probability. States that die
    surely (including Time truncation rows) are excluded: from there every
    continuation lands in the cemetery and the auxiliary plays no role.
    """
    delta = gradient_drift(aug, cost)
    reach = aug.reachable(mu)
    live = reach & (aug.P.sum(axis=1) > 1e-15)
    idx = np.flatnonzero(live)
    excluded = int(reach.sum() - live.sum())
    if idx.size == 0:
        return TwistReport("inconclusive", None, {"reason": "no live reachable state"}, delta, excluded)
    for k in range(delta.shape[1]):
        col = delta[idx, k]
        if col.min() >= margin:
            return TwistReport("yes", (k, +1), {"min_drift": float(col.min())}, delta, excluded)
        if col.max() <= -margin:
            return TwistReport("yes", (k, -1), {"max_drift": float(col.max())}, delta, excluded)
    k = 0
    col = delta[idx, k]
    lo, hi = int(idx[np.argmin(col)]), int(idx[np.argmax(col)])
    witness = {
        "axis": k,
        "min_drift": float(delta[lo, k]),
        "min_state": _state_repr(aug, lo),
        "max_drift": float(delta[hi, k]),
        "max_state": _state_repr(aug, hi),
    }
    return TwistReport("inconclusive", None, witness, delta, excluded)


def _state_repr(aug: AugmentedChain, i: int) -> dict:
    return {"index": int(i), "aux": int(aug.proj_a[i]), "x": int(aug.proj_x[i])}
