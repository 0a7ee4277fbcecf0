"""Finite-state sub-stochastic Markov chains with an implicit cemetery.

The cemetery is never stored as a state: the kill probability of ``x`` is the
row deficit ``1 - sum_y P[x, y]``, and every function on states carries an
explicit cemetery value (0 unless stated otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    ModeMismatch,
    NegativeEntry,
    NotAbsorbing,
    NotErgodic,
    Reducible,
    RowSumExceedsOne,
    SingularSystem,
)

ABSORBING = "absorbing"
ERGODIC = "ergodic"

ROW_TOL = 1e-12
EDGE_TOL = 1e-15
PIVOT_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Chain:
    P: np.ndarray
    mode: str
    labels: tuple = ()

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def kill(self) -> np.ndarray:
        return np.clip(1.0 - self.P.sum(axis=1), 0.0, 1.0)

    def label(self, x: int) -> str:
        return self.labels[x] if self.labels else str(x)


@dataclass(frozen=True)
class Measure:
    """Mass on the states plus mass on the cemetery."""

    mass: np.ndarray
    cemetery: float = 0.0

    @property
    def total(self) -> float:
        return float(self.mass.sum() + self.cemetery)

    def integrate(self, f, f_cemetery: float = 0.0) -> float:
        return float(np.dot(self.mass, f) + self.cemetery * f_cemetery)

    def as_array(self, with_cemetery: bool = False) -> np.ndarray:
        if with_cemetery:
            return np.append(self.mass, self.cemetery)
        return np.array(self.mass)


def as_measure(m, n: int, tol: float = 1e-12) -> Measure:
    """Coerce a vector (or Measure) to a probability Measure on ``n`` states.

    Missing mass is assigned to the cemetery.
    """
    if isinstance(m, Measure):
        mass, cem = np.asarray(m.mass, dtype=float), float(m.cemetery)
        if mass.shape != (n,):
            raise DimensionMismatch(f"measure has {mass.size} states, chain has {n}")
    else:
        mass = np.asarray(m, dtype=float).ravel()
        if mass.size == n + 1:
            mass, cem = mass[:n], float(mass[n])
        elif mass.size == n:
            cem = max(0.0, 1.0 - float(mass.sum()))
        else:
            raise DimensionMismatch(f"measure has {mass.size} entries, chain has {n} states")
    if np.any(mass < -tol) or cem < -tol:
        raise NegativeEntry("measure has negative mass")
    mass = np.clip(mass, 0.0, None)
    cem = max(cem, 0.0)
    total = mass.sum() + cem
    if abs(total - 1.0) > 1e-9:
        raise DimensionMismatch(f"measure has total mass {total}, expected 1")
    mass = mass.copy()
    mass.setflags(write=False)
    return Measure(mass, cem)


def dirac(x: int, n: int) -> Measure:
    m = np.zeros(n)
    m[x] = 1.0
    return as_measure(m, n)


def lu_solve(A: np.ndarray, b: np.ndarray, trans: int = 0) -> np.ndarray:
    """Dense LU solve with partial pivoting; raises on tiny pivots."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros_like(np.asarray(b, dtype=float))
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu))
    scale = max(1.0, float(np.abs(A).max()))
    if diag.min() <= PIVOT_TOL * scale:
        raise SingularSystem(f"pivot {diag.min():.3e} below threshold")
    return scipy.linalg.lu_solve((lu, piv), b, trans=trans, check_finite=False)


def _reach(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        x = stack.pop()
        for y in np.flatnonzero(adj[x] & ~seen):
            seen[y] = True
            stack.append(int(y))
    return seen


def is_irreducible(P: np.ndarray) -> bool:
    adj = np.asarray(P) > EDGE_TOL
    if adj.shape[0] == 0:
        return False
    return bool(_reach(adj, 0).all() and _reach(adj.T, 0).all())


def _power_decays(P: np.ndarray) -> bool:
    # repeated squaring: ||P^(2^k) 1||_inf < 1 for some k iff spectral radius < 1
    Q = np.array(P, dtype=float)
    for _ in range(64):
        if np.abs(Q).sum(axis=1).max() < 1.0 - 1e-15:
            return True
        Q = Q @ Q
        if not np.isfinite(Q).all():
            return False
    return False


def validate_chain(P, mode: str, labels: Optional[Sequence[str]] = None) -> Chain:
    """Check a raw kernel against the declared mode and build a :class:`Chain`."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise DimensionMismatch(f"kernel must be a non-empty square table, got shape {P.shape}")
    if not np.isfinite(P).all():
        raise NegativeEntry("kernel has non-finite entries")
    bad = np.argwhere(P < 0)
    if bad.size:
        x, y = bad[0]
        raise NegativeEntry(f"P[{x},{y}] = {P[x, y]} < 0")
    rows = P.sum(axis=1)
    if np.any(rows > 1.0 + ROW_TOL):
        x = int(np.argmax(rows))
        raise RowSumExceedsOne(f"row {x} sums to {float(rows[x]):.17g}")
    if labels is not None and len(labels) != P.shape[0]:
        raise DimensionMismatch("labels do not match the state count")
    mode = str(mode).lower()
    if mode == ABSORBING:
        stochastic = np.all(np.abs(rows - 1.0) <= ROW_TOL)
        if stochastic and is_irreducible(P):
            raise ModeMismatch("declared absorbing, but the kernel is stochastic and irreducible")
        if not _power_decays(P):
            raise ModeMismatch("declared absorbing, but the spectral radius of P is not < 1")
        try:
            e = lu_solve(np.eye(P.shape[0]) - P, np.ones(P.shape[0]))
        except SingularSystem as exc:
            raise ModeMismatch(f"declared absorbing, but I - P is singular ({exc})") from None
        if np.any(e < 1.0 - 1e-9):
            raise ModeMismatch("declared absorbing, but (I - P)^-1 1 is not >= 1")
    elif mode == ERGODIC:
        if np.any(np.abs(rows - 1.0) > ROW_TOL):
            x = int(np.argmax(np.abs(rows - 1.0)))
            raise ModeMismatch(f"declared ergodic, but row {x} sums to {float(rows[x]):.17g}")
        if not is_irreducible(P):
            raise Reducible("declared ergodic, but the chain is not irreducible")
    else:
        raise ModeMismatch(f"unknown mode {mode!r}")
    return Chain(_frozen(P), mode, tuple(labels) if labels is not None else ())


def require_absorbing(chain: Chain) -> None:
    if chain.mode != ABSORBING:
        raise NotAbsorbing("operation requires an absorbing chain")


def require_ergodic(chain: Chain) -> None:
    if chain.mode != ERGODIC:
        raise NotErgodic("operation requires an ergodic chain")


def expected_lifetime(chain: Chain) -> np.ndarray:
    """Expected number of steps before the cemetery, ``(I - P) e = 1``."""
    require_absorbing(chain)
    return lu_solve(np.eye(chain.n) - chain.P, np.ones(chain.n))


def invariant_distribution(chain: Chain) -> Measure:
    """Stationary law of an ergodic chain, via a bordered linear system."""
    require_ergodic(chain)
    n = chain.n
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = chain.P.T - np.eye(n)
    A[:n, n] = 1.0
    A[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    gamma = lu_solve(A, rhs)[:n]
    if np.any(gamma <= 0):
        raise NotErgodic("stationary law has non-positive entries")
    gamma = gamma / gamma.sum()
    gamma.setflags(write=False)
    return Measure(gamma, 0.0)


def generator_apply(chain: Chain, f, f_cemetery: float = 0.0) -> np.ndarray:
    """``(P - I) f`` with the killed mass sent to ``f_cemetery``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (chain.n,):
        raise DimensionMismatch(f"function has shape {f.shape}, chain has {chain.n} states")
    return chain.P @ f + chain.kill * f_cemetery - f


def killed(chain: Chain, beta: float) -> Chain:
    """The chain killed with probability ``beta`` at every step.

    Turns an ergodic chain into an absorbing one (regularization).
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    return Chain(_frozen((1.0 - beta) * chain.P), ABSORBING, chain.labels)


def survival_tail(P: np.ndarray, tol: float = 1e-9, cap: int = 100_000) -> int:
    """Smallest t with ``||P^t 1||_inf <= tol``."""
    v = np.ones(P.shape[0])
    for t in range(cap + 1):
        if v.max(initial=0.0) <= tol:
            return t
        v = P @ v
    raise NotAbsorbing(f"survival probability above {tol} after {cap} steps")
