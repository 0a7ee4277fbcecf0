"""Potential theory on the base chain.

Potentials are plain length-n arrays; their cemetery value is 0 throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._stopping import solve_stopping
from .chain import (
    ERGODIC,
    Chain,
    Measure,
    as_measure,
    expected_lifetime,
    invariant_distribution,
    lu_solve,
    require_absorbing,
    require_ergodic,
)
from .errors import NotOrdered, ZeroGammaState

SUPERMEDIAN_TOL = 1e-12


class ErgodicReduite(UserWarning):
    pass


def reduite(chain: Chain, psi, tol: float = 1e-13, max_sweeps: int = 10**6) -> np.ndarray:
    """Least supermedian majorant of ``psi`` (cemetery value 0).

    On an ergodic chain the only supermedian functions are constants, so the
    envelope is the constant ``max(psi)``; a warning flags this case.
    """
    psi = np.asarray(psi, dtype=float)
    if chain.mode == ERGODIC:
        warnings.warn("ergodic reduite is the constant sup of psi", ErgodicReduite, stacklevel=2)
        return np.full(chain.n, psi.max())
    return solve_stopping(chain.P, psi, np.zeros(chain.n), tol=tol, max_sweeps=max_sweeps).V


def is_supermedian(chain: Chain, phi, tol: float = SUPERMEDIAN_TOL) -> bool:
    phi = np.asarray(phi, dtype=float)
    return bool(np.all(chain.P @ phi <= phi + tol))


@dataclass
class Balayage:
    ordered: bool
    certificate: Optional[np.ndarray] = None  # supermedian phi with int phi dnu > int phi dmu
    margin: float = 0.0  # int phi dnu - int phi dmu for the certificate
    note: str = ""
    occupation: object = None

    def to_dict(self) -> dict:
        d = {"ordered": self.ordered, "note": self.note}
        if self.certificate is not None:
            d["certificate"] = [float(v) + 0.0 for v in self.certificate]
            d["certificate_margin"] = self.margin
        return d


def check_balayage(chain: Chain, mu, nu) -> Balayage:
    """Decide ``mu < nu`` in balayage order through the zero-cost embedding LP.

    When the LP is infeasible the Farkas ray is turned into a supermedian
    ``phi`` separating the two measures, and re-verified.
    """
    from .costs import build_augmented, running_cost
    from .lp import primal_embedding_lp
    from .errors import Infeasible

    mu = as_measure(mu, chain.n)
    nu = as_measure(nu, chain.n)
    if chain.mode == ERGODIC:
        # supermedian => constant; ordered iff nu has no cemetery mass
        ordered = nu.cemetery <= 1e-12
        return Balayage(ordered, note="ergodic: supermedian functions are constant")
    aug = build_augmented(chain)
    cost = running_cost(aug, np.zeros(chain.n))
    try:
        occ = primal_embedding_lp(aug, cost, mu, nu)
    except Infeasible as exc:
        phi = exc.certificate
        margin = nu.integrate(phi) - mu.integrate(phi)
        if not is_supermedian(chain, phi, tol=1e-9) or margin <= 0:
            raise
        return Balayage(False, phi, float(margin), "Farkas certificate from the embedding LP")
    return Balayage(True, note="embedding LP feasible", occupation=occ)


def time_potential(chain: Chain) -> np.ndarray:
    """``h`` with ``(P - I) h = 1`` and ``h(cemetery) = 0``, i.e. minus the lifetime."""
    require_absorbing(chain)
    return -expected_lifetime(chain)


def expected_embedding_time(chain: Chain, mu, nu, check_order: bool = True) -> float:
    """``E[T]`` shared by every stopping time embedding ``nu`` from ``mu``."""
    mu = as_measure(mu, chain.n)
    nu = as_measure(nu, chain.n)
    if check_order:
        bal = check_balayage(chain, mu, nu)
        if not bal.ordered:
            raise NotOrdered("nu is not reachable from mu by stopping")
    h = time_potential(chain)
    return nu.integrate(h) - mu.integrate(h)


def reversed_kernel(chain: Chain, gamma: Optional[Measure] = None) -> np.ndarray:
    """Time reversal ``P*(x, y) = gamma(y) P(y, x) / gamma(x)``."""
    if gamma is None:
        gamma = invariant_distribution(chain)
    g = np.asarray(gamma.mass)
    if np.any(g <= 0):
        raise ZeroGammaState("stationary law vanishes somewhere")
    return chain.P.T * g[None, :] / g[:, None]


def ergodic_potential(chain: Chain, sigma, gamma: Optional[Measure] = None, adjoint: bool = True) -> np.ndarray:
    """``U`` with ``(Q - I) U = 1 - sigma/gamma`` and ``sum U gamma = 0``.

    ``Q`` is the time-reversed kernel by default. That is the potential for
    which ``int psi dsigma = int psi dgamma - int (P - I)psi U dgamma`` holds
    on any ergodic chain; for reversible chains ``Q = P`` and the two choices
    agree. ``adjoint=False`` solves with ``P`` itself.
    """
    require_ergodic(chain)
    n = chain.n
    if gamma is None:
        gamma = invariant_distribution(chain)
    g = np.asarray(gamma.mass)
    if np.any(g <= 0):
        raise ZeroGammaState("stationary law vanishes somewhere")
    Q = reversed_kernel(chain, gamma) if adjoint else chain.P
    s = np.asarray(as_measure(sigma, n).mass)
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = Q - np.eye(n)
    A[:n, n] = 1.0  # absorbs the (zero) compatibility multiplier
    A[n, :n] = g
    rhs = np.append(1.0 - s / g, 0.0)
    sol = lu_solve(A, rhs)
    return sol[:n]


@dataclass
class ErgodicMinTime:
    value: float
    halting_point: int
    argmax: list
    U_mu: np.ndarray
    U_nu: np.ndarray

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "halting_point": self.halting_point,
            "halting_set": self.argmax,
            "U_mu": self.U_mu.tolist(),
            "U_nu": self.U_nu.tolist(),
        }


def ergodic_min_time(chain: Chain, mu, nu, tie_tol: float = 1e-9) -> ErgodicMinTime:
    """Minimal expected embedding time on an ergodic chain, with its halting points."""
    require_ergodic(chain)
    gamma = invariant_distribution(chain)
    U_mu = ergodic_potential(chain, mu, gamma)
    U_nu = ergodic_potential(chain, nu, gamma)
    diff = U_nu - U_mu
    best = float(diff.max())
    ties = [int(x) for x in np.flatnonzero(diff >= best - tie_tol)]
    return ErgodicMinTime(best, ties[0], ties, U_mu, U_nu)
