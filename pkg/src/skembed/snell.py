"""Snell envelopes on the augmented chain.

We store the shifted value ``V(a, x) = H(a, x) + Lambda(a, x)``, where
``H`` is the value of maximizing ``psi(X_sigma) - S_sigma``. It solves the
stationary obstacle problem

    V = max(psi o proj_x, P_aug V - ell),    V(cemetery) = psi(cemetery) = 0,

so the contact set is simply ``{V = psi}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._stopping import bellman_residual, solve_stopping
from .chain import Chain
from .costs import AugmentedChain, CostModel, check_submartingale
from .errors import NegativeIncrement, SubmartingaleViolated
from .potential import reduite


@dataclass
class ValueFunction:
    V: np.ndarray
    sweeps: int = 0
    polish_rounds: int = 0
    residual: float = 0.0

    def H(self, cost: CostModel) -> np.ndarray:
        """Unshifted value ``V - Lambda`` (needs a Lambda-type cost)."""
        if cost.lam is None:
            raise ValueError("running costs have no Lambda table; V is already the value up to -S_t")
        return self.V - cost.lam


def snell_envelope(aug: AugmentedChain, cost: CostModel, psi, **kw) -> ValueFunction:
    psi = np.asarray(psi, dtype=float)
    sol = solve_stopping(aug.P, psi[aug.proj_x], cost.lagrangian, **kw)
    return ValueFunction(sol.V, sol.sweeps, sol.polish_rounds, sol.residual)


def fixed_point_residual(aug: AugmentedChain, cost: CostModel, psi, V) -> float:
    psi = np.asarray(psi, dtype=float)
    return bellman_residual(aug.P, psi[aug.proj_x], cost.lagrangian, np.asarray(V))


def doob_meyer(aug: AugmentedChain, cost: CostModel, V, tol: float = 1e-10) -> np.ndarray:
    """Per-step increment ``alpha = V - (P_aug V - ell)`` of the increasing part.

    The martingale part moves by ``G_{t+1} - G_t + alpha(A_t, X_t)``.
    """
    V = np.asarray(V.V if isinstance(V, ValueFunction) else V, dtype=float)
    alpha = V - (aug.P @ V - cost.lagrangian)
    if alpha.min(initial=0.0) < -tol * (1.0 + np.abs(V).max(initial=0.0)):
        raise NegativeIncrement(f"alpha reaches {alpha.min():.3e}; V is not a fixed point")
    return alpha


def normalize_psi(chain: Chain, aug: AugmentedChain, cost: CostModel, psi, mu=None, check: bool = True):
    """Return ``(psi - psi_re, psi_re)``; the first is <= 0 and pins the same contact structure."""
    if check and not check_submartingale(aug, cost, mu)["passed"]:
        raise SubmartingaleViolated("normalization needs a submartingale cost")
    psi = np.asarray(psi, dtype=float)
    env = reduite(chain, psi)
    bar = psi - env
    bar = np.minimum(bar, 0.0)  # rounding: psi_re >= psi exactly in theory
    return bar, env


def psi_max(aug: AugmentedChain, cost: CostModel, psi, V, mu=None, clamp: bool = True) -> np.ndarray:
    """Largest potential with the same value process: ``min`` of ``V`` over reachable ``(a, y)``.

    Base states not reachable from supp(mu) get 0 (the upper end of the box).
    """
    V = np.asarray(V.V if isinstance(V, ValueFunction) else V, dtype=float)
    n = aug.base.n
    reach = aug.reachable(mu)
    out = np.full(n, np.inf)
    np.minimum.at(out, aug.proj_x[reach], V[reach])
    out[~np.isfinite(out)] = 0.0 if clamp else np.inf
    return out
