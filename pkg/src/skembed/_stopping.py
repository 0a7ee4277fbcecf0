"""Fixed point ``V = max(obstacle, P V - running)`` on a sub-stochastic kernel.

Value iteration from ``V = obstacle`` (monotone from below), then policy
iteration on the induced stopping set to polish to solver precision.
The cemetery value is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import lu_solve
from .errors import NonConvergence, SingularSystem


@dataclass
class StoppingSolution:
    V: np.ndarray
    sweeps: int
    polish_rounds: int
    residual: float


def bellman_residual(P, obstacle, running, V) -> float:
    return float(np.abs(V - np.maximum(obstacle, P @ V - running)).max(initial=0.0))


def _evaluate(P, obstacle, running, stop):
    V = np.array(obstacle, dtype=float)
    C = np.flatnonzero(~stop)
    if C.size:
        S = np.flatnonzero(stop)
        A = np.eye(C.size) - P[np.ix_(C, C)]
        rhs = P[np.ix_(C, S)] @ obstacle[S] - running[C]
        V[C] = lu_solve(A, rhs)
    return V


def solve_stopping(P, obstacle, running, tol: float = 1e-13, max_sweeps: int = 10**6,
                   polish: bool = True, check: float = 1e-10) -> StoppingSolution:
    P = np.asarray(P, dtype=float)
    obstacle = np.asarray(obstacle, dtype=float)
    running = np.asarray(running, dtype=float)
    V = obstacle.copy()
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        V_new = np.maximum(obstacle, P @ V - running)
        change = float(np.abs(V_new - V).max(initial=0.0))
        V = V_new
        if change <= tol * (1.0 + float(np.abs(V).max(initial=0.0))):
            break
    rounds = 0
    if polish:
        scale = 1.0 + float(np.abs(V).max(initial=0.0))
        stop = obstacle >= P @ V - running - 1e-12 * scale
        for rounds in range(1, 201):
            try:
                W = _evaluate(P, obstacle, running, stop)
            except SingularSystem:
                break
            cont = P @ W - running
            new_stop = obstacle >= cont - 1e-12 * scale
            # keep the current choice on exact ties to guarantee termination
            tie = np.abs(obstacle - cont) <= 1e-12 * scale
            new_stop = np.where(tie, stop, new_stop)
            V = W
            if np.array_equal(new_stop, stop):
                break
            stop = new_stop
    res = bellman_residual(P, obstacle, running, V)
    if res > check * (1.0 + float(np.abs(V).max(initial=0.0))):
        raise NonConvergence(f"optimal stopping residual {res:.3e} after {sweeps} sweeps")
    return StoppingSolution(V, sweeps, rounds, res)
