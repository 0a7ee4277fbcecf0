"""Seeded Monte Carlo runs of memoryless stopping rules.

Every path owns a Philox stream keyed by ``(seed, path index)`` and draws two
uniforms per step (stop?, move where?), so a path's trajectory does not
depend on chunking or on how many other paths are simulated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chain import as_measure
from .costs import AugmentedChain, CostModel
from .errors import ExcessTruncation
from .lp import StoppingRule

TRUNCATION_LIMIT = 1e-3
BLOCK = 32  # steps drawn per refill of a path's uniforms
CHUNK = 4096


@dataclass
class SimConfig:
    n_paths: int
    seed: int
    rule: StoppingRule
    max_steps: Optional[int] = None  # default: 50 x largest expected lifetime

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class SimStats:
    n_paths: int
    seed: int
    counts: np.ndarray  # per base state, then the cemetery
    truncated: int
    mean_T: float
    se_T: float
    mean_cost: float
    se_cost: float
    max_steps: int
    tail_bound: float
    martingale_mean: Optional[float] = None
    martingale_se: Optional[float] = None
    stopped_aug: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def law(self) -> np.ndarray:
        done = self.n_paths - self.truncated
        return self.counts / max(done, 1)

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "seed": self.seed,
            "law": self.law.tolist(),
            "counts": self.counts.astype(int).tolist(),
            "truncated": self.truncated,
            "max_steps": self.max_steps,
            "truncation_tail_bound": self.tail_bound,
            "mean_T": self.mean_T,
            "se_T": self.se_T,
            "mean_cost": self.mean_cost,
            "se_cost": self.se_cost,
            "martingale_mean": self.martingale_mean,
            "martingale_se": self.martingale_se,
        }


def _default_max_steps(aug: AugmentedChain) -> int:
    e = np.linalg.solve(np.eye(aug.N) - aug.P, np.ones(aug.N))
    return max(1, int(math.ceil(50 * e.max())))


def _tail_bound(aug: AugmentedChain, steps: int) -> float:
    """Survival probability after ``steps`` moves without stopping (worst start)."""
    v = np.ones(aug.N)
    M = aug.P.copy()
    k = steps
    while k:
        if k & 1:
            v = M @ v
        k >>= 1
        if k:
            M = M @ M
    return float(v.max())


def _mean_se(x: np.ndarray):
    n = x.size
    m = float(np.sum(x) / n)
    if n < 2:
        return m, 0.0
    var = float(np.sum((x - m) ** 2) / (n - 1))
    return m, math.sqrt(var / n)


def sample_paths(aug: AugmentedChain, cost: CostModel, mu, config: SimConfig, V=None) -> SimStats:
    """Simulate ``config.n_paths`` paths of the rule from ``mu``.

    The per-path cost is ``Lambda(A_T, X_T) - Lambda(A_0, X_0)`` for
    Lambda-type costs (cemetery value when killed) and the accumulated rate
    for running costs. With ``V`` given, the martingale part of the value
    process is accumulated from ``V(Z_{k+1}) - V(Z_k) + alpha(Z_k) - ell(Z_k)``.
    """
    n, N = aug.base.n, aug.N
    mu = as_measure(mu, n)
    max_steps = config.max_steps or _default_max_steps(aug)
    p = np.clip(np.asarray(config.rule.p, dtype=float), 0.0, 1.0)
    cum = np.cumsum(aug.P, axis=1)
    ell = np.asarray(cost.lagrangian, dtype=float)
    lam = None if cost.lam is None else np.asarray(cost.lam, dtype=float)
    lam_cem = None if cost.lam_cemetery is None else np.asarray(cost.lam_cemetery, dtype=float)
    alpha = None
    if V is not None:
        V = np.asarray(getattr(V, "V", V), dtype=float)
        alpha = V - (aug.P @ V - ell)

    init_p = aug.initial_law(mu)
    init_cum = np.cumsum(init_p)
    cem0 = mu.cemetery

    T_all = np.zeros(config.n_paths)
    cost_all = np.zeros(config.n_paths)
    mart_all = np.zeros(config.n_paths)
    final = np.full(config.n_paths, -1)  # aug index, -1 cemetery, -2 truncated
    for lo in range(0, config.n_paths, CHUNK):
        hi = min(config.n_paths, lo + CHUNK)
        m = hi - lo
        gens = [np.random.Generator(np.random.Philox(key=(int(config.seed) & (2**64 - 1)) | ((lo + i) << 64)))
                for i in range(m)]
        # the first uniform of each stream picks the start state
        first = np.array([g.random() for g in gens])
        born_dead = first >= 1.0 - cem0
        start = np.minimum(np.searchsorted(init_cum, first * (1.0 - cem0) if cem0 else first, side="right"), N - 1)
        start = np.where(born_dead, 0, start)
        state = start.copy()
        active = ~born_dead
        fin = np.where(born_dead, -1, -2)
        T = np.zeros(m)
        acc = np.zeros(m)
        mart = np.zeros(m)
        buf = np.empty((m, BLOCK, 2))
        for k in range(max_steps + 1):
            j = k % BLOCK
            if j == 0:
                idx = np.flatnonzero(active)
                for i in idx:
                    buf[i] = gens[i].random((BLOCK, 2))
            if not active.any():
                break
            idx = np.flatnonzero(active)
            st = state[idx]
            stop = buf[idx, j, 0] < p[st]
            s_idx = idx[stop]
            fin[s_idx] = state[s_idx]
            active[s_idx] = False
            if k == max_steps:
                break  # survivors are truncated
            g_idx = idx[~stop]
            if g_idx.size == 0:
                continue
            cur = state[g_idx]
            u2 = buf[g_idx, j, 1]
            nxt = (cum[cur] <= u2[:, None]).sum(axis=1)
            dead = nxt >= N
            T[g_idx] += 1
            acc[g_idx] += ell[cur]
            if alpha is not None:
                vn = np.where(dead, 0.0, V[np.minimum(nxt, N - 1)])
                mart[g_idx] += vn - V[cur] + alpha[cur] - ell[cur]
            d_idx = g_idx[dead]
            fin[d_idx] = -1
            active[d_idx] = False
            state[g_idx[~dead]] = nxt[~dead]
            # record the last live state of killed paths for the frozen cemetery value
            state[d_idx] = cur[dead]
        if lam is not None:
            c = np.zeros(m)
            ok = ~born_dead
            s0 = start[ok]
            stopped = fin >= 0
            c[stopped] = lam[fin[stopped]]
            killed = (fin == -1) & ok
            c[killed] = lam_cem[aug.proj_a[state[killed]]]
            c[ok] -= lam[s0]
            trunc = fin == -2
            c[trunc] = acc[trunc]
            acc = c
        T_all[lo:hi] = T
        cost_all[lo:hi] = acc
        mart_all[lo:hi] = mart
        final[lo:hi] = fin

    truncated = int(np.sum(final == -2))
    if truncated > TRUNCATION_LIMIT * config.n_paths:
        raise ExcessTruncation(f"{truncated} of {config.n_paths} paths reached max_steps={max_steps}")
    done = final != -2
    counts = np.zeros(n + 1)
    stopped = final >= 0
    np.add.at(counts, aug.proj_x[final[stopped]], 1.0)
    counts[n] = float(np.sum(final == -1))
    stopped_aug = np.bincount(final[stopped], minlength=N).astype(float)
    mT, sT = _mean_se(T_all[done])
    mc, sc = _mean_se(cost_all[done])
    mm = sm = None
    if alpha is not None:
        mm, sm = _mean_se(mart_all[done])
    return SimStats(config.n_paths, int(config.seed), counts, truncated, mT, sT, mc, sc, max_steps,
                    _tail_bound(aug, max_steps), mm, sm, stopped_aug)


def compare_empirical(stats: SimStats, exact_law, exact_cost: Optional[float] = None,
                      exact_T: Optional[float] = None, z_max: float = 4.0, tv_floor: float = 0.01) -> dict:
    """TV distance and z-scores of a simulation against exact values.

    ``exact_law`` covers the base states followed by the cemetery.
    """
    q = np.asarray(exact_law, dtype=float).ravel()
    emp = stats.law
    if q.size == emp.size - 1:
        q = np.append(q, max(0.0, 1.0 - q.sum()))
    n_done = stats.n_paths - stats.truncated
    tv = 0.5 * float(np.abs(emp - q).sum())
    z = np.zeros_like(q)
    for i, (e, pq) in enumerate(zip(emp, q)):
        sd = math.sqrt(pq * (1.0 - pq) / max(n_done, 1))
        if sd > 0:
            z[i] = (e - pq) / sd
        else:
            z[i] = 0.0 if abs(e - pq) <= 1e-12 else math.inf
    tv_tol = max(tv_floor, 4.0 * math.sqrt(q.size / max(n_done, 1)))
    out = {
        "tv": tv,
        "tv_tolerance": tv_tol,
        "z_scores": z.tolist(),
        "max_abs_z": float(np.abs(z).max(initial=0.0)),
        "z_max": z_max,
        "low_power": bool(tv_tol > tv_floor),
    }
    ok = tv <= tv_tol and out["max_abs_z"] <= z_max
    for name, exact, mean, se in (("cost", exact_cost, stats.mean_cost, stats.se_cost),
                                  ("T", exact_T, stats.mean_T, stats.se_T)):
        if exact is None:
            continue
        zz = (mean - exact) / se if se > 0 else (0.0 if abs(mean - exact) <= 1e-12 else math.inf)
        out[f"z_{name}"] = float(zz)
        ok = ok and abs(zz) <= z_max
    out["passed"] = bool(ok)
    return out


def write_frequencies_csv(path, stats: SimStats, exact_law, labels=None, z=None) -> None:
    """Per-state empirical frequencies next to the exact law."""
    q = np.asarray(exact_law, dtype=float).ravel()
    n = stats.counts.size - 1
    if q.size == n:
        q = np.append(q, max(0.0, 1.0 - q.sum()))
    names = list(labels) if labels else [str(i) for i in range(n)]
    names = names + ["cemetery"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "label", "count", "empirical", "exact", "z"])
        for i in range(n + 1):
            w.writerow([i if i < n else "cemetery", names[i], int(stats.counts[i]), f"{stats.law[i]:.10g}",
                        f"{q[i]:.10g}", "" if z is None else f"{z[i]:.6g}"])
