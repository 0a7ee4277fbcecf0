"""Problem files: JSON in, validated chain/measures/cost out.

A problem looks like::

    {"schema": 1, "mode": "absorbing", "states": ["a", "b", ...],
     "P": [[...], ...], "mu": [...], "nu": {"mass": [...], "cemetery": 0.0},
     "cost": {"kind": "running", "rate": [...]},
     "options": {"tol": 1e-8, "seed": 42, "method": "lp"}}

Cost kinds: ``running`` (``rate``), ``time`` (``profile`` listing
``Lambda(t)`` for ``t = 0..T_max``, or ``polynomial`` coefficients with
``T_max`` optional), ``initial-state`` (``c``, ``c_cemetery``, optional
``support``) and ``explicit-aug`` (``P_aug``, ``proj_x``, ``proj_a``,
``initial_aux``, ``lambda``, ``lambda_cemetery``). Gradient tables and a
declared ``D`` are optional everywhere.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .chain import ABSORBING, ERGODIC, Chain, Measure, as_measure, validate_chain
from .costs import (
    EXPLICIT,
    INITIAL_STATE,
    TIME,
    TRIVIAL,
    AugmentedChain,
    CostModel,
    build_augmented,
    cost_from_lambda,
    initial_state_cost,
    running_cost,
    time_cost,
)
from .errors import InputError, SchemaError

SCHEMA_VERSION = 1
METHODS = ("lp", "iterative", "both")

DEFAULT_OPTIONS = {
    "tol": 1e-8,
    "seed": 42,
    "T_max": None,
    "beta_schedule": [1e-2, 1e-3, 1e-4],
    "method": "lp",
    "n_paths": 100_000,
    "ctol": None,
}


@dataclass
class Problem:
    chain: Chain
    mu: Measure
    nu: Measure
    aug: Optional[AugmentedChain]
    cost: Optional[CostModel]
    cost_kind: Optional[str]
    options: dict
    raw: dict = field(repr=False, default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def labels(self):
        return list(self.chain.labels) if self.chain.labels else [str(i) for i in range(self.chain.n)]


def _array(obj, name, shape=None, dtype=float):
    try:
        a = np.asarray(obj, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"not a numeric array ({exc})", field=name) from None
    if shape is not None and a.shape != tuple(shape):
        raise SchemaError(f"expected shape {tuple(shape)}, got {a.shape}", field=name)
    if dtype is float and not np.all(np.isfinite(a)):
        raise SchemaError("contains non-finite values", field=name)
    return a


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise SchemaError("missing", field=f"{where}{key}")
    return d[key]


def _measure(obj, name, n) -> Measure:
    if isinstance(obj, dict):
        mass = _array(_need(obj, "mass", f"{name}."), f"{name}.mass", (n,))
        cem = float(obj.get("cemetery", max(0.0, 1.0 - mass.sum())))
        vec = np.append(mass, cem)
    else:
        vec = _array(obj, name)
        if vec.ndim != 1 or vec.size not in (n, n + 1):
            raise SchemaError(f"expected {n} or {n + 1} entries, got shape {vec.shape}", field=name)
    try:
        return as_measure(vec, n)
    except InputError as exc:
        raise SchemaError(str(exc), field=name) from None


def _build_cost(chain: Chain, entry: dict, options: dict, mu: Measure):
    if not isinstance(entry, dict):
        raise SchemaError("must be an object", field="cost")
    kind = str(_need(entry, "kind", "cost.")).lower()
    n = chain.n
    D = entry.get("D")
    D = None if D is None else float(D)
    if kind == "running":
        aug = build_augmented(chain, TRIVIAL)
        rate = _array(_need(entry, "rate", "cost."), "cost.rate")
        if rate.shape not in ((n,), (aug.N,)):
            raise SchemaError(f"expected {n} entries", field="cost.rate")
        return aug, running_cost(aug, rate, D), kind
    if kind == "time":
        T_max = entry.get("T_max", options.get("T_max"))
        if "profile" in entry:
            prof = _array(entry["profile"], "cost.profile")
            if prof.ndim != 1 or prof.size < 2:
                raise SchemaError("needs at least two values", field="cost.profile")
            if T_max is not None and int(T_max) != prof.size - 1:
                raise SchemaError(f"has {prof.size} values but T_max = {T_max}", field="cost.profile")
            T_max = prof.size - 1
            aug = build_augmented(chain, TIME, T_max=T_max)
            grad = entry.get("grad")
            grad = None if grad is None else _array(grad, "cost.grad", (T_max + 1,))
        elif "polynomial" in entry:
            coef = _array(entry["polynomial"], "cost.polynomial")
            aug = build_augmented(chain, TIME, T_max=None if T_max is None else int(T_max))
            t = np.arange(aug.T_max + 1, dtype=float)
            poly = np.polynomial.Polynomial(coef)
            prof = poly(t)
            grad = poly.deriv()(t)
        else:
            raise SchemaError("time cost needs 'profile' or 'polynomial'", field="cost")
        return aug, time_cost(aug, prof, grad, D), kind
    if kind == INITIAL_STATE:
        support = entry.get("support")
        if support is None:
            support = [int(x) for x in np.flatnonzero(np.asarray(mu.mass) > 0)]
        aug = build_augmented(chain, INITIAL_STATE, support=support, coords=entry.get("coords"))
        c = _array(_need(entry, "c", "cost."), "cost.c", (n, n))
        cc = _array(_need(entry, "c_cemetery", "cost."), "cost.c_cemetery", (n,))
        return aug, initial_state_cost(aug, c, cc, entry.get("grad"), entry.get("grad_cemetery"), D), kind
    if kind in ("explicit-aug", EXPLICIT):
        Pa = _array(_need(entry, "P_aug", "cost."), "cost.P_aug")
        px = _array(_need(entry, "proj_x", "cost."), "cost.proj_x", dtype=int)
        pa = _array(_need(entry, "proj_a", "cost."), "cost.proj_a", dtype=int)
        ia = _array(_need(entry, "initial_aux", "cost."), "cost.initial_aux", (n,), dtype=int)
        aug = build_augmented(chain, EXPLICIT, P_aug=Pa, proj_x=px, proj_a=pa, initial_aux=ia,
                              aux_coords=entry.get("aux_coords"))
        if "rate" in entry:
            return aug, running_cost(aug, _array(entry["rate"], "cost.rate"), D), "explicit-aug"
        lam = _array(_need(entry, "lambda", "cost."), "cost.lambda", (aug.N,))
        lc = _array(_need(entry, "lambda_cemetery", "cost."), "cost.lambda_cemetery", (aug.n_aux,))
        return aug, cost_from_lambda(aug, lam, lc, entry.get("grad"), entry.get("grad_cemetery"), D), "explicit-aug"
    raise SchemaError(f"unknown cost kind {kind!r}", field="cost.kind")


def parse_problem(raw: Any) -> Problem:
    if not isinstance(raw, dict):
        raise SchemaError("problem must be a JSON object")
    schema = raw.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {schema!r}", field="schema")
    mode = str(_need(raw, "mode", "")).lower()
    if mode not in (ABSORBING, ERGODIC):
        raise SchemaError("must be 'absorbing' or 'ergodic'", field="mode")
    P = _array(_need(raw, "P", ""), "P")
    if P.ndim != 2:
        raise SchemaError("kernel must be a square matrix", field="P")
    labels = raw.get("states")
    if labels is not None and len(labels) != P.shape[0]:
        raise SchemaError(f"{len(labels)} labels for {P.shape[0]} states", field="states")
    chain = validate_chain(P, mode, [str(s) for s in labels] if labels else None)
    n = chain.n
    options = dict(DEFAULT_OPTIONS)
    opts = raw.get("options", {}) or {}
    if not isinstance(opts, dict):
        raise SchemaError("must be an object", field="options")
    unknown = set(opts) - set(DEFAULT_OPTIONS)
    if unknown:
        raise SchemaError(f"unknown option(s) {sorted(unknown)}", field="options")
    options.update(opts)
    if options["method"] not in METHODS:
        raise SchemaError(f"must be one of {METHODS}", field="options.method")
    mu = _measure(_need(raw, "mu", ""), "mu", n)
    nu = _measure(_need(raw, "nu", ""), "nu", n)
    aug = cost = kind = None
    caught = []
    if "cost" in raw and raw["cost"] is not None:
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            aug, cost, kind = _build_cost(chain, raw["cost"], options, mu)
        caught = [str(x.message) for x in w]
    elif mode == ABSORBING:
        aug = build_augmented(chain, TRIVIAL)
        cost, kind = running_cost(aug, np.ones(n)), "running"
    return Problem(chain, mu, nu, aug, cost, kind, options, raw, caught)


def load_problem(path) -> Problem:
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.msg, line=exc.lineno) from None
    return parse_problem(raw)
