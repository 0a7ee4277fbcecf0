"""Acceptance suite: one test (or a few parts) per criterion.

Run directly with ``python3 tests/test_acceptance.py`` or through pytest;
either way the terminal summary ends with one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import sys
import time

import numpy as np
import pytest

from instances import CYCLE3_P, G5_P, g5, random_absorbing, random_ergodic, random_instance, random_measure, \
    random_rule, target_from_rule, walk
from oracles import (
    CYCLE3_U_DELTA0,
    G5_TIME_POTENTIAL,
    balayage_ordered,
    enumerate_rules_walk,
    ergodic_min_time_by_lp,
    hitting_time,
    problem_json,
    value_iteration,
)
from skembed.chain import as_measure, validate_chain
from skembed.costs import INITIAL_STATE, TIME, build_augmented, check_twist, running_cost
from skembed.dual import choose_K, dual_value, solve_dual_iterative
from skembed.lp import (
    complementary_dual,
    dual_from_lp,
    dual_value_of,
    ergodic_filling_lp,
    extract_stopping_rule,
    primal_embedding_lp,
    StoppingRule,
)
from skembed.potential import check_balayage, ergodic_min_time, expected_embedding_time, is_supermedian
from skembed.problem import parse_problem
from skembed.sim import SimConfig, compare_empirical, sample_paths
from skembed.snell import normalize_psi, psi_max, snell_envelope
from skembed.verify import barrier_report, check_stop_go, local_time_check, pushforward, verify_optimality

SEED = 20261018


def _random_instances(count, seed=SEED, kinds=None):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        kind = None if kinds is None else kinds[len(out) % len(kinds)]
        out.append(random_instance(rng, kind))
    return out


@pytest.fixture(scope="module")
def hundred():
    return _random_instances(100)


@pytest.fixture(scope="module")
def solved(hundred):
    """LP optimum and LP-read dual for every random instance."""
    out = []
    for inst in hundred:
        occ = primal_embedding_lp(inst["aug"], inst["cost"], inst["mu"], inst["nu"])
        d = dual_from_lp(inst["aug"], inst["cost"], inst["mu"], inst["nu"], occ)
        out.append((inst, occ, d))
    return out


def _named(name):
    return parse_problem(problem_json(name))


@pytest.fixture(scope="module")
def regression():
    """Named instances plus twenty random ones whose auxiliary never kills.

    Random Time instances are left out here: their truncated horizon kills
    paths the base chain keeps alive, and the box bound does not cover that
    (see ``test_truncated_horizon_box_is_one_sided``).
    """
    cases = []
    for name in ("g5", "root", "rost"):
        pr = _named(name)
        cases.append({"name": name, "chain": pr.chain, "aug": pr.aug, "cost": pr.cost, "mu": pr.mu, "nu": pr.nu})
    for i, inst in enumerate(_random_instances(20, seed=7, kinds=["running", INITIAL_STATE, "explicit"])):
        cases.append({"name": f"random{i}", **inst})
    return cases


# ---------------------------------------------------------------- 1


@pytest.mark.acceptance(1, "zero duality gap on 100 random instances, within 60 s")
def test_zero_gap_random_instances(hundred):
    t0 = time.perf_counter()
    gaps = []
    for inst in hundred:
        aug, cost, mu, nu = inst["aug"], inst["cost"], inst["mu"], inst["nu"]
        occ = primal_embedding_lp(aug, cost, mu, nu)
        d = dual_from_lp(aug, cost, mu, nu, occ)
        # value of the dual potential from an independent fixed-point solve
        V = value_iteration(aug.P, d.psi[aug.proj_x], cost.lagrangian)
        U = float(as_measure(nu, aug.base.n).mass @ d.psi - aug.initial_law(as_measure(mu, aug.base.n)) @ V)
        gaps.append(abs(occ.objective - U))
    elapsed = time.perf_counter() - t0
    assert max(gaps) <= 1e-8, max(gaps)
    assert elapsed <= 60.0, elapsed
    sizes = [inst["aug"].N for inst in hundred]
    assert max(sizes) <= 120 and max(inst["chain"].n for inst in hundred) <= 12
    ells = np.concatenate([inst["cost"].lagrangian for inst in hundred])
    assert ells.min() >= 0.0 and ells.max() <= 2.0


# ---------------------------------------------------------------- 2


def _balayage_pairs(chain, rng, count=100):
    aug = build_augmented(chain)
    cost = running_cost(aug, np.zeros(chain.n))
    pairs = []
    for k in range(count):
        mu = random_measure(rng, chain.n)
        if k % 2 == 0:
            nu = target_from_rule(aug, cost, random_rule(rng, aug.N), mu)
        else:
            nu = random_measure(rng, chain.n)
        pairs.append((mu, nu))
    return pairs


@pytest.mark.acceptance(2, "LP feasibility matches the potential order; certificates re-verify")
def test_feasibility_matches_potential_order():
    rng = np.random.default_rng(SEED + 2)
    chains = [g5(), validate_chain(walk(7), "absorbing")] + [random_absorbing(rng, n) for n in (4, 6, 8)]
    infeasible = 0
    for chain in chains:
        for mu, nu in _balayage_pairs(chain, rng):
            expected = balayage_ordered(chain.P, mu, nu)
            bal = check_balayage(chain, mu, nu)
            assert bal.ordered == expected
            if not bal.ordered:
                infeasible += 1
                nu_m, mu_m = as_measure(nu, chain.n), as_measure(mu, chain.n)
                margin = nu_m.integrate(bal.certificate) - mu_m.integrate(bal.certificate)
                assert margin >= 1e-9
                assert is_supermedian(chain, bal.certificate, tol=1e-9)
    assert infeasible > 0


# ---------------------------------------------------------------- 3


G5_MU = np.array([0, 0, 1.0, 0, 0])
G5_NU = np.array([0.5, 0, 0, 0, 0.5])


@pytest.mark.acceptance(3, "expected embedding time is the same for every embedding")
def test_expected_time_formula_and_lp():
    chain = g5()
    h = -np.linalg.solve(np.eye(5) - G5_P, np.ones(5))
    assert np.allclose(h, G5_TIME_POTENTIAL, atol=1e-12)
    assert expected_embedding_time(chain, G5_MU, G5_NU) == pytest.approx(4.0, abs=1e-9)
    aug = build_augmented(chain)
    occ = primal_embedding_lp(aug, running_cost(aug, np.ones(5)), G5_MU, G5_NU)
    assert occ.expected_time == pytest.approx(4.0, abs=1e-9)


def coin_aux(chain, m=2):
    """Auxiliary coin re-flipped every step; it changes nothing about X."""
    n = chain.n
    Pa = np.kron(np.full((m, m), 1.0 / m), chain.P)
    return build_augmented(chain, "explicit", P_aug=Pa, proj_x=np.tile(np.arange(n), m),
                           proj_a=np.repeat(np.arange(m), n), initial_aux=np.zeros(n, dtype=int))


def distinct_vertices(aug, mu, nu, rng, want=20, attempts=400):
    """Vertices of the embedding polytope reached by random objectives."""
    cost = running_cost(aug, np.ones(aug.base.n))
    seen = []
    for _ in range(attempts):
        c = rng.normal(size=2 * aug.N)
        occ = primal_embedding_lp(aug, cost, mu, nu, objective=c)
        x = np.concatenate([occ.u, occ.s])
        if not any(np.abs(x - y).max() <= 1e-9 for y, _ in seen):
            seen.append((x, occ.expected_time))
        if len(seen) >= want:
            break
    return seen


@pytest.mark.acceptance(3, "expected embedding time is the same for every embedding")
@pytest.mark.xfail(strict=True, reason="the G5 target sits on the exit states, so exactly one embedding exists "
                                       "and the polytope has a single vertex")
def test_twenty_distinct_vertices_g5():
    aug = coin_aux(g5())
    seen = distinct_vertices(aug, G5_MU, G5_NU, np.random.default_rng(SEED + 3))
    assert all(t == pytest.approx(4.0, abs=1e-9) for _, t in seen)
    assert len(seen) >= 20, f"only {len(seen)} distinct vertex(es)"


def test_many_vertices_share_expected_time():
    """Same invariance on a walk where the polytope has many vertices."""
    chain = validate_chain(walk(9), "absorbing")
    aug = coin_aux(chain)
    mu = np.zeros(9)
    mu[4] = 1.0
    nu = np.array([0.1, 0.1, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1, 0.1])
    seen = distinct_vertices(aug, mu, nu, np.random.default_rng(SEED + 33))
    assert len(seen) >= 20
    target = expected_embedding_time(chain, mu, nu)
    for _, t in seen:
        assert t == pytest.approx(target, abs=1e-9)


# ---------------------------------------------------------------- 4


@pytest.mark.acceptance(4, "iterative dual stays in its box and reaches the LP value")
def test_iterative_dual_box_and_value(regression):
    for case in regression:
        aug, cost, mu, nu = case["aug"], case["cost"], case["mu"], case["nu"]
        occ = primal_embedding_lp(aug, cost, mu, nu)
        K = choose_K(aug, cost, as_measure(mu, aug.base.n))
        psi, diag = solve_dual_iterative(case["chain"], aug, cost, mu, nu, target=occ.objective, tol=1e-7)
        assert psi.shape == (aug.base.n,)  # the cemetery entry is pinned at 0, not a free variable
        assert np.all(psi <= 0.0) and np.all(psi >= -K), case["name"]
        U = dual_value(aug, cost, mu, nu, psi)
        assert abs(U - occ.objective) <= 1e-6, (case["name"], U, occ.objective)
        assert diag.converged


def test_truncated_horizon_box_is_one_sided():
    """On a truncated horizon the box optimum may fall short, never overshoot.

    Clipping the LP potential at 0 costs at most ``nu . psi+``; that bounds
    the shortfall.
    """
    for inst in _random_instances(12, seed=11, kinds=[TIME]):
        aug, cost, mu, nu = inst["aug"], inst["cost"], inst["mu"], inst["nu"]
        occ = primal_embedding_lp(aug, cost, mu, nu)
        d = dual_from_lp(aug, cost, mu, nu, occ)
        psi, diag = solve_dual_iterative(inst["chain"], aug, cost, mu, nu, tol=1e-7)
        assert diag.converged
        U = dual_value(aug, cost, mu, nu, psi)
        slack = float(np.asarray(as_measure(nu, aug.base.n).mass) @ np.maximum(d.psi, 0.0))
        assert U <= occ.objective + 1e-9
        assert U >= occ.objective - slack - 1e-7


# ---------------------------------------------------------------- 5


def _normalization_cases(count=50):
    rng = np.random.default_rng(SEED + 5)
    kinds = ["running", INITIAL_STATE, "explicit"]
    out = []
    for i in range(count):
        inst = random_instance(rng, kinds[i % 3])
        psi = rng.uniform(-3.0, 3.0, inst["chain"].n)
        out.append((inst, psi))
    return out


@pytest.mark.acceptance(5, "subtracting the reduite shifts the value function exactly")
def test_normalization_identity():
    worst = 0.0
    for inst, psi in _normalization_cases():
        chain, aug, cost, mu = inst["chain"], inst["aug"], inst["cost"], inst["mu"]
        bar, env = normalize_psi(chain, aug, cost, psi, mu)
        V = snell_envelope(aug, cost, psi).V
        Vbar = snell_envelope(aug, cost, bar).V
        worst = max(worst, float(np.abs(Vbar - (V - env[aug.proj_x])).max()))
    assert worst <= 1e-10, worst


# ---------------------------------------------------------------- 6


@pytest.mark.acceptance(6, "the maximal potential keeps the value function and never lowers U")
def test_psi_max_preserves_value(solved):
    rng = np.random.default_rng(SEED + 6)
    checked = 0
    for inst, occ, d in solved[:60]:
        aug, cost, mu, nu = inst["aug"], inst["cost"], inst["mu"], inst["nu"]
        mu_m = as_measure(mu, aug.base.n)
        reach = aug.reachable(mu_m)
        for psi in (d.psi, d.psi + rng.uniform(-1.0, 0.0, aug.base.n)):
            V = snell_envelope(aug, cost, psi).V
            pm = psi_max(aug, cost, psi, V, mu_m)
            V2 = snell_envelope(aug, cost, pm).V
            assert np.abs(V2[reach] - V[reach]).max() <= 1e-10
            assert dual_value_of(aug, mu, nu, pm, V2) >= dual_value_of(aug, mu, nu, psi, V) - 1e-10
            checked += 1
    assert checked == 120


# ---------------------------------------------------------------- 7


@pytest.mark.acceptance(7, "optimality certificates hold at optima and fail for perturbed potentials")
def test_certificates_and_negative_controls(solved):
    rng = np.random.default_rng(SEED + 7)
    caught = 0
    for inst, occ, d in solved:
        aug, cost, mu, nu = inst["aug"], inst["cost"], inst["mu"], inst["nu"]
        rep = verify_optimality(aug, cost, mu, nu, d.psi, d.V, occ)
        assert rep["stopped_on_contact"]["passed"]
        assert rep["martingale_on_continuation"]["sum_u_alpha"] <= 1e-8
        assert rep["passed"]
        bad = d.psi + 1e-2 * rng.standard_normal(aug.base.n)
        Vb = snell_envelope(aug, cost, bad).V
        bad_rep = verify_optimality(aug, cost, mu, nu, bad, Vb, occ)
        assert not bad_rep["duality_gap"]["passed"]
        assert bad_rep["duality_gap"]["gap"] > 1e-8
        caught += 1
    assert caught == 100


# ---------------------------------------------------------------- 8


@pytest.mark.acceptance(8, "ergodic minimal time agrees between potentials and the filling LP")
def test_three_cycle_value():
    chain = validate_chain(CYCLE3_P, "ergodic")
    mt = ergodic_min_time(chain, [1, 0, 0], [0, 1, 0])
    assert np.allclose(mt.U_mu, CYCLE3_U_DELTA0, atol=1e-12)
    assert mt.value == pytest.approx(2.0, abs=1e-9)
    assert hitting_time(CYCLE3_P, 1)[0] == pytest.approx(2.0, abs=1e-12)
    occ = ergodic_filling_lp(chain, [1, 0, 0], [0, 1, 0])
    assert occ.objective == pytest.approx(2.0, abs=1e-9)
    assert mt.halting_point == 1
    assert local_time_check(chain, occ, 1)["optimal"]
    assert occ.u[1] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.acceptance(8, "ergodic minimal time agrees between potentials and the filling LP")
def test_random_ergodic_chains_agree():
    rng = np.random.default_rng(SEED + 8)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        chain = random_ergodic(rng, n)
        mu, nu = random_measure(rng, n), random_measure(rng, n)
        mt = ergodic_min_time(chain, mu, nu)
        occ = ergodic_filling_lp(chain, mu, nu)
        assert abs(mt.value - occ.objective) <= 1e-8
        assert abs(mt.value - ergodic_min_time_by_lp(chain.P, mu, nu)) <= 1e-8
        assert all(local_time_check(chain, occ, x)["optimal"] for x in mt.argmax)


# ---------------------------------------------------------------- 9


def _barrier(name):
    pr = _named(name)
    aug, cost, mu, nu = pr.aug, pr.cost, pr.mu, pr.nu
    occ = primal_embedding_lp(aug, cost, mu, nu)
    twist = check_twist(aug, cost, mu)
    cd = complementary_dual(aug, cost, mu, nu, occ)
    return pr, occ, twist, barrier_report(aug, cost, mu, nu, cd.psi, cd.V, occ, twist)


@pytest.mark.acceptance(9, "twisted costs give barrier-shaped optimal rules")
def test_root_barrier():
    pr, occ, twist, rep = _barrier("root")
    assert twist.holds == "yes" and twist.direction == (0, 1)
    live = pr.aug.reachable(pr.mu) & (pr.aug.P.sum(axis=1) > 0)
    assert np.allclose(twist.drift[live, 0], 2.0)
    assert rep["bang_bang"] and rep["monotone"]
    assert rep["hitting_rule"]["law_error"] <= 1e-10
    best, _, hits = enumerate_rules_walk(G5_P, 2, [0, 0.5, 0, 0.5, 0], 6, lambda t: float(t * t))
    assert hits > 0
    assert occ.objective == pytest.approx(best, abs=1e-9)
    assert occ.objective == pytest.approx(1.0, abs=1e-9)
    assert rep["passed"]


@pytest.mark.acceptance(9, "twisted costs give barrier-shaped optimal rules")
def test_rost_reverse_barrier():
    pr, occ, twist, rep = _barrier("rost")
    assert twist.holds == "yes" and twist.direction == (0, -1)
    assert rep["direction"]["shape"] == "reverse barrier"
    assert rep["bang_bang"] and rep["monotone"]
    assert rep["hitting_rule"]["law_error"] <= 1e-10
    assert rep["passed"]


# ---------------------------------------------------------------- 10


@pytest.mark.acceptance(10, "no stop-go pairs at optima; a swapped rule is caught")
def test_stop_go_clean_at_optima(solved):
    for inst, occ, d in solved:
        rep = check_stop_go(inst["aug"], inst["cost"], occ, psi=d.psi)
        assert rep["passed"], rep["violations"][:2]
    for name in ("g5", "root", "rost"):
        pr = _named(name)
        occ = primal_embedding_lp(pr.aug, pr.cost, pr.mu, pr.nu)
        d = dual_from_lp(pr.aug, pr.cost, pr.mu, pr.nu, occ)
        assert check_stop_go(pr.aug, pr.cost, occ, psi=d.psi)["passed"]


@pytest.mark.acceptance(10, "no stop-go pairs at optima; a swapped rule is caught")
def test_stop_go_detects_swapped_rule():
    pr = _named("root")
    aug, cost, mu, nu = pr.aug, pr.cost, pr.mu, pr.nu
    occ = primal_embedding_lp(aug, cost, mu, nu)
    d = dual_from_lp(aug, cost, mu, nu, occ)
    # reverse-barrier shape under a barrier cost: stop early at 1 only while t <= 3
    t = aug.aux_coords[aug.proj_a, 0]
    x = aug.proj_x
    rule = StoppingRule(((x == 0) | (x == 4) | ((x == 1) & (t <= 3))).astype(float))
    swapped = pushforward(aug, cost, rule, mu).occupation()
    rep = check_stop_go(aug, cost, swapped, rule, psi=d.psi)
    assert not rep["passed"]
    assert any(v["go"]["x"] == 1 and v["stop"]["x"] == 1 for v in rep["violations"])


# ---------------------------------------------------------------- 11


@pytest.mark.acceptance(11, "Monte Carlo agrees with the exact law and cost; reruns are identical")
def test_monte_carlo_concordance():
    pr = _named("g5")
    aug, cost, mu, nu = pr.aug, pr.cost, pr.mu, pr.nu
    occ = primal_embedding_lp(aug, cost, mu, nu)
    rule = extract_stopping_rule(occ)
    cfg = SimConfig(100_000, 42, rule)
    a = sample_paths(aug, cost, mu, cfg)
    b = sample_paths(aug, cost, mu, cfg)
    exact = np.append(nu.mass, nu.cemetery)
    cmp_ = compare_empirical(a, exact, exact_cost=occ.objective)
    assert cmp_["tv"] <= 0.01
    assert abs(cmp_["z_cost"]) <= 4.0
    assert np.array_equal(a.counts, b.counts)
    assert a.mean_cost == b.mean_cost and a.mean_T == b.mean_T


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
