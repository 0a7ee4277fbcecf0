import numpy as np
import pytest

from skembed.simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lp


def test_single_lower_bound():
    res = solve_lp([1.0], A_ub=[[-1.0]], b_ub=[-3.0])
    assert res.status == OPTIMAL
    assert res.x == pytest.approx([3.0])
    assert res.objective == pytest.approx(3.0)


def test_cycling_example_terminates():
    # Beale's degenerate instance: Dantzig pricing with a naive ratio test cycles
    c = [-0.75, 150.0, -0.02, 6.0]
    A = [[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]]
    res = solve_lp(c, A_ub=A, b_ub=[0.0, 0.0, 1.0])
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-0.05)
    assert res.x == pytest.approx([0.04, 0.0, 1.0, 0.0], abs=1e-12)


def test_infeasible_returns_farkas_ray():
    A = np.array([[1.0, 1.0]])
    b = np.array([-1.0])
    res = solve_lp([1.0, 1.0], A_eq=A, b_eq=b)
    assert res.status == INFEASIBLE
    y = res.farkas_eq
    assert np.all(y @ A <= 1e-12)
    assert y @ b > 0


def test_unbounded():
    res = solve_lp([-1.0, 0.0], A_eq=[[1.0, -1.0]], b_eq=[0.0])
    assert res.status == UNBOUNDED


def test_duals_match_objective():
    c = np.array([2.0, 3.0, 1.0])
    A = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 0.0]])
    b = np.array([4.0, 1.0])
    res = solve_lp(c, A_eq=A, b_eq=b)
    assert res.status == OPTIMAL
    assert res.duals_eq @ b == pytest.approx(res.objective)
    assert np.all(c - A.T @ res.duals_eq >= -1e-12)


def test_maximize():
    res = solve_lp([1.0, 1.0], A_ub=[[1.0, 2.0], [3.0, 1.0]], b_ub=[4.0, 6.0], sense="max")
    assert res.objective == pytest.approx(2.8)
