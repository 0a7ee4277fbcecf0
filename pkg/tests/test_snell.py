import numpy as np
import pytest

from instances import g5
from oracles import G5_TIME_POTENTIAL
from skembed.costs import build_augmented, cost_from_lambda, running_cost
from skembed.errors import NegativeIncrement, SubmartingaleViolated
from skembed.snell import doob_meyer, fixed_point_residual, normalize_psi, psi_max, snell_envelope


def _setup():
    aug = build_augmented(g5())
    return aug, running_cost(aug, np.ones(5))


def test_zero_obstacle_gives_zero_value():
    aug, cost = _setup()
    assert snell_envelope(aug, cost, np.zeros(5)).V == pytest.approx(np.zeros(5))


def test_time_potential_is_its_own_envelope():
    aug, cost = _setup()
    vf = snell_envelope(aug, cost, G5_TIME_POTENTIAL)
    assert vf.V == pytest.approx(G5_TIME_POTENTIAL)
    assert doob_meyer(aug, cost, vf) == pytest.approx(np.zeros(5), abs=1e-12)
    assert fixed_point_residual(aug, cost, G5_TIME_POTENTIAL, vf.V) <= 1e-12


def test_value_above_obstacle():
    aug, cost = _setup()
    psi = np.array([0.0, -3.0, -1.0, -3.0, 0.0])
    V = snell_envelope(aug, cost, psi).V
    # from 1 it pays one step to reach 0 or the centre: max(-3, -1 + (0 - 1) / 2) ... by hand
    assert V == pytest.approx([0.0, -1.5, -1.0, -1.5, 0.0])


def test_non_fixed_point_is_rejected():
    aug, cost = _setup()
    with pytest.raises(NegativeIncrement):
        doob_meyer(aug, cost, np.full(5, -10.0))


def test_normalization_of_centre_indicator():
    aug, cost = _setup()
    bar, env = normalize_psi(g5(), aug, cost, [0, 0, 1, 0, 0])
    assert bar == pytest.approx([0, -0.5, 0, -0.5, 0])
    assert env == pytest.approx([0, 0.5, 1, 0.5, 0])


def test_normalization_needs_submartingale():
    aug = build_augmented(g5())
    cost = cost_from_lambda(aug, -np.ones(5), [0.0])
    with pytest.raises(SubmartingaleViolated):
        normalize_psi(g5(), aug, cost, np.zeros(5))


def test_psi_max_lifts_to_value():
    aug, cost = _setup()
    psi = np.array([0.0, -3.0, -1.0, -3.0, 0.0])
    V = snell_envelope(aug, cost, psi).V
    top = psi_max(aug, cost, psi, V)
    assert top == pytest.approx(V)
    assert snell_envelope(aug, cost, top).V == pytest.approx(V)
    # from an end nothing else is reachable: the rest is clamped to the box top
    assert psi_max(aug, cost, psi, V, mu=[1, 0, 0, 0, 0]) == pytest.approx(np.zeros(5))
