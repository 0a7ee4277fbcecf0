import numpy as np
import pytest

from instances import CYCLE3_P, g5
from oracles import CYCLE3_U_DELTA0, G5_TIME_POTENTIAL
from skembed.chain import validate_chain
from skembed.errors import NotOrdered
from skembed.lp import ergodic_filling_lp
from skembed.potential import (
    ErgodicReduite,
    check_balayage,
    ergodic_min_time,
    ergodic_potential,
    expected_embedding_time,
    is_supermedian,
    reduite,
    reversed_kernel,
    time_potential,
)

SPLIT = [0.5, 0, 0, 0, 0.5]
CENTRE = [0, 0, 1, 0, 0]


def test_reduite_of_centre_indicator():
    assert reduite(g5(), [0, 0, 1, 0, 0]) == pytest.approx([0, 0.5, 1, 0.5, 0])


def test_reduite_of_ergodic_chain_is_constant():
    with pytest.warns(ErgodicReduite):
        r = reduite(validate_chain(CYCLE3_P, "ergodic"), [1.0, -2.0, 0.5])
    assert r == pytest.approx([1.0, 1.0, 1.0])


def test_balayage_order_on_walk():
    assert check_balayage(g5(), CENTRE, SPLIT).ordered


def test_reverse_balayage_has_certificate():
    bal = check_balayage(g5(), SPLIT, CENTRE)
    assert not bal.ordered
    assert is_supermedian(g5(), bal.certificate, tol=1e-9)
    assert bal.margin > 0
    assert np.dot(CENTRE, bal.certificate) - np.dot(SPLIT, bal.certificate) == pytest.approx(bal.margin)


def test_time_potentials():
    assert time_potential(g5()) == pytest.approx(G5_TIME_POTENTIAL)
    assert time_potential(validate_chain([[0.5]], "absorbing")) == pytest.approx([-2.0])


def test_expected_embedding_time():
    assert expected_embedding_time(g5(), CENTRE, SPLIT) == pytest.approx(4.0)
    with pytest.raises(NotOrdered):
        expected_embedding_time(g5(), SPLIT, CENTRE)


def test_cycle_potential_of_point_mass():
    chain = validate_chain(CYCLE3_P, "ergodic")
    assert ergodic_potential(chain, [1, 0, 0]) == pytest.approx(CYCLE3_U_DELTA0)
    assert ergodic_potential(chain, np.full(3, 1 / 3)) == pytest.approx(np.zeros(3), abs=1e-12)


def test_cycle_min_time_from_stationary_law():
    chain = validate_chain(CYCLE3_P, "ergodic")
    res = ergodic_min_time(chain, np.full(3, 1 / 3), [1, 0, 0])
    assert res.value == pytest.approx(4 / 3)
    assert res.halting_point == 0


def test_reversed_kernel_of_reversible_chain_is_itself():
    P = [[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]]
    chain = validate_chain(P, "ergodic")
    assert reversed_kernel(chain) == pytest.approx(np.array(P))


def test_nonreversible_chain_needs_the_reversal():
    P = np.array([[0.1, 0.8, 0.1], [0.1, 0.1, 0.8], [0.8, 0.1, 0.1]])
    chain = validate_chain(P, "ergodic")
    mu, nu = [1, 0, 0], [0, 0.3, 0.7]
    lp = ergodic_filling_lp(chain, mu, nu).objective
    assert ergodic_min_time(chain, mu, nu).value == pytest.approx(lp, abs=1e-10)
