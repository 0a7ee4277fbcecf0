import numpy as np
import pytest

from instances import g5
from skembed.costs import build_augmented, running_cost
from skembed.lp import StoppingRule, extract_stopping_rule, primal_embedding_lp
from skembed.sim import SimConfig, compare_empirical, sample_paths, write_frequencies_csv

CENTRE = [0, 0, 1, 0, 0]
SPLIT = [0.5, 0, 0, 0, 0.5]


def _walk():
    aug = build_augmented(g5())
    return aug, running_cost(aug, np.ones(5))


def test_always_stop_stays_put():
    aug, cost = _walk()
    st = sample_paths(aug, cost, CENTRE, SimConfig(500, 1, StoppingRule(np.ones(5))))
    assert st.law == pytest.approx([0, 0, 1, 0, 0, 0])
    assert st.mean_T == 0.0 and st.se_T == 0.0


def test_optimal_rule_matches_exact_law():
    aug, cost = _walk()
    occ = primal_embedding_lp(aug, cost, CENTRE, SPLIT)
    st = sample_paths(aug, cost, CENTRE, SimConfig(20_000, 7, extract_stopping_rule(occ)))
    rep = compare_empirical(st, SPLIT, exact_cost=4.0, exact_T=4.0)
    assert rep["passed"], rep


def test_wrong_law_is_rejected():
    aug, cost = _walk()
    occ = primal_embedding_lp(aug, cost, CENTRE, SPLIT)
    st = sample_paths(aug, cost, CENTRE, SimConfig(20_000, 7, extract_stopping_rule(occ)))
    assert not compare_empirical(st, [0.6, 0, 0, 0, 0.4])["passed"]


def test_small_samples_are_flagged():
    aug, cost = _walk()
    occ = primal_embedding_lp(aug, cost, CENTRE, SPLIT)
    st = sample_paths(aug, cost, CENTRE, SimConfig(100, 7, extract_stopping_rule(occ)))
    assert compare_empirical(st, SPLIT)["low_power"]


def test_same_seed_same_paths():
    aug, cost = _walk()
    cfg = SimConfig(3000, 11, StoppingRule(np.array([1, 0.2, 0.3, 0.2, 1])))
    a, b = sample_paths(aug, cost, CENTRE, cfg), sample_paths(aug, cost, CENTRE, cfg)
    assert np.array_equal(a.counts, b.counts)
    assert a.mean_cost == b.mean_cost


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(0, 1, StoppingRule(np.ones(1)))


def test_frequency_csv(tmp_path):
    aug, cost = _walk()
    st = sample_paths(aug, cost, CENTRE, SimConfig(100, 1, StoppingRule(np.ones(5))))
    path = tmp_path / "freq.csv"
    write_frequencies_csv(path, st, CENTRE)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 1 + 6
