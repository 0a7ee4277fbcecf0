"""Optimal stopping embeddings of target laws on finite Markov chains."""

__version__ = "0.1.0"

from .chain import Chain, Measure, as_measure, dirac, expected_lifetime, invariant_distribution, validate_chain
from .costs import (
    AugmentedChain,
    CostModel,
    build_augmented,
    check_submartingale,
    check_twist,
    cost_from_lambda,
    initial_state_cost,
    running_cost,
    time_cost,
)
from .dual import solve_dual_iterative, supergradient
from .errors import Infeasible, InputError, NumericalError, SkembedError
from .lp import (
    complementary_dual,
    dual_from_lp,
    ergodic_filling_lp,
    extract_stopping_rule,
    primal_embedding_lp,
)
from .potential import check_balayage, ergodic_min_time, expected_embedding_time, reduite
from .problem import load_problem, parse_problem
from .sim import SimConfig, compare_empirical, sample_paths
from .snell import doob_meyer, normalize_psi, psi_max, snell_envelope
from .verify import barrier_report, check_stop_go, pushforward, verify_optimality

__all__ = [name for name in dir() if not name.startswith("_")]
