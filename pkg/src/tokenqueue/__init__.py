"""Product-form analysis of token-based central queues."""

from .model import CustomerClass, Eta, LabeledQState, ModelSpec, PrefixRates, QState, SetFunctionRates, enumerate_states
from .validation import (check_assignment_condition, check_oi_condition, check_rate_consistency, check_stability,
                         validate)
from .transitions import beta, in_transitions, oracle_solve, out_transitions
from .product_form import StationaryMeasure
from .performance import lst_S, lst_W, lst_W_overall, moments, pgf_M, pgf_M_joint, pgf_N, pgf_N_joint, prob_wait
from .applications import (build_from_oi, build_matching, build_mmk_hetero, build_msccc, build_redundancy_coc,
                           build_redundancy_cos, oi_stationary, reference_models)
from .simulation import SimConfig, compare_stats, simulate_matching_native, simulate_redundancy_native, simulate_token_queue

__version__ = "0.1.0"
