"""Parameter-space versus action-space random search: estimators, learners and experiments."""

from .envs import (
    BanditInstance,
    LinearPolicy,
    LqrEnv,
    LqrSpec,
    StaticQuadraticEnv,
    gen_contextual_bandit,
    gen_regression_stream,
    load_instance,
    lqr_exact_gradient,
    lqr_exact_objective,
    make_random_lqr,
    save_instance,
)
from .estimators import Stream, make_rng
from .models import ARSBanditClassifier, BanditFeedbackRegressor, LinearPolicySearch, ReinforceBanditClassifier
from .olr import OlrInstance, run_alg1, run_alg2
from .policysearch import SearchConfig, run_action_search, run_param_search, run_until_stationary

__version__ = "0.1.0"

__all__ = [
    "BanditInstance", "LinearPolicy", "LqrEnv", "LqrSpec", "StaticQuadraticEnv",
    "gen_contextual_bandit", "gen_regression_stream", "load_instance", "save_instance",
    "lqr_exact_gradient", "lqr_exact_objective", "make_random_lqr",
    "Stream", "make_rng",
    "ARSBanditClassifier", "BanditFeedbackRegressor", "LinearPolicySearch", "ReinforceBanditClassifier",
    "OlrInstance", "run_alg1", "run_alg2",
    "SearchConfig", "run_action_search", "run_param_search", "run_until_stationary",
]
