"""scikit-learn style wrappers.

The online regressors and bandit classifiers follow the usual
``fit(X, y)`` / ``predict(X)`` contract; targets are only ever revealed to the
learner through a scalar loss or a +-1 reward.  :class:`LinearPolicySearch`
is fitted on an environment instead of a data matrix, so it only borrows
``get_params``/``set_params`` from :class:`~sklearn.base.BaseEstimator`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import bandit
from .envs import BanditInstance, LinearPolicy
from .estimators import Stream, make_rng
from .exceptions import InvalidParameterError
from .olr import OlrInstance, run_alg1, run_alg2
from .policysearch import SearchConfig, run_action_search, run_param_search

__all__ = [
    "BanditFeedbackRegressor",
    "ReinforceBanditClassifier",
    "ARSBanditClassifier",
    "LinearPolicySearch",
]


def _generator(random_state) -> np.random.Generator:
    if isinstance(random_state, np.random.Generator):
        return random_state
    return make_rng(0 if random_state is None else int(random_state), Stream.EXPLORATION)


class BanditFeedbackRegressor(RegressorMixin, BaseEstimator):
    """Online least squares that only observes the squared loss of its own prediction.

    ``exploration="parameter"`` perturbs the weights on the unit sphere,
    ``exploration="action"`` perturbs the prediction by ``+-delta``.  Rows are
    consumed once, in order; ``radius`` bounds the weight norm.
    """

    def __init__(self, exploration: str = "action", alpha: float = 0.01, delta: float = 0.1,
                 radius: float = 1.0, random_state=None):
        self.exploration = exploration
        self.alpha = alpha
        self.delta = delta
        self.radius = radius
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if self.exploration not in ("parameter", "action"):
            raise InvalidParameterError(f"exploration must be 'parameter' or 'action', got {self.exploration!r}")
        inst = OlrInstance.from_arrays(X, y, self.radius)
        runner = run_alg1 if self.exploration == "parameter" else run_alg2
        self.trace_ = runner(inst, self.alpha, self.delta, _generator(self.random_state))
        self.coef_ = self.trace_.theta
        self.average_regret_ = inst.average_regret(self.trace_)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return X @ self.coef_


class _BanditClassifier(ClassifierMixin, BaseEstimator):
    def _instance(self, X, y, eval_set):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise InvalidParameterError("need at least two classes")
        if eval_set is None:
            X_test, y_test = X, y_enc
        else:
            X_test = check_array(eval_set[0], dtype=float)
            y_test = np.searchsorted(self.classes_, np.asarray(eval_set[1]))
        self.n_features_in_ = X.shape[1]
        return BanditInstance(X, y_enc, X_test, y_test, self.classes_.size)

    def _store(self, curve):
        self.coef_ = curve.theta
        self.learning_curve_ = (np.array(curve.samples), np.array(curve.accuracy))
        self.samples_to_target_ = curve.samples_to_target
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X, dtype=float) @ self.coef_.T

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class ReinforceBanditClassifier(_BanditClassifier):
    """Softmax-linear policy trained from +-1 rewards by (natural) REINFORCE."""

    def __init__(self, lr: float = 0.03, batch_size: int = 10, max_samples: int = 100_000,
                 natural: bool = False, damping: float = 1e-3, target_accuracy: float | None = None,
                 eval_every: int = 500, random_state=None):
        self.lr = lr
        self.batch_size = batch_size
        self.max_samples = max_samples
        self.natural = natural
        self.damping = damping
        self.target_accuracy = target_accuracy
        self.eval_every = eval_every
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        inst = self._instance(X, y, eval_set)
        kw = dict(max_samples=self.max_samples, eval_every=self.eval_every,
                  target=self.target_accuracy, stop_at_target=self.target_accuracy is not None)
        rng = _generator(self.random_state)
        if self.natural:
            curve = bandit.run_natural_reinforce(inst, self.lr, self.batch_size, rng, damping=self.damping, **kw)
        else:
            curve = bandit.run_reinforce(inst, self.lr, self.batch_size, rng, **kw)
        return self._store(curve)


class ARSBanditClassifier(_BanditClassifier):
    """Greedy linear policy trained by two-point random search on minibatch reward."""

    def __init__(self, alpha: float = 0.1, delta: float = 1.0, batch_size: int = 100,
                 num_directions: int = 10, top_directions: int | None = None,
                 max_samples: int = 1_000_000, target_accuracy: float | None = None,
                 eval_every: int = 500, random_state=None):
        self.alpha = alpha
        self.delta = delta
        self.batch_size = batch_size
        self.num_directions = num_directions
        self.top_directions = top_directions
        self.max_samples = max_samples
        self.target_accuracy = target_accuracy
        self.eval_every = eval_every
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        inst = self._instance(X, y, eval_set)
        curve = bandit.run_ars(inst, self.alpha, self.delta, self.batch_size, _generator(self.random_state),
                               max_samples=self.max_samples, num_directions=self.num_directions,
                               top_directions=self.top_directions, eval_every=self.eval_every,
                               target=self.target_accuracy, stop_at_target=self.target_accuracy is not None)
        return self._store(curve)


class LinearPolicySearch(BaseEstimator):
    """Linear feedback policy fitted on an environment by parameter- or action-space search."""

    def __init__(self, method: str = "param", alpha: float = 1e-3, delta: float = 0.05,
                 num_directions: int = 1, top_directions: int | None = None,
                 max_env_steps: int = 100_000, eval_every: int = 10, eval_rollouts: int = 10,
                 random_state=None):
        self.method = method
        self.alpha = alpha
        self.delta = delta
        self.num_directions = num_directions
        self.top_directions = top_directions
        self.max_env_steps = max_env_steps
        self.eval_every = eval_every
        self.eval_rollouts = eval_rollouts
        self.random_state = random_state

    def fit(self, env, policy0=None):
        if self.method not in ("param", "action"):
            raise InvalidParameterError(f"method must be 'param' or 'action', got {self.method!r}")
        cfg = SearchConfig(self.alpha, self.delta, self.num_directions, self.top_directions,
                           self.max_env_steps, self.eval_every, self.eval_rollouts)
        if policy0 is None:
            spec = getattr(env, "spec", env)
            m = getattr(spec, "m", None) or env.action_dim
            n = getattr(spec, "n", None) or env.state_dim
            policy0 = LinearPolicy.zeros(m, n)
        runner = run_param_search if self.method == "param" else run_action_search
        self.trace_ = runner(env, policy0, cfg, _generator(self.random_state))
        self.policy_ = self.trace_.policy
        self.coef_ = self.policy_.theta
        return self

    def predict(self, states):
        check_is_fitted(self, "coef_")
        S = check_array(states, dtype=float)
        return S @ self.coef_.T
