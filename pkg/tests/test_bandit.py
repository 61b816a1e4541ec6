import numpy as np
import pytest
from sklearn.base import clone

from policy_explore import bandit
from policy_explore.envs import BanditInstance, StaticQuadraticEnv, gen_contextual_bandit, gen_regression_stream
from policy_explore.estimators import Stream, make_rng, reinforce_gaussian_grad
from policy_explore.exceptions import InvalidParameterError
from policy_explore.models import (
    ARSBanditClassifier,
    BanditFeedbackRegressor,
    LinearPolicySearch,
    ReinforceBanditClassifier,
)


@pytest.fixture(scope="module")
def easy_bandit():
    return gen_contextual_bandit(make_rng(0, Stream.DATA), 20, 4, 5_000, 1_000, separation=1.0, noise=0.3)


def test_adam_first_step_is_signed_lr():
    opt = bandit.Adam(0.1)
    np.testing.assert_allclose(opt.direction(np.array([2.0, -0.5, 0.0])), [0.1, -0.1, 0.0], rtol=1e-6)
    assert opt.t == 1


def test_sample_actions_frequencies():
    probs = np.tile([0.1, 0.2, 0.7], (200_000, 1))
    a = bandit.sample_actions(probs, make_rng(3))
    freq = np.bincount(a, minlength=3) / a.size
    se = np.sqrt(probs[0] * (1 - probs[0]) / a.size)
    assert np.all(np.abs(freq - probs[0]) <= 4 * se)


def test_sample_actions_degenerate_rows():
    probs = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_array_equal(bandit.sample_actions(probs, make_rng(0)), [0, 2])


def test_reinforce_learns_separable_bandit(easy_bandit):
    curve = bandit.run_reinforce(easy_bandit, 0.03, 10, make_rng(1), max_samples=30_000, target=0.95)
    assert curve.samples_to_target is not None
    assert curve.accuracy[-1] >= 0.95


def test_natural_reinforce_learns_separable_bandit(easy_bandit):
    curve = bandit.run_natural_reinforce(easy_bandit, 0.5, 20, make_rng(1), max_samples=30_000, target=0.95)
    assert curve.samples_to_target is not None


def test_ars_improves_on_chance(easy_bandit):
    curve = bandit.run_ars(easy_bandit, 1.0, 3.0, 50, make_rng(1), max_samples=100_000, num_directions=4,
                           stop_at_target=False)
    assert curve.accuracy[0] <= 0.5 and curve.accuracy[-1] >= 0.95


def test_curve_accounting(easy_bandit):
    curve = bandit.run_reinforce(easy_bandit, 0.03, 7, make_rng(2), max_samples=1_000, eval_every=100)
    assert curve.samples[0] == 0
    assert all(s % 7 == 0 for s in curve.samples)
    assert curve.total_samples == 7 * (1_000 // 7)
    assert curve.samples == sorted(curve.samples)
    curve = bandit.run_ars(easy_bandit, 0.1, 0.1, 5, make_rng(2), max_samples=1_000, num_directions=3)
    assert curve.total_samples == 30 * (1_000 // 30)


def test_runs_are_deterministic(easy_bandit):
    a = bandit.run_reinforce(easy_bandit, 0.03, 10, make_rng(5), max_samples=2_000)
    b = bandit.run_reinforce(easy_bandit, 0.03, 10, make_rng(5), max_samples=2_000)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_run_errors(easy_bandit):
    with pytest.raises(InvalidParameterError):
        bandit.run_ars(easy_bandit, 0.1, 0.1, 5, make_rng(0), max_samples=100, num_directions=2, top_directions=3)
    with pytest.raises(InvalidParameterError):
        bandit.run_reinforce(easy_bandit, 0.1, 5, make_rng(0), max_samples=0)


# ---------------------------------------------------------------------------
# Gaussian-exploration REINFORCE on a regression reward


def test_gaussian_reinforce_mean_matches_reward_gradient():
    # reward r = -(yhat - y)^2 with yhat ~ N(w.x, beta^2): grad_w E[r] = -2 (w.x - y) x
    x = np.array([1.0, 0.5, -2.0])
    w = np.array([0.2, -0.1, 0.3])
    y, beta, N = 0.4, 0.5, 200_000
    rng = make_rng(7)
    yhat = w @ x + beta * rng.standard_normal(N)
    per = np.array([reinforce_gaussian_grad(x, [yh], [-(yh - y) ** 2], w, beta).g for yh in yhat[:2_000]])
    X = np.tile(x, (N, 1))
    mean = reinforce_gaussian_grad(X, yhat, -(yhat - y) ** 2, w, beta).g
    np.testing.assert_allclose(per.mean(axis=0), reinforce_gaussian_grad(X[:2_000], yhat[:2_000],
                                                                         -(yhat[:2_000] - y) ** 2, w, beta).g)
    coef = -(yhat - y) ** 2 * (yhat - w @ x) / beta**2
    se = coef.std(ddof=1) / np.sqrt(N) * np.abs(x)
    assert np.all(np.abs(mean - (-2.0 * (w @ x - y) * x)) <= 4 * se)


def test_gaussian_reinforce_converges_on_regression():
    inst = gen_regression_stream(make_rng(3, Stream.DATA), 4, 60_000, noise_std=0.0, cov_trace=4.0)
    X, y = inst.arrays()
    rng = make_rng(3, Stream.EXPLORATION)
    w, beta, batch = np.zeros(4), 0.3, 20
    lr0 = 0.02
    for k, i in enumerate(range(0, X.shape[0], batch)):
        Xb, yb = X[i:i + batch], y[i:i + batch]
        yhat = Xb @ w + beta * rng.standard_normal(Xb.shape[0])
        r = -(yhat - yb) ** 2
        w = w + lr0 / np.sqrt(1 + k / 100) * reinforce_gaussian_grad(Xb, yhat, r - r.mean(), w, beta).g
    assert np.linalg.norm(w - inst.truth) <= 0.1 * np.linalg.norm(inst.truth)


# ---------------------------------------------------------------------------
# sklearn-style wrappers


def test_reinforce_classifier_with_string_labels(easy_bandit):
    names = np.array(["a", "b", "c", "d"])
    clf = ReinforceBanditClassifier(lr=0.03, max_samples=20_000, random_state=1)
    clf.fit(easy_bandit.X_train, names[easy_bandit.y_train],
            eval_set=(easy_bandit.X_test, names[easy_bandit.y_test]))
    assert set(clf.classes_) == set(names)
    assert clf.score(easy_bandit.X_test, names[easy_bandit.y_test]) >= 0.95
    assert clf.learning_curve_[0][0] == 0
    assert clf.decision_function(easy_bandit.X_test[:3]).shape == (3, 4)


def test_natural_and_ars_classifiers(easy_bandit):
    nat = ReinforceBanditClassifier(lr=0.5, batch_size=20, natural=True, max_samples=20_000, target_accuracy=0.95,
                                    random_state=0).fit(easy_bandit.X_train, easy_bandit.y_train)
    assert nat.samples_to_target_ is not None
    ars = ARSBanditClassifier(alpha=1.0, delta=3.0, batch_size=50, num_directions=4, max_samples=100_000,
                              random_state=0).fit(easy_bandit.X_train, easy_bandit.y_train)
    assert ars.score(easy_bandit.X_test, easy_bandit.y_test) >= 0.95


def test_classifier_params_and_clone():
    clf = ARSBanditClassifier(alpha=0.2, num_directions=3)
    twin = clone(clf)
    assert twin.get_params() == clf.get_params()
    twin.set_params(alpha=0.7)
    assert clf.alpha == 0.2 and twin.alpha == 0.7


def test_classifier_needs_two_classes():
    with pytest.raises(InvalidParameterError):
        ReinforceBanditClassifier().fit(np.ones((5, 2)), np.zeros(5))


@pytest.mark.parametrize("exploration", ["parameter", "action"])
def test_bandit_feedback_regressor(exploration):
    inst = gen_regression_stream(make_rng(4, Stream.DATA), 5, 20_000, C_theta=None)
    X, y = inst.arrays()
    reg = BanditFeedbackRegressor(exploration=exploration, alpha=0.01, delta=0.1, radius=inst.C_theta,
                                  random_state=0).fit(X, y)
    assert reg.coef_.shape == (5,)
    assert np.linalg.norm(reg.coef_) <= inst.C_theta + 1e-9
    assert reg.predict(X[:4]).shape == (4,)
    assert reg.average_regret_ < np.mean(y**2)  # beats always predicting 0


def test_regressor_rejects_unknown_exploration():
    with pytest.raises(InvalidParameterError):
        BanditFeedbackRegressor(exploration="both").fit(np.ones((3, 2)), np.ones(3))


@pytest.mark.parametrize("method", ["param", "action"])
def test_linear_policy_search_estimator(method):
    env = StaticQuadraticEnv([1.0, 0.5], [0.3, -0.2], horizon=1)
    est = LinearPolicySearch(method=method, alpha=1e-2, delta=0.1, max_env_steps=20_000, eval_rollouts=1,
                             random_state=1).fit(env)
    assert env.objective(est.policy_) <= 1e-2
    np.testing.assert_allclose(est.predict([[1.0, 0.5]]), [[0.3, -0.2]], atol=0.1)


def test_bandit_instance_accuracy_helper():
    inst = BanditInstance(np.eye(3), np.arange(3), np.eye(3), np.array([0, 1, 1]), 3)
    assert inst.test_accuracy(np.eye(3)) == pytest.approx(2 / 3)
