import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from policy_explore.envs import LinearPolicy, LqrEnv, StaticQuadraticEnv, feedback_start, lqr_exact_gradient, make_random_lqr
from policy_explore.estimators import Stream, make_rng
from policy_explore.exceptions import InvalidDimensionError, InvalidParameterError, NonFiniteError
from policy_explore.harness import validate
from policy_explore.policysearch import (
    ActionSearch,
    Method,
    ParamSearch,
    SearchConfig,
    run_action_search,
    run_param_search,
    run_until_stationary,
)


class WeightedQuadraticEnv:
    """One-step env with scalar state 1 and cost sum_i w_i a_i^2, so J(theta) = sum_i w_i theta_i^2."""

    state_dim = 1
    horizon = 1

    def __init__(self, weights):
        self.w = np.asarray(weights, dtype=float)
        self.action_dim = self.w.size

    def reset(self, rng):
        return np.ones(1)

    def step(self, action):
        return np.ones(1), float(self.w @ np.asarray(action) ** 2)

    def objective(self, theta):
        return float(self.w @ np.ravel(theta) ** 2)


class LqrProxy:
    """Forwards to an LqrEnv without being one, which forces the step-by-step rollout path."""

    def __init__(self, spec):
        self._env = LqrEnv(spec)

    def __getattr__(self, name):
        return getattr(self._env, name)


def quiet_cfg(**kw):
    kw.setdefault("eval_every", 10**6)
    kw.setdefault("eval_rollouts", 0)
    return SearchConfig(**kw)


# ---------------------------------------------------------------------------
# reductions and accounting


def test_batch_one_runners_match_transcriptions():
    r = validate.search_reduction_mismatches(seed=3, iterations=25)
    assert r["param"] and r["action"]
    assert r["param_steps"] == 2 * 7 * 25
    assert r["action_steps"] == r["transcription_steps"] == 7 * 25


@pytest.mark.parametrize("runner,ndir,top,alpha", [(run_param_search, 4, 2, 1e-3), (run_action_search, 3, 3, 1e-5)])
def test_batched_lqr_path_matches_sequential_path(runner, ndir, top, alpha):
    spec = make_random_lqr(make_rng(2, Stream.DATA), 5, 2, noise_std=0.2, H=8)
    cfg = quiet_cfg(alpha=alpha, delta=0.05, num_directions=ndir, top_directions=top, max_env_steps=2_000)
    pol = LinearPolicy(0.05 * make_rng(2, Stream.INIT).standard_normal((2, 5)))
    batched = runner(spec, pol, cfg, make_rng(2, Stream.EXPLORATION))
    sequential = runner(LqrProxy(spec), pol, cfg, make_rng(2, Stream.EXPLORATION))
    np.testing.assert_array_equal(batched.policy.theta, sequential.policy.theta)
    assert batched.env_steps == sequential.env_steps


def test_budget_accounting_property():
    assert validate.prop_budget_accounting(1).passed


@pytest.mark.parametrize("cls", [ParamSearch, ActionSearch])
def test_steps_charged_per_rollout(cls):
    env = StaticQuadraticEnv([1.0, -1.0], [0.5, 0.0], horizon=6)
    opt = cls(env, LinearPolicy.zeros(2, 2), quiet_cfg(alpha=1e-3, delta=0.1, num_directions=3),
              make_rng(0))
    rollouts = 6 if cls is ParamSearch else 3
    assert opt.step() == rollouts * 6
    assert env.total_steps == opt.env_steps == rollouts * 6


def test_trace_rows_spacing_and_monotone_steps():
    spec = make_random_lqr(make_rng(0, Stream.DATA), 4, 1, noise_std=0.1, H=5)
    cfg = SearchConfig(alpha=1e-3, delta=0.1, max_env_steps=5 * 2 * 23, eval_every=5, eval_rollouts=3)
    tr = run_param_search(spec, LinearPolicy.zeros(1, 4), cfg, make_rng(0))
    its = [r.iteration for r in tr.rows]
    assert its == [0, 5, 10, 15, 20, 23]
    steps = [r.env_steps for r in tr.rows]
    assert steps == sorted(steps) and steps[-1] == tr.env_steps == 230
    assert all(r.grad_norm_sq is not None and r.exact_cost is not None for r in tr.rows)


def test_evaluation_does_not_consume_training_stream():
    env = StaticQuadraticEnv([1.0], [0.4, 0.1], horizon=2)
    a = run_param_search(env, LinearPolicy.zeros(2, 1), SearchConfig(alpha=0.01, delta=0.1, max_env_steps=400,
                                                                     eval_every=1, eval_rollouts=5), make_rng(4))
    b = run_param_search(env, LinearPolicy.zeros(2, 1), quiet_cfg(alpha=0.01, delta=0.1, max_env_steps=400),
                         make_rng(4))
    np.testing.assert_array_equal(a.policy.theta, b.policy.theta)


# ---------------------------------------------------------------------------
# parameter-space search


def test_param_search_descends_to_small_objective():
    d = 5
    env = StaticQuadraticEnv([1.0], np.zeros(d), horizon=1)  # J(theta) = |theta|^2
    opt = ParamSearch(env, LinearPolicy(np.ones((d, 1))), quiet_cfg(alpha=0.05, delta=0.1), make_rng(7))
    prev = env.objective(opt.policy)
    for _ in range(500):
        opt.step()
        cur = env.objective(opt.policy)
        assert cur < prev
        prev = cur
        if cur < 1e-3:
            break
    assert prev < 1e-3


@settings(max_examples=30, deadline=None)
@given(weights=st.lists(st.floats(0.1, 10.0), min_size=2, max_size=8), seed=st.integers(0, 2**32),
       delta=st.floats(1e-3, 1.0))
def test_param_search_descent_fraction_on_convex_quadratics(weights, seed, delta):
    env = WeightedQuadraticEnv(weights)
    d = len(weights)
    # the two-point estimate is exact along u for a quadratic, so alpha < 1/(d * max w) gives descent whenever u.grad != 0
    alpha = 0.5 / (d * 2 * max(weights))
    opt = ParamSearch(env, LinearPolicy(np.ones((d, 1))), quiet_cfg(alpha=alpha, delta=delta), make_rng(seed))
    prev, down = env.objective(opt.policy.theta), 0
    for _ in range(100):
        opt.step()
        cur = env.objective(opt.policy.theta)
        down += cur < prev
        prev = cur
    assert down >= 90


def test_param_update_vanishes_at_stationary_point():
    env = StaticQuadraticEnv([1.0, 2.0], [0.6, -0.3], horizon=3)
    theta = np.array([[0.12, 0.24], [-0.06, -0.12]])  # theta @ s == target
    opt = ParamSearch(env, LinearPolicy(theta), quiet_cfg(alpha=0.1, delta=1e-4, num_directions=4), make_rng(0))
    opt.step()
    assert np.max(np.abs(opt.last_estimate)) <= 1e-9


# ---------------------------------------------------------------------------
# action-space search


def test_action_search_one_step_converges_to_minimizer():
    env = StaticQuadraticEnv([1.0, 0.5], [0.3, -0.2], horizon=1)
    tr = run_action_search(env, LinearPolicy.zeros(2, 2), quiet_cfg(alpha=1e-2, delta=0.1, max_env_steps=20_000),
                           make_rng(1, Stream.EXPLORATION))
    assert env.objective(tr.policy) <= 1e-2  # true minimum is 0


def test_action_estimate_is_rank_one():
    spec = make_random_lqr(make_rng(5, Stream.DATA), 6, 3, noise_std=0.3, H=10)
    opt = ActionSearch(spec, LinearPolicy.zeros(3, 6), quiet_cfg(alpha=1e-4, delta=0.1), make_rng(5))
    for _ in range(10):
        opt.step()
        sv = np.linalg.svd(opt.last_estimate.reshape(3, 6), compute_uv=False)
        assert sv[1] <= 1e-12 * sv[0]


def test_action_estimate_mean_matches_gradient():
    assert validate.prop_action_space_bias(2).passed


# ---------------------------------------------------------------------------
# stationarity loop


def test_already_stationary_costs_nothing():
    spec = make_random_lqr(make_rng(0, Stream.DATA), 5, 1, H=10)
    pol = LinearPolicy.zeros(1, 5)
    g = float(np.sum(lqr_exact_gradient(spec, pol) ** 2))
    cfg = SearchConfig(alpha=1e-3, delta=0.1)
    assert run_until_stationary(spec, pol, cfg, Method.PARAM, 2 * g, make_rng(0)) == (0, True)


@pytest.mark.parametrize("method,alpha", [(Method.PARAM, 3e-3), (Method.ACTION, 1e-4)])
def test_noise_free_lqr_reaches_stationarity(method, alpha):
    spec = make_random_lqr(make_rng(0, Stream.DATA), 10, 1, H=50, structure="symmetric")
    pol = feedback_start(spec, 0.25)
    steps, reached = run_until_stationary(spec, pol, SearchConfig(alpha=alpha, delta=0.1), method, 0.05,
                                          make_rng(0, Stream.EXPLORATION))
    assert reached and 0 < steps < 10**6


def test_unreached_stops_at_cap():
    spec = make_random_lqr(make_rng(0, Stream.DATA), 10, 1, H=50, structure="symmetric")
    cfg = SearchConfig(alpha=1e-7, delta=0.1, max_env_steps=1_000)
    steps, reached = run_until_stationary(spec, feedback_start(spec, 0.25), cfg, "ParamSearch", 0.05, make_rng(0))
    assert not reached and steps == 1_000


def test_divergence_is_reported():
    spec = make_random_lqr(make_rng(0, Stream.DATA), 10, 1, H=50, structure="symmetric")
    with pytest.raises(NonFiniteError):
        run_until_stationary(spec, feedback_start(spec, 0.25), SearchConfig(alpha=1.0, delta=0.1), "ParamSearch",
                             0.05, make_rng(0))


# ---------------------------------------------------------------------------
# validation


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        SearchConfig(alpha=0.0, delta=0.1)
    with pytest.raises(InvalidParameterError):
        SearchConfig(alpha=0.1, delta=0.1, num_directions=2, top_directions=3)
    with pytest.raises(InvalidParameterError):
        SearchConfig(alpha=0.1, delta=0.1, max_env_steps=0)
    assert SearchConfig(alpha=0.1, delta=0.1, num_directions=4).top_directions == 4
    with pytest.raises(InvalidParameterError):
        run_until_stationary(make_random_lqr(make_rng(0), 2, 1), LinearPolicy.zeros(1, 2),
                             SearchConfig(alpha=0.1, delta=0.1), "ParamSearch", 0.0, make_rng(0))


def test_dimension_mismatch():
    spec = make_random_lqr(make_rng(0), 3, 1)
    with pytest.raises(InvalidDimensionError):
        run_param_search(spec, LinearPolicy.zeros(1, 4), SearchConfig(alpha=0.1, delta=0.1), make_rng(0))
