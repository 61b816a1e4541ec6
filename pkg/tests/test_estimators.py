import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from policy_explore import estimators as est
from policy_explore.estimators import Scheme, Stream, TheoryConstants, make_rng
from policy_explore.exceptions import (
    InvalidActionError,
    InvalidBatchError,
    InvalidConstantsError,
    InvalidDimensionError,
    InvalidParameterError,
    InvalidPerturbationError,
    NonFiniteError,
    SingularMatrixError,
)
from policy_explore.harness import validate


def z_scores(samples, target):
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    return np.abs(mean - target) / se


# ---------------------------------------------------------------------------
# rng


def test_make_rng_replays_and_streams_differ():
    a = make_rng(7, Stream.DATA).standard_normal(5)
    b = make_rng(7, Stream.DATA).standard_normal(5)
    c = make_rng(7, Stream.EXPLORATION).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_distinct_streams_are_uncorrelated():
    x = make_rng(3, 0).standard_normal(50_000)
    y = make_rng(3, 1).standard_normal(50_000)
    # |corr| of independent normals has SE 1/sqrt(N)
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / math.sqrt(x.size)


def test_make_rng_accepts_64_bit_seeds():
    make_rng(2**64 - 1, 5).random()


# ---------------------------------------------------------------------------
# samplers


def test_sphere_n1_is_sign():
    rng = make_rng(0)
    vals = {float(est.sample_unit_sphere(rng, 1)[0]) for _ in range(50)}
    assert vals == {1.0, -1.0}


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 300), seed=st.integers(0, 2**63))
def test_sphere_unit_norm(n, seed):
    u = est.sample_unit_sphere(make_rng(seed), n)
    assert u.shape == (n,)
    assert abs(np.linalg.norm(u) - 1.0) <= 1e-12


def test_sphere_second_moment():
    rng = make_rng(1)
    U = np.stack([est.sample_unit_sphere(rng, 5) for _ in range(100_000)])
    np.testing.assert_allclose(U.T @ U / U.shape[0], np.eye(5) / 5, atol=0.01)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 50), seed=st.integers(0, 2**32))
def test_ball_inside(n, seed):
    assert np.linalg.norm(est.sample_unit_ball(make_rng(seed), n)) <= 1.0


def test_ball_1d_mean_abs():
    rng = make_rng(2)
    v = np.array([est.sample_unit_ball(rng, 1)[0] for _ in range(100_000)])
    assert abs(np.mean(np.abs(v)) - 0.5) <= 0.01


def test_ball_second_moment():
    rng = make_rng(3)
    V = np.stack([est.sample_unit_ball(rng, 3) for _ in range(100_000)])
    np.testing.assert_allclose(V.T @ V / V.shape[0], np.eye(3) / 5, atol=0.01)


def test_rademacher():
    rng = make_rng(4)
    e = np.array([est.sample_rademacher(rng) for _ in range(100_000)])
    assert set(np.unique(e)) == {-1, 1}
    assert abs(e.mean()) < 0.02
    again = make_rng(4)
    assert [est.sample_rademacher(again) for _ in range(100)] == list(e[:100])


@pytest.mark.parametrize("n", [0, -3])
def test_samplers_reject_bad_dimension(n):
    with pytest.raises(InvalidDimensionError):
        est.sample_unit_sphere(make_rng(0), n)
    with pytest.raises(InvalidDimensionError):
        est.sample_unit_ball(make_rng(0), n)


# ---------------------------------------------------------------------------
# point estimators: hand-evaluated cases


def test_one_point_examples():
    np.testing.assert_array_equal(est.one_point_sphere_grad(0.0, [0.6, 0.8], 0.3).g, [0.0, 0.0])
    r = est.one_point_sphere_grad(1.0, [1.0, 0.0], 0.5)
    np.testing.assert_allclose(r.g, [4.0, 0.0])
    assert r.scheme is Scheme.ONE_POINT_SPHERE and r.env_steps == 1


def test_two_point_examples():
    np.testing.assert_array_equal(est.two_point_sphere_grad(2.0, 2.0, [0, 1.0], 0.1).g, [0.0, 0.0])
    r = est.two_point_sphere_grad(0.1, -0.1, [1.0, 0.0, 0.0], 0.1)
    np.testing.assert_allclose(r.g, [3.0, 0.0, 0.0])
    assert r.env_steps == 2


def test_action_sign_examples():
    np.testing.assert_array_equal(est.action_sign_grad(0.0, 1, [1.0, 2.0], 0.5).g, [0.0, 0.0])
    cost = (0.5 - 1.0) ** 2
    np.testing.assert_allclose(est.action_sign_grad(cost, 1, [1.0, 0.0], 0.5).g, [0.5, 0.0])


@settings(max_examples=50, deadline=None)
@given(theta=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       s=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       a=st.floats(-3, 3), delta=st.floats(0.01, 2.0))
def test_action_sign_sign_average_is_exact_gradient(theta, s, a, delta):
    theta, s = np.array(theta), np.array(s)
    base = theta @ s
    avg = sum(est.action_sign_grad((base + delta * e - a) ** 2, e, s, delta).g for e in (-1, 1)) / 2
    np.testing.assert_allclose(avg, 2 * (base - a) * s, rtol=1e-9, atol=1e-9 * (1 + abs(base - a)) / delta)


def test_action_space_examples():
    np.testing.assert_array_equal(est.action_space_pg_grad(0.0, [1.0], [1.0, 0.0], 3, 0.5).g, [0.0, 0.0])
    np.testing.assert_allclose(est.action_space_pg_grad(2.0, [1.0], [1.0, 0.0], 3, 0.5).g, [12.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(p=st.integers(1, 4), b=st.integers(1, 5), seed=st.integers(0, 10**6))
def test_action_space_estimate_is_rank_one(p, b, seed):
    rng = make_rng(seed)
    u = est.sample_unit_sphere(rng, p)
    s = rng.standard_normal(b)
    g = est.action_space_pg_grad(rng.uniform(0.1, 5), u, s, 4, 0.2).g.reshape(p, b)
    assert np.linalg.matrix_rank(g, tol=1e-10 * np.abs(g).max()) == 1


def test_reinforce_examples():
    np.testing.assert_array_equal(est.reinforce_gaussian_grad([[1.0]], [0.3], [0.0], [0.0], 0.5).g, [0.0])
    np.testing.assert_allclose(est.reinforce_gaussian_grad([[1.0]], [0.5], [-0.25], [0.0], 0.5).g, [-0.5])
    g = est.reinforce_categorical_grad([[1.0]], [0], [1.0], np.zeros((2, 1))).g
    np.testing.assert_allclose(g, [0.5, -0.5])
    assert not np.any(est.reinforce_categorical_grad([[1.0, 2.0]], [1], [0.0], np.zeros((3, 2))).g)


def test_natural_direction_examples():
    g = np.array([0.3, -1.2])
    r2 = math.sqrt(2)
    np.testing.assert_allclose(est.natural_direction([[r2, 0.0], [0.0, r2]], g, 0.0), g)
    np.testing.assert_array_equal(est.natural_direction([[1.0, 2.0]], [0.0, 0.0]), [0.0, 0.0])
    # scores chosen so that (1/N) sum s s^T = diag(2, 4)
    S = [[2.0, 0.0], [0.0, 2 * math.sqrt(2)]] * 2
    np.testing.assert_allclose(est.natural_direction(S, [2.0, 4.0], 0.0), [1.0, 1.0])
    # the other score set averages to diag(1, 2)
    S = [[math.sqrt(2), 0.0], [0.0, 2.0]] * 2
    np.testing.assert_allclose(est.natural_direction(S, [2.0, 4.0], 0.0), [2.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(N=st.integers(1, 12), d=st.integers(1, 40), seed=st.integers(0, 10**6))
def test_natural_direction_matches_dense_solve(N, d, seed):
    rng = make_rng(seed)
    S = rng.standard_normal((N, d))
    g = rng.standard_normal(d)
    x = est.natural_direction(S, g, 1e-2)
    ref = np.linalg.solve(S.T @ S / N + 1e-2 * np.eye(d), g)
    np.testing.assert_allclose(x, ref, rtol=1e-7, atol=1e-9 * np.linalg.norm(ref))


def test_natural_direction_errors():
    with pytest.raises(SingularMatrixError):
        est.natural_direction([[1.0, 0.0]], [1.0, 1.0], 0.0)
    with pytest.raises(InvalidDimensionError):
        est.natural_direction([[1.0, 0.0]], [1.0, 1.0, 1.0])
    with pytest.raises(InvalidParameterError):
        est.natural_direction([[1.0, 0.0]], [1.0, 1.0], -1.0)
    with pytest.raises(InvalidBatchError):
        est.natural_direction(np.empty((0, 2)), [1.0, 1.0])


def test_input_validation():
    with pytest.raises(InvalidPerturbationError):
        est.one_point_sphere_grad(1.0, [1.0], 0.0)
    with pytest.raises(InvalidParameterError):
        est.two_point_sphere_grad(1.0, 0.0, [1.0, 1.0], 0.1)
    with pytest.raises(InvalidParameterError):
        est.action_sign_grad(1.0, 0, [1.0], 0.1)
    with pytest.raises(InvalidParameterError):
        est.action_space_pg_grad(1.0, [1.0], [1.0], 0, 0.1)
    with pytest.raises(NonFiniteError):
        est.one_point_sphere_grad(math.inf, [1.0], 0.1)
    with pytest.raises(InvalidActionError):
        est.reinforce_categorical_grad([[1.0]], [2], [1.0], np.zeros((2, 1)))
    with pytest.raises(InvalidBatchError):
        est.reinforce_gaussian_grad([[1.0]], [0.1, 0.2], [1.0], [0.0], 1.0)


@settings(max_examples=50, deadline=None)
@given(fp=st.floats(-1e3, 1e3), fm=st.floats(-1e3, 1e3), delta=st.floats(1e-3, 10), seed=st.integers(0, 10**6))
def test_two_point_antisymmetric_and_pure(fp, fm, delta, seed):
    u = est.sample_unit_sphere(make_rng(seed), 4)
    a = est.two_point_sphere_grad(fp, fm, u, delta).g
    np.testing.assert_array_equal(a, est.two_point_sphere_grad(fp, fm, u, delta).g)
    np.testing.assert_array_equal(a, -est.two_point_sphere_grad(fm, fp, u, delta).g)


# ---------------------------------------------------------------------------
# constants


def test_theory_constants():
    c = TheoryConstants.from_olr_bounds(2.0, 3.0, 1.0)
    assert c.C == 49.0 and c.L == 21.0
    with pytest.raises(InvalidConstantsError):
        TheoryConstants(C=-1.0)
    with pytest.raises(InvalidConstantsError):
        TheoryConstants(L=math.nan)


# ---------------------------------------------------------------------------
# Monte-Carlo oracles


def test_one_point_linear_unbiased():
    rng = make_rng(5)
    c = np.array([1.0, 0.0, 0.0])
    theta, delta, N = np.array([0.2, -0.1, 0.4]), 0.3, 100_000
    G = np.empty((N, 3))
    for k in range(N):
        u = est.sample_unit_sphere(rng, 3)
        G[k] = est.one_point_sphere_grad(c @ (theta + delta * u), u, delta).g
    assert np.all(z_scores(G, c) <= 3.0)


def test_two_point_quadratic_unbiased():
    rng = make_rng(6)
    A = np.array([1.0, 2.0])
    theta, delta, N = np.array([1.0, 1.0]), 0.1, 100_000
    f = lambda x: float(np.sum(A * x * x))  # noqa: E731
    G = np.empty((N, 2))
    for k in range(N):
        u = est.sample_unit_sphere(rng, 2)
        G[k] = est.two_point_sphere_grad(f(theta + delta * u), f(theta - delta * u), u, delta).g
    assert np.all(z_scores(G, [2.0, 4.0]) <= 3.0)


def _ball_cos_mean(delta, d):
    """E[cos(delta v_1)] for v uniform in the d-ball; the marginal of v_1 is ~ (1 - t^2)^((d-1)/2)."""
    w = lambda t: (1 - t * t) ** ((d - 1) / 2)  # noqa: E731
    num = integrate.quad(lambda t: math.cos(delta * t) * w(t), -1, 1)[0]
    return num / integrate.quad(w, -1, 1)[0]


@pytest.mark.parametrize("delta", [0.05, 0.2])
def test_smoothing_bias_against_quadrature(delta):
    """Quadrature gives the exact smoothed gradient of sum(cos); MC one-point means must agree with it."""
    f = validate.CosineSum(10)
    exact = f.grad(f.x0) * _ball_cos_mean(delta, 10)
    assert np.linalg.norm(exact - f.grad(f.x0)) <= f.L * delta
    rng = make_rng(8)
    N = 100_000
    f0 = float(f(f.x0))
    G = np.empty((N, 10))
    for k in range(N):
        u = est.sample_unit_sphere(rng, 10)
        G[k] = est.one_point_sphere_grad(float(f(f.x0 + delta * u)) - f0, u, delta).g
    assert np.max(z_scores(G, exact)) <= 4.0
