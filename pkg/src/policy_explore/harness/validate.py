"""Registered property checks: each returns a measured statistic, a bound and pass/fail.

Every property is deterministic given its seed.  Statistical properties
compare a Monte-Carlo statistic against a tolerance expressed in standard
errors; the bounds-type properties report ``measured / bound`` ratios so the
margin is visible in the report.

A mutation (``MUTATIONS``) temporarily swaps an estimator for a corrupted
version so that the suite can be shown to catch it.
"""

from __future__ import annotations

import contextlib
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import estimators as est
from .. import olr
from ..envs import (
    LinearPolicy,
    LqrEnv,
    StaticQuadraticEnv,
    lqr_exact_gradient,
    lqr_exact_objective,
    lqr_rollout,
    make_random_lqr,
    rollout_perturbed,
    simulate_lqr,
    draw_episode_noise,
)
from ..estimators import Stream, make_rng
from ..exceptions import ConfigError
from ..policysearch import SearchConfig, run_action_search, run_param_search

__all__ = ["PropertyResult", "PROPERTIES", "MUTATIONS", "run_property", "run_all", "format_report"]


@dataclass(frozen=True)
class PropertyResult:
    name: str
    measured: float
    bound: float
    passed: bool
    detail: str = ""


def _result(name, measured, bound, detail="", *, strict=False) -> PropertyResult:
    measured, bound = float(measured), float(bound)
    ok = math.isfinite(measured) and (measured < bound if strict else measured <= bound)
    return PropertyResult(name, measured, bound, bool(ok), detail)


def _unit_rows(rng, N, d) -> np.ndarray:
    Z = rng.standard_normal((N, d))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# test functions


class Quadratic:
    """``f(x) = x'Ax/2 + c'x`` with diagonal ``A``; the ball-smoothed gradient equals the true one."""

    def __init__(self, d: int = 10):
        self.diag = np.linspace(0.5, 2.0, d)
        self.c = np.linspace(-1.0, 1.0, d)
        self.x0 = np.full(d, 0.5)

    def __call__(self, x):
        x = np.asarray(x)
        return 0.5 * np.sum(self.diag * x * x, axis=-1) + x @ self.c

    def grad(self, x):
        return self.diag * x + self.c

    def lipschitz_near(self, x, radius) -> float:
        """Lipschitz constant of ``f`` on the ball of ``radius`` around ``x``."""
        return float(np.linalg.norm(self.grad(x)) + self.diag.max() * radius)


class CosineSum:
    """``f(x) = sum cos(x_i)``: 1-smooth, with a smoothing bias that is not identically zero."""

    L = 1.0

    def __init__(self, d: int = 10):
        self.x0 = np.linspace(-1.2, 1.4, d)

    def __call__(self, x):
        return np.sum(np.cos(x), axis=-1)

    def grad(self, x):
        return -np.sin(x)


# ---------------------------------------------------------------------------
# estimator properties


def prop_sphere_norm(seed: int) -> PropertyResult:
    rng = make_rng(seed, Stream.EXPLORATION)
    worst = 0.0
    for n in (1, 2, 10, 1000):
        for _ in range(200):
            worst = max(worst, abs(np.linalg.norm(est.sample_unit_sphere(rng, n)) - 1.0))
    return _result("sphere_norm", worst, 1e-12, "max | |u| - 1 |")


def prop_ball_radius(seed: int) -> PropertyResult:
    """Radii of uniform ball draws: ``P(|v| <= r) = r^n``, checked by a KS distance."""
    rng = make_rng(seed, Stream.EXPLORATION)
    n, N = 5, 20_000
    r = np.sort([np.linalg.norm(est.sample_unit_ball(rng, n)) for _ in range(N)])
    cdf = r**n
    ks = max(np.max(np.arange(1, N + 1) / N - cdf), np.max(cdf - np.arange(N) / N))
    # 1.95 / sqrt(N) is the 0.1% critical value of the KS statistic
    return _result("ball_radius_distribution", ks, 1.95 / math.sqrt(N), "KS distance of |v|^n from U(0,1)")


def two_point_samples(f, x, delta, N, rng, sigma=0.0) -> np.ndarray:
    """``N`` two-point estimates at ``x`` with independent N(0, sigma^2) noise on each evaluation."""
    d = x.size
    U = _unit_rows(rng, N, d)
    fp = f(x + delta * U) + sigma * rng.standard_normal(N)
    fm = f(x - delta * U) + sigma * rng.standard_normal(N)
    return np.stack([est.two_point_sphere_grad(fp[k], fm[k], U[k], delta).g for k in range(N)])


def max_z_score(samples, target) -> tuple[float, np.ndarray]:
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    return float(np.max(np.abs(mean - target) / se)), se


def prop_two_point_unbiased(seed: int, N: int = 100_000) -> PropertyResult:
    rng = make_rng(seed, Stream.EXPLORATION)
    f = Quadratic(10)
    G = two_point_samples(f, f.x0, 0.1, N, rng)
    z, _ = max_z_score(G, f.grad(f.x0))
    return _result("two_point_unbiased", z, 3.0, f"max per-coordinate |z| over {N} draws (bound in SE)")


def prop_one_point_unbiased(seed: int, N: int = 100_000) -> PropertyResult:
    rng = make_rng(seed, Stream.EXPLORATION)
    f = Quadratic(10)
    delta = 0.5
    U = _unit_rows(rng, N, 10)
    vals = f(f.x0 + delta * U)
    G = np.stack([est.one_point_sphere_grad(vals[k], U[k], delta).g for k in range(N)])
    z, _ = max_z_score(G, f.grad(f.x0))
    # ten coordinates: 4 SE keeps the family-wise false-alarm rate below 1e-3
    return _result("one_point_unbiased", z, 4.0, f"max per-coordinate |z| over {N} draws (bound in SE)")


def prop_action_sign_unbiased(seed: int, N: int = 100_000) -> PropertyResult:
    rng = make_rng(seed, Stream.EXPLORATION)
    d = 6
    s = np.linspace(-1.0, 1.0, d)
    theta = np.linspace(0.3, -0.2, d)
    a, delta = 0.7, 0.2
    base = theta @ s
    e = np.where(rng.random(N) < 0.5, 1, -1)
    G = np.stack([est.action_sign_grad((base + delta * e[k] - a) ** 2, int(e[k]), s, delta).g for k in range(N)])
    z, _ = max_z_score(G, 2.0 * (base - a) * s)
    return _result("action_sign_unbiased", z, 4.0, f"max per-coordinate |z| over {N} draws (bound in SE)")


def variance_bound_ratios(seed: int, N: int = 100_000) -> list[tuple[float, float, float, float]]:
    """``(sigma, delta, measured E|g - grad|^2, bound)`` for each noise/radius combination."""
    rng = make_rng(seed, Stream.EXPLORATION)
    f = Quadratic(10)
    d = 10
    grad = f.grad(f.x0)
    out = []
    for sigma in (0.0, 0.1):
        for delta in (0.01, 0.1):
            G = two_point_samples(f, f.x0, delta, N, rng, sigma)
            measured = float(np.mean(np.sum((G - grad) ** 2, axis=1)))
            Lip = f.lipschitz_near(f.x0, delta)
            bound = 2 * d**2 * Lip**2 + 2 * d**2 * sigma**2 / delta**2
            out.append((sigma, delta, measured, bound))
    return out


def prop_two_point_variance(seed: int, N: int = 100_000) -> PropertyResult:
    rows = variance_bound_ratios(seed, N)
    worst = max(m / b for _, _, m, b in rows)
    detail = "; ".join(f"sigma={s} delta={dl}: {m:.4g}/{b:.4g}" for s, dl, m, b in rows)
    return _result("two_point_variance_bound", worst, 1.0, "max measured/bound ratio; " + detail, strict=True)


def smoothing_bias_rows(seed: int, N: int = 100_000) -> list[tuple[float, float, float, float]]:
    """``(delta, |mean one-point - grad f|, L delta, SE of the norm)`` for the cosine test function.

    The one-point estimates are taken of ``f - f(x0)``: subtracting a constant
    leaves the expectation unchanged and keeps the variance manageable.
    """
    rng = make_rng(seed, Stream.EXPLORATION)
    f = CosineSum(10)
    x0 = f.x0
    f0 = float(f(x0))
    out = []
    for delta in (0.05, 0.2):
        U = _unit_rows(rng, N, x0.size)
        vals = f(x0 + delta * U) - f0
        G = np.stack([est.one_point_sphere_grad(vals[k], U[k], delta).g for k in range(N)])
        mean = G.mean(axis=0)
        se = float(np.sqrt(np.sum(G.var(axis=0, ddof=1)) / N))
        out.append((delta, float(np.linalg.norm(mean - f.grad(x0))), f.L * delta, se))
    return out


def prop_smoothing_bias(seed: int, N: int = 100_000) -> PropertyResult:
    rows = smoothing_bias_rows(seed, N)
    worst = max(dev / (lip + 3 * se) for _, dev, lip, se in rows)
    detail = "; ".join(f"delta={dl}: {dev:.4g} vs {lip:.3g}+3*{se:.3g}" for dl, dev, lip, se in rows)
    return _result("smoothing_bias", worst, 1.0, "max |mean - grad| / (L delta + 3 SE); " + detail)


class _StaticProblem:
    """Single-state problem with closed-form cost-to-go and known constants."""

    def __init__(self, H=3, delta=0.1):
        self.s = np.array([1.0, -0.5, 0.25, 0.8])
        self.target = np.array([0.3, -0.6])
        self.theta = np.array([[0.2, 0.1, -0.3, 0.0], [0.05, -0.2, 0.1, 0.4]])
        self.H, self.delta = H, delta
        self.env = StaticQuadraticEnv(self.s, self.target, H)
        self.policy = LinearPolicy(self.theta)
        gap = float(np.linalg.norm(self.theta @ self.s - self.target))
        self.K = float(np.linalg.norm(self.s))      # |d(theta s)/d theta|
        self.U = 2.0                                # Hessian of |a - target|^2
        self.W = 2.0 * (gap + delta)                # slope of the cost-to-go within delta
        self.Q_bound = H * (gap + delta) ** 2       # largest cost-to-go within delta
        self.sigma = 0.0

    def samples(self, rng, N) -> np.ndarray:
        p = self.target.size
        H, delta = self.H, self.delta
        base = self.theta @ self.s
        c0 = float((base - self.target) @ (base - self.target))
        out = np.empty((N, self.theta.size))
        for k in range(N):
            t = int(rng.integers(H))
            u = est.sample_unit_sphere(rng, p)
            diff = base + delta * u - self.target
            q = float(diff @ diff) + (H - 1 - t) * c0
            out[k] = est.action_space_pg_grad(q, u, self.s, H, delta).g
        return out

    def exact_grad(self):
        return self.env.gradient(self.policy)

    def variance_bound(self) -> float:
        p = self.target.size
        return (2 * self.H**2 * p**2 * self.K**2 / self.delta**2) * ((self.Q_bound + self.W * self.delta) ** 2
                                                                     + self.sigma**2)


def prop_action_space_bias(seed: int, N: int = 100_000) -> PropertyResult:
    rng = make_rng(seed, Stream.EXPLORATION)
    prob = _StaticProblem()
    G = prob.samples(rng, N)
    dev = float(np.linalg.norm(G.mean(axis=0) - prob.exact_grad()))
    se = float(np.sqrt(np.sum(G.var(axis=0, ddof=1)) / N))
    bound = prob.K * prob.U * prob.H * prob.delta + 3 * se
    return _result("action_space_bias", dev, bound, f"|mean g - grad J| vs K U H delta + 3 SE (SE={se:.3g})")


def prop_action_space_variance(seed: int, N: int = 50_000) -> PropertyResult:
    rng = make_rng(seed, Stream.EXPLORATION)
    prob = _StaticProblem()
    G = prob.samples(rng, N)
    var = float(np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1)))
    bound = prob.variance_bound()
    return _result("action_space_variance", var / bound, 1.0,
                   f"measured/bound ratio ({var:.4g} / {bound:.4g})", strict=True)


def prop_natural_direction(seed: int) -> PropertyResult:
    """Woodbury and dense solves of the damped Fisher system agree with ``numpy.linalg.solve``."""
    rng = make_rng(seed, Stream.DATA)
    worst = 0.0
    for N, d in ((5, 40), (30, 20), (8, 8)):
        S = rng.standard_normal((N, d))
        g = rng.standard_normal(d)
        lam = 1e-2
        x = est.natural_direction(S, g, lam)
        ref = np.linalg.solve(S.T @ S / N + lam * np.eye(d), g)
        worst = max(worst, float(np.linalg.norm(x - ref) / np.linalg.norm(ref)))
    return _result("natural_direction_solve", worst, 1e-8, "max relative deviation from a dense solve")


# ---------------------------------------------------------------------------
# LQR


def central_difference(fun, x, h=1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def lqr_fd_errors(seed: int, count: int = 20) -> list[float]:
    """Relative error of the adjoint gradient against central differences on random specs."""
    rng = make_rng(seed, Stream.DATA)
    errs = []
    for k in range(count):
        n = int(rng.integers(2, 11))
        m = int(rng.integers(1, 4))
        noise = 0.0 if k % 2 == 0 else 0.3
        spec = make_random_lqr(rng, n, m, noise_std=noise, H=int(rng.integers(3, 12)))
        pol = LinearPolicy(0.1 * rng.standard_normal((m, n)))
        g = lqr_exact_gradient(spec, pol)
        fd = central_difference(lambda th: lqr_exact_objective(spec, LinearPolicy.from_flat(th, m, n)), pol.flat)
        errs.append(float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)))
    return errs


def prop_lqr_gradient(seed: int) -> PropertyResult:
    errs = lqr_fd_errors(seed)
    return _result("lqr_gradient_fd", max(errs), 1e-6, f"max relative error over {len(errs)} random specs")


def prop_lqr_objective(seed: int, N: int = 20_000) -> PropertyResult:
    """Monte-Carlo episode cost against the exact covariance-recursion objective."""
    spec = make_random_lqr(make_rng(seed, Stream.DATA), 3, 2, noise_std=0.3, H=8)
    pol = LinearPolicy(np.array([[0.1, -0.2, 0.0], [0.05, 0.1, -0.1]]))
    rng = make_rng(seed, Stream.ENVIRONMENT)
    draws = [draw_episode_noise(spec, rng) for _ in range(N)]
    thetas = np.broadcast_to(pol.theta, (N,) + pol.theta.shape)
    _, _, costs = simulate_lqr(spec, thetas, np.stack([d[0] for d in draws]), np.stack([d[1] for d in draws]))
    totals = costs.sum(axis=1)
    se = float(totals.std(ddof=1) / math.sqrt(N))
    z = abs(float(totals.mean()) - lqr_exact_objective(spec, pol)) / se
    return _result("lqr_objective_monte_carlo", z, 4.0, f"|MC mean - exact| in SE over {N} episodes")


def prop_lqr_batch_consistency(seed: int) -> PropertyResult:
    """Batched simulation equals stepping the environment one action at a time."""
    spec = make_random_lqr(make_rng(seed, Stream.DATA), 4, 2, noise_std=0.2, H=6)
    pol = LinearPolicy(0.1 * make_rng(seed, Stream.INIT).standard_normal((2, 4)))
    mismatches = 0
    for k in range(5):
        a = lqr_rollout(spec, pol, make_rng(seed + k, Stream.ENVIRONMENT))
        x0, xi = draw_episode_noise(spec, make_rng(seed + k, Stream.ENVIRONMENT))
        _, _, costs = simulate_lqr(spec, pol.theta[None], x0[None], xi[None])
        mismatches += int(not np.array_equal(np.array(a.costs), costs[0]))
    return _result("lqr_batch_consistency", mismatches, 0, "episodes whose costs differ bitwise")


# ---------------------------------------------------------------------------
# OLR


def prop_projection(seed: int) -> PropertyResult:
    rng = make_rng(seed, Stream.DATA)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 20))
        C = float(rng.uniform(0.1, 5.0))
        x = rng.standard_normal(d) * rng.uniform(0.01, 10.0)
        p = olr.project_ball(x, C)
        worst = max(worst, float(np.max(np.abs(olr.project_ball(p, C) - p))),
                    max(0.0, float(np.linalg.norm(p)) - C * (1 + 1e-12)))
    return _result("projection_idempotent", worst, 0.0, "max |P(P(x)) - P(x)| and feasibility excess")


def kkt_residuals(seed: int, count: int = 100) -> list[float]:
    rng = make_rng(seed, Stream.DATA)
    res = []
    for k in range(count):
        b = int(rng.integers(2, 30))
        T = int(rng.integers(b // 2 + 1, 4 * b + 2))
        X = rng.standard_normal((T, b))
        y = X @ rng.standard_normal(b) * rng.uniform(0.1, 5) + 0.1 * rng.standard_normal(T)
        C = float(rng.uniform(0.1, 3.0))
        gram, xty = X.T @ X, X.T @ y
        theta, lam = olr.solve_ball_lsq(gram, xty, C)
        res.append(olr.kkt_residual(gram, xty, theta, lam, C))
    return res


def prop_kkt(seed: int) -> PropertyResult:
    res = kkt_residuals(seed)
    return _result("hindsight_kkt", max(res), 1e-8, f"max KKT residual over {len(res)} random instances")


def olr_replay_mismatches(seed: int) -> int:
    """Replay both OLR learners from their estimators and count diverging rounds."""
    from ..envs import gen_regression_stream

    inst = gen_regression_stream(make_rng(seed, Stream.DATA), 6, 300, C_theta=1.5)
    X, y = inst.arrays()
    bad = 0
    alpha, delta = 0.01, 0.2
    tr = olr.run_alg1(inst, alpha, delta, make_rng(seed, Stream.EXPLORATION), record_params=True)
    rng = make_rng(seed, Stream.EXPLORATION)
    theta = np.zeros(6)
    for i in range(y.size):
        bad += int(not np.array_equal(theta, tr.thetas[i]))
        u = est.sample_unit_sphere(rng, 6)
        c = ((theta + delta * u) @ X[i] - y[i]) ** 2
        theta = olr.project_ball(theta - alpha * est.one_point_sphere_grad(c, u, delta).g, 1.5)
    bad += int(not np.array_equal(theta, tr.theta))
    tr = olr.run_alg2(inst, alpha, delta, make_rng(seed, Stream.EXPLORATION), record_params=True)
    rng = make_rng(seed, Stream.EXPLORATION)
    theta = np.zeros(6)
    for i in range(y.size):
        bad += int(not np.array_equal(theta, tr.thetas[i]))
        e = est.sample_rademacher(rng)
        c = (theta @ X[i] + delta * e - y[i]) ** 2
        theta = olr.project_ball(theta - alpha * est.action_sign_grad(c, e, X[i], delta).g, 1.5)
    bad += int(not np.array_equal(theta, tr.theta))
    return bad


def prop_olr_replay(seed: int) -> PropertyResult:
    return _result("olr_replay", olr_replay_mismatches(seed), 0, "rounds where the learners leave the replayed path")


# ---------------------------------------------------------------------------
# policy search


def search_reduction_mismatches(seed: int, iterations: int = 20) -> dict:
    """Batch-1 runners versus direct transcriptions of the two search loops.

    Returns ``{"param": bool, "action": bool, "param_steps": int, "action_steps": int}``
    where the booleans say whether the final parameters agree bitwise.
    """
    spec = make_random_lqr(make_rng(seed, Stream.DATA), 4, 2, noise_std=0.1, H=7)
    n, m, H = 4, 2, 7
    alpha, delta = 1e-3, 0.05
    out = {}

    cfg = SearchConfig(alpha=alpha, delta=delta, max_env_steps=2 * H * iterations, eval_every=10**6,
                       eval_rollouts=0)
    tr = run_param_search(spec, LinearPolicy.zeros(m, n), cfg, make_rng(seed, Stream.EXPLORATION))
    rng = make_rng(seed, Stream.EXPLORATION)
    th = np.zeros(m * n)
    for _ in range(iterations):
        u = est.sample_unit_sphere(rng, m * n)
        jp = lqr_rollout(spec, LinearPolicy.from_flat(th + delta * u, m, n), rng).total_cost
        jm = lqr_rollout(spec, LinearPolicy.from_flat(th - delta * u, m, n), rng).total_cost
        th = th - alpha * est.two_point_sphere_grad(jp, jm, u, delta).g
    out["param"] = bool(np.array_equal(th, tr.policy.flat))
    out["param_steps"] = tr.env_steps

    cfg = SearchConfig(alpha=alpha, delta=delta, max_env_steps=H * iterations, eval_every=10**6, eval_rollouts=0)
    tr = run_action_search(spec, LinearPolicy.zeros(m, n), cfg, make_rng(seed, Stream.EXPLORATION))
    rng = make_rng(seed, Stream.EXPLORATION)
    th = np.zeros(m * n)
    env = LqrEnv(spec)
    for _ in range(iterations):
        t = int(rng.integers(H))
        u = est.sample_unit_sphere(rng, m)
        s, q = rollout_perturbed(env, LinearPolicy.from_flat(th, m, n), t, delta * u, rng)
        th = th - alpha * est.action_space_pg_grad(q, u, s, H, delta).g
    out["action"] = bool(np.array_equal(th, tr.policy.flat))
    out["action_steps"] = tr.env_steps
    out["transcription_steps"] = env.total_steps
    return out


def prop_search_reduction(seed: int) -> PropertyResult:
    r = search_reduction_mismatches(seed)
    bad = int(not r["param"]) + int(not r["action"]) + int(r["action_steps"] != r["transcription_steps"])
    return _result("search_reduction", bad, 0, f"mismatching runners (param={r['param']}, action={r['action']})")


def prop_budget_accounting(seed: int) -> PropertyResult:
    """Reported env steps equal the environment's own step counter and never exceed the budget."""
    bad = 0
    for runner, budget in ((run_param_search, 97), (run_action_search, 61)):
        env = StaticQuadraticEnv([1.0, 0.5], [0.2], horizon=4)
        cfg = SearchConfig(alpha=1e-2, delta=0.1, num_directions=2, max_env_steps=budget,
                           eval_every=10**6, eval_rollouts=0)
        tr = runner(env, LinearPolicy.zeros(1, 2), cfg, make_rng(seed, Stream.EXPLORATION))
        bad += int(tr.env_steps != env.total_steps or tr.env_steps > budget)
    return _result("budget_accounting", bad, 0, "runs whose counters disagree or overrun the budget")


# ---------------------------------------------------------------------------
# harness


def csv_bytes(seed: int) -> tuple[bytes, bytes]:
    from .config import Preset, build_config
    from .runner import run_preset

    cfg = build_config(Preset.OLR_DIM_SWEEP, overrides=[
        "env.b=[3, 5]", "env.T=400", f"seeds=[{seed}, {seed + 1}]", f"tuning_seeds=[{seed + 2}]",
        "hyperparams.Alg1.default={alpha: 0.01, delta: 0.3}", "hyperparams.Alg2.default={alpha: 0.01, delta: 0.1}"])
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            path = Path(tmp) / f"run{k}.csv"
            run_preset(cfg, path, workers=1, timestamp=False)
            blobs.append(path.read_bytes())
    return blobs[0], blobs[1]


def prop_csv_reproducible(seed: int) -> PropertyResult:
    a, b = csv_bytes(seed)
    return _result("csv_reproducible", int(a != b), 0, f"{len(a)} bytes per run")


PROPERTIES = {
    "sphere_norm": prop_sphere_norm,
    "ball_radius_distribution": prop_ball_radius,
    "two_point_unbiased": prop_two_point_unbiased,
    "one_point_unbiased": prop_one_point_unbiased,
    "action_sign_unbiased": prop_action_sign_unbiased,
    "two_point_variance_bound": prop_two_point_variance,
    "smoothing_bias": prop_smoothing_bias,
    "action_space_bias": prop_action_space_bias,
    "action_space_variance": prop_action_space_variance,
    "natural_direction_solve": prop_natural_direction,
    "lqr_gradient_fd": prop_lqr_gradient,
    "lqr_objective_monte_carlo": prop_lqr_objective,
    "lqr_batch_consistency": prop_lqr_batch_consistency,
    "projection_idempotent": prop_projection,
    "hindsight_kkt": prop_kkt,
    "olr_replay": prop_olr_replay,
    "search_reduction": prop_search_reduction,
    "budget_accounting": prop_budget_accounting,
    "csv_reproducible": prop_csv_reproducible,
}


# ---------------------------------------------------------------------------
# mutations


def _flip_two_point(original):
    def mutated(f_plus, f_minus, u, delta):
        return original(f_minus, f_plus, u, delta)
    return mutated


def _flip_action_space(original):
    def mutated(Q_tilde, u, s_t, H, delta):
        return original(-Q_tilde, u, s_t, H, delta)
    return mutated


MUTATIONS = {
    "flip-two-point-sign": ("two_point_sphere_grad", _flip_two_point),
    "flip-action-space-sign": ("action_space_pg_grad", _flip_action_space),
}


@contextlib.contextmanager
def mutated(name: str | None):
    """Swap an estimator in :mod:`policy_explore.estimators` for a corrupted version."""
    if name is None:
        yield
        return
    if name not in MUTATIONS:
        raise ConfigError(f"unknown mutation {name!r}; choose from {sorted(MUTATIONS)}")
    attr, wrap = MUTATIONS[name]
    original = getattr(est, attr)
    setattr(est, attr, wrap(original))
    try:
        yield
    finally:
        setattr(est, attr, original)


def run_property(name: str, seed: int = 0, mutation: str | None = None) -> PropertyResult:
    if name not in PROPERTIES:
        raise ConfigError(f"unknown property {name!r}")
    with mutated(mutation):
        try:
            return PROPERTIES[name](int(seed))
        except Exception as exc:  # a crash counts as a failure, not an abort of the suite
            return PropertyResult(name, math.nan, math.nan, False, f"error: {type(exc).__name__}: {exc}")


def run_all(seed: int = 0, mutation: str | None = None, names=None) -> list[PropertyResult]:
    return [run_property(n, seed, mutation) for n in (names or PROPERTIES)]


def format_report(results: list[PropertyResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'property':<{width}}  status  {'measured':>12}  {'bound':>12}  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.measured:>12.5g}  "
                     f"{r.bound:>12.5g}  {r.detail}")
    return "\n".join(lines)
