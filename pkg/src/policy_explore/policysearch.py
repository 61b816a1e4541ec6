"""Multi-step policy search: parameter-space (two-point, ARS-style batching) and
action-space (perturb one action per episode, pull back through the Jacobian).

Sample accounting is identical for both: every episode costs ``H`` env steps.
For LQR targets the episodes of one iteration are simulated as a batch; the
random draws happen in the same order as a sequential implementation, so a
batch of one reproduces the plain algorithm bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .envs import (
    Env,
    LinearPolicy,
    LqrEnv,
    LqrSpec,
    draw_episode_noise,
    lqr_exact_gradient,
    lqr_exact_objective,
    rollout,
    rollout_perturbed,
    simulate_lqr,
)
from .estimators import action_space_pg_grad, sample_unit_sphere, two_point_sphere_grad
from .exceptions import InvalidDimensionError, InvalidParameterError, NonFiniteError

__all__ = [
    "SearchConfig",
    "Checkpoint",
    "SearchTrace",
    "Method",
    "ParamSearch",
    "ActionSearch",
    "run_param_search",
    "run_action_search",
    "run_until_stationary",
]


@dataclass(frozen=True)
class SearchConfig:
    alpha: float
    delta: float
    num_directions: int = 1
    top_directions: int | None = None
    max_env_steps: int = 10**6
    eval_every: int = 10
    eval_rollouts: int = 10

    def __post_init__(self):
        if self.top_directions is None:
            object.__setattr__(self, "top_directions", self.num_directions)
        if not (self.alpha > 0 and self.delta > 0):
            raise InvalidParameterError("alpha and delta must be > 0")
        if self.num_directions < 1 or not 1 <= self.top_directions <= self.num_directions:
            raise InvalidParameterError("need 1 <= top_directions <= num_directions")
        if self.max_env_steps < 1 or self.eval_every < 1 or self.eval_rollouts < 0:
            raise InvalidParameterError("max_env_steps and eval_every must be >= 1")


@dataclass
class Checkpoint:
    iteration: int
    env_steps: int
    mean_cost: float
    grad_norm_sq: float | None = None
    exact_cost: float | None = None


@dataclass
class SearchTrace:
    rows: list[Checkpoint] = field(default_factory=list)
    policy: LinearPolicy | None = None
    env_steps: int = 0
    iterations: int = 0


class Method(str, enum.Enum):
    PARAM = "ParamSearch"
    ACTION = "ActionSearch"


def _as_env(env):
    if isinstance(env, LqrSpec):
        return LqrEnv(env)
    return env


def _check_dims(env, policy):
    if policy.state_dim != env.state_dim or policy.action_dim != env.action_dim:
        raise InvalidDimensionError(
            f"policy is (p={policy.action_dim}, b={policy.state_dim}) but env has "
            f"(p={env.action_dim}, b={env.state_dim})")


def _eval_rng(rng: np.random.Generator) -> np.random.Generator:
    seed_seq = getattr(rng.bit_generator, "seed_seq", None)
    if seed_seq is None:
        return np.random.Generator(np.random.Philox(0))
    return np.random.Generator(np.random.Philox(seed_seq.spawn(1)[0]))


class _Search:
    """Shared state: current policy, step counters, evaluation."""

    def __init__(self, env, policy0, cfg: SearchConfig, rng: np.random.Generator, eval_rng=None):
        self.env = _as_env(env)
        self.policy = policy0.copy() if isinstance(policy0, LinearPolicy) else LinearPolicy(policy0)
        _check_dims(self.env, self.policy)
        self.cfg = cfg
        self.rng = rng
        self.eval_rng = eval_rng if eval_rng is not None else _eval_rng(rng)
        self.env_steps = 0
        self.iteration = 0
        self.last_estimate = None

    @property
    def horizon(self) -> int:
        return self.env.horizon

    @property
    def is_lqr(self) -> bool:
        return isinstance(self.env, LqrEnv)

    def cost_per_iteration(self) -> int:
        raise NotImplementedError

    def fits_budget(self) -> bool:
        return self.env_steps + self.cost_per_iteration() <= self.cfg.max_env_steps

    def _update(self, g: np.ndarray):
        theta = self.policy.flat - self.cfg.alpha * g
        if not np.all(np.isfinite(theta)):
            raise NonFiniteError(
                f"parameters diverged at iteration {self.iteration} (|g|={np.linalg.norm(g):.3g})")
        self.policy = LinearPolicy(theta.reshape(self.policy.theta.shape))

    def checkpoint(self) -> Checkpoint:
        costs = [rollout(self.env, self.policy, self.eval_rng).total_cost
                 for _ in range(self.cfg.eval_rollouts)]
        mean_cost = float(np.mean(costs)) if costs else float("nan")
        grad_sq = exact = None
        if self.is_lqr:
            spec = self.env.spec
            with np.errstate(over="ignore", invalid="ignore"):
                grad_sq = float(np.sum(lqr_exact_gradient(spec, self.policy) ** 2))
                exact = lqr_exact_objective(spec, self.policy)
        return Checkpoint(self.iteration, self.env_steps, mean_cost, grad_sq, exact)


def _check_costs(values, iteration):
    bad = [v for v in values if not math.isfinite(v)]
    if bad:
        raise NonFiniteError(f"non-finite rollout cost at iteration {iteration}")


class ParamSearch(_Search):
    """Two-point random search over the flattened policy parameters.

    With ``num_directions > 1`` the two-point estimates of the
    ``top_directions`` directions with the largest ``|J+ - J-|`` are averaged.
    """

    def cost_per_iteration(self) -> int:
        return 2 * self.cfg.num_directions * self.horizon

    def _returns(self, thetas: list[np.ndarray]) -> list[float]:
        if self.is_lqr:
            spec = self.env.spec
            draws = [draw_episode_noise(spec, self.rng) for _ in thetas]
            _, _, costs = simulate_lqr(spec, np.stack(thetas), np.stack([d[0] for d in draws]),
                                       np.stack([d[1] for d in draws]))
            return [math.fsum(row) for row in costs]
        shape = self.policy.theta.shape
        return [rollout(self.env, LinearPolicy(th.reshape(shape)), self.rng).total_cost for th in thetas]

    def step(self) -> int:
        cfg = self.cfg
        d = self.policy.d
        shape = self.policy.theta.shape
        base = self.policy.flat
        dirs = [sample_unit_sphere(self.rng, d) for _ in range(cfg.num_directions)]
        thetas = []
        for u in dirs:
            thetas.append((base + cfg.delta * u).reshape(shape))
            thetas.append((base - cfg.delta * u).reshape(shape))
        values = self._returns(thetas)
        _check_costs(values, self.iteration)
        plus, minus = values[0::2], values[1::2]
        order = sorted(range(cfg.num_directions), key=lambda k: -abs(plus[k] - minus[k]))
        top = sorted(order[:cfg.top_directions])
        g = np.zeros(d)
        for k in top:
            g += two_point_sphere_grad(plus[k], minus[k], dirs[k], cfg.delta).g
        if len(top) > 1:
            g /= len(top)
        self.last_estimate = g
        self._update(g)
        used = self.cost_per_iteration()
        self.env_steps += used
        self.iteration += 1
        return used


class ActionSearch(_Search):
    """Perturb the action at a uniformly drawn step, estimate the cost-to-go
    gradient with a one-point sphere estimate and map it through the policy
    Jacobian, scaled by ``H``."""

    def cost_per_iteration(self) -> int:
        return self.cfg.num_directions * self.horizon

    def _perturbed(self, ts, us):
        cfg = self.cfg
        if self.is_lqr:
            spec = self.env.spec
            N = len(ts)
            draws = [draw_episode_noise(spec, self.rng) for _ in range(N)]
            thetas = np.broadcast_to(self.policy.theta, (N,) + self.policy.theta.shape)
            states, _, costs = simulate_lqr(
                spec, thetas, np.stack([d[0] for d in draws]), np.stack([d[1] for d in draws]),
                perturb_t=np.asarray(ts), perturb_u=cfg.delta * np.stack(us))
            return [(states[k, ts[k]].copy(), math.fsum(costs[k, ts[k]:])) for k in range(N)]
        return [rollout_perturbed(self.env, self.policy, t, cfg.delta * u, self.rng) for t, u in zip(ts, us)]

    def step(self) -> int:
        cfg = self.cfg
        H = self.horizon
        p = self.policy.action_dim
        ts, us = [], []
        for _ in range(cfg.num_directions):
            ts.append(int(self.rng.integers(H)))
            us.append(sample_unit_sphere(self.rng, p))
        results = self._perturbed(ts, us)
        _check_costs([q for _, q in results], self.iteration)
        g = np.zeros(self.policy.d)
        linear = type(self.policy) is LinearPolicy
        for (s_t, q), u in zip(results, us):
            if linear:
                g += action_space_pg_grad(q, u, s_t, H, cfg.delta).g
            else:
                g += self.policy.jacobian_transpose_times(s_t, (H * p * q / cfg.delta) * u)
        if len(results) > 1:
            g /= len(results)
        self.last_estimate = g
        self._update(g)
        used = self.cost_per_iteration()
        self.env_steps += used
        self.iteration += 1
        return used


def _run(optimizer: _Search) -> SearchTrace:
    trace = SearchTrace()
    trace.rows.append(optimizer.checkpoint())
    while optimizer.fits_budget():
        optimizer.step()
        if optimizer.iteration % optimizer.cfg.eval_every == 0:
            trace.rows.append(optimizer.checkpoint())
    if trace.rows[-1].iteration != optimizer.iteration:
        trace.rows.append(optimizer.checkpoint())
    trace.policy = optimizer.policy
    trace.env_steps = optimizer.env_steps
    trace.iterations = optimizer.iteration
    return trace


def run_param_search(env, policy0, cfg: SearchConfig, rng: np.random.Generator, eval_rng=None) -> SearchTrace:
    """Run parameter-space search until the env-step budget is exhausted."""
    return _run(ParamSearch(env, policy0, cfg, rng, eval_rng))


def run_action_search(env, policy0, cfg: SearchConfig, rng: np.random.Generator, eval_rng=None) -> SearchTrace:
    """Run action-space search until the env-step budget is exhausted."""
    return _run(ActionSearch(env, policy0, cfg, rng, eval_rng))


def run_until_stationary(spec: LqrSpec, policy0, cfg: SearchConfig, method: Method | str,
                         threshold: float, rng: np.random.Generator) -> tuple[int, bool]:
    """Iterate until ``|grad J|^2 <= threshold`` (exact LQR gradient) or the budget runs out.

    Gradient checks are free; returns ``(env_steps_used, reached)``.
    """
    if not threshold > 0:
        raise InvalidParameterError("threshold must be > 0")
    cls = ParamSearch if Method(method) is Method.PARAM else ActionSearch
    opt = cls(spec, policy0, cfg, rng, eval_rng=np.random.Generator(np.random.Philox(0)))

    def stationary():
        with np.errstate(over="ignore", invalid="ignore"):
            sq = float(np.sum(lqr_exact_gradient(spec, opt.policy) ** 2))
        if not math.isfinite(sq):
            raise NonFiniteError(f"exact gradient overflowed at iteration {opt.iteration}")
        return sq <= threshold

    if stationary():
        return 0, True
    while opt.fits_budget():
        opt.step()
        if stationary():
            return opt.env_steps, True
    return opt.env_steps, False
