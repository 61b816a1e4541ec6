"""Learning a softmax-linear / argmax-linear policy on a contextual bandit.

Three learners share one sample-accounting convention: each context shown to
a policy and rewarded counts as one sample.

* REINFORCE: sample an action from the softmax policy, ascend the
  score-function gradient with Adam.
* natural REINFORCE: same samples, direction preconditioned by the empirical
  Fisher matrix, step size decaying as ``lr / sqrt(t)``.
* ARS-style parameter search: evaluate the greedy policy at ``theta +- delta u``
  on a shared minibatch (``2 * batch`` samples per direction).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs import BanditInstance
from .estimators import (
    natural_direction,
    reinforce_categorical_grad,
    sample_unit_sphere,
    softmax,
    two_point_sphere_grad,
)
from .exceptions import InvalidParameterError

__all__ = ["Adam", "BanditCurve", "sample_actions", "run_reinforce", "run_natural_reinforce", "run_ars"]


class Adam:
    """Plain Adam for ascent or descent on a numpy array."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def direction(self, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class BanditCurve:
    samples: list[int] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    samples_to_target: int | None = None
    theta: np.ndarray | None = None

    @property
    def total_samples(self) -> int:
        return self.samples[-1] if self.samples else 0


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row by inverse CDF."""
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)


class _Tracker:
    def __init__(self, inst: BanditInstance, eval_every: int, target: float | None, max_samples: int):
        if eval_every < 1 or max_samples < 1:
            raise InvalidParameterError("eval_every and max_samples must be >= 1")
        self.inst = inst
        self.eval_every = eval_every
        self.target = target
        self.max_samples = max_samples
        self.curve = BanditCurve()
        self.samples = 0
        self._next = 0

    def record(self, theta, force=False) -> bool:
        """Evaluate when a checkpoint boundary was crossed; True once the target is hit."""
        if self.samples < self._next and not force:
            return False
        while self._next <= self.samples:
            self._next += self.eval_every
        acc = self.inst.test_accuracy(theta)
        self.curve.samples.append(self.samples)
        self.curve.accuracy.append(acc)
        if self.target is not None and self.curve.samples_to_target is None and acc >= self.target:
            self.curve.samples_to_target = self.samples
            return True
        return False

    def done(self, cost: int) -> bool:
        return self.samples + cost > self.max_samples


def _batch(inst: BanditInstance, rng: np.random.Generator, size: int):
    idx = rng.integers(0, inst.y_train.size, size)
    return inst.X_train[idx], inst.y_train[idx]


def _finish(tracker: _Tracker, theta, stop_at_target: bool) -> BanditCurve:
    if not tracker.curve.samples or tracker.curve.samples[-1] != tracker.samples:
        tracker.record(theta, force=True)
    tracker.curve.theta = theta
    return tracker.curve


def run_reinforce(inst: BanditInstance, lr: float, batch: int, rng: np.random.Generator, *,
                  max_samples: int, eval_every: int = 500, target: float | None = None,
                  stop_at_target: bool = True) -> BanditCurve:
    theta = np.zeros((inst.n_actions, inst.dim))
    opt = Adam(lr)
    tracker = _Tracker(inst, eval_every, target, max_samples)
    tracker.record(theta)
    while not tracker.done(batch):
        X, y = _batch(inst, rng, batch)
        a = sample_actions(softmax(X @ theta.T), rng)
        g = reinforce_categorical_grad(X, a, inst.reward(a, y), theta).g
        theta = theta + opt.direction(g).reshape(theta.shape)
        tracker.samples += batch
        if tracker.record(theta) and stop_at_target:
            break
    return _finish(tracker, theta, stop_at_target)


def run_natural_reinforce(inst: BanditInstance, lr: float, batch: int, rng: np.random.Generator, *,
                          max_samples: int, eval_every: int = 500, target: float | None = None,
                          damping: float = 1e-3, stop_at_target: bool = True) -> BanditCurve:
    theta = np.zeros((inst.n_actions, inst.dim))
    tracker = _Tracker(inst, eval_every, target, max_samples)
    tracker.record(theta)
    t = 0
    while not tracker.done(batch):
        X, y = _batch(inst, rng, batch)
        probs = softmax(X @ theta.T)
        a = sample_actions(probs, rng)
        r = inst.reward(a, y)
        g = reinforce_categorical_grad(X, a, r, theta).g
        resid = -probs
        resid[np.arange(batch), a] += 1.0
        scores = (resid[:, :, None] * X[:, None, :]).reshape(batch, -1)
        t += 1
        x = natural_direction(scores, g, damping)
        theta = theta + (lr / np.sqrt(t)) * x.reshape(theta.shape)
        tracker.samples += batch
        if tracker.record(theta) and stop_at_target:
            break
    return _finish(tracker, theta, stop_at_target)


def run_ars(inst: BanditInstance, alpha: float, delta: float, batch: int, rng: np.random.Generator, *,
            max_samples: int, num_directions: int = 10, top_directions: int | None = None,
            eval_every: int = 500, target: float | None = None, stop_at_target: bool = True) -> BanditCurve:
    """Two-point search on the greedy policy's mean reward (ascent)."""
    top = num_directions if top_directions is None else top_directions
    if not 1 <= top <= num_directions:
        raise InvalidParameterError("need 1 <= top_directions <= num_directions")
    K, b = inst.n_actions, inst.dim
    d = K * b
    theta = np.zeros(d)
    tracker = _Tracker(inst, eval_every, target, max_samples)
    tracker.record(theta.reshape(K, b))
    cost = 2 * num_directions * batch
    while not tracker.done(cost):
        X, y = _batch(inst, rng, batch)
        dirs = [sample_unit_sphere(rng, d) for _ in range(num_directions)]
        plus, minus = [], []
        for u in dirs:
            for sign, out in ((1.0, plus), (-1.0, minus)):
                pick = np.argmax(X @ (theta + sign * delta * u).reshape(K, b).T, axis=1)
                out.append(float(inst.reward(pick, y).mean()))
        order = sorted(range(num_directions), key=lambda k: -abs(plus[k] - minus[k]))
        chosen = sorted(order[:top])
        g = np.zeros(d)
        for k in chosen:
            g += two_point_sphere_grad(plus[k], minus[k], dirs[k], delta).g
        theta = theta + alpha * g / len(chosen)
        tracker.samples += cost
        if tracker.record(theta.reshape(K, b)) and stop_at_target:
            break
    return _finish(tracker, theta.reshape(K, b), stop_at_target)
