"""Online linear regression when the learner only sees its scalar loss.

Two learners share the same loop shape: the parameter-space learner perturbs
``theta`` along a random unit direction and uses the one-point sphere
estimate, the action-space learner perturbs its scalar prediction by
``+-delta`` and pulls the loss back through the feature vector.  Both
project onto the ``C_theta`` ball after every update.

Instances are streams: rows are regenerated chunk by chunk on every pass so
that ``b = 1000, T = 1e5`` runs never materialize the full design matrix.
Regret against the ball-constrained hindsight optimum only needs the
sufficient statistics ``X^T X``, ``X^T y`` and ``y^T y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .estimators import (
    TheoryConstants,
    action_sign_grad,
    one_point_sphere_grad,
    sample_rademacher,
    sample_unit_sphere,
)
from .exceptions import DataError, InvalidConstantsError, InvalidParameterError

__all__ = [
    "OlrInstance",
    "OlrMoments",
    "OlrTrace",
    "project_ball",
    "run_alg1",
    "run_alg2",
    "solve_ball_lsq",
    "hindsight_optimum",
    "kkt_residual",
    "average_regret",
    "theoretical_schedule_alg1",
    "theoretical_schedule_alg2",
    "regret_bound_alg1",
    "regret_bound_alg2",
    "baseline_sgd",
    "baseline_newton",
]


@dataclass
class OlrMoments:
    gram: np.ndarray
    xty: np.ndarray
    yty: float
    T: int
    max_s_norm: float
    max_abs_a: float
    boundary_fraction: float


@dataclass
class OlrInstance:
    """A replayable stream of ``(s_i, a_i)`` rounds.

    ``source(chunk_size)`` must return a fresh iterator of ``(X, y)`` chunks
    each time it is called, always producing the same rows.  ``C_s``, when
    given, is a declared bound on ``|s_i|``; otherwise the measured maximum is
    used for bound bookkeeping.
    """

    CHUNK = 4096

    dim_b: int
    T: int
    C_theta: float
    source: Callable[..., Iterator[tuple[np.ndarray, np.ndarray]]] = field(repr=False)
    C_s: float | None = None
    C_a: float | None = None
    truth: np.ndarray | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)
    _moments: OlrMoments | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.C_theta > 0:
            raise InvalidParameterError("C_theta must be > 0")

    @classmethod
    def from_arrays(cls, features, targets, C_theta: float, C_s=None, C_a=None) -> "OlrInstance":
        """Wrap a fixed (possibly adversarially chosen) sequence of rounds."""
        X = np.atleast_2d(np.asarray(features, dtype=float))
        y = np.asarray(targets, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise DataError("features and targets differ in length")

        def chunks(chunk_size: int = cls.CHUNK):
            for start in range(0, y.size, chunk_size):
                yield X[start:start + chunk_size], y[start:start + chunk_size]

        return cls(dim_b=X.shape[1], T=y.size, C_theta=C_theta, source=chunks, C_s=C_s, C_a=C_a)

    def chunks(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return self.source(self.CHUNK)

    def rounds(self) -> Iterator[tuple[np.ndarray, float]]:
        for X, y in self.chunks():
            for i in range(y.size):
                yield X[i], float(y[i])

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        parts = list(self.chunks())
        if not parts:
            return np.empty((0, self.dim_b)), np.empty(0)
        return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def moments(self) -> OlrMoments:
        if self._moments is None:
            b = self.dim_b
            gram = np.zeros((b, b))
            xty = np.zeros(b)
            yty, count, smax, amax, on_edge = 0.0, 0, 0.0, 0.0, 0
            for X, y in self.chunks():
                gram += X.T @ X
                xty += X.T @ y
                yty += float(y @ y)
                count += y.size
                norms = np.linalg.norm(X, axis=1)
                smax = max(smax, float(norms.max(initial=0.0)))
                amax = max(amax, float(np.abs(y).max(initial=0.0)))
                if self.C_s is not None:
                    on_edge += int(np.sum(norms >= self.C_s * (1 - 1e-12)))
            self._moments = OlrMoments(gram, xty, yty, count, smax, amax, on_edge / max(count, 1))
        return self._moments

    def bounds(self) -> TheoryConstants:
        """Theory constants from declared bounds, falling back to measured maxima."""
        mom = self.moments()
        C_s = self.C_s if self.C_s is not None else mom.max_s_norm
        C_a = self.C_a if self.C_a is not None else mom.max_abs_a
        return TheoryConstants.from_olr_bounds(self.C_theta, C_s, C_a)

    def optimum(self) -> np.ndarray:
        mom = self.moments()
        return solve_ball_lsq(mom.gram, mom.xty, self.C_theta)[0]

    def optimal_loss(self) -> float:
        mom = self.moments()
        theta = self.optimum()
        return float(theta @ mom.gram @ theta - 2.0 * theta @ mom.xty + mom.yty)

    def average_regret(self, trace: "OlrTrace") -> float:
        if len(trace) != self.T:
            raise DataError(f"trace has {len(trace)} rounds, instance has {self.T}")
        if self.T == 0:
            raise DataError("regret is undefined for an empty trace")
        return (float(np.sum(trace.losses)) - self.optimal_loss()) / self.T


@dataclass
class OlrTrace:
    """Per-round history of an online run.

    ``losses`` is what the learner actually incurred (at the perturbed
    parameter or prediction); ``clean_losses`` is the loss of the unperturbed
    ``theta_i`` for diagnostics.  ``thetas`` holds ``theta_i`` per round when
    the run was asked to record parameters.
    """

    losses: np.ndarray
    clean_losses: np.ndarray
    theta: np.ndarray
    thetas: np.ndarray | None = None

    def __len__(self):
        return self.losses.size

    @property
    def cum_loss(self) -> np.ndarray:
        return np.cumsum(self.losses)


def project_ball(theta, C_theta: float) -> np.ndarray:
    """Euclidean projection onto ``{|theta| <= C_theta}``."""
    theta = np.asarray(theta, dtype=float)
    norm = float(np.linalg.norm(theta))
    if norm <= C_theta:
        return theta
    out = theta * (C_theta / norm)
    # rounding can leave the norm an ulp above the radius; shrink until the
    # result is feasible so that projecting it again is a no-op
    while np.linalg.norm(out) > C_theta:
        out = out * (1.0 - 2.0**-52)
    return out


def _check_step(alpha, delta):
    if not alpha > 0:
        raise InvalidParameterError(f"alpha must be > 0, got {alpha}")
    if not delta > 0:
        raise InvalidParameterError(f"delta must be > 0, got {delta}")


def _start(inst: OlrInstance, theta0) -> np.ndarray:
    if theta0 is None:
        return np.zeros(inst.dim_b)
    return project_ball(np.array(theta0, dtype=float).ravel(), inst.C_theta)


def run_alg1(inst: OlrInstance, alpha: float, delta: float, rng: np.random.Generator,
             theta0=None, record_params: bool = False) -> OlrTrace:
    """Random search in parameter space (bandit gradient descent).

    Each round plays ``theta + delta u`` with ``u`` uniform on the sphere,
    observes only the scalar loss there, and steps along the one-point
    sphere estimate.  The query point itself is not projected.
    """
    _check_step(alpha, delta)
    theta = _start(inst, theta0)
    b, C = inst.dim_b, inst.C_theta
    losses = np.empty(inst.T)
    clean = np.empty(inst.T)
    thetas = np.empty((inst.T, b)) if record_params else None
    for i, (s, a) in enumerate(inst.rounds()):
        u = sample_unit_sphere(rng, b)
        pred = (theta + delta * u) @ s
        c = (pred - a) ** 2
        if not math.isfinite(c):
            raise DataError(f"non-finite loss at round {i}")
        losses[i] = c
        clean[i] = (theta @ s - a) ** 2
        if record_params:
            thetas[i] = theta
        theta = project_ball(theta - alpha * one_point_sphere_grad(c, u, delta).g, C)
    return OlrTrace(losses, clean, theta, thetas)


def run_alg2(inst: OlrInstance, alpha: float, delta: float, rng: np.random.Generator,
             theta0=None, record_params: bool = False) -> OlrTrace:
    """Random search in action space.

    Each round predicts ``theta @ s + delta e`` with a Rademacher sign ``e``,
    observes only that prediction's squared loss, and steps along
    ``(c e / delta) s``.
    """
    _check_step(alpha, delta)
    theta = _start(inst, theta0)
    C = inst.C_theta
    losses = np.empty(inst.T)
    clean = np.empty(inst.T)
    thetas = np.empty((inst.T, inst.dim_b)) if record_params else None
    for i, (s, a) in enumerate(inst.rounds()):
        e = sample_rademacher(rng)
        base = theta @ s
        c = (base + delta * e - a) ** 2
        if not math.isfinite(c):
            raise DataError(f"non-finite loss at round {i}")
        losses[i] = c
        clean[i] = (base - a) ** 2
        if record_params:
            thetas[i] = theta
        theta = project_ball(theta - alpha * action_sign_grad(c, e, s, delta).g, C)
    return OlrTrace(losses, clean, theta, thetas)


# ---------------------------------------------------------------------------
# hindsight optimum


def solve_ball_lsq(gram, xty, C_theta: float, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Minimize ``theta^T G theta - 2 r^T theta`` over ``|theta| <= C_theta``.

    Returns ``(theta, lam)`` where ``lam >= 0`` is the ridge multiplier:
    ``(G + lam I) theta = r``.  Interior solutions are the minimum-norm least
    squares solution (``lam = 0``); otherwise ``lam`` is found by bisection so
    that ``|theta(lam)| = C_theta`` to within ``tol``.
    """
    G = np.asarray(gram, dtype=float)
    r = np.asarray(xty, dtype=float)
    w, V = np.linalg.eigh(G)
    w = np.clip(w, 0.0, None)
    c = V.T @ r
    cutoff = max(w.max(initial=0.0), 1.0) * G.shape[0] * np.finfo(float).eps
    keep = w > cutoff
    coef = np.where(keep, c / np.where(keep, w, 1.0), 0.0)
    if np.linalg.norm(coef) <= C_theta:
        return V @ coef, 0.0

    def norm_at(lam):
        return np.linalg.norm(c / (w + lam))

    lo, hi = 0.0, max(np.linalg.norm(c) / C_theta, 1e-300)
    while norm_at(hi) > C_theta:
        hi *= 2.0
    tol = tol * max(1.0, C_theta)
    lam = hi
    for _ in range(2000):
        lam = 0.5 * (lo + hi)
        nrm = norm_at(lam)
        if abs(nrm - C_theta) <= tol or hi - lo <= 4 * np.finfo(float).eps * hi:
            break
        if nrm > C_theta:
            lo = lam
        else:
            hi = lam
    return V @ (c / (w + lam)), float(lam)


def kkt_residual(gram, xty, theta, lam: float, C_theta: float) -> float:
    """Scaled first-order optimality residual of a ball-constrained least-squares solution.

    Combines stationarity ``|(G + lam I) theta - r|``, primal feasibility
    and complementary slackness, relative to ``max(1, |r|)``.
    """
    G = np.asarray(gram, dtype=float)
    r = np.asarray(xty, dtype=float)
    theta = np.asarray(theta, dtype=float)
    stat = np.linalg.norm(G @ theta + lam * theta - r) / max(1.0, np.linalg.norm(r))
    nrm = np.linalg.norm(theta)
    feas = max(0.0, nrm - C_theta) / max(1.0, C_theta)
    slack = lam * abs(nrm - C_theta) / max(1.0, np.linalg.norm(r))
    return float(max(stat, feas, slack, max(0.0, -lam)))


def hindsight_optimum(features, targets, C_theta: float) -> np.ndarray:
    """Best fixed ``theta`` in the ``C_theta`` ball for the realized rounds."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] != y.size or y.size == 0:
        raise DataError("need T >= 1 rounds with matching features and targets")
    return solve_ball_lsq(X.T @ X, X.T @ y, C_theta)[0]


def average_regret(trace: OlrTrace, features, targets, C_theta: float) -> float:
    """``(sum of incurred losses - hindsight optimal loss) / T``."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if not (len(trace) == X.shape[0] == y.size):
        raise DataError("trace, features and targets must have the same length")
    if y.size == 0:
        raise DataError("regret is undefined for an empty trace")
    theta = hindsight_optimum(X, y, C_theta)
    best = float(np.sum((X @ theta - y) ** 2))
    return (float(np.sum(trace.losses)) - best) / y.size


# ---------------------------------------------------------------------------
# theoretical schedules


def _require_positive(constants: TheoryConstants, names):
    for name in names:
        if not getattr(constants, name) > 0:
            raise InvalidConstantsError(f"{name} must be > 0 for this schedule")


def theoretical_schedule_alg1(T: int, b: int, constants: TheoryConstants) -> tuple[float, float]:
    """``(alpha, delta)`` balancing the parameter-space regret bound."""
    if T < 1:
        raise InvalidParameterError("T must be >= 1")
    _require_positive(constants, ("C_theta", "C", "C_s", "L"))
    k = constants.C_theta * b * (constants.C**2 + constants.C_s**2)
    delta = T**-0.25 * math.sqrt(k / (2.0 * constants.L))
    alpha = constants.C_theta * delta / (b * (constants.C**2 + constants.C_s**2) * math.sqrt(T))
    return alpha, delta


def theoretical_schedule_alg2(T: int, constants: TheoryConstants) -> tuple[float, float]:
    """``(alpha, delta)`` balancing the action-space regret bound; independent of ``b``."""
    if T < 1:
        raise InvalidParameterError("T must be >= 1")
    _require_positive(constants, ("C_theta", "C", "C_s"))
    k = constants.C_theta * (constants.C**2 + 1.0) * constants.C_s
    delta = T**-0.25 * math.sqrt(k / (2.0 * constants.C))
    alpha = constants.C_theta * delta / ((constants.C**2 + 1.0) * constants.C_s * math.sqrt(T))
    return alpha, delta


def regret_bound_alg1(T: int, b: int, constants: TheoryConstants) -> float:
    """Average-regret bound at the theoretical schedule: ``sqrt(C_theta b (C^2+C_s^2) L) T^-1/4``."""
    c = constants
    return math.sqrt(c.C_theta * b * (c.C**2 + c.C_s**2) * c.L) * T**-0.25


def regret_bound_alg2(T: int, constants: TheoryConstants) -> float:
    c = constants
    return math.sqrt(c.C_theta * (c.C**2 + 1.0) * c.C_s * c.C) * T**-0.25


# ---------------------------------------------------------------------------
# full-information baselines


def _batches(inst: OlrInstance, batch: int):
    if batch < 1:
        raise InvalidParameterError("batch must be >= 1")
    buf_X, buf_y, held = [], [], 0
    for X, y in inst.chunks():
        start = 0
        while start < y.size:
            take = min(batch - held, y.size - start)
            buf_X.append(X[start:start + take])
            buf_y.append(y[start:start + take])
            held += take
            start += take
            if held == batch:
                yield np.vstack(buf_X), np.concatenate(buf_y)
                buf_X, buf_y, held = [], [], 0
    if held:
        yield np.vstack(buf_X), np.concatenate(buf_y)


def _run_batched(inst, batch, theta0, update) -> OlrTrace:
    theta = np.zeros(inst.dim_b) if theta0 is None else np.array(theta0, dtype=float).ravel()
    losses = np.empty(inst.T)
    pos = 0
    for X, y in _batches(inst, batch):
        resid = X @ theta - y
        losses[pos:pos + y.size] = resid**2
        pos += y.size
        theta = update(theta, X, resid)
    return OlrTrace(losses, losses.copy(), theta)


def baseline_sgd(inst: OlrInstance, lr: float, batch: int = 64, theta0=None) -> OlrTrace:
    """Mini-batch SGD on the mean squared loss with full access to the targets (unconstrained)."""
    if lr < 0:
        raise InvalidParameterError("lr must be >= 0")

    def update(theta, X, resid):
        return theta - lr * (2.0 / resid.size) * (X.T @ resid)

    return _run_batched(inst, batch, theta0, update)


def baseline_newton(inst: OlrInstance, batch: int = 64, theta0=None, damping: float = 1e-8) -> OlrTrace:
    """Newton steps on each batch's mean squared loss using the damped batch Hessian."""
    def update(theta, X, resid):
        n = resid.size
        hess = (2.0 / n) * (X.T @ X) + damping * np.eye(X.shape[1])
        return theta - np.linalg.solve(hess, (2.0 / n) * (X.T @ resid))

    return _run_batched(inst, batch, theta0, update)
