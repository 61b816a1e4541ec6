"""Random sampling primitives and zeroth-order / score-function gradient estimators.

Every estimator here is a pure function of its arguments.  Randomness only
enters through the samplers, which take an explicit ``numpy.random.Generator``
built by :func:`make_rng` so that experiments are replayable per
``(seed, stream_id)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import (
    InvalidActionError,
    InvalidBatchError,
    InvalidConstantsError,
    InvalidDimensionError,
    InvalidParameterError,
    InvalidPerturbationError,
    NonFiniteError,
    SingularMatrixError,
)

__all__ = [
    "Scheme",
    "Stream",
    "GradEstimate",
    "TheoryConstants",
    "make_rng",
    "sample_unit_sphere",
    "sample_unit_ball",
    "sample_rademacher",
    "one_point_sphere_grad",
    "two_point_sphere_grad",
    "action_sign_grad",
    "action_space_pg_grad",
    "reinforce_gaussian_grad",
    "reinforce_categorical_grad",
    "natural_direction",
    "softmax",
]

_UNIT_TOL = 1e-9


class Stream(enum.IntEnum):
    """Sub-stream ids, one per algorithmic role."""

    DATA = 0
    EXPLORATION = 1
    ENVIRONMENT = 2
    EVALUATION = 3
    INIT = 4
    TUNING = 5


def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return a counter-based generator for ``(seed, stream_id)``.

    Distinct stream ids give independent streams (SeedSequence spawn keys);
    the same pair always replays the same sequence.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


class Scheme(str, enum.Enum):
    ONE_POINT_SPHERE = "OnePointSphere"
    TWO_POINT_SPHERE = "TwoPointSphere"
    ACTION_SIGN = "ActionSign"
    ACTION_SPACE_PG = "ActionSpacePG"
    REINFORCE_GAUSSIAN = "ReinforceGaussian"
    REINFORCE_CATEGORICAL = "ReinforceCategorical"
    NATURAL_REINFORCE = "NaturalReinforce"


@dataclass(frozen=True)
class GradEstimate:
    """A gradient estimate plus the bookkeeping needed for sample accounting."""

    g: np.ndarray
    scheme: Scheme
    delta: float = float("nan")
    env_steps: int = 1

    def __post_init__(self):
        if not np.all(np.isfinite(self.g)):
            raise NonFiniteError(f"{self.scheme.value} estimate is not finite")
        if self.env_steps < 1:
            raise ValueError("env_steps must be >= 1")

    @property
    def dim(self) -> int:
        return int(self.g.size)


@dataclass(frozen=True)
class TheoryConstants:
    """Problem-dependent constants used by the regret/convergence bounds."""

    C_theta: float = 0.0
    C_s: float = 0.0
    C_a: float = 0.0
    C: float = 0.0
    L: float = 0.0
    G: float = 0.0
    K: float = 0.0
    U: float = 0.0
    W: float = 0.0
    Q_bound: float = 0.0
    sigma: float = 0.0
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for name in ("C_theta", "C_s", "C_a", "C", "L", "G", "K", "U", "W", "Q_bound", "sigma"):
            value = getattr(self, name)
            if not (value >= 0.0 and math.isfinite(value)):
                raise InvalidConstantsError(f"{name} must be finite and >= 0, got {value}")

    @classmethod
    def from_olr_bounds(cls, C_theta: float, C_s: float, C_a: float) -> "TheoryConstants":
        """Derive the loss bound ``C`` and Lipschitz constant ``L`` from the data bounds.

        ``C = (C_theta*C_s + C_a)**2`` bounds the squared loss over the feasible
        ball and ``L = (C_theta*C_s + C_a)*C_s`` is the stated Lipschitz bound.
        """
        reach = C_theta * C_s + C_a
        return cls(C_theta=C_theta, C_s=C_s, C_a=C_a, C=reach**2, L=reach * C_s)


# ---------------------------------------------------------------------------
# samplers


def _check_dim(n: int) -> int:
    n = int(n)
    if n < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {n}")
    return n


def sample_unit_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draw from the unit sphere in ``R^n`` (normalized Gaussian)."""
    n = _check_dim(n)
    while True:
        z = rng.standard_normal(n)
        norm = np.linalg.norm(z)
        if norm > 0.0:
            return z / norm


def sample_unit_ball(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draw from the unit ball in ``R^n``."""
    n = _check_dim(n)
    u = sample_unit_sphere(rng, n)
    return u * rng.random() ** (1.0 / n)


def sample_rademacher(rng: np.random.Generator) -> int:
    return 1 if rng.random() < 0.5 else -1


# ---------------------------------------------------------------------------
# zeroth-order estimators


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not delta > 0.0:
        raise InvalidPerturbationError(f"delta must be > 0, got {delta}")
    return delta


def _check_unit(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    if u.size == 0:
        raise InvalidDimensionError("direction must be non-empty")
    if abs(np.linalg.norm(u) - 1.0) > _UNIT_TOL:
        raise InvalidParameterError("direction must have unit norm")
    return u


def one_point_sphere_grad(f_value: float, u, delta: float) -> GradEstimate:
    """One-point sphere estimate ``(n f / delta) u``.

    Unbiased for the gradient of the ball-smoothed objective.
    """
    delta = _check_delta(delta)
    u = _check_unit(u)
    g = (u.size * float(f_value) / delta) * u
    return GradEstimate(g, Scheme.ONE_POINT_SPHERE, delta, 1)


def two_point_sphere_grad(f_plus: float, f_minus: float, u, delta: float) -> GradEstimate:
    """Antithetic estimate ``n (f+ - f-) / (2 delta) u`` from evaluations at ``theta +- delta u``."""
    delta = _check_delta(delta)
    u = _check_unit(u)
    g = (u.size * (float(f_plus) - float(f_minus)) / (2.0 * delta)) * u
    return GradEstimate(g, Scheme.TWO_POINT_SPHERE, delta, 2)


def action_sign_grad(cost: float, e: int, s, delta: float) -> GradEstimate:
    """Scalar-action estimate ``(cost * e / delta) s`` for a linear predictor.

    ``e`` is the Rademacher sign used to perturb the prediction and ``s`` is the
    feature vector, i.e. the Jacobian of ``theta @ s`` with respect to ``theta``.
    """
    delta = _check_delta(delta)
    if e not in (-1, 1):
        raise InvalidParameterError(f"e must be -1 or +1, got {e}")
    s = np.asarray(s, dtype=float).ravel()
    g = (float(cost) * e / delta) * s
    return GradEstimate(g, Scheme.ACTION_SIGN, delta, 1)


def action_space_pg_grad(Q_tilde: float, u, s_t, H: int, delta: float) -> GradEstimate:
    """Action-space estimate for a linear policy ``a = Theta s``.

    Returns ``H * (p * Q_tilde / delta) * outer(u, s_t)`` flattened row-major,
    which is the Jacobian-transpose contraction ``Psi @ v`` with
    ``v = H p Q_tilde u / delta`` and ``Psi`` the ``d x p`` policy Jacobian.
    """
    delta = _check_delta(delta)
    u = _check_unit(u)
    H = int(H)
    if H < 1:
        raise InvalidParameterError(f"H must be >= 1, got {H}")
    s_t = np.asarray(s_t, dtype=float).ravel()
    scale = H * u.size * float(Q_tilde) / delta
    with np.errstate(over="ignore", invalid="ignore"):  # GradEstimate rejects non-finite g
        g = np.outer(scale * u, s_t).ravel()
    return GradEstimate(g, Scheme.ACTION_SPACE_PG, delta, H)


# ---------------------------------------------------------------------------
# score-function estimators


def reinforce_gaussian_grad(features, noisy_preds, rewards, w, beta: float) -> GradEstimate:
    """Gradient (for ascent) of the Gaussian-exploration REINFORCE surrogate.

    ``(1/N) sum_i r_i (yhat_i - w @ x_i) / beta**2 * x_i`` where ``yhat_i`` is the
    noise-perturbed prediction that earned reward ``r_i``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    yhat = np.asarray(noisy_preds, dtype=float).ravel()
    r = np.asarray(rewards, dtype=float).ravel()
    if X.shape[0] == 0 or not (X.shape[0] == yhat.size == r.size):
        raise InvalidBatchError("features, noisy_preds and rewards must share a length N >= 1")
    beta = float(beta)
    if not beta > 0.0:
        raise InvalidParameterError(f"beta must be > 0, got {beta}")
    w = np.asarray(w, dtype=float).ravel()
    coef = r * (yhat - X @ w) / beta**2
    g = coef @ X / X.shape[0]
    return GradEstimate(g, Scheme.REINFORCE_GAUSSIAN, beta, X.shape[0])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def reinforce_categorical_grad(features, actions, rewards, theta) -> GradEstimate:
    """Score-function gradient (for ascent) of a softmax-linear policy.

    ``(1/N) sum_i r_i (onehot(a_i) - softmax(theta x_i)) x_i^T``, flattened
    row-major to length ``K*b``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    a = np.asarray(actions).ravel()
    r = np.asarray(rewards, dtype=float).ravel()
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    K = theta.shape[0]
    if X.shape[0] == 0 or not (X.shape[0] == a.size == r.size):
        raise InvalidBatchError("features, actions and rewards must share a length N >= 1")
    if not np.issubdtype(a.dtype, np.integer):
        if not np.all(np.mod(a, 1) == 0):
            raise InvalidActionError("actions must be integer class indices")
        a = a.astype(np.int64)
    if a.min() < 0 or a.max() >= K:
        raise InvalidActionError(f"action indices must lie in [0, {K})")
    probs = softmax(X @ theta.T)
    resid = -probs
    resid[np.arange(a.size), a] += 1.0
    g = ((r[:, None] * resid).T @ X) / X.shape[0]
    return GradEstimate(g.ravel(), Scheme.REINFORCE_CATEGORICAL, float("nan"), X.shape[0])


def natural_direction(score_vectors: Sequence, g, damping: float = 1e-3) -> np.ndarray:
    """Solve ``(F + damping I) x = g`` with ``F`` the empirical Fisher matrix.

    ``F = (1/N) sum_i s_i s_i^T`` over the per-sample score vectors.
    """
    S = np.atleast_2d(np.asarray(score_vectors, dtype=float))
    if S.shape[0] == 0 or S.size == 0:
        raise InvalidBatchError("score_vectors must be non-empty")
    g = np.asarray(g, dtype=float).ravel()
    if S.shape[1] != g.size:
        raise InvalidDimensionError("score vectors and g must have the same length")
    damping = float(damping)
    if damping < 0.0:
        raise InvalidParameterError("damping must be >= 0")
    N, d = S.shape
    if not np.any(g):
        return np.zeros_like(g)

    def apply(x):
        return S.T @ (S @ x) / N + damping * x

    if damping > 0.0 and 2 * N < d:
        # few samples, many parameters: Woodbury identity on the N x N system
        core = S @ S.T + N * damping * np.eye(N)

        def solve(rhs):
            return (rhs - S.T @ np.linalg.solve(core, S @ rhs)) / damping
    else:
        F = S.T @ S / N
        F[np.diag_indices_from(F)] += damping
        if damping == 0.0 and np.linalg.matrix_rank(F) < d:
            raise SingularMatrixError("empirical Fisher matrix is singular; use damping > 0")

        def solve(rhs):
            return np.linalg.solve(F, rhs)

    try:
        x = solve(g)
        resid = np.linalg.norm(apply(x) - g)
        if resid > 1e-8 * np.linalg.norm(g):
            # one step of iterative refinement recovers the accuracy lost to conditioning
            x = x + solve(g - apply(x))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    if np.linalg.norm(apply(x) - g) > 1e-8 * np.linalg.norm(g):
        raise SingularMatrixError("Fisher system too ill-conditioned to solve accurately")
    return x
