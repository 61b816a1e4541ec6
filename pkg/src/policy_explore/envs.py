"""Environments, rollouts and synthetic data generators.

The LQR machinery comes in two flavours that produce bit-identical numbers:
the step-based :class:`LqrEnv` (generic :class:`Env` interface) and the
vectorized ``simulate_lqr`` kernel the optimizers use to run many rollouts at
once.  Both draw an episode's initial state and full noise block up front
from the episode generator, and both use ``einsum`` kernels whose per-row
results do not depend on the batch size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Protocol, runtime_checkable

import numpy as np

from .exceptions import DataError, EpisodeError, InvalidDimensionError, InvalidParameterError, NonFiniteError
from .olr import OlrInstance

FORMAT_NAME = "policy_explore.instance"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# policies


class LinearPolicy:
    """Deterministic linear policy ``a = theta @ s`` with ``theta`` of shape (p, b)."""

    def __init__(self, theta):
        theta = np.array(theta, dtype=float, ndmin=2)
        if theta.ndim != 2:
            raise InvalidDimensionError("theta must be a (p, b) matrix")
        if not np.all(np.isfinite(theta)):
            raise DataError("policy parameters must be finite")
        self.theta = theta

    @classmethod
    def zeros(cls, p: int, b: int) -> "LinearPolicy":
        return cls(np.zeros((p, b)))

    @classmethod
    def from_flat(cls, flat, p: int, b: int) -> "LinearPolicy":
        return cls(np.asarray(flat, dtype=float).reshape(p, b))

    @property
    def action_dim(self) -> int:
        return self.theta.shape[0]

    @property
    def state_dim(self) -> int:
        return self.theta.shape[1]

    @property
    def d(self) -> int:
        return self.theta.size

    @property
    def flat(self) -> np.ndarray:
        return self.theta.ravel()

    def act(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.einsum("kij,kj->ki", self.theta[None], s[None], optimize=False)[0]

    def jacobian_transpose_times(self, s, v) -> np.ndarray:
        """Contract the (d x p) policy Jacobian at state ``s`` with an action-space vector ``v``.

        For the linear policy this is ``outer(v, s)`` flattened row-major, i.e.
        the parameter-space direction that moves the action along ``v``.
        Nonlinear policies implementing this method can be used with the
        action-space optimizer unchanged.
        """
        return np.outer(np.asarray(v, dtype=float), np.asarray(s, dtype=float)).ravel()

    def copy(self) -> "LinearPolicy":
        return LinearPolicy(self.theta.copy())

    def __repr__(self):
        return f"LinearPolicy(p={self.action_dim}, b={self.state_dim})"


# ---------------------------------------------------------------------------
# environment interface


@runtime_checkable
class Env(Protocol):
    state_dim: int
    action_dim: int
    horizon: int

    def reset(self, rng: np.random.Generator) -> np.ndarray: ...

    def step(self, action) -> tuple[np.ndarray, float]: ...


class EpisodicEnv:
    """Bookkeeping shared by the concrete environments: step limits and counters."""

    state_dim: int
    action_dim: int
    horizon: int

    def __init__(self):
        self._t = None
        self.total_steps = 0

    def _begin(self):
        self._t = 0

    def _advance(self):
        if self._t is None:
            raise EpisodeError("step() called before reset()")
        if self._t >= self.horizon:
            raise EpisodeError(f"episode already ran its {self.horizon} steps")
        self._t += 1
        self.total_steps += 1

    @property
    def t(self) -> int | None:
        return self._t


@dataclass
class RolloutRecord:
    states: list
    actions: list
    costs: list
    total_cost: float = 0.0

    def __post_init__(self):
        self.total_cost = math.fsum(self.costs)

    @property
    def env_steps(self) -> int:
        return len(self.costs)


def rollout(env: Env, policy, rng: np.random.Generator) -> RolloutRecord:
    s = env.reset(rng)
    states, actions, costs = [s], [], []
    for _ in range(env.horizon):
        a = policy.act(s)
        s, c = env.step(a)
        states.append(s)
        actions.append(a)
        costs.append(c)
    return RolloutRecord(states, actions, costs)


def rollout_perturbed(env: Env, policy, t: int, delta_u, rng: np.random.Generator):
    """Roll in with ``policy`` to step ``t``, add ``delta_u`` to the action there, roll out.

    Returns ``(s_t, Q_to_go)`` where ``Q_to_go`` sums the costs of steps
    ``t .. H-1``.  The episode always runs the full horizon.
    """
    H = env.horizon
    t = int(t)
    if not 0 <= t < H:
        raise InvalidParameterError(f"perturbation step t={t} outside [0, {H})")
    delta_u = np.asarray(delta_u, dtype=float)
    s = env.reset(rng)
    s_t = None
    tail = []
    for k in range(H):
        a = policy.act(s)
        if k == t:
            s_t = s.copy()
            a = a + delta_u
        s, c = env.step(a)
        if k >= t:
            tail.append(c)
    return s_t, math.fsum(tail)


# ---------------------------------------------------------------------------
# LQR


def _mv(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Row-wise ``X @ M.T`` whose per-row result does not depend on the batch size."""
    return np.einsum("nj,ij->ni", X, M, optimize=False)


def _quad(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    return np.einsum("ni,ni->n", X, _mv(X, M), optimize=False)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    if np.array_equal(M, np.diag(np.diag(M))):
        return np.diag(np.sqrt(np.clip(np.diag(M), 0.0, None)))
    w, V = np.linalg.eigh(M)
    return V * np.sqrt(np.clip(w, 0.0, None))


def spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(A)))))


@dataclass(frozen=True, eq=False)
class LqrSpec:
    """Finite-horizon stochastic LQR ``x' = A x + B u + xi``, ``xi ~ N(0, noise_std**2 I)``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    noise_std: float = 0.0
    horizon: int = 50
    init_cov: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        m = B.shape[1]
        init_cov = np.eye(n) if self.init_cov is None else np.atleast_2d(np.asarray(self.init_cov, dtype=float))
        if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m) or init_cov.shape != (n, n):
            raise InvalidDimensionError("inconsistent LQR matrix shapes")
        if spectral_radius(A) >= 1.0:
            raise InvalidParameterError("spectral radius of A must be < 1")
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise InvalidParameterError("Q must be symmetric PSD")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise InvalidParameterError("R must be symmetric positive definite") from None
        if not np.allclose(init_cov, init_cov.T) or np.linalg.eigvalsh(init_cov).min() < -1e-12:
            raise InvalidParameterError("init_cov must be symmetric PSD")
        if not self.noise_std >= 0.0:
            raise InvalidParameterError("noise_std must be >= 0")
        if int(self.horizon) < 1:
            raise InvalidParameterError("horizon must be >= 1")
        for name, value in (("A", A), ("B", B), ("Q", Q), ("R", R), ("init_cov", init_cov)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "noise_std", float(self.noise_std))
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "_init_sqrt", _psd_sqrt(init_cov))
        # stacked kernels acting on z = [x, u]
        object.__setattr__(self, "_AB", np.hstack([A, B]))
        W = np.zeros((n + m, n + m))
        W[:n, :n] = Q
        W[n:, n:] = R
        object.__setattr__(self, "_W", W)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def with_(self, **changes) -> "LqrSpec":
        fields = dict(A=self.A, B=self.B, Q=self.Q, R=self.R, noise_std=self.noise_std,
                      horizon=self.horizon, init_cov=self.init_cov)
        fields.update(changes)
        return LqrSpec(**fields)

    def to_dict(self) -> dict:
        return {
            "kind": "lqr",
            "n": self.n,
            "m": self.m,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "init_cov": self.init_cov.tolist(),
            "noise_std": self.noise_std,
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LqrSpec":
        if data.get("kind") != "lqr":
            raise DataError(f"not an LQR instance: kind={data.get('kind')!r}")
        return cls(A=np.array(data["A"]), B=np.array(data["B"]), Q=np.array(data["Q"]),
                   R=np.array(data["R"]), noise_std=data["noise_std"], horizon=data["horizon"],
                   init_cov=np.array(data["init_cov"]))

    def __eq__(self, other):
        if not isinstance(other, LqrSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def make_random_lqr(rng: np.random.Generator, n: int, m: int, noise_std: float = 0.0, H: int = 50,
                    *, radius: float = 0.95, q_scale: float = 1e-3, r_scale: float = 1.0,
                    structure: str = "gaussian") -> LqrSpec:
    """Random stable LQR: Gaussian ``A`` rescaled to spectral radius ``radius``, Gaussian ``B``.

    ``structure="symmetric"`` symmetrizes the Gaussian draw before rescaling;
    a normal ``A`` has no transient growth, which keeps finite-horizon costs
    and gradients well scaled.  Defaults give ``Q = 1e-3 I``, ``R = I`` and
    ``init_cov = I``.
    """
    if n < 1 or m < 1:
        raise InvalidDimensionError("n and m must be >= 1")
    if structure not in ("gaussian", "symmetric"):
        raise InvalidParameterError(f"unknown structure {structure!r}")
    A = rng.standard_normal((n, n))
    if structure == "symmetric":
        A = (A + A.T) / 2.0
    A *= radius / spectral_radius(A)
    B = rng.standard_normal((n, m))
    return LqrSpec(A=A, B=B, Q=q_scale * np.eye(n), R=r_scale * np.eye(m),
                   noise_std=noise_std, horizon=H, init_cov=np.eye(n))


def feedback_start(spec: LqrSpec, gain: float) -> LinearPolicy:
    """Policy ``-gain * pinv(B)``: pulls the state back along the range of ``B``.

    The closed loop is ``A - gain * P_B`` with ``P_B`` the projector onto
    range(B), so a symmetric ``A`` stays symmetric.
    """
    return LinearPolicy(-float(gain) * np.linalg.pinv(spec.B))


def draw_episode_noise(spec: LqrSpec, rng: np.random.Generator):
    """Initial state and per-step dynamics noise for one episode, in a fixed draw order."""
    x0 = spec._init_sqrt @ rng.standard_normal(spec.n)
    xi = spec.noise_std * rng.standard_normal((spec.horizon, spec.n))
    return x0, xi


def simulate_lqr(spec: LqrSpec, thetas: np.ndarray, x0: np.ndarray, xi: np.ndarray,
                 perturb_t: np.ndarray | None = None, perturb_u: np.ndarray | None = None):
    """Run ``N`` LQR episodes in lockstep.

    ``thetas`` has shape (N, m, n) (one policy per episode), ``x0`` (N, n) and
    ``xi`` (N, H, n).  Optional ``perturb_t`` (N,) / ``perturb_u`` (N, m) add
    an action perturbation at one step per episode.  Returns
    ``(states (N, H+1, n), actions (N, H, m), costs (N, H))``.
    """
    N = thetas.shape[0]
    H, n, m = spec.horizon, spec.n, spec.m
    states = np.empty((N, H + 1, n))
    actions = np.empty((N, H, m))
    costs = np.empty((N, H))
    z = np.empty((N, n + m))
    z[:, :n] = np.array(x0, dtype=float).reshape(N, n)
    states[:, 0] = z[:, :n]
    for t in range(H):
        z[:, n:] = np.einsum("kij,kj->ki", thetas, z[:, :n], optimize=False)
        if perturb_t is not None:
            hit = perturb_t == t
            if hit.any():
                z[hit, n:] += perturb_u[hit]
        costs[:, t] = _quad(z, spec._W)
        actions[:, t] = z[:, n:]
        z[:, :n] = _mv(z, spec._AB) + xi[:, t]
        states[:, t + 1] = z[:, :n]
    return states, actions, costs


def _policy_theta(spec: LqrSpec, policy) -> np.ndarray:
    theta = policy.theta if isinstance(policy, LinearPolicy) else np.atleast_2d(np.asarray(policy, dtype=float))
    if theta.shape != (spec.m, spec.n):
        raise InvalidDimensionError(f"policy shape {theta.shape} does not match LQR (m={spec.m}, n={spec.n})")
    return theta


def lqr_rollout(spec: LqrSpec, policy, rng: np.random.Generator, x0=None) -> RolloutRecord:
    """One LQR episode under ``policy``; ``x0`` overrides the random initial state."""
    theta = _policy_theta(spec, policy)
    x0_draw, xi = draw_episode_noise(spec, rng)
    if x0 is not None:
        x0_draw = np.asarray(x0, dtype=float).reshape(spec.n)
    states, actions, costs = simulate_lqr(spec, theta[None], x0_draw[None], xi[None])
    return RolloutRecord(list(states[0]), list(actions[0]), list(costs[0]))


def lqr_rollout_costs(spec: LqrSpec, thetas: np.ndarray, rngs) -> np.ndarray:
    """Total cost of one episode per (policy, generator) pair, simulated in a batch."""
    draws = [draw_episode_noise(spec, r) for r in rngs]
    x0 = np.stack([d[0] for d in draws])
    xi = np.stack([d[1] for d in draws])
    _, _, costs = simulate_lqr(spec, np.asarray(thetas, dtype=float), x0, xi)
    return np.array([math.fsum(row) for row in costs])


def _closed_loop(spec: LqrSpec, theta: np.ndarray):
    Ac = spec.A + spec.B @ theta
    S = spec.Q + theta.T @ spec.R @ theta
    return Ac, S


def _state_covariances(spec: LqrSpec, Ac: np.ndarray) -> list[np.ndarray]:
    noise = spec.noise_std**2 * np.eye(spec.n)
    M = [spec.init_cov.copy()]
    for _ in range(spec.horizon - 1):
        M.append(Ac @ M[-1] @ Ac.T + noise)
    return M


def lqr_exact_objective(spec: LqrSpec, policy) -> float:
    """Expected total cost via the state-covariance recursion."""
    theta = _policy_theta(spec, policy)
    Ac, S = _closed_loop(spec, theta)
    return float(sum(np.sum(S * M) for M in _state_covariances(spec, Ac)))


def lqr_exact_gradient(spec: LqrSpec, policy) -> np.ndarray:
    """Gradient of :func:`lqr_exact_objective` w.r.t. ``theta`` (flattened), by adjoint recursion."""
    theta = _policy_theta(spec, policy)
    Ac, S = _closed_loop(spec, theta)
    Ms = _state_covariances(spec, Ac)
    P_next = np.zeros((spec.n, spec.n))
    RT = spec.R @ theta
    grad = np.zeros_like(theta)
    for t in range(spec.horizon - 1, -1, -1):
        grad += 2.0 * (RT + spec.B.T @ P_next @ Ac) @ Ms[t]
        P_next = S + Ac.T @ P_next @ Ac
    return grad.ravel()


class LqrEnv(EpisodicEnv):
    """Step-based view of an :class:`LqrSpec`."""

    def __init__(self, spec: LqrSpec):
        super().__init__()
        self.spec = spec
        self.state_dim = spec.n
        self.action_dim = spec.m
        self.horizon = spec.horizon
        self._x = None
        self._xi = None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        x0, self._xi = draw_episode_noise(self.spec, rng)
        self._x = x0[None]
        self._begin()
        return x0.copy()

    def step(self, action):
        t = self._t
        self._advance()
        u = np.asarray(action, dtype=float).reshape(1, self.spec.m)
        z = np.hstack([self._x, u])
        cost = float(_quad(z, self.spec._W)[0])
        self._x = _mv(z, self.spec._AB) + self._xi[t]
        if not np.isfinite(cost):
            raise NonFiniteError("non-finite LQR cost")
        return self._x[0].copy(), cost


class StaticQuadraticEnv(EpisodicEnv):
    """Deterministic toy: the state never changes and each step costs ``|a - target|^2``.

    ``J(theta) = H * |theta s - target|^2`` with gradient
    ``2 H (theta s - target) s^T``; used to check action-space estimates.
    """

    def __init__(self, state, target, horizon: int = 1):
        super().__init__()
        self.state = np.asarray(state, dtype=float).ravel()
        self.target = np.asarray(target, dtype=float).ravel()
        self.state_dim = self.state.size
        self.action_dim = self.target.size
        self.horizon = int(horizon)

    def reset(self, rng=None):
        self._begin()
        return self.state.copy()

    def step(self, action):
        self._advance()
        diff = np.asarray(action, dtype=float) - self.target
        return self.state.copy(), float(diff @ diff)

    def objective(self, policy) -> float:
        diff = policy.theta @ self.state - self.target
        return float(self.horizon * diff @ diff)

    def gradient(self, policy) -> np.ndarray:
        diff = policy.theta @ self.state - self.target
        return (2.0 * self.horizon * np.outer(diff, self.state)).ravel()


# ---------------------------------------------------------------------------
# synthetic data


def gen_regression_stream(rng: np.random.Generator, b: int, T: int, *, noise_std: float = 0.001,
                          cov_trace: float | None = None, w_norm: float | None = None,
                          bias: float | None = None, C_theta: float | None = None,
                          C_s: float | None = None) -> OlrInstance:
    """Linear-regression stream: bias feature 1 plus correlated Gaussian features.

    The ``b - 1`` non-bias features are ``N(0, Sigma)`` with ``Sigma = C^T C``
    (``C`` standard normal) rescaled to trace ``cov_trace`` (default ``b``);
    targets are ``w @ x + eps`` with ``eps ~ N(0, noise_std**2)``.  ``w`` is
    standard normal; ``w_norm`` rescales its non-bias part to that norm and
    ``bias`` pins the bias weight ``w[0]``.  ``C_theta`` defaults to ``|w|``.
    When ``C_s`` is
    given, features are radially clipped to that norm before targets are
    formed; the clip fraction is reported by :meth:`OlrInstance.moments`.
    """
    b, T = int(b), int(T)
    if b < 2:
        raise InvalidDimensionError("b must be >= 2 (bias slot plus features)")
    if T < 0:
        raise InvalidParameterError("T must be >= 0")
    k = b - 1
    Cm = rng.standard_normal((k, k))
    cov = Cm.T @ Cm
    cov *= (b if cov_trace is None else float(cov_trace)) / np.trace(cov)
    w = rng.standard_normal(b)
    if w_norm is not None:
        w[1:] *= float(w_norm) / np.linalg.norm(w[1:])
    if bias is not None:
        w[0] = float(bias)
    chol = np.linalg.cholesky(cov + 1e-12 * np.trace(cov) / k * np.eye(k))
    state = rng.bit_generator.state
    ctor = type(rng.bit_generator)

    def chunks(chunk_size: int = OlrInstance.CHUNK) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        g = np.random.Generator(ctor())
        g.bit_generator.state = state
        done = 0
        while done < T:
            rows = min(chunk_size, T - done)
            X = np.empty((rows, b))
            X[:, 0] = 1.0
            X[:, 1:] = g.standard_normal((rows, k)) @ chol.T
            eps = noise_std * g.standard_normal(rows)
            if C_s is not None:
                norms = np.linalg.norm(X, axis=1)
                over = norms > C_s
                X[over] *= (C_s / norms[over])[:, None]
            yield X, X @ w + eps
            done += rows

    return OlrInstance(dim_b=b, T=T, C_theta=float(np.linalg.norm(w)) if C_theta is None else float(C_theta),
                       source=chunks, C_s=C_s, truth=w,
                       meta={"noise_std": noise_std, "cov_trace": cov_trace, "w_norm": w_norm, "bias": bias})


@dataclass
class BanditInstance:
    """K-armed linear contextual bandit built from Gaussian clusters.

    Pulling arm ``a`` on context ``x`` with label ``y`` earns ``+1`` if
    ``a == y`` and ``-1`` otherwise.
    """

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    n_actions: int
    means: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return self.X_train.shape[1]

    @staticmethod
    def reward(actions, labels) -> np.ndarray:
        return np.where(np.asarray(actions) == np.asarray(labels), 1.0, -1.0)

    def test_accuracy(self, theta) -> float:
        pred = np.argmax(self.X_test @ np.asarray(theta).T, axis=1)
        return float(np.mean(pred == self.y_test))

    def to_dict(self) -> dict:
        return {"kind": "bandit", "n_actions": self.n_actions,
                "X_train": self.X_train.tolist(), "y_train": self.y_train.tolist(),
                "X_test": self.X_test.tolist(), "y_test": self.y_test.tolist(),
                "means": None if self.means is None else self.means.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "BanditInstance":
        return cls(np.array(data["X_train"]), np.array(data["y_train"], dtype=np.int64),
                   np.array(data["X_test"]), np.array(data["y_test"], dtype=np.int64),
                   int(data["n_actions"]), None if data.get("means") is None else np.array(data["means"]))


def gen_contextual_bandit(rng: np.random.Generator, b: int, K: int, n_train: int, n_test: int,
                          *, separation: float = 1.0, noise: float = 1.0) -> BanditInstance:
    """Contexts ``mu_y + noise * z / sqrt(b)`` with ``K`` random cluster means of norm ``separation``."""
    if K < 2:
        raise InvalidParameterError("K must be >= 2")
    means = rng.standard_normal((K, b))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(count):
        y = rng.integers(0, K, size=count)
        X = means[y] + noise * rng.standard_normal((count, b)) / np.sqrt(b)
        return X, y

    X_train, y_train = draw(n_train)
    X_test, y_test = draw(n_test)
    return BanditInstance(X_train, y_train, X_test, y_test, K, means)


# ---------------------------------------------------------------------------
# serialization


def save_instance(obj, path) -> None:
    """Write an LQR spec or bandit instance to a versioned JSON document."""
    body = obj.to_dict()
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION, **body}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_instance(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT_NAME:
        raise DataError(f"{path}: not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported version {doc.get('version')}")
    kind = doc.get("kind")
    if kind == "lqr":
        return LqrSpec.from_dict(doc)
    if kind == "bandit":
        return BanditInstance.from_dict(doc)
    raise DataError(f"{path}: unknown instance kind {kind!r}")
