"""Preset experiments: default documents, cell construction and per-cell runners.

Every cell is a plain picklable :class:`Cell`; :func:`run_cell` turns it into
CSV rows.  Random streams per cell are ``make_rng(seed, Stream.X)``, so cells
never share generator state and can run in any order or process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..bandit import run_ars, run_natural_reinforce, run_reinforce
from ..envs import (
    feedback_start,
    gen_contextual_bandit,
    gen_regression_stream,
    load_instance,
    make_random_lqr,
    LqrSpec,
)
from ..estimators import Stream, make_rng
from ..exceptions import ConfigError, NonFiniteError
from ..olr import (
    baseline_newton,
    baseline_sgd,
    regret_bound_alg1,
    regret_bound_alg2,
    run_alg1,
    run_alg2,
    theoretical_schedule_alg1,
    theoretical_schedule_alg2,
)
from ..policysearch import Method, SearchConfig, run_action_search, run_param_search, run_until_stationary
from .config import ExperimentConfig, Preset

LQR_NOISE_GRID = [1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1]
LQR_ALPHA_GRID = [1e-4, 3e-4, 5e-4, 8e-4, 1e-3, 3e-3, 5e-3, 8e-3, 1e-2]
LQR_DELTA_GRID = [0.01, 0.05, 0.1]


@dataclass(frozen=True)
class Cell:
    preset: str
    algorithm: str
    seed: int
    cell_key: str
    env: dict
    hyperparams: dict
    budget: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def sort_key(self):
        return (self.preset, self.algorithm, self.seed, self.cell_key, flatten(self.hyperparams))


def fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def flatten(params: dict) -> str:
    return ";".join(f"{k}={fmt(v)}" for k, v in sorted(params.items()) if v is not None)


def make_row(cell: Cell, step: int, metric: str, value: float) -> tuple:
    return (cell.preset, cell.algorithm, cell.seed, flatten(cell.env), flatten(cell.hyperparams),
            int(step), metric, float(value))


def _budget_for(budget: dict, key: str, algorithm: str):
    value = budget.get(key)
    if isinstance(value, dict):
        if algorithm not in value:
            raise ConfigError(f"budget.{key} has no entry for {algorithm}")
        return value[algorithm]
    return value


class PresetDef:
    preset: Preset
    algorithms: tuple[str, ...] = ()
    required: dict[str, tuple[str, ...]] = {}

    def defaults(self) -> dict:
        raise NotImplementedError

    def validate(self, cfg: ExperimentConfig) -> None:
        if not cfg.algorithms:
            raise ConfigError("algorithms must be non-empty")
        for alg in cfg.algorithms:
            if alg not in self.algorithms:
                raise ConfigError(f"{cfg.preset.value} does not know algorithm {alg!r}; choose from {self.algorithms}")
        for point in cfg.env_points():
            key = cfg.cell_key(point)
            for alg in cfg.algorithms:
                hp = cfg.hyperparams_for(alg, key)
                missing = [k for k in self.required.get(alg, ()) if k not in hp]
                if missing and not self.has_fallback(alg, hp):
                    raise ConfigError(f"hyperparams for {alg} at {key} lack {missing}")

    def has_fallback(self, algorithm: str, hp: dict) -> bool:
        return False

    def cells(self, cfg: ExperimentConfig, seeds=None, hyperparams=None) -> list[Cell]:
        """One cell per (algorithm, env point, seed); ``hyperparams`` overrides the table."""
        out = []
        for point in cfg.env_points():
            key = cfg.cell_key(point)
            for alg in cfg.algorithms:
                hp = cfg.hyperparams_for(alg, key) if hyperparams is None else dict(hyperparams)
                for seed in (cfg.seeds if seeds is None else seeds):
                    out.append(Cell(cfg.preset.value, alg, int(seed), key, dict(point), hp,
                                    dict(cfg.budget), dict(cfg.options)))
        return sorted(out, key=Cell.sort_key)

    def run(self, cell: Cell) -> list[tuple]:
        raise NotImplementedError

    def score(self, cell: Cell, rows: list[tuple]) -> float:
        """Tuning objective for one run (lower is better)."""
        raise NotImplementedError


def _final(rows, metric):
    vals = [(r[5], r[7]) for r in rows if r[6] == metric]
    return max(vals)[1] if vals else None


# ---------------------------------------------------------------------------
# online linear regression


class OlrDimSweep(PresetDef):
    preset = Preset.OLR_DIM_SWEEP
    algorithms = ("Alg1", "Alg2", "SGD", "Newton")
    required = {"Alg1": ("alpha", "delta"), "Alg2": ("alpha", "delta"), "SGD": ("lr",)}

    def defaults(self) -> dict:
        tuned1 = {"b=10": {"alpha": 0.003, "delta": 0.1},
                  "b=100": {"alpha": 0.003, "delta": 1.0},
                  "b=1000": {"alpha": 0.001, "delta": 1.0}}
        tuned2 = {"b=10": {"alpha": 0.03, "delta": 0.1},
                  "b=100": {"alpha": 0.03, "delta": 0.1},
                  "b=1000": {"alpha": 0.03, "delta": 0.1}}
        return {
            "algorithms": ["Alg1", "Alg2"],
            "env": {"b": [10, 100, 1000], "T": 100_000, "noise_std": 0.001, "cov_trace": 1.0,
                    "C_s": 3.0, "C_theta": 2.0, "w_norm": 1.0, "bias": 1.0},
            "grid": {"Alg1": {"alpha": [0.0003, 0.001, 0.003, 0.01, 0.03], "delta": [0.1, 0.3, 1.0]},
                     "Alg2": {"alpha": [0.001, 0.003, 0.01, 0.03, 0.1], "delta": [0.03, 0.1, 0.3]},
                     "SGD": {"lr": [0.001, 0.01, 0.1]}},
            "hyperparams": {"Alg1": tuned1, "Alg2": tuned2, "SGD": {"default": {"lr": 0.01, "batch": 64}},
                            "Newton": {"default": {"batch": 64}}},
            "budget": {"checkpoints": 10},
            "options": {},
        }

    def has_fallback(self, algorithm, hp):
        return algorithm in ("Alg1", "Alg2") and hp.get("schedule") == "theory"

    def run(self, cell):
        env, hp = cell.env, cell.hyperparams
        b, T = int(env["b"]), int(env["T"])
        inst = gen_regression_stream(make_rng(cell.seed, Stream.DATA), b, T, noise_std=env.get("noise_std", 0.001),
                                     cov_trace=env.get("cov_trace"), w_norm=env.get("w_norm"), bias=env.get("bias"),
                                     C_theta=env.get("C_theta"), C_s=env.get("C_s"))
        rng = make_rng(cell.seed, Stream.EXPLORATION)
        rows = []
        alg = cell.algorithm
        if alg in ("Alg1", "Alg2"):
            constants = inst.bounds()
            if "alpha" in hp and "delta" in hp:
                alpha, delta = float(hp["alpha"]), float(hp["delta"])
            elif alg == "Alg1":
                alpha, delta = theoretical_schedule_alg1(T, b, constants)
            else:
                alpha, delta = theoretical_schedule_alg2(T, constants)
            trace = (run_alg1 if alg == "Alg1" else run_alg2)(inst, alpha, delta, rng)
            bound = regret_bound_alg1(T, b, constants) if alg == "Alg1" else regret_bound_alg2(T, constants)
            rows.append(make_row(cell, T, "regret_bound", bound))
        elif alg == "SGD":
            trace = baseline_sgd(inst, float(hp["lr"]), int(hp.get("batch", 64)))
        else:
            trace = baseline_newton(inst, int(hp.get("batch", 64)))
        cum = trace.cum_loss
        n_ck = int(cell.budget.get("checkpoints", 10))
        for k in range(1, n_ck + 1):
            t = k * T // n_ck
            if t > 0:
                rows.append(make_row(cell, t, "avg_incurred_loss", cum[t - 1] / t))
        rows.append(make_row(cell, T, "average_regret", inst.average_regret(trace)))
        return rows

    def score(self, cell, rows):
        return _final(rows, "average_regret")


# ---------------------------------------------------------------------------
# contextual bandit


class BanditDvsP(PresetDef):
    preset = Preset.BANDIT_D_VS_P
    algorithms = ("Reinforce", "NaturalReinforce", "ARS")
    required = {"Reinforce": ("lr", "batch"), "NaturalReinforce": ("lr", "batch"),
                "ARS": ("alpha", "delta", "batch")}

    def defaults(self) -> dict:
        return {
            "algorithms": ["Reinforce", "ARS"],
            "env": {"b": 500, "K": 10, "n_train": 20_000, "n_test": 2_000, "separation": 1.0, "noise": 4.5},
            "grid": {"Reinforce": {"lr": [0.003, 0.01, 0.03, 0.1], "batch": [10, 100]},
                     "NaturalReinforce": {"lr": [0.01, 0.1, 1.0], "batch": [10, 100]},
                     "ARS": {"alpha": [0.01, 0.1, 1.0], "delta": [0.1, 1.0, 3.0]}},
            # grid search on the tuning seeds (policy-explore tune BanditDvsP)
            "hyperparams": {"Reinforce": {"default": {"lr": 0.03, "batch": 10}},
                            "NaturalReinforce": {"default": {"lr": 0.1, "batch": 10, "damping": 1e-3}},
                            "ARS": {"default": {"alpha": 0.01, "delta": 3.0, "batch": 100,
                                                "num_directions": 10, "top_directions": 10}}},
            "budget": {"max_samples": {"Reinforce": 200_000, "NaturalReinforce": 200_000, "ARS": 2_000_000}},
            "options": {"target_accuracy": 0.9, "eval_every": 500},
        }

    def run(self, cell):
        env, hp, alg = cell.env, cell.hyperparams, cell.algorithm
        inst = gen_contextual_bandit(make_rng(cell.seed, Stream.DATA), int(env["b"]), int(env["K"]),
                                     int(env["n_train"]), int(env["n_test"]),
                                     separation=float(env["separation"]), noise=float(env["noise"]))
        rng = make_rng(cell.seed, Stream.EXPLORATION)
        cap = int(_budget_for(cell.budget, "max_samples", alg))
        kw = dict(max_samples=cap, eval_every=int(cell.options.get("eval_every", 500)),
                  target=cell.options.get("target_accuracy"), stop_at_target=True)
        if alg == "Reinforce":
            curve = run_reinforce(inst, float(hp["lr"]), int(hp["batch"]), rng, **kw)
        elif alg == "NaturalReinforce":
            curve = run_natural_reinforce(inst, float(hp["lr"]), int(hp["batch"]), rng,
                                          damping=float(hp.get("damping", 1e-3)), **kw)
        else:
            curve = run_ars(inst, float(hp["alpha"]), float(hp["delta"]), int(hp["batch"]), rng,
                            num_directions=int(hp.get("num_directions", 10)),
                            top_directions=hp.get("top_directions"), **kw)
        rows = [make_row(cell, s, "test_accuracy", a) for s, a in zip(curve.samples, curve.accuracy)]
        reached = curve.samples_to_target is not None
        end = curve.total_samples
        rows.append(make_row(cell, end, "reached_target", 1.0 if reached else 0.0))
        rows.append(make_row(cell, end, "samples_to_target", curve.samples_to_target if reached else end))
        return rows

    def score(self, cell, rows):
        cap = int(_budget_for(cell.budget, "max_samples", cell.algorithm))
        if _final(rows, "reached_target") == 1.0:
            return _final(rows, "samples_to_target")
        return cap * (2.0 - _final(rows, "test_accuracy"))


# ---------------------------------------------------------------------------
# LQR


def build_lqr(env: dict, horizon: int, noise_cov: float) -> LqrSpec:
    """The preset's LQR system; A and B depend only on ``instance_seed`` (or the pinned file)."""
    noise_std = math.sqrt(float(noise_cov))
    if env.get("instance_file"):
        spec = load_instance(env["instance_file"])
        if not isinstance(spec, LqrSpec):
            raise ConfigError(f"{env['instance_file']} does not hold an LQR instance")
        return spec.with_(horizon=int(horizon), noise_std=noise_std)
    return make_random_lqr(make_rng(int(env.get("instance_seed", 0)), Stream.DATA), int(env["n"]), int(env["m"]),
                           noise_std, int(horizon), radius=float(env.get("radius", 0.95)),
                           q_scale=float(env.get("q_scale", 1e-3)), r_scale=float(env.get("r_scale", 1.0)),
                           structure=env.get("structure", "gaussian"))


def _search_config(hp: dict, max_env_steps: int, eval_every: int = 10**9, eval_rollouts: int = 0) -> SearchConfig:
    return SearchConfig(alpha=float(hp["alpha"]), delta=float(hp["delta"]),
                        num_directions=int(hp.get("num_directions", 1)),
                        top_directions=hp.get("top_directions"), max_env_steps=int(max_env_steps),
                        eval_every=int(eval_every), eval_rollouts=int(eval_rollouts))


_LQR_ENV_KEYS = ("n", "m", "radius", "q_scale", "structure", "init_gain", "instance_seed")


class HorizonSweep(PresetDef):
    preset = Preset.HORIZON_SWEEP
    algorithms = ("ParamSearch", "ActionSearch")
    required = {"ParamSearch": ("alpha", "delta"), "ActionSearch": ("alpha", "delta")}

    def defaults(self) -> dict:
        base = {"num_directions": 10}
        # grid search on the tuning seeds (policy-explore tune HorizonSweep); delta=0.1 won everywhere
        param = {1: 8e-4, 2: 5e-4, 5: 5e-4, 10: 3e-4, 20: 3e-4, 40: 3e-4}
        action = {1: 1e-3, 2: 5e-4, 5: 3e-4, 10: 1e-4, 20: 1e-4, 40: 5e-5}

        def per_h(alphas, default_alpha):
            tuned = {f"H={h}": dict(base, alpha=a, delta=0.1) for h, a in alphas.items()}
            return dict({"default": dict(base, alpha=default_alpha, delta=0.1)}, **tuned)

        return {
            "algorithms": ["ParamSearch", "ActionSearch"],
            "env": {"n": 50, "m": 1, "H": [1, 2, 5, 10, 20, 40], "noise_cov": 0.0, "radius": 0.95,
                    "structure": "symmetric", "init_gain": 0.5, "instance_seed": 0, "instance_file": None},
            "grid": {"default": {"alpha": [2e-5, 5e-5] + LQR_ALPHA_GRID, "delta": LQR_DELTA_GRID}},
            "hyperparams": {"ParamSearch": per_h(param, 1e-4), "ActionSearch": per_h(action, 5e-5)},
            "budget": {"samples_per_H": 10_000, "checkpoints": 10, "eval_rollouts": 10},
            "options": {},
        }

    def run(self, cell):
        env, hp, alg = cell.env, cell.hyperparams, cell.algorithm
        H = int(env["H"])
        spec = build_lqr(env, H, env.get("noise_cov", 0.0))
        policy0 = feedback_start(spec, float(env.get("init_gain", 0.0)))
        budget = int(cell.budget["samples_per_H"]) * H
        n_dir = int(hp.get("num_directions", 1))
        per_iter = (2 if alg == "ParamSearch" else 1) * n_dir * H
        iters = max(1, budget // per_iter)
        eval_every = max(1, iters // int(cell.budget.get("checkpoints", 10)))
        cfg = _search_config(hp, budget, eval_every, int(cell.budget.get("eval_rollouts", 10)))
        runner = run_param_search if alg == "ParamSearch" else run_action_search
        try:
            trace = runner(spec, policy0, cfg, make_rng(cell.seed, Stream.EXPLORATION),
                           eval_rng=make_rng(cell.seed, Stream.EVALUATION))
        except NonFiniteError:
            return [make_row(cell, budget, "diverged", 1.0)]
        if trace.env_steps > budget or trace.env_steps != trace.iterations * per_iter:
            raise RuntimeError(f"env-step accounting mismatch: {trace.env_steps} vs budget {budget}")
        rows = []
        for ck in trace.rows:
            rows.append(make_row(cell, ck.env_steps, "exact_cost", ck.exact_cost))
            rows.append(make_row(cell, ck.env_steps, "grad_norm_sq", ck.grad_norm_sq))
            if cfg.eval_rollouts:
                rows.append(make_row(cell, ck.env_steps, "mean_cost", ck.mean_cost))
        rows.append(make_row(cell, trace.env_steps, "diverged", 0.0))
        return rows

    def score(self, cell, rows):
        if _final(rows, "diverged") == 1.0:
            return math.inf
        return _final(rows, "exact_cost")


class LqrNoiseSweep(PresetDef):
    preset = Preset.LQR_NOISE_SWEEP
    algorithms = ("ParamSearch", "ActionSearch")
    required = {"ParamSearch": ("alpha", "delta"), "ActionSearch": ("alpha", "delta")}

    def defaults(self) -> dict:
        base = {"num_directions": 10}
        # grid search on the tuning seeds (policy-explore tune LqrNoiseSweep)
        picked = {1e-4: (5e-3, 0.1), 5e-4: (5e-3, 0.1), 1e-3: (8e-3, 0.1), 5e-3: (3e-3, 0.1),
                  1e-2: (5e-3, 0.1), 5e-2: (1e-3, 0.05), 1e-1: (5e-4, 0.05), 5e-1: (1e-4, 0.01)}
        tuned = {f"noise_cov={c}": dict(base, alpha=a, delta=d) for c, (a, d) in picked.items()}
        return {
            "algorithms": ["ParamSearch"],
            "env": {"n": 20, "m": 1, "H": 50, "noise_cov": list(LQR_NOISE_GRID), "radius": 0.95,
                    "structure": "symmetric", "init_gain": 0.25, "instance_seed": 0, "instance_file": None},
            "grid": {"ParamSearch": {"alpha": LQR_ALPHA_GRID, "delta": LQR_DELTA_GRID},
                     "ActionSearch": {"alpha": [1e-5, 3e-5] + LQR_ALPHA_GRID[:5], "delta": LQR_DELTA_GRID}},
            "hyperparams": {"ParamSearch": dict({"default": dict(base, alpha=1e-3, delta=0.1)}, **tuned),
                            "ActionSearch": {"default": dict(base, alpha=1e-4, delta=0.1)}},
            "budget": {"max_env_steps": 1_000_000, "threshold": 0.05},
            "options": {},
        }

    def run(self, cell):
        env, hp, alg = cell.env, cell.hyperparams, cell.algorithm
        spec = build_lqr(env, int(env["H"]), env["noise_cov"])
        policy0 = feedback_start(spec, float(env.get("init_gain", 0.0)))
        cap = int(cell.budget["max_env_steps"])
        cfg = _search_config(hp, cap)
        method = Method.PARAM if alg == "ParamSearch" else Method.ACTION
        try:
            steps, reached = run_until_stationary(spec, policy0, cfg, method, float(cell.budget["threshold"]),
                                                  make_rng(cell.seed, Stream.EXPLORATION))
            diverged = False
        except NonFiniteError:
            steps, reached, diverged = cap, False, True
        if steps > cap:
            raise RuntimeError(f"env-step accounting mismatch: {steps} > cap {cap}")
        return [make_row(cell, steps, "samples_to_stationarity", steps if reached else cap),
                make_row(cell, steps, "reached", 1.0 if reached else 0.0),
                make_row(cell, steps, "diverged", 1.0 if diverged else 0.0)]

    def score(self, cell, rows):
        cap = int(cell.budget["max_env_steps"])
        if _final(rows, "diverged") == 1.0:
            return 2.0 * cap
        return _final(rows, "samples_to_stationarity")


# ---------------------------------------------------------------------------
# property suite as a preset


class ValidateProperties(PresetDef):
    preset = Preset.VALIDATE_PROPERTIES

    @property
    def algorithms(self):
        from .validate import PROPERTIES

        return tuple(PROPERTIES)

    def defaults(self) -> dict:
        from .validate import PROPERTIES

        return {"algorithms": list(PROPERTIES), "env": {}, "grid": {}, "hyperparams": {},
                "budget": {}, "options": {"mutation": None}}

    def cells(self, cfg, seeds=None, hyperparams=None):
        seed = (cfg.seeds if seeds is None else seeds)[0]
        return [Cell(cfg.preset.value, name, int(seed), "default", {}, {}, {}, dict(cfg.options))
                for name in sorted(cfg.algorithms)]

    def run(self, cell):
        from .validate import run_property

        result = run_property(cell.algorithm, cell.seed, mutation=cell.options.get("mutation"))
        return [make_row(cell, 0, "measured", result.measured),
                make_row(cell, 0, "bound", result.bound),
                make_row(cell, 0, "passed", 1.0 if result.passed else 0.0)]

    def score(self, cell, rows):
        raise ConfigError("ValidateProperties has nothing to tune")


_PRESETS = {p.preset: p for p in (OlrDimSweep(), BanditDvsP(), HorizonSweep(), LqrNoiseSweep(), ValidateProperties())}


def get_preset(preset: Preset) -> PresetDef:
    return _PRESETS[Preset.parse(preset) if isinstance(preset, str) else preset]


def run_cell(cell: Cell) -> list[tuple]:
    return get_preset(Preset.parse(cell.preset)).run(cell)
