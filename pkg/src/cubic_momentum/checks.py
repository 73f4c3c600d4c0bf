"""Randomized invariant suites behind ``cubic-momentum check``.

Each property draws one instance from a seeded generator and returns
``(ok, instance)``.  The first failing instance of a property is written to
a JSON replay file so it can be reproduced without rerunning the suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import cubic, engine
from .cubic import CubicModel
from .dataio import synth_logistic
from .estimators import GradEstimatorState, make_schedule, momentum_condition
from .problems import LogisticProblem, ProblemConstants, QuadraticSumProblem, estimate_constants

CERT_TOL = 1e-8
GAMMA_RTOL = 1e-10
EQUIV_TOL = 1e-12

Property = Callable[[np.random.Generator, int], tuple[bool, dict]]


@dataclass
class PropertyResult:
    name: str
    passed: int = 0
    trials: int = 0
    failure: dict | None = None

    @property
    def ok(self) -> bool:
        return self.passed == self.trials

    def line(self) -> str:
        return f"{self.name}: {self.passed}/{self.trials}"


@dataclass
class SuiteReport:
    suite: str
    seed: int
    results: list[PropertyResult] = field(default_factory=list)
    replay_path: Path | None = None

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ---------------------------------------------------------------- instances


def random_cubic_instance(rng: np.random.Generator, max_dim: int = 20) -> CubicModel:
    d = int(rng.integers(1, max_dim + 1))
    B = rng.standard_normal((d, d))
    M = float(rng.choice([0.1, 1.0, 10.0]))
    return CubicModel(rng.standard_normal(d), 0.5 * (B + B.T), M)


def hard_case_instance(rng: np.random.Generator, max_dim: int = 20) -> CubicModel:
    """Random model whose gradient misses the bottom eigenvector and is short
    enough that the step must be completed along it."""
    d = int(rng.integers(2, max_dim + 1))
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.sort(rng.standard_normal(d))
    lam[0] = -abs(lam[0]) - 0.5
    lam[1:] = np.maximum(lam[1:], lam[0] + 0.5)
    M = float(rng.choice([0.1, 1.0, 10.0]))
    gamma_bar = -lam[0]
    gh = rng.standard_normal(d)
    gh[0] = 0.0
    pnorm = float(np.linalg.norm(gh[1:] / (lam[1:] + gamma_bar)))
    frac = rng.uniform(0.1, 0.9)
    gh *= frac * (2.0 * gamma_bar / M) / pnorm
    H = (Q * lam) @ Q.T
    return CubicModel(Q @ gh, 0.5 * (H + H.T), M)


def certificate_errors(model: CubicModel, res) -> dict:
    lam_shift = float(np.linalg.eigvalsh(model.H + (0.5 * model.M * res.step_norm) * np.eye(model.g.size))[0])
    want = 0.5 * model.M * res.step_norm
    rel_gamma = abs(res.gamma - want) / max(abs(want), np.finfo(float).tiny)
    return {
        "residual": cubic.stationarity_residual(model, res.s),
        "residual_tol": CERT_TOL * (1.0 + float(np.linalg.norm(model.g))),
        "lambda_min_shifted": lam_shift,
        "gamma_rel_error": rel_gamma if want > 0 else abs(res.gamma),
    }


def certificate_holds(model: CubicModel, res) -> tuple[bool, dict]:
    e = certificate_errors(model, res)
    ok = (
        e["residual"] <= e["residual_tol"]
        and e["lambda_min_shifted"] >= -CERT_TOL
        and e["gamma_rel_error"] <= GAMMA_RTOL
    )
    return ok, e


def _model_dict(model: CubicModel) -> dict:
    return {"g": model.g, "H": model.H, "M": model.M}


# ---------------------------------------------------------------- cubic suite


def prop_certificate(rng, trial):
    model = hard_case_instance(rng) if trial % 10 == 0 else random_cubic_instance(rng)
    res = cubic.solve_cubic(model)
    ok, errs = certificate_holds(model, res)
    return ok, {"model": _model_dict(model), "s": res.s, **errs}


def prop_model_decrease(rng, trial):
    model = random_cubic_instance(rng)
    res = cubic.solve_cubic(model)
    lam_min = float(np.linalg.eigvalsh(model.H)[0])
    strict = bool(np.any(model.g != 0.0)) or lam_min < 0
    ok = res.model_value <= 0.0 and (not strict or res.model_value < 0.0)
    return ok, {"model": _model_dict(model), "model_value": res.model_value}


def prop_scaling(rng, trial):
    model = random_cubic_instance(rng)
    c = float(np.exp(rng.uniform(-3, 3)))
    s1 = cubic.solve_cubic(model).s
    s2 = cubic.solve_cubic(CubicModel(c * model.g, c * model.H, c * model.M)).s
    err = float(np.linalg.norm(s1 - s2))
    ok = err <= 1e-7 * (1.0 + float(np.linalg.norm(s1)))
    return ok, {"model": _model_dict(model), "c": c, "difference": err}


def prop_hard_case_flag(rng, trial):
    model = hard_case_instance(rng)
    res = cubic.solve_cubic(model)
    return bool(res.hard_case), {"model": _model_dict(model)}


CUBIC_PROPERTIES: dict[str, Property] = {
    "optimality-certificate": prop_certificate,
    "model-decrease": prop_model_decrease,
    "scaling-covariance": prop_scaling,
    "hard-case-detected": prop_hard_case_flag,
}


# ---------------------------------------------------------------- step suite

NOISE_SCALES = (0.0, 1e-4, 1e-3, 1e-2, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)


class _LogisticPool:
    """A few small logistic problems with their estimated curvature constant."""

    def __init__(self):
        self.items = []
        for k in range(3):
            p = LogisticProblem(synth_logistic(100, 6, 100 + k, 0.1), reg_weight=0.1)
            c = estimate_constants(p, np.zeros(p.dim), probes=8, seed=k)
            self.items.append((p, c.L))


_POOL: _LogisticPool | None = None


def _pool() -> _LogisticPool:
    global _POOL
    if _POOL is None:
        _POOL = _LogisticPool()
    return _POOL


def _corrupt(rng, p, x, scale):
    d = p.dim
    E = rng.standard_normal((d, d))
    g = p.gradient(x) + scale * rng.standard_normal(d)
    H = p.hessian(x) + scale * 0.5 * (E + E.T)
    return g, H


def step_instance(rng: np.random.Generator, trial: int):
    scale = NOISE_SCALES[trial % len(NOISE_SCALES)]
    if trial % 2 == 0:
        d = int(rng.integers(1, 8))
        B = rng.standard_normal((d, d))
        hs = 0.5 * (B + B.T)[None] + 0.1 * rng.standard_normal((4, d, d))
        p = QuadraticSumProblem(hs, rng.standard_normal((4, d)))
        M = float(rng.choice([0.1, 1.0, 10.0]))
        x = 2.0 * rng.standard_normal(d)
        kind = "quadratic"
    else:
        p, L_hat = _pool().items[int(rng.integers(len(_pool().items)))]
        M = 1.5 * L_hat * float(rng.choice([1.0, 3.0, 10.0]))
        x = rng.standard_normal(p.dim) * float(rng.choice([0.1, 1.0, 3.0]))
        kind = "logistic"
    g, H = _corrupt(rng, p, x, scale)
    return p, x, g, H, M, {"kind": kind, "noise_scale": scale}


def prop_progress(rng, trial):
    p, x, g, H, M, meta = step_instance(rng, trial)
    rep = engine.check_one_step(p, x, g, H, M)
    info = {**meta, "x": x, "g": g, "H": H, "M": M, "lhs": rep.lhs, "rhs": rep.rhs, "slack": rep.slack}
    if meta["kind"] == "quadratic":
        info.update(hessians=p.A, offsets=p.b)
    return rep.passed, info


STEP_PROPERTIES: dict[str, Property] = {"one-step-progress": prop_progress}


# ---------------------------------------------------------------- estimators suite


class _Draw:
    replayable = True

    def __init__(self, p, i):
        self.p, self.idx = p, np.array([i])

    def gradient(self, z):
        return self.p.gradient(z, self.idx)

    def hessian(self, z):
        return self.p.hessian(z, self.idx)


def prop_affine_equivalence(rng, trial):
    d = int(rng.integers(1, 6))
    B = rng.standard_normal((d, d))
    A = 0.5 * (B + B.T)
    p = QuadraticSumProblem.shared(A, rng.standard_normal((8, d)))
    alpha = float(rng.choice([0.1, 0.5, 0.9]))
    states = {v: GradEstimatorState(variant=v, alpha=alpha) for v in ("IT", "MVR", "SOM")}
    worst = 0.0
    x = rng.standard_normal(d)
    for _ in range(50):
        draw = _Draw(p, int(rng.integers(8)))
        gs = {v: st.update(x, draw, A) for v, st in states.items()}
        scale = 1.0 + float(np.linalg.norm(gs["IT"]))
        worst = max(worst, float(np.linalg.norm(gs["IT"] - gs["MVR"])) / scale,
                    float(np.linalg.norm(gs["IT"] - gs["SOM"])) / scale)
        x = x + 0.3 * rng.standard_normal(d)
    return worst <= EQUIV_TOL, {"A": A, "offsets": p.b, "alpha": alpha, "worst": worst}


def prop_rate_one_collapse(rng, trial):
    d = int(rng.integers(1, 6))
    p = QuadraticSumProblem(rng.standard_normal((6, d, d)), rng.standard_normal((6, d)))
    variant = ("IT", "HB", "MVR", "SOM")[trial % 4]
    st = GradEstimatorState(variant=variant, alpha=1.0)
    ok = True
    x = rng.standard_normal(d)
    for _ in range(10):
        draw = _Draw(p, int(rng.integers(6)))
        g = st.update(x, draw, draw.hessian(x))
        ok &= bool(np.allclose(g, draw.gradient(x), rtol=0, atol=1e-12))
        x = x + rng.standard_normal(d)
    return ok, {"variant": variant}


def prop_schedule_condition(rng, trial):
    L = float(np.exp(rng.uniform(-3, 3)))
    M = L * 100.0 * float(np.exp(rng.uniform(0, 6)))
    T = int(rng.integers(1, 10**6))
    c = ProblemConstants(L, L, 1.0, 1.0, 1.0, 1.0, 1.0)
    s = make_schedule(c, T, M, "main_IT", a_g=rng.uniform(0, 2), a_h=rng.uniform(0, 2))
    value = momentum_condition(L, M, s.alpha, s.beta)
    ok = 0 < s.alpha <= 1 and 0 < s.beta <= 1 and value <= 0
    return ok, {"L": L, "M": M, "T": T, "alpha": s.alpha, "beta": s.beta, "condition": value}


ESTIMATOR_PROPERTIES: dict[str, Property] = {
    "affine-equivalence": prop_affine_equivalence,
    "unit-rate-collapse": prop_rate_one_collapse,
    "schedule-condition": prop_schedule_condition,
}

SUITES: dict[str, dict[str, Property]] = {
    "cubic": CUBIC_PROPERTIES,
    "step": STEP_PROPERTIES,
    "estimators": ESTIMATOR_PROPERTIES,
}


def run_suite(suite: str, trials: int, seed: int = 0, replay_dir=".") -> SuiteReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    names = list(SUITES) if suite == "all" else [suite]
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)} or all")
    report = SuiteReport(suite, seed)
    failures = {}
    for name in names:
        for k, (prop_name, prop) in enumerate(SUITES[name].items()):
            rng = np.random.default_rng([seed, names.index(name), k])
            res = PropertyResult(prop_name, trials=trials)
            for trial in range(trials):
                try:
                    ok, info = prop(rng, trial)
                except (ArithmeticError, ValueError) as exc:
                    ok, info = False, {"error": repr(exc)}
                if ok:
                    res.passed += 1
                elif res.failure is None:
                    res.failure = {"trial": trial, **info}
            report.results.append(res)
            if res.failure is not None:
                failures[prop_name] = res.failure
    if failures:
        path = Path(replay_dir) / f"replay_{suite}_seed{seed}.json"
        payload = {"suite": suite, "seed": seed, "trials": trials, "failures": failures}
        path.write_text(json.dumps(_jsonable(payload), indent=1, allow_nan=True))
        report.replay_path = path
    return report


def finite_or_nan(v: float) -> float:
    return v if math.isfinite(v) else float("nan")
