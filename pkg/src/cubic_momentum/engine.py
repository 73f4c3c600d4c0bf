"""Stochastic Cubic Newton with momentum, baselines, and run traces.

One run owns its RNG streams: ``SeedSequence(seed)`` is split into a batch
stream and an output-selection stream, so a (seed, config, problem) triple
always produces the same trace.  Full-oracle metrics are computed on the
side and never feed back into the iteration.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import cubic
from .cubic import CubicModel, mu_measure
from .estimators import GradEstimatorState, HessEstimatorState, make_schedule
from .numkit import as_vector, spectral_norm
from .problems import FiniteSumProblem, ProblemConstants, draw_batch

CSV_COLUMNS = (
    "t",
    "oracle_draws",
    "f",
    "grad_norm",
    "lambda_min",
    "mu_M",
    "r_t",
    "eps_norm",
    "sigma_norm",
    "gamma",
)
METHODS = ("SCNM", "SCN_plain", "SGD")
DIVERGENCE_GAP = 1e12
F_STAR_ITERATIONS = 500
F_STAR_SLACK = 1e-12
STEP_CHECK_TOL = 1e-9


class RunAborted(RuntimeError):
    def __init__(self, t: int, reason: str, trace: "RunTrace"):
        super().__init__(f"run aborted at t={t}: {reason}")
        self.t = t
        self.reason = reason
        self.trace = trace


@dataclass(frozen=True)
class RunConfig:
    T: int = 100
    M: float = 1.0
    method: str = "SCNM"
    schedule_source: str = "manual"
    alpha: float = 0.1
    beta: float = 0.01
    grad_variant: str = "IT"
    batch_g: int = 1
    batch_h: int = 1
    initial_batch: int = 1
    split_sampling: bool = False
    exact_oracle: bool = False
    seed: int = 0
    sgd_step: float = 0.1
    record_full_metrics_every: int = 1
    output_set: str = "all"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if min(self.batch_g, self.batch_h, self.initial_batch) < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.record_full_metrics_every < 1:
            raise ValueError("record_full_metrics_every must be >= 1")
        if self.output_set not in ("all", "iterates"):
            raise ValueError("output_set must be 'all' or 'iterates'")
        if self.method == "SGD" and self.sgd_step < 0:
            raise ValueError("SGD step must be non-negative")


@dataclass
class RunTrace:
    method: str
    seed: int
    columns: dict[str, np.ndarray]
    iterates: np.ndarray
    out_index: int = -1
    x_out: np.ndarray | None = None
    alpha: float = float("nan")
    beta: float = float("nan")
    aborted: str | None = None

    def __len__(self) -> int:
        return self.iterates.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def to_csv(self) -> str:
        return format_csv(self.columns)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def format_csv(columns: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    n = len(columns["t"])
    for i in range(n):
        buf.write(",".join(format_value(columns[c][i]) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


class BatchSample:
    """One draw of the stochastic oracle, replayable at any point."""

    replayable = True

    def __init__(self, problem: FiniteSumProblem, idx_g, idx_h):
        self.problem = problem
        self.idx_g = idx_g
        self.idx_h = idx_h

    def gradient(self, point):
        return self.problem.gradient(point, self.idx_g)

    def hessian(self, point):
        return self.problem.hessian(point, self.idx_h)


class _Recorder:
    def __init__(self, problem, T, M, every):
        self.problem = problem
        self.M = M
        self.every = every
        self.T = T
        self.cols = {c: np.full(T + 1, np.nan) for c in CSV_COLUMNS}
        self.cols["t"] = np.arange(T + 1)
        self.cols["oracle_draws"] = np.zeros(T + 1, dtype=np.int64)
        self.f0 = None

    def wants(self, t: int) -> bool:
        return t % self.every == 0 or t == self.T

    def state(self, t, x, draws, g=None, H=None):
        """Record metrics of x_t; return its objective value, None if skipped."""
        c = self.cols
        c["oracle_draws"][t] = draws
        if not self.wants(t):
            return None
        p = self.problem
        f = p.value(x)
        grad = p.gradient(x)
        hess = p.hessian(x)
        c["f"][t] = f
        c["grad_norm"][t] = np.linalg.norm(grad)
        c["lambda_min"][t] = np.linalg.eigvalsh(hess)[0]
        c["mu_M"][t] = mu_measure(grad, hess, self.M)
        if g is not None:
            c["eps_norm"][t] = np.linalg.norm(g - grad)
        if H is not None:
            c["sigma_norm"][t] = spectral_norm(H - hess)
        if self.f0 is None:
            self.f0 = f
        return f

    def step(self, t, r, gamma=float("nan")):
        self.cols["r_t"][t] = r
        self.cols["gamma"][t] = gamma

    def trace(self, method, seed, iterates, upto=None, **kw) -> RunTrace:
        cols = self.cols if upto is None else {k: v[: upto + 1].copy() for k, v in self.cols.items()}
        its = np.array(iterates)
        return RunTrace(method=method, seed=seed, columns=cols, iterates=its, **kw)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    batch_ss, out_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(batch_ss), np.random.default_rng(out_ss)


def select_output(n_states: int, rng: np.random.Generator, include_initial: bool = True) -> int:
    """Uniform index over recorded states ``0..T`` (or ``1..T``)."""
    if n_states < 1:
        raise ValueError("trace is empty")
    lo = 0 if include_initial or n_states == 1 else 1
    return int(rng.integers(lo, n_states))


def _check_finite(rec, t, iterates, method, seed, arrays, f):
    bad = None
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            bad = f"non-finite {name}"
            break
    if bad is None and f is not None and math.isfinite(f) and rec.f0 is not None:
        if f > rec.f0 + DIVERGENCE_GAP:
            bad = f"objective diverged (f={f:.3e})"
    if bad is None and f is not None and not math.isfinite(f):
        bad = "non-finite objective"
    if bad is not None:
        trace = rec.trace(method, seed, iterates, upto=t, aborted=bad)
        raise RunAborted(t, bad, trace)


def resolve_rates(config: RunConfig, constants: ProblemConstants | None) -> tuple[float, float]:
    if config.method == "SCN_plain":
        return 1.0, 1.0
    if config.schedule_source == "manual":
        return config.alpha, config.beta
    if constants is None:
        raise ValueError(f"schedule {config.schedule_source!r} needs problem constants")
    sched = make_schedule(constants, config.T, config.M, config.schedule_source)
    return sched.alpha, sched.beta


def run_scnm(
    problem: FiniteSumProblem,
    config: RunConfig,
    constants: ProblemConstants | None = None,
    x0=None,
) -> RunTrace:
    """Cubic Newton driven by momentum estimates of the gradient and Hessian.

    ``config.method == "SCN_plain"`` forces ``alpha = beta = 1``.  With
    ``exact_oracle`` every draw is the full finite sum.
    """
    if config.method == "SGD":
        return run_sgd(problem, config, x0)
    alpha, beta = resolve_rates(config, constants)
    x = np.zeros(problem.dim) if x0 is None else as_vector(x0, "x0")
    batch_rng, out_rng = _streams(config.seed)
    g_est = GradEstimatorState(variant=config.grad_variant, alpha=alpha)
    h_est = HessEstimatorState(beta=beta)
    rec = _Recorder(problem, config.T, config.M, config.record_full_metrics_every)
    n = problem.n_samples
    draws = 0
    iterates = [x.copy()]

    for t in range(config.T):
        if config.exact_oracle:
            sample = BatchSample(problem, None, None)
            used = n
        elif t == 0:
            idx = draw_batch(batch_rng, n, config.initial_batch).indices
            sample = BatchSample(problem, idx, idx)
            used = config.initial_batch
        elif config.split_sampling:
            ig = draw_batch(batch_rng, n, config.batch_g).indices
            ih = draw_batch(batch_rng, n, config.batch_h).indices
            sample = BatchSample(problem, ig, ih)
            used = config.batch_g + config.batch_h
        else:
            b = max(config.batch_g, config.batch_h)
            idx = draw_batch(batch_rng, n, b).indices
            sample = BatchSample(problem, idx[: config.batch_g], idx[: config.batch_h])
            used = b

        H = h_est.update(x, sample)
        g = g_est.update(x, sample, H)
        f = rec.state(t, x, draws, g, H)
        _check_finite(rec, t, iterates, config.method, config.seed, {"g": g, "H": H}, f)
        step = cubic.solve_cubic(CubicModel(g, H, config.M))
        draws += used
        rec.step(t, step.step_norm, step.gamma)
        x = x + step.s
        iterates.append(x.copy())
        _check_finite(rec, t, iterates, config.method, config.seed, {"x": x}, None)

    f = rec.state(config.T, x, draws)
    _check_finite(rec, config.T, iterates, config.method, config.seed, {}, f)
    idx = select_output(config.T + 1, out_rng, config.output_set == "all")
    return rec.trace(config.method, config.seed, iterates, out_index=idx, x_out=iterates[idx].copy(), alpha=alpha, beta=beta)


def run_sgd(problem: FiniteSumProblem, config: RunConfig, x0=None) -> RunTrace:
    x = np.zeros(problem.dim) if x0 is None else as_vector(x0, "x0")
    batch_rng, out_rng = _streams(config.seed)
    rec = _Recorder(problem, config.T, config.M, config.record_full_metrics_every)
    n = problem.n_samples
    eta = config.sgd_step
    draws = 0
    iterates = [x.copy()]
    for t in range(config.T):
        if config.exact_oracle:
            g = problem.gradient(x)
            used = n
        else:
            g = problem.gradient(x, draw_batch(batch_rng, n, config.batch_g).indices)
            used = config.batch_g
        f = rec.state(t, x, draws, g)
        _check_finite(rec, t, iterates, "SGD", config.seed, {"g": g}, f)
        draws += used
        s = -eta * g
        rec.step(t, float(np.linalg.norm(s)))
        x = x + s
        iterates.append(x.copy())
        _check_finite(rec, t, iterates, "SGD", config.seed, {"x": x}, None)
    f = rec.state(config.T, x, draws)
    _check_finite(rec, config.T, iterates, "SGD", config.seed, {}, f)
    idx = select_output(config.T + 1, out_rng, config.output_set == "all")
    return rec.trace("SGD", config.seed, iterates, out_index=idx, x_out=iterates[idx].copy())


def run(problem, config: RunConfig, constants=None, x0=None) -> RunTrace:
    if config.method == "SGD":
        return run_sgd(problem, config, x0)
    return run_scnm(problem, config, constants, x0)


@dataclass(frozen=True)
class StepCheckReport:
    lhs: float
    rhs: float
    slack: float
    passed: bool
    terms: dict = field(default_factory=dict, compare=False)


def check_one_step(problem: FiniteSumProblem, x, g, H, M: float) -> StepCheckReport:
    """Evaluate the one-step progress inequality of inexact Cubic Newton.

    ``f(x) - f(x+) >= mu_M(x+)/(1008 sqrt M) + M r^3/72
    - 4 ||eps||^1.5 / sqrt M - 73 ||Sigma||^3 / M^2`` with exact oracles on
    both sides; it holds whenever ``M`` dominates the Hessian Lipschitz
    constant.
    """
    x = as_vector(x, "x")
    step = cubic.solve_cubic(CubicModel(g, H, M))
    xp = x + step.s
    eps = np.asarray(g, dtype=float) - problem.gradient(x)
    Sig = np.asarray(H, dtype=float) - problem.hessian(x)
    sq = math.sqrt(M)
    terms = {
        "progress": mu_measure(problem.gradient(xp), problem.hessian(xp), M) / (1008.0 * sq),
        "step": M * step.step_norm**3 / 72.0,
        "grad_error": 4.0 * float(np.linalg.norm(eps)) ** 1.5 / sq,
        "hess_error": 73.0 * spectral_norm(0.5 * (Sig + Sig.T)) ** 3 / M**2,
    }
    lhs = problem.value(x) - problem.value(xp)
    rhs = terms["progress"] + terms["step"] - terms["grad_error"] - terms["hess_error"]
    slack = lhs - rhs
    return StepCheckReport(lhs, rhs, slack, slack >= -STEP_CHECK_TOL * (1.0 + abs(lhs)), terms)


def convex_gap_series(f_values, f_star: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaps ``F_t = f(x_t) - f*`` and their running minimum.

    Unrecorded rows (nan) are carried through; the running minimum skips them.
    """
    f = np.asarray(f_values, dtype=float)
    gaps = f - f_star
    if np.any(gaps < -1e-6):
        worst = float(np.nanmin(gaps))
        raise ValueError(f"f_star is not a lower bound: gap {worst:.3e}")
    gaps = np.where(np.isnan(gaps), gaps, np.maximum(gaps, 0.0))
    running = np.fmin.accumulate(gaps)
    return gaps, running


def compute_f_star(problem: FiniteSumProblem, M: float, x0=None, iterations: int = F_STAR_ITERATIONS) -> float:
    """Reference optimum from deterministic Cubic Newton on the full sum."""
    x = np.zeros(problem.dim) if x0 is None else as_vector(x0, "x0")
    for _ in range(iterations):
        step = cubic.solve_cubic(CubicModel(problem.gradient(x), problem.hessian(x), M))
        if step.step_norm == 0.0:
            break
        x = x + step.s
    return problem.value(x) - F_STAR_SLACK


def with_overrides(config: RunConfig, **kw) -> RunConfig:
    return replace(config, **kw)
