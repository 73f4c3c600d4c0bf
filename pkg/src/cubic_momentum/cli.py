"""Command-line front end: ``run``, ``check`` and ``schedule``.

Experiment configs are flat ``key = value`` files.  Keys naming a
:class:`~cubic_momentum.engine.RunConfig` field set the default for every
method; ``LABEL.key`` overrides it for one method entry.  A method entry is
either a method name or ``label:METHOD`` (e.g. ``SGD_fast:SGD``).
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import checks
from .dataio import load_libsvm, subsample, synth_logistic
from .engine import CSV_COLUMNS, METHODS, RunAborted, RunConfig, RunTrace, format_csv, run
from .estimators import SCHEDULE_SOURCES, ScheduleError, make_schedule, momentum_condition
from .problems import LogisticProblem, ProblemConstants, estimate_constants

THREADS_ENV = "CUBIC_MOMENTUM_THREADS"

# Settings with no value in the source experiments; metadata marks defaults.
STAND_INS = frozenset({"reg_weight", "n", "d", "noise", "data_seed", "ridge"})

EXPERIMENT_DEFAULTS = {
    "data": "synth",
    "n": "2000",
    "d": "50",
    "noise": "0.1",
    "data_seed": "0",
    "subsample": "0",
    "subsample_seed": "0",
    "reg_weight": "0.1",
    "ridge": "0",
    "methods": "SCNM,SCN_plain,SGD",
    "seeds": "1,2,3,4,5,6,7,8,9,10",
    "out": "results",
    "svg": "false",
    "probes": "8",
}
CONSTANT_KEYS = tuple(f.name for f in dataclasses.fields(ProblemConstants))
RUN_KEYS = {f.name: f for f in dataclasses.fields(RunConfig)}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _parse_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def parse_seeds(value: str) -> list[int]:
    try:
        seeds = [int(v) for v in _parse_list(value)]
    except ValueError:
        raise ConfigError(f"seeds must be integers: {value!r}") from None
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def _coerce(name: str, value: str):
    ftype = RUN_KEYS[name].type
    try:
        if ftype in ("int", int):
            return int(value)
        if ftype in ("float", float):
            return float(value)
        if ftype in ("bool", bool):
            return _parse_bool(value)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return value


@dataclasses.dataclass
class MethodEntry:
    label: str
    config: RunConfig


@dataclasses.dataclass
class ExperimentSpec:
    settings: dict[str, str]
    methods: list[MethodEntry]
    seeds: list[int]
    out: Path
    svg: bool
    constants: dict[str, float]
    explicit: frozenset = frozenset()

    @classmethod
    def from_settings(cls, raw: dict[str, str]) -> "ExperimentSpec":
        settings = {**EXPERIMENT_DEFAULTS, **raw}
        seeds = parse_seeds(settings["seeds"])
        entries = _parse_list(settings["methods"])
        if not entries:
            raise ConfigError("method list is empty")

        base = {}
        overrides: dict[str, dict[str, str]] = {}
        constants = {}
        for key, value in settings.items():
            label, dot, field = key.partition(".")
            if dot:
                overrides.setdefault(label, {})[field] = value
            elif key in RUN_KEYS and key not in ("seed", "method"):
                base[key] = _coerce(key, value)
            elif key in CONSTANT_KEYS:
                constants[key] = float(value)
            elif key not in EXPERIMENT_DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")

        methods = []
        labels = set()
        for entry in entries:
            label, colon, method = entry.partition(":")
            method = method if colon else label
            if method not in METHODS:
                raise ConfigError(f"unknown method {method!r} (choose from {', '.join(METHODS)})")
            if label in labels:
                raise ConfigError(f"duplicate method label {label!r}")
            labels.add(label)
            kw = dict(base)
            for field, value in overrides.get(label, {}).items():
                if field not in RUN_KEYS or field in ("seed", "method"):
                    raise ConfigError(f"unknown per-method key {label}.{field}")
                kw[field] = _coerce(field, value)
            try:
                methods.append(MethodEntry(label, RunConfig(method=method, **kw)))
            except ValueError as exc:
                raise ConfigError(f"{label}: {exc}") from None
        unknown = set(overrides) - labels
        if unknown:
            raise ConfigError(f"overrides for unlisted methods: {', '.join(sorted(unknown))}")
        return cls(settings, methods, seeds, Path(settings["out"]), _parse_bool(settings["svg"]),
                   constants, frozenset(raw))


def load_spec(path, overrides: dict[str, str] | None = None) -> ExperimentSpec:
    text = Path(path).read_text()
    raw = parse_config_text(text)
    raw.update(overrides or {})
    return ExperimentSpec.from_settings(raw)


# ---------------------------------------------------------------- problem


def build_problem(settings: dict[str, str]) -> LogisticProblem:
    src = settings["data"]
    if src == "synth":
        ds = synth_logistic(int(settings["n"]), int(settings["d"]), int(settings["data_seed"]), float(settings["noise"]))
    else:
        ds = load_libsvm(src)
        k = int(settings["subsample"])
        if 0 < k < ds.n:
            ds = subsample(ds, k, int(settings["subsample_seed"]))
    return LogisticProblem(ds, reg_weight=float(settings["reg_weight"]), ridge=float(settings["ridge"]))


def resolve_constants(problem, spec: ExperimentSpec) -> ProblemConstants | None:
    needs = any(m.config.method != "SGD" and m.config.schedule_source != "manual" for m in spec.methods)
    if not needs:
        return None
    b0 = max(m.config.initial_batch for m in spec.methods)
    est = estimate_constants(problem, np.zeros(problem.dim), int(spec.settings["probes"]), seed=0, initial_batch=b0)
    return dataclasses.replace(est, **spec.constants)


# ---------------------------------------------------------------- outputs


def median_columns(traces: list[RunTrace]) -> dict[str, np.ndarray]:
    """Row-wise median over seeds; rows missing from a run are ignored."""
    length = max(len(tr["t"]) for tr in traces)
    out = {}
    for c in CSV_COLUMNS:
        stack = np.full((len(traces), length), np.nan)
        for k, tr in enumerate(traces):
            stack[k, : len(tr[c])] = tr[c]
        with np.errstate(all="ignore"):
            valid = ~np.isnan(stack)
            med = np.full(length, np.nan)
            for j in range(length):
                col = stack[valid[:, j], j]
                if col.size:
                    med[j] = np.median(col)
        out[c] = med
    out["t"] = np.arange(length)
    out["oracle_draws"] = out["oracle_draws"].astype(np.int64)
    return out


def _nice_ticks(lo: float, hi: float) -> list[float]:
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if a == b:
        b += 1
    return [10.0**e for e in range(a, b + 1)]


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def render_svg(series: dict[str, tuple[np.ndarray, np.ndarray]], title: str, ylabel: str,
               width: int = 640, height: int = 400) -> str:
    """Line chart with a log-scale y axis; one polyline per series.

    Non-positive and non-finite points are dropped.
    """
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    clean = {}
    for name, (xs, ys) in series.items():
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        keep = np.isfinite(xs) & np.isfinite(ys) & (ys > 0)
        clean[name] = (xs[keep], ys[keep])
    allx = np.concatenate([v[0] for v in clean.values()] + [np.zeros(1)])
    ally = np.concatenate([v[1] for v in clean.values()] + [np.ones(0)])
    xmax = float(allx.max()) if allx.size else 1.0
    xmax = xmax if xmax > 0 else 1.0
    if ally.size:
        ticks = _nice_ticks(float(ally.min()), float(ally.max()))
    else:
        ticks = [0.1, 1.0]
    ylo, yhi = math.log10(ticks[0]), math.log10(ticks[-1])

    def px(x):
        return left + pw * x / xmax

    def py(y):
        return top + ph * (1.0 - (math.log10(y) - ylo) / (yhi - ylo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for tk in ticks:
        y = py(tk)
        parts.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{tk:.0e}</text>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = left + pw * frac
        parts.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle">{xmax * frac:.4g}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">oracle draws</text>')
    parts.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    for k, (name, (xs, ys)) in enumerate(clean.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 16 * (k + 1)
        parts.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 34}" y="{ly}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_metadata(path: Path, spec: ExperimentSpec, constants, aborted: list[str]) -> None:
    lines = []
    for key in sorted(spec.settings):
        value = spec.settings[key]
        note = "  # stand-in default" if key in STAND_INS and key not in spec.explicit else ""
        lines.append(f"{key} = {value}{note}")
    for m in spec.methods:
        for f in dataclasses.fields(m.config):
            lines.append(f"{m.label}.{f.name} = {getattr(m.config, f.name)}")
    if constants is not None:
        for k in CONSTANT_KEYS:
            lines.append(f"constant.{k} = {getattr(constants, k)!r}")
    for a in aborted:
        lines.append(f"aborted = {a}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- commands


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 0)


def cmd_run(spec: ExperimentSpec, stdout=None, stderr=None) -> int:
    stdout, stderr = stdout or sys.stdout, stderr or sys.stderr
    try:
        spec.out.mkdir(parents=True, exist_ok=True)
        probe = spec.out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory {spec.out} is not writable: {exc}", file=stderr)
        return 2
    try:
        problem = build_problem(spec.settings)
    except (OSError, ValueError) as exc:
        print(f"error: cannot load data: {exc}", file=stderr)
        return 2
    constants = resolve_constants(problem, spec)

    jobs = [(m, seed) for m in spec.methods for seed in spec.seeds]

    def one(job):
        m, seed = job
        cfg = dataclasses.replace(m.config, seed=seed)
        try:
            return run(problem, cfg, constants), None
        except RunAborted as exc:
            return exc.trace, exc.reason
        except (ArithmeticError, ValueError) as exc:
            return None, str(exc)

    threads = _thread_count()
    if threads > 0:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    aborted = []
    per_method: dict[str, list[RunTrace]] = {m.label: [] for m in spec.methods}
    for (m, seed), (trace, reason) in zip(jobs, results):
        if trace is not None:
            trace.write_csv(spec.out / f"{m.label}_seed{seed}.csv")
        if reason is not None:
            aborted.append(f"{m.label} seed {seed}: {reason}")
            print(f"run {m.label} seed {seed} aborted: {reason}", file=stderr)
        else:
            per_method[m.label].append(trace)

    medians = {}
    for label, traces in per_method.items():
        if traces:
            medians[label] = median_columns(traces)
            (spec.out / f"{label}_median.csv").write_text(format_csv(medians[label]))

    if spec.svg and medians:
        f_best = min(float(np.nanmin(tr["f"])) for trs in per_method.values() for tr in trs)
        floor = f_best - 1e-12 * max(1.0, abs(f_best))
        loss = {k: (v["oracle_draws"], v["f"] - floor) for k, v in medians.items()}
        grad = {k: (v["oracle_draws"], v["grad_norm"]) for k, v in medians.items()}
        (spec.out / "loss.svg").write_text(render_svg(loss, "objective gap", "f - f_best"))
        (spec.out / "grad_norm.svg").write_text(render_svg(grad, "gradient norm", "||grad f||"))

    write_metadata(spec.out / "metadata.txt", spec, constants, aborted)
    print(f"{len(jobs) - len(aborted)}/{len(jobs)} runs completed; results in {spec.out}", file=stdout)
    return 1 if aborted else 0


def cmd_check(suite: str, trials: int, seed: int, replay_dir=".", stdout=None, stderr=None) -> int:
    stdout, stderr = stdout or sys.stdout, stderr or sys.stderr
    try:
        report = checks.run_suite(suite, trials, seed, replay_dir)
    except ValueError as exc:
        print(f"error: {exc}", file=stderr)
        return 2
    for line in report.lines():
        print(line, file=stdout)
    if not report.ok:
        print(f"property failures; replay instance written to {report.replay_path}", file=stderr)
        return 1
    return 0


def cmd_schedule(args, stdout=None, stderr=None) -> int:
    stdout, stderr = stdout or sys.stdout, stderr or sys.stderr
    c = ProblemConstants(
        L=args.L, L_g=args.L_g, sigma_g=args.sigma_g, sigma_h=args.sigma_h,
        delta_h=args.sigma_h, sigma_g0=0.0, sigma_h0=0.0,
    )
    try:
        s = make_schedule(c, args.T, args.M, args.source, a_g=args.a_g, a_h=args.a_h,
                          alpha=args.alpha, beta=args.beta)
    except (ScheduleError, ValueError) as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    value = momentum_condition(args.L, args.M, s.alpha, s.beta)
    print(f"alpha = {s.alpha:.6g}", file=stdout)
    print(f"beta = {s.beta:.6g}", file=stdout)
    status = "satisfied" if value <= 0 else "violated"
    print(f"bias condition = {value:.6g} ({status})", file=stdout)
    return 0


def _count(text: str) -> int:
    """Integer argument that also accepts forms like ``1e4``."""
    value = float(text)
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cubic-momentum", description="Stochastic cubic Newton with momentum: experiments, self-checks, schedules.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment described by a config file")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--seeds", help="comma-separated seeds (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--svg", action="store_true", help="write loss.svg and grad_norm.svg")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")

    p = sub.add_parser("check", help="run randomized invariant suites")
    p.add_argument("--suite", default="all", choices=[*checks.SUITES, "all"])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replay-dir", default=".", help="where to write a failing instance")

    p = sub.add_parser("schedule", help="print momentum parameters for given constants")
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--L_g", type=float, default=None)
    p.add_argument("--sigma_g", type=float, default=1.0)
    p.add_argument("--sigma_h", type=float, default=1.0)
    p.add_argument("--a_g", type=float, default=1.0)
    p.add_argument("--a_h", type=float, default=1.0)
    p.add_argument("--T", type=_count, required=True)
    p.add_argument("--M", type=float, required=True)
    p.add_argument("--source", default="main_IT", choices=SCHEDULE_SOURCES)
    p.add_argument("--alpha", type=float, default=None, help="manual source only")
    p.add_argument("--beta", type=float, default=None, help="manual source only")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "check":
        if args.trials < 1:
            print("error: trials must be >= 1", file=sys.stderr)
            return 2
        return cmd_check(args.suite, args.trials, args.seed, args.replay_dir)
    if args.command == "schedule":
        if args.L_g is None:
            args.L_g = args.L
        return cmd_schedule(args)

    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        overrides[key.strip()] = value.strip()
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.out is not None:
        overrides["out"] = args.out
    if args.svg:
        overrides["svg"] = "true"
    try:
        text = Path(args.config).read_text()
        raw = parse_config_text(text)
        raw.update(overrides)
        spec = ExperimentSpec.from_settings(raw)
        _thread_count()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return cmd_run(spec)


if __name__ == "__main__":
    sys.exit(main())
