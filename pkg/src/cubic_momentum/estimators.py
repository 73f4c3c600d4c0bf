"""Momentum estimators for gradients and Hessians, and their schedules.

Gradient variants (``x_t`` current point, ``d_t = x_t - x_{t-1}``):

* ``IT``  g_t = (1-a) g_{t-1} + a grad_xi(x_t + (1-a)/a d_t)
* ``HB``  g_t = (1-a) g_{t-1} + a grad_xi(x_t)
* ``MVR`` g_t = (1-a) (g_{t-1} + grad_xi(x_t) - grad_xi(x_{t-1})) + a grad_xi(x_t)
* ``SOM`` g_t = (1-a) (g_{t-1} + H_t d_t) + a grad_xi(x_t)

The Hessian estimate is always the heavy-ball average
``H_t = (1-b) H_{t-1} + b hess_xi(x_t)``.  The first update of every
estimator returns the plain sample at ``x_0``.

A *sample* is any object with ``gradient(point)`` and ``hessian(point)``
that evaluates one fixed draw ``xi_t``; MVR additionally needs
``sample.replayable`` to be true because it evaluates the same draw twice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numkit import as_symmetric
from .problems import ProblemConstants

GRAD_VARIANTS = ("IT", "HB", "MVR", "SOM")
SCHEDULE_SOURCES = (
    "main_IT",
    "appendix_HB",
    "appendix_MVR",
    "appendix_MVR_alt",
    "appendix_SOM",
    "manual",
)
SOM_CONST = 3175.0
MVR_CONST = 72.0 * 32.0


class CapabilityError(RuntimeError):
    pass


class ScheduleError(ValueError):
    pass


def _check_rate(name: str, value: float):
    if not (0.0 < value <= 1.0):
        raise ValueError(f"{name} must lie in (0, 1], got {value}")


@dataclass
class GradEstimatorState:
    variant: str = "IT"
    alpha: float = 0.1
    harmonic: bool = False
    g_prev: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    t: int = 0
    evaluations: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.variant not in GRAD_VARIANTS:
            raise ValueError(f"unknown gradient variant {self.variant!r}")
        _check_rate("alpha", self.alpha)

    def rate(self) -> float:
        """Momentum weight for the update about to happen (``t >= 1``)."""
        return 1.0 / (self.t + 1) if self.harmonic else self.alpha

    def update(self, x, sample, H=None) -> np.ndarray:
        if self.variant == "IT":
            return it_update(self, x, sample)
        if self.variant == "HB":
            return hb_grad_update(self, x, sample)
        if self.variant == "MVR":
            return mvr_update(self, x, sample)
        return som_update(self, x, H, sample)


@dataclass
class HessEstimatorState:
    beta: float = 0.01
    harmonic: bool = False
    H_prev: np.ndarray | None = None
    t: int = 0

    def __post_init__(self):
        _check_rate("beta", self.beta)

    def rate(self) -> float:
        return 1.0 / (self.t + 1) if self.harmonic else self.beta

    def update(self, x, sample) -> np.ndarray:
        return hb_hess_update(self, x, sample)


def _initialize(state: GradEstimatorState, x: np.ndarray, sample) -> np.ndarray:
    g = np.asarray(sample.gradient(x), dtype=float)
    state.evaluations += 1
    return _advance(state, x, g)


def _advance(state: GradEstimatorState, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    state.g_prev = g
    state.x_prev = x.copy()
    state.t += 1
    return g


def it_update(state: GradEstimatorState, x, sample) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if state.t == 0:
        return _initialize(state, x, sample)
    a = state.rate()
    if a <= 0.0:
        raise ValueError("IT transport divides by alpha; alpha must be positive")
    y = x + (1.0 - a) / a * (x - state.x_prev)
    fresh = np.asarray(sample.gradient(y), dtype=float)
    state.evaluations += 1
    return _advance(state, x, (1.0 - a) * state.g_prev + a * fresh)


def hb_grad_update(state: GradEstimatorState, x, sample) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if state.t == 0:
        return _initialize(state, x, sample)
    a = state.rate()
    fresh = np.asarray(sample.gradient(x), dtype=float)
    state.evaluations += 1
    return _advance(state, x, (1.0 - a) * state.g_prev + a * fresh)


def mvr_update(state: GradEstimatorState, x, sample) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if state.t == 0:
        return _initialize(state, x, sample)
    if not getattr(sample, "replayable", True):
        raise CapabilityError("MVR needs the same sample evaluated at two points")
    a = state.rate()
    fresh = np.asarray(sample.gradient(x), dtype=float)
    stale = np.asarray(sample.gradient(state.x_prev), dtype=float)
    state.evaluations += 2
    g = (1.0 - a) * (state.g_prev + fresh - stale) + a * fresh
    return _advance(state, x, g)


def som_update(state: GradEstimatorState, x, H, sample) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if state.t == 0:
        return _initialize(state, x, sample)
    if H is None:
        raise ValueError("SOM needs the current Hessian estimate")
    a = state.rate()
    fresh = np.asarray(sample.gradient(x), dtype=float)
    state.evaluations += 1
    g = (1.0 - a) * (state.g_prev + np.asarray(H) @ (x - state.x_prev)) + a * fresh
    return _advance(state, x, g)


def hb_hess_update(state: HessEstimatorState, x, sample) -> np.ndarray:
    fresh = as_symmetric(sample.hessian(np.asarray(x, dtype=float)), "sampled Hessian")
    if state.t == 0:
        H = fresh
    else:
        b = state.rate()
        H = as_symmetric((1.0 - b) * state.H_prev + b * fresh)
    state.H_prev = H
    state.t += 1
    return H


@dataclass(frozen=True)
class Schedule:
    alpha: float
    beta: float
    M: float
    T: int
    a_g: float
    a_h: float
    source: str

    def condition_value(self, L: float) -> float:
        return momentum_condition(L, self.M, self.alpha, self.beta)


def momentum_condition(L: float, M: float, alpha: float, beta: float) -> float:
    """Left side of the bias-compensation condition; ``<= 0`` means satisfied."""
    return (
        4.0 * math.sqrt(3.0) * L**1.5 / alpha**3
        + 657.0 * L**3 / (M**1.5 * beta**3)
        - M**1.5 / 72.0
    )


def _safe_ratio(num: float, den: float) -> float:
    if den == 0.0:
        return math.inf if num > 0 else 0.0
    return num / den


def _clamp(value: float, T: int) -> float:
    # a weight below 1/T averages over more steps than the run has
    return min(1.0, max(value, 1.0 / T))


def make_schedule(
    constants: ProblemConstants,
    T: int,
    M: float,
    source: str = "main_IT",
    *,
    a_g: float | None = None,
    a_h: float | None = None,
    alpha: float | None = None,
    beta: float | None = None,
) -> Schedule:
    if T < 1:
        raise ScheduleError("horizon T must be >= 1")
    if not M > 0:
        raise ScheduleError("M must be positive")
    if source not in SCHEDULE_SOURCES:
        raise ScheduleError(f"unknown schedule source {source!r}")
    a_g = constants.a_g if a_g is None else float(a_g)
    a_h = constants.a_h if a_h is None else float(a_h)
    L, L_g = constants.L, constants.L_g
    sg, sh = constants.sigma_g, constants.sigma_h

    if source == "main_IT":
        if M < 100.0 * L:
            raise ScheduleError(f"main_IT schedule needs M >= 100 L (M={M:g}, L={L:g}); try M={100.0 * L:g}")
        al = max(a_g ** (6 / 7) / T ** (4 / 7), 10.0 * math.sqrt(L / M))
        be = max(a_h ** (6 / 5) / T ** (2 / 5), 46.0 * L / M)
    elif source == "appendix_HB":
        al = min(1.0, _safe_ratio(18.0 * L_g**0.8, M**0.4 * sg**0.4))
        be = 1.0
    elif source == "appendix_SOM":
        gamma_aux = min(M / SOM_CONST, _safe_ratio(M**0.6 * sh**0.8, sg**0.4))
        al = min(1.0, SOM_CONST * max(L, gamma_aux) / M)
        be = 1.0
    elif source == "appendix_MVR":
        al = min(1.0, MVR_CONST * _safe_ratio(L_g**2, M * sg) ** (6 / 11))
        be = 1.0
    elif source == "appendix_MVR_alt":
        al = min(1.0, _safe_ratio(18.0 * L_g**0.8, M**0.4 * sg**0.4))
        be = 1.0
    else:
        if alpha is None or beta is None:
            raise ScheduleError("manual schedule needs explicit alpha and beta")
        al, be = float(alpha), float(beta)
        _check_rate("alpha", al)
        _check_rate("beta", be)
        return Schedule(al, be, float(M), int(T), a_g, a_h, source)

    return Schedule(_clamp(al, T), _clamp(be, T), float(M), int(T), a_g, a_h, source)
