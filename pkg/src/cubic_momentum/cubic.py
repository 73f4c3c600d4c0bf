"""Global minimizer of the cubically regularized quadratic model.

    Omega(s) = <g, s> + 1/2 <H s, s> + M/6 ||s||^3

A global minimizer satisfies ``(H + gamma I) s = -g`` with
``gamma = M ||s|| / 2`` and ``H + gamma I`` positive semidefinite.  After one
eigendecomposition of ``H`` the problem reduces to a scalar equation in
``gamma`` (the secular equation), solved by Newton's method inside a
bisection bracket.  When ``g`` has no component along the bottom
eigenspace the secular root may sit on the wrong side of ``-lambda_min``
(the hard case); the step is then completed along a bottom eigenvector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numkit import as_symmetric, as_vector, sym_eig

MAX_ITER = 200
PERP_TOL = 1e-10
EIG_CLUSTER_TOL = 1e-10
LOWER_OFFSET = 1e-14


class CubicSolverError(ArithmeticError):
    def __init__(self, message: str, bracket: tuple[float, float]):
        super().__init__(f"{message}; bracket [{bracket[0]:.17g}, {bracket[1]:.17g}]")
        self.bracket = bracket


@dataclass(frozen=True)
class CubicModel:
    g: np.ndarray
    H: np.ndarray
    M: float

    def __post_init__(self):
        if not (self.M > 0 and math.isfinite(self.M)):
            raise ValueError(f"cubic regularization M must be positive, got {self.M}")
        g = as_vector(self.g, "g")
        H = as_symmetric(self.H, "H")
        if H.shape != (g.size, g.size):
            raise ValueError("g and H dimensions differ")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "H", H)


@dataclass(frozen=True)
class CubicStepResult:
    s: np.ndarray
    gamma: float
    model_value: float
    hard_case: bool
    residual: float
    iterations: int = 0

    @property
    def step_norm(self) -> float:
        return float(np.linalg.norm(self.s))


def model_value(model: CubicModel, s) -> float:
    s = np.asarray(s, dtype=float)
    r = float(np.linalg.norm(s))
    return float(model.g @ s + 0.5 * s @ (model.H @ s) + model.M / 6.0 * r**3)


def stationarity_residual(model: CubicModel, s) -> float:
    r = float(np.linalg.norm(s))
    return float(np.linalg.norm(model.g + model.H @ s + 0.5 * model.M * r * s))


def mu_measure(grad, hess, M: float) -> float:
    """Second-order stationarity measure ``max(||g||^1.5, (-lambda_min)_+^3 / M^1.5)``."""
    if M <= 0:
        raise ValueError("M must be positive")
    g = as_vector(grad, "grad")
    lam = float(np.linalg.eigvalsh(as_symmetric(hess, "hess"))[0])
    return max(float(np.linalg.norm(g)) ** 1.5, max(0.0, -lam) ** 3 / M**1.5)


def _oriented(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _finish(model: CubicModel, s: np.ndarray, hard: bool, iters: int) -> CubicStepResult:
    r = float(np.linalg.norm(s))
    return CubicStepResult(
        s=s,
        gamma=0.5 * model.M * r,
        model_value=model_value(model, s),
        hard_case=hard,
        residual=stationarity_residual(model, s),
        iterations=iters,
    )


def solve_cubic(model: CubicModel) -> CubicStepResult:
    g, M = model.g, model.M
    dec = sym_eig(model.H)
    lam, Q = dec.eigenvalues, dec.eigenvectors
    gh = Q.T @ g
    gnorm = float(np.linalg.norm(g))
    lam_min = float(lam[0])

    if lam_min >= 0.0 and gnorm == 0.0:
        return _finish(model, np.zeros_like(g), False, 0)

    if lam_min < 0.0:
        scale = 1.0 + float(np.max(np.abs(lam)))
        bottom = lam <= lam_min + EIG_CLUSTER_TOL * scale
        if float(np.linalg.norm(gh[bottom])) <= PERP_TOL * (1.0 + gnorm):
            gamma_bar = -lam_min
            ph = np.zeros_like(gh)
            ph[~bottom] = -gh[~bottom] / (lam[~bottom] + gamma_bar)
            target = 2.0 * gamma_bar / M
            pnorm = float(np.linalg.norm(ph))
            if pnorm <= target:
                tau = math.sqrt(max(target * target - pnorm * pnorm, 0.0))
                v = _oriented(Q[:, np.flatnonzero(bottom)[0]])
                s = Q @ ph + tau * v
                return _finish(model, s, True, 0)
            # root lies strictly above gamma_bar; bottom components are noise
            gh = gh.copy()
            gh[bottom] = 0.0

    gamma, iters = _secular_root(lam, gh, M)
    s = -(Q @ (gh / (lam + gamma)))
    return _finish(model, s, False, iters)


def _secular_root(lam: np.ndarray, gh: np.ndarray, M: float) -> tuple[float, int]:
    """Root of ``||s(gamma)|| = 2 gamma / M`` above ``max(0, -lambda_min)``."""
    g2 = gh * gh
    floor = max(0.0, -float(lam[0]))

    def norms(gamma: float) -> tuple[float, float]:
        shifted = lam + gamma
        snorm = math.sqrt(float(np.sum(g2 / shifted**2)))
        dsnorm = -float(np.sum(g2 / shifted**3)) / snorm if snorm > 0 else 0.0
        return snorm, dsnorm

    def phi(gamma: float) -> float:
        return norms(gamma)[0] - 2.0 * gamma / M

    if lam[0] > 0.0:
        lo = 0.0
    else:
        lo = floor + max(LOWER_OFFSET, 4 * np.spacing(floor))
        if phi(lo) <= 0.0:
            return lo, 0
    hi = max(1.0, 2.0 * floor)
    while phi(hi) >= 0.0:
        lo, hi = hi, 2.0 * hi
        if not math.isfinite(hi):
            raise CubicSolverError("could not bracket the secular root", (lo, hi))

    gamma = hi
    for it in range(1, MAX_ITER + 1):
        snorm, dsnorm = norms(gamma)
        f = snorm - 2.0 * gamma / M
        if f > 0.0:
            lo = gamma
        elif f < 0.0:
            hi = gamma
        else:
            return gamma, it
        if hi - lo <= 4.0 * np.spacing(hi):
            return hi if abs(phi(hi)) < abs(phi(lo)) else lo, it
        # Newton on 1/||s|| - M/(2 gamma), nearly linear in gamma
        cand = None
        if snorm > 0.0 and gamma > 0.0:
            psi = 1.0 / snorm - 0.5 * M / gamma
            dpsi = -dsnorm / snorm**2 + 0.5 * M / gamma**2
            if dpsi > 0.0:
                cand = gamma - psi / dpsi
                if abs(cand - gamma) <= 4.0 * np.spacing(gamma):
                    return gamma, it
        if cand is None or not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        if cand == gamma:
            return gamma, it
        gamma = cand
    raise CubicSolverError("secular iteration did not converge", (lo, hi))
