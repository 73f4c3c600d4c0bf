"""Finite-sum objectives ``f(x) = (1/n) sum_i f_i(x)`` with exact oracles.

Every per-sample oracle accepts an index array; ``None`` means the full sum.
Batches are drawn uniformly with replacement so per-sample draws are i.i.d.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset
from .numkit import as_vector, spectral_norm

SAFETY_FACTOR = 1.5


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray

    def __post_init__(self):
        if self.indices.ndim != 1 or self.indices.size < 1:
            raise ValueError("a batch needs at least one index")

    @property
    def size(self) -> int:
        return int(self.indices.size)


def draw_batch(rng: np.random.Generator, n: int, size: int) -> Batch:
    if size < 1:
        raise ValueError("batch size must be >= 1")
    return Batch(rng.integers(0, n, size=size))


def _log1pexp(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def reg_value(x: np.ndarray) -> float:
    x2 = x * x
    return float(np.sum(x2 / (1.0 + x2)))


def reg_gradient(x: np.ndarray) -> np.ndarray:
    return 2.0 * x / (1.0 + x * x) ** 2


def reg_hessian_diag(x: np.ndarray) -> np.ndarray:
    x2 = x * x
    return (2.0 - 6.0 * x2) / (1.0 + x2) ** 3


class FiniteSumProblem:
    kind: str = "abstract"
    dim: int
    n_samples: int

    def value(self, x, idx=None) -> float:
        raise NotImplementedError

    def gradient(self, x, idx=None) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x, idx=None) -> np.ndarray:
        raise NotImplementedError

    def sample_gradients(self, x) -> np.ndarray:
        """All per-sample gradients at ``x`` as an ``n x d`` array."""
        raise NotImplementedError

    def sample_hessian(self, x, i: int) -> np.ndarray:
        return self.hessian(x, np.array([i]))


class LogisticProblem(FiniteSumProblem):
    """Logistic loss plus ``reg_weight * sum x_j^2/(1+x_j^2) + ridge/2 ||x||^2``.

    Both penalties are added to every ``f_i`` so the sample mean stays
    unbiased for the full objective.
    """

    def __init__(self, data: Dataset, reg_weight: float = 0.0, ridge: float = 0.0):
        if reg_weight < 0 or ridge < 0:
            raise ValueError("penalty weights must be non-negative")
        self.data = data
        self.A = data.dense
        self.y = data.labels
        self.reg_weight = float(reg_weight)
        self.ridge = float(ridge)
        self.n_samples, self.dim = self.A.shape
        self.kind = "logistic_ncvx" if reg_weight > 0 else "logistic_convex"

    def _rows(self, idx):
        if idx is None:
            return self.A, self.y
        return self.A[idx], self.y[idx]

    def _penalty_value(self, x):
        return self.reg_weight * reg_value(x) + 0.5 * self.ridge * float(x @ x)

    def value(self, x, idx=None) -> float:
        x = as_vector(x, "x")
        A, y = self._rows(idx)
        margins = -y * (A @ x)
        return float(np.mean(_log1pexp(margins))) + self._penalty_value(x)

    def gradient(self, x, idx=None) -> np.ndarray:
        x = as_vector(x, "x")
        A, y = self._rows(idx)
        coef = -y * _sigmoid(-y * (A @ x))
        g = A.T @ coef / A.shape[0]
        return g + self.reg_weight * reg_gradient(x) + self.ridge * x

    def hessian(self, x, idx=None) -> np.ndarray:
        x = as_vector(x, "x")
        A, _ = self._rows(idx)
        p = _sigmoid(A @ x)
        w = p * (1.0 - p)
        H = (A.T * w) @ A / A.shape[0]
        H = 0.5 * (H + H.T)
        H[np.diag_indices_from(H)] += self.reg_weight * reg_hessian_diag(x) + self.ridge
        return H

    def sample_gradients(self, x) -> np.ndarray:
        x = as_vector(x, "x")
        coef = -self.y * _sigmoid(-self.y * (self.A @ x))
        return self.A * coef[:, None] + (self.reg_weight * reg_gradient(x) + self.ridge * x)


class QuadraticSumProblem(FiniteSumProblem):
    """``f_i(x) = 1/2 x^T A_i x + b_i^T x + c_i``."""

    kind = "quadratic_sum"

    def __init__(self, hessians, offsets, constants=None):
        A = np.asarray(hessians, dtype=float)
        b = np.asarray(offsets, dtype=float)
        if A.ndim == 2:
            A = np.broadcast_to(A, (b.shape[0],) + A.shape)
        if A.ndim != 3 or b.ndim != 2 or A.shape[0] != b.shape[0] or A.shape[1:] != (b.shape[1],) * 2:
            raise ValueError("need hessians of shape (n, d, d) and offsets of shape (n, d)")
        self.A = 0.5 * (A + np.swapaxes(A, 1, 2))
        self.b = b
        self.c = np.zeros(b.shape[0]) if constants is None else np.asarray(constants, dtype=float)
        self.n_samples, self.dim = b.shape
        self._A_mean = self.A.mean(axis=0)

    @classmethod
    def shared(cls, A, offsets, constants=None) -> "QuadraticSumProblem":
        """Components sharing one Hessian ``A`` and differing in ``b_i``."""
        offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
        return cls(np.asarray(A, dtype=float), offsets, constants)

    def value(self, x, idx=None) -> float:
        x = as_vector(x, "x")
        if idx is None:
            A, b, c = self._A_mean, self.b.mean(axis=0), float(self.c.mean())
            return float(0.5 * x @ A @ x + b @ x + c)
        vals = 0.5 * np.einsum("i,kij,j->k", x, self.A[idx], x) + self.b[idx] @ x + self.c[idx]
        return float(np.mean(vals))

    def gradient(self, x, idx=None) -> np.ndarray:
        x = as_vector(x, "x")
        if idx is None:
            return self._A_mean @ x + self.b.mean(axis=0)
        return self.A[idx].mean(axis=0) @ x + self.b[idx].mean(axis=0)

    def hessian(self, x, idx=None) -> np.ndarray:
        if idx is None:
            return self._A_mean.copy()
        return self.A[idx].mean(axis=0)

    def sample_gradients(self, x) -> np.ndarray:
        x = as_vector(x, "x")
        return self.A @ x + self.b


def sample_gradient(p: FiniteSumProblem, x, batch: Batch) -> np.ndarray:
    return p.gradient(x, batch.indices)


def sample_hessian(p: FiniteSumProblem, x, batch: Batch) -> np.ndarray:
    return p.hessian(x, batch.indices)


def full_gradient(p: FiniteSumProblem, x) -> np.ndarray:
    return p.gradient(x)


def full_hessian(p: FiniteSumProblem, x) -> np.ndarray:
    return p.hessian(x)


def full_value(p: FiniteSumProblem, x) -> float:
    return p.value(x)


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    L_g: float
    sigma_g: float
    sigma_h: float
    delta_h: float
    sigma_g0: float
    sigma_h0: float

    def __post_init__(self):
        vals = (self.L, self.L_g, self.sigma_g, self.sigma_h, self.delta_h, self.sigma_g0, self.sigma_h0)
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError("problem constants must be finite and non-negative")
        if self.sigma_g0 > self.sigma_g or self.sigma_h0 > self.sigma_h:
            raise ValueError("initial noise levels cannot exceed the running ones")
        if self.delta_h < self.sigma_h:
            raise ValueError("delta_h must be at least sigma_h")

    @property
    def a_g(self) -> float:
        return self.sigma_g0 / self.sigma_g if self.sigma_g > 0 else 0.0

    @property
    def a_h(self) -> float:
        return self.sigma_h0 / self.sigma_h if self.sigma_h > 0 else 0.0


def estimate_constants(
    p: FiniteSumProblem,
    x0,
    probes: int = 8,
    seed: int = 0,
    *,
    radius: float = 1.0,
    initial_batch: int = 1,
    max_samples: int = 512,
    safety: float = SAFETY_FACTOR,
) -> ProblemConstants:
    """Heuristic estimates of the constants the momentum schedules consume.

    Curvature constants come from ``probes`` points drawn in a ball of
    ``radius`` around ``x0``; noise levels from single-sample oracles at
    ``x0`` (at most ``max_samples`` of them).  Every value is inflated by
    ``safety``.  An initial batch of ``b0`` samples scales the initial noise
    levels by ``1/sqrt(b0)``.
    """
    if probes < 2:
        raise ValueError("need at least two probe points")
    if initial_batch < 1:
        raise ValueError("initial batch must be >= 1")
    x0 = as_vector(x0, "x0")
    rng = np.random.default_rng(seed)
    d = p.dim

    pts = [x0]
    for _ in range(probes - 1):
        u = rng.standard_normal(d)
        u *= radius * rng.random() ** (1.0 / d) / max(np.linalg.norm(u), 1e-300)
        pts.append(x0 + u)
    hess = [p.hessian(z) for z in pts]
    L = 0.0
    for (xa, Ha), (xb, Hb) in itertools.combinations(zip(pts, hess), 2):
        dist = float(np.linalg.norm(xa - xb))
        if dist > 0:
            L = max(L, spectral_norm(Ha - Hb) / dist)
    L_g = max(spectral_norm(H) for H in hess)

    n = p.n_samples
    ids = np.arange(n) if n <= max_samples else np.sort(rng.choice(n, size=max_samples, replace=False))
    G = p.sample_gradients(x0)[ids]
    g_full = p.gradient(x0)
    sigma_g = math.sqrt(float(np.mean(np.sum((G - g_full) ** 2, axis=1))))

    H_full = hess[0]
    devs = np.array([spectral_norm(p.sample_hessian(x0, int(i)) - H_full) for i in ids])
    sigma_h = math.sqrt(float(np.mean(devs**2)))
    delta_h = float(devs.max())

    shrink = 1.0 / math.sqrt(initial_batch)
    return ProblemConstants(
        L=safety * L,
        L_g=safety * L_g,
        sigma_g=safety * sigma_g,
        sigma_h=safety * sigma_h,
        delta_h=safety * max(delta_h, sigma_h),
        sigma_g0=safety * sigma_g * shrink,
        sigma_h0=safety * sigma_h * shrink,
    )
