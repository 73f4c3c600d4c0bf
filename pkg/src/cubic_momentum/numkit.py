"""Dense symmetric linear algebra used by the solvers and metrics.

Vectors are 1-D float64 arrays and symmetric matrices are 2-D float64 arrays
that have been passed through :func:`as_symmetric`.  The eigensolver is
LAPACK's symmetric driver (tridiagonal reduction followed by QR/divide and
conquer) reached through :func:`numpy.linalg.eigh`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-10
RECON_TOL = 1e-8
REFINE_STEPS = 2


class NumkitError(ArithmeticError):
    pass


class EigenSolverError(NumkitError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual norm {residual:.3e})")
        self.residual = residual


class SingularShiftError(NumkitError):
    def __init__(self, lambda_min: float, gamma: float):
        super().__init__(
            f"shifted matrix is not positive definite: lambda_min + gamma = {lambda_min + gamma:.3e}"
        )
        self.lambda_min = lambda_min
        self.gamma = gamma


def as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.array(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def as_symmetric(H, name: str = "matrix") -> np.ndarray:
    """Return a float64 copy of ``H`` with exact structural symmetry.

    The upper triangle is authoritative; the lower triangle is overwritten by
    its transpose so ``M[i, j] == M[j, i]`` holds bit for bit.
    """
    A = np.array(H, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    upper = np.triu(A)
    return upper + np.triu(A, 1).T


def spectral_norm(H: np.ndarray) -> float:
    """Largest absolute eigenvalue of a symmetric matrix."""
    if H.size == 0:
        return 0.0
    w = np.linalg.eigvalsh(H)
    return float(max(abs(w[0]), abs(w[-1])))


@dataclass(frozen=True)
class EigDecomp:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    matrix: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    def reconstruct(self) -> np.ndarray:
        Q, lam = self.eigenvectors, self.eigenvalues
        return (Q * lam) @ Q.T


def sym_eig(H) -> EigDecomp:
    A = as_symmetric(H)
    if A.shape[0] < 1:
        raise ValueError("dimension must be at least 1")
    try:
        lam, Q = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"eigensolver did not converge: {exc}") from exc
    recon = float(np.max(np.abs((Q * lam) @ Q.T - A)))
    if not np.isfinite(recon) or recon > RECON_TOL * (1.0 + float(np.max(np.abs(A)))):
        raise EigenSolverError("eigendecomposition failed reconstruction check", recon)
    return EigDecomp(eigenvalues=lam, eigenvectors=Q, matrix=A)


def solve_shifted(decomp: EigDecomp, gamma: float, b) -> np.ndarray:
    """Solve ``(H + gamma I) s = b`` through the eigenbasis.

    When the decomposition still carries ``H``, a couple of rounds of
    iterative refinement against the original matrix clean up the error
    left by the spectral factors.
    """
    lam, Q = decomp.eigenvalues, decomp.eigenvectors
    if lam[0] + gamma <= 0.0:
        raise SingularShiftError(float(lam[0]), float(gamma))
    rhs = as_vector(b, "b")
    shift = lam + gamma
    s = Q @ ((Q.T @ rhs) / shift)
    if decomp.matrix is not None:
        A = decomp.matrix
        for _ in range(REFINE_STEPS):
            r = rhs - (A @ s + gamma * s)
            s = s + Q @ ((Q.T @ r) / shift)
    return s


def min_eigenvalue(H) -> tuple[float, np.ndarray]:
    dec = sym_eig(H)
    v = dec.eigenvectors[:, 0].copy()
    return dec.lambda_min, v
