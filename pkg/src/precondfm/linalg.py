"""Dense symmetric linear algebra.

Eigendecompositions are computed with cyclic Jacobi rotations, which are
deterministic and accurate to working precision for the small matrices used
here (d <= 64).  Everything downstream consumes spectral functions of a
:class:`SpectralMatrix` rather than individual eigenvectors, so any basis of a
degenerate eigenspace is acceptable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    ConvergenceError,
    DefinitenessError,
    DimensionError,
    SampleSizeError,
    SymmetryError,
)

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class SpectralMatrix:
    """A symmetric matrix together with its eigendecomposition.

    ``eigvals`` are sorted ascending and ``eigvecs[:, i]`` is the eigenvector
    for ``eigvals[i]``, so ``entries == eigvecs @ diag(eigvals) @ eigvecs.T``.
    """

    entries: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    def __post_init__(self):
        for name in ("entries", "eigvals", "eigvecs"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def is_positive_definite(self) -> bool:
        return bool(self.eigvals[0] > 0.0)

    def reconstruct(self) -> np.ndarray:
        return (self.eigvecs * self.eigvals) @ self.eigvecs.T

    def apply_function(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Return ``U f(Lambda) U^T`` for an elementwise spectral function ``fn``."""
        return (self.eigvecs * fn(self.eigvals)) @ self.eigvecs.T

    def require_positive_definite(self) -> None:
        if not self.is_positive_definite:
            raise DefinitenessError(
                f"matrix is not positive definite (smallest eigenvalue {self.eigvals[0]:.3e})"
            )

    @classmethod
    def from_eig(cls, eigvals, eigvecs, entries=None) -> "SpectralMatrix":
        """Build from a known decomposition; ``eigvals`` need not be sorted."""
        eigvals = np.asarray(eigvals, dtype=float)
        eigvecs = np.asarray(eigvecs, dtype=float)
        order = np.argsort(eigvals, kind="stable")
        eigvals = eigvals[order]
        eigvecs = eigvecs[:, order]
        if entries is None:
            entries = (eigvecs * eigvals) @ eigvecs.T
            entries = 0.5 * (entries + entries.T)
        return cls(entries, eigvals, eigvecs)

    @classmethod
    def diagonal(cls, values) -> "SpectralMatrix":
        values = np.asarray(values, dtype=float)
        return cls.from_eig(values, np.eye(values.size), entries=np.diag(values))


def _check_symmetric(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {S.shape}")
    if S.shape[0] < 1:
        raise DimensionError("matrix must have dimension >= 1")
    scale = np.max(np.abs(S)) if S.size else 0.0
    asym = np.max(np.abs(S - S.T)) if S.size else 0.0
    if asym > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
        raise SymmetryError(f"matrix is not symmetric (max |S - S^T| = {asym:.3e})")
    return 0.5 * (S + S.T)


def _off_norm(A: np.ndarray) -> float:
    # Summing squares of the off-diagonal entries directly; the difference
    # ||A||^2 - ||diag A||^2 cancels at sqrt(eps) * ||A||.
    return float(np.linalg.norm(A - np.diag(np.diag(A))))


def _jacobi(S: np.ndarray, tol: float, max_sweeps: int):
    A = S.copy()
    d = A.shape[0]
    V = np.eye(d)
    norm = np.linalg.norm(A)
    threshold = tol * norm if norm > 0 else 0.0
    for _ in range(max_sweeps):
        off = _off_norm(A)
        if off <= threshold:
            return A, V
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    off = _off_norm(A)
    if off <= threshold:
        return A, V
    raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (off-norm {off:.3e})")


def sym_eig(S, *, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> SpectralMatrix:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues come back ascending. Each eigenvector's sign is fixed so its
    largest-magnitude entry is positive, which makes the result independent of
    rotation order for non-degenerate spectra.
    """
    S = _check_symmetric(S)
    D, V = _jacobi(S, tol, max_sweeps)
    vals = np.diag(D).copy()
    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    V = V[:, order]
    pivots = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivots, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    V = V * signs
    return SpectralMatrix(S, vals, V)


def as_spectral(S) -> SpectralMatrix:
    return S if isinstance(S, SpectralMatrix) else sym_eig(S)


def cond_number(S) -> float:
    """lambda_max / lambda_min of a positive-definite matrix."""
    S = as_spectral(S)
    S.require_positive_definite()
    return float(S.eigvals[-1] / S.eigvals[0])


def inv_sqrt(S, ridge: float = 0.0) -> np.ndarray:
    """Symmetric inverse square root ``(S + ridge I)^{-1/2}``."""
    S = as_spectral(S)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if not S.eigvals[0] + ridge > 0.0:
        raise DefinitenessError(
            f"matrix is not positive definite (smallest eigenvalue {S.eigvals[0]:.3e}, ridge {ridge})"
        )
    return S.apply_function(lambda w: 1.0 / np.sqrt(w + ridge))


def sqrtm(S) -> np.ndarray:
    S = as_spectral(S)
    S.require_positive_definite()
    return S.apply_function(np.sqrt)


def sample_covariance(points, centered: bool = False) -> np.ndarray:
    """Second-moment matrix ``(1/n) sum x x^T``, or the covariance if ``centered``.

    Both use the 1/n normalization.
    """
    try:
        X = np.asarray(points, dtype=float)
    except ValueError as exc:
        raise DimensionError("points have ragged dimensions") from exc
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError(f"points must form an (n, d) array, got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise SampleSizeError(f"need at least 2 points, got {n}")
    if centered:
        X = X - X.mean(axis=0)
    C = X.T @ X / n
    return 0.5 * (C + C.T)
