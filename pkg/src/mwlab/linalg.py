"""Hermitian positive-definite matrix calculus for small matrices.

Eigendecompositions use cyclic Jacobi rotations, vectorized over a leading
batch axis so that a whole quadrature grid of ``W(x)`` samples is
diagonalized at once.  Matrices are tiny (``m <= 8``); the rotation loop
runs over index pairs, not over batch entries.
"""
from __future__ import annotations

import numpy as np

MAX_SIZE = 8
HERMITIAN_TOL = 1e-12


class NotHermitianError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    """A matrix that should be positive definite has a nonpositive eigenvalue."""


def _jacobi_batch(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 30):
    A = np.array(A, dtype=complex, copy=True)
    batch, m, _ = A.shape
    V = np.broadcast_to(np.eye(m, dtype=complex), A.shape).copy()
    if m == 1:
        return A[:, 0, 0].real.copy(), V
    scale = np.maximum(np.linalg.norm(A, axis=(1, 2)), np.finfo(float).tiny)
    offmask = ~np.eye(m, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(A[:, offmask]) ** 2, axis=1))
        if np.all(off <= tol * scale):
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = A[:, p, q]
                r = np.abs(apq)
                active = r > tol * scale * 1e-3
                if not np.any(active):
                    continue
                w = np.where(active, apq / np.where(active, r, 1.0), 1.0)
                app = A[:, p, p].real
                aqq = A[:, q, q].real
                rr = np.where(active, r, 1.0)
                tau = (aqq - app) / (2.0 * rr)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # G = diag(1, conj(w)) on (p, q) followed by the real rotation
                G = np.broadcast_to(np.eye(m, dtype=complex), A.shape).copy()
                G[:, p, p] = c
                G[:, p, q] = s
                G[:, q, p] = -s * np.conj(w)
                G[:, q, q] = c * np.conj(w)
                A = np.conj(np.swapaxes(G, 1, 2)) @ A @ G
                A[:, p, q] = 0.0
                A[:, q, p] = 0.0
                V = V @ G
    lam = np.real(np.diagonal(A, axis1=1, axis2=2)).copy()
    order = np.argsort(lam, axis=1)
    lam = np.take_along_axis(lam, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return lam, V


def _check_hermitian(A: np.ndarray) -> None:
    if A.shape[-1] != A.shape[-2]:
        raise NotHermitianError(f"matrix must be square, got shape {A.shape}")
    if A.shape[-1] > MAX_SIZE:
        raise ValueError(f"matrix size {A.shape[-1]} exceeds {MAX_SIZE}")
    defect = np.linalg.norm(A - np.conj(np.swapaxes(A, -1, -2)), axis=(-2, -1))
    size = np.linalg.norm(A, axis=(-2, -1))
    if np.any(defect > HERMITIAN_TOL * np.maximum(size, 1e-300)):
        raise NotHermitianError("matrix is not Hermitian within tolerance")


def eigh_batch(A: np.ndarray, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and unitary eigenvectors for a batch ``(..., m, m)``."""
    A = np.asarray(A)
    if check:
        _check_hermitian(A)
    shape = A.shape[:-2]
    m = A.shape[-1]
    Ah = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    lam, V = _jacobi_batch(Ah.reshape(-1, m, m))
    return lam.reshape(shape + (m,)), V.reshape(shape + (m, m))


def spectral_decomp(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``A = U diag(lam) U*`` for Hermitian positive-definite ``A``."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2:
        raise ValueError("expected a single matrix")
    lam, U = eigh_batch(A[None])
    if lam[0, 0] <= 0:
        raise NotPositiveDefiniteError(f"smallest eigenvalue {lam[0, 0]:.3e} is not positive")
    return U[0], lam[0]


def power_batch(A: np.ndarray, alpha: float, check: bool = True) -> np.ndarray:
    """``A^alpha`` for a batch of Hermitian positive-definite matrices."""
    lam, U = eigh_batch(A, check=check)
    if np.any(lam <= 0):
        raise NotPositiveDefiniteError("nonpositive eigenvalue in batch")
    scaled = U * (lam ** alpha)[..., None, :]
    return scaled @ np.conj(np.swapaxes(U, -1, -2))


def matrix_power(A: np.ndarray, alpha: float) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if alpha == 0:
        spectral_decomp(A)
        return np.eye(A.shape[0], dtype=complex)
    if alpha == 1:
        spectral_decomp(A)
        return A.copy()
    return power_batch(A[None], alpha)[0]


def op_norm_batch(A: np.ndarray) -> np.ndarray:
    """Largest singular value of each matrix in a batch ``(..., r, c)``."""
    A = np.asarray(A)
    if A.shape[-1] == 1 or A.shape[-2] == 1:
        return np.sqrt(np.sum(np.abs(A) ** 2, axis=(-2, -1)))
    gram = np.conj(np.swapaxes(A, -1, -2)) @ A
    lam, _ = eigh_batch(gram, check=False)
    return np.sqrt(np.maximum(lam[..., -1], 0.0))


def op_norm(A: np.ndarray) -> float:
    return float(op_norm_batch(np.asarray(A, dtype=complex)[None])[0])


def is_hermitian_pd(A: np.ndarray) -> bool:
    try:
        spectral_decomp(A)
    except (NotHermitianError, NotPositiveDefiniteError):
        return False
    return True
