"""Minimum-volume enclosing ellipsoids of centrally symmetric point clouds.

Points are complex vectors and the cloud is understood to be circled
(closed under multiplication by unit scalars), so the optimal ellipsoid is
``{z : z* H z <= 1}`` with ``H`` Hermitian.  Real clouds symmetric under
``z -> -z`` are the special case of real inputs.

Two solvers are provided.  ``khachiyan`` is coordinate ascent on the
D-optimal design dual with Todd-Yildirim away steps.  ``barrier`` minimizes
``-log det H`` over Hermitian ``H`` (only ``m^2`` real unknowns) with a
log-barrier for the point constraints and damped Newton steps; it reaches
small gaps in a few dozen linear solves and is the default.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EllipsoidFitError(RuntimeError):
    """The sampled body is degenerate (points do not span the space)."""


@dataclass
class MVEEResult:
    shape: np.ndarray  # H with ellipsoid {z : z* H z <= 1}
    weights: np.ndarray
    iterations: int
    gap: float  # max_i b_i* X^{-1} b_i / m - 1 at exit


def mvee_khachiyan(points: np.ndarray, tol: float = 1e-8, max_iter: int = 10_000) -> MVEEResult:
    """Minimum-volume centered ellipsoid containing ``±points`` (rows).

    Complex input is treated as a circled cloud in ``C^m``.
    """
    B = np.asarray(points)
    if B.ndim != 2:
        raise ValueError("points must be a 2-d array (count, dim)")
    count, m = B.shape
    if count < m:
        raise EllipsoidFitError(f"{count} points cannot span dimension {m}")
    B = B.astype(complex)
    u = np.full(count, 1.0 / count)
    X = (B.T * u) @ np.conj(B)
    try:
        Xinv = np.linalg.inv(X)
    except np.linalg.LinAlgError as exc:
        raise EllipsoidFitError("degenerate point cloud") from exc
    if not np.all(np.isfinite(Xinv)) or np.linalg.cond(X) > 1e14:
        raise EllipsoidFitError("degenerate point cloud")
    # g_i = b_i* X^{-1} b_i
    g = np.real(np.einsum("ki,ij,kj->k", np.conj(B), Xinv, B))
    it = 0
    gap = float(g.max() / m - 1.0)
    while it < max_iter:
        jplus = int(np.argmax(g))
        gplus = g[jplus]
        support = u > 0
        gs = np.where(support, g, np.inf)
        jminus = int(np.argmin(gs))
        gminus = gs[jminus]
        gap = float(gplus / m - 1.0)
        if gap <= tol and gminus >= m * (1.0 - tol):
            break
        if gplus - m >= m - gminus:
            j, gj = jplus, gplus
            beta = (gj - m) / (m * (gj - 1.0))
        else:
            j, gj = jminus, gminus
            drop = -u[j] / (1.0 - u[j])
            # for g_j <= 1 the objective decreases all the way: drop the point
            beta = max((gj - m) / (m * (gj - 1.0)), drop) if gj > 1.0 else drop
        # X' = (1-beta) X + beta b b*
        b = B[j]
        Xb = Xinv @ b
        c = B.conj() @ Xb  # c_i = b_i* X^{-1} b_j
        denom = (1.0 - beta) + beta * gj
        Xinv = (Xinv - beta * np.outer(Xb, np.conj(Xb)) / denom) / (1.0 - beta)
        g = (g - beta * np.abs(c) ** 2 / denom) / (1.0 - beta)
        u *= 1.0 - beta
        u[j] += beta
        u[u < 1e-300] = 0.0
        it += 1
        if it % 200 == 0:
            # refresh against drift from the rank-one updates
            X = (B.T * u) @ np.conj(B)
            Xinv = np.linalg.inv(X)
            g = np.real(np.einsum("ki,ij,kj->k", np.conj(B), Xinv, B))
    H = Xinv / m
    H = 0.5 * (H + np.conj(H.T))
    return MVEEResult(H, u, it, gap)


def hermitian_basis(m: int) -> np.ndarray:
    """Real basis ``(m*m, m, m)`` of the Hermitian ``m x m`` matrices."""
    basis = []
    for i in range(m):
        E = np.zeros((m, m), dtype=complex)
        E[i, i] = 1.0
        basis.append(E)
    for i in range(m):
        for k in range(i + 1, m):
            E = np.zeros((m, m), dtype=complex)
            E[i, k] = E[k, i] = 1.0
            basis.append(E)
            E = np.zeros((m, m), dtype=complex)
            E[i, k], E[k, i] = 1j, -1j
            basis.append(E)
    return np.array(basis)


def mvee_barrier(points: np.ndarray, tol: float = 1e-8, max_iter: int = 10_000) -> MVEEResult:
    """Path-following solve of ``min -log det H  s.t.  b_i* H b_i <= 1``.

    ``tol`` bounds the duality gap per point (``count / t``), i.e. the
    returned ellipsoid has volume within a factor ``exp(tol * count)`` of
    the optimum.  ``max_iter`` caps the total number of Newton steps.
    Points are whitened by their second-moment matrix first, which makes the
    problem well conditioned whatever the eccentricity of the cloud.
    """
    B = np.asarray(points).astype(complex)
    if B.ndim != 2:
        raise ValueError("points must be a 2-d array (count, dim)")
    count, m = B.shape
    if count < m:
        raise EllipsoidFitError(f"{count} points cannot span dimension {m}")
    X = (B.T @ np.conj(B)) / count
    X = 0.5 * (X + np.conj(X.T))
    if not np.all(np.isfinite(X)) or np.linalg.cond(X) > 1e14:
        raise EllipsoidFitError("degenerate point cloud")
    L = np.linalg.cholesky(X)
    Linv = np.linalg.inv(L)
    C = B @ Linv.T  # rows L^{-1} b_i
    E = hermitian_basis(m)
    # F[i, k] = c_i* E_k c_i
    F = np.real(np.einsum("ia,kab,ib->ik", np.conj(C), E, C))
    # start from a scaled identity, strictly feasible
    h = np.zeros(len(E))
    h[:m] = 0.5 / np.max(np.sum(np.abs(C) ** 2, axis=1))

    def hmat(v):
        return np.einsum("k,kab->ab", v, E)

    def objective(v):
        return -t * np.linalg.slogdet(hmat(v))[1] - np.sum(np.log(1.0 - F @ v))

    t = float(count)
    steps = 0
    while True:
        final = count / t < tol
        for _ in range(200):
            H = hmat(h)
            G = np.linalg.solve(H, E)  # H^{-1} E_k
            s = 1.0 - F @ h
            grad = -t * np.real(np.einsum("kaa->k", G)) + F.T @ (1.0 / s)
            hess = t * np.real(np.einsum("kab,lba->kl", G, G)) + (F / s[:, None] ** 2).T @ F
            step = -np.linalg.solve(hess, grad)
            decrement = float(-grad @ step)
            # decrement is in units of the t-scaled objective; 1e-6 is near its rounding floor
            if decrement < (1e-6 if final else 1e-3) or steps >= max_iter:
                break
            steps += 1
            alpha = 1.0
            Fs = F @ step
            grow = Fs > 0
            if np.any(grow):
                alpha = min(alpha, 0.99 * float(np.min(s[grow] / Fs[grow])))
            f0 = objective(h)
            while True:
                trial = h + alpha * step
                if np.all(F @ trial < 1.0) and np.all(np.linalg.eigvalsh(hmat(trial)) > 0):
                    if objective(trial) <= f0 - 0.25 * alpha * decrement:
                        break
                alpha *= 0.5
                if alpha < 1e-12:
                    break
            h = h + alpha * step
        if final or steps >= max_iter:
            break
        t = min(t * 50.0, 2.0 * count / tol)
    Hw = hmat(h)
    H = np.conj(Linv.T) @ Hw @ Linv
    H = 0.5 * (H + np.conj(H.T))
    s = 1.0 - F @ h
    return MVEEResult(H, 1.0 / (t * s), steps, float(count / t))


def mvee_symmetric(points: np.ndarray, tol: float = 1e-8, max_iter: int = 10_000,
                   method: str = "barrier") -> MVEEResult:
    """Minimum-volume centered ellipsoid containing ``±points`` (rows).

    Complex input is treated as a circled cloud in ``C^m``.
    """
    if method == "barrier":
        return mvee_barrier(points, tol, max_iter)
    if method == "khachiyan":
        return mvee_khachiyan(points, tol, max_iter)
    raise ValueError(f"unknown MVEE method {method!r}")
