"""Matrix weights, cube quadrature, and reducing operators of order p.

A reducing operator ``A_Q`` of order ``p`` is a positive-definite matrix with
``|A_Q z|`` comparable to ``rho_Q(z) = (avg_Q |W^{1/p}(x) z|^p)^{1/p}``.
Two constructions are offered:

``gram2``
    ``(avg_Q W^{2/p})^{1/2}``; exact (``rho_Q(z) = |A_Q z|``) when ``p = 2``.
``john``
    the Löwner ellipsoid of sampled points of the unit sphere of ``rho_Q``,
    which is within a factor ``sqrt(m)`` of ``rho_Q`` in every direction.

For ``m = 1`` both return the scalar ``rho_Q(1)`` exactly.
"""
from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm as _normal
from scipy.stats import qmc

from . import linalg
from .dyadic import CubeIndex
from .ellipsoid import EllipsoidFitError, mvee_symmetric

# deeper layers would underflow node positions (2^-1074)
MAX_LAYERS = 960
KINDS = ("identity", "power", "anisotropic", "conjugated", "custom")


class SingularPointError(ValueError):
    pass


class QuadratureNotConverged(RuntimeError):
    pass


def radius(X: np.ndarray) -> np.ndarray:
    """Row norms of ``X`` without underflow for tiny coordinates."""
    X = np.atleast_2d(X)
    big = np.max(np.abs(X), axis=1)
    safe = np.where(big > 0, big, 1.0)
    return big * np.linalg.norm(X / safe[:, None], axis=1)


def rotation_unitary(m: int, angle: float) -> np.ndarray:
    """Product of Givens rotations by ``angle`` in the planes (0,1), (1,2), ..."""
    U = np.eye(m)
    for i in range(m - 1):
        G = np.eye(m)
        c, s = math.cos(angle), math.sin(angle)
        G[i, i], G[i, i + 1], G[i + 1, i], G[i + 1, i + 1] = c, -s, s, c
        U = U @ G
    return U


@dataclass(frozen=True)
class MatrixWeightSpec:
    """Descriptor of a matrix weight ``x -> W(x)`` on ``R^n`` with ``m x m`` values.

    Use the classmethod constructors rather than building this directly.
    """

    n: int
    m: int
    kind: str
    exponents: tuple[float, ...] = ()
    angle: float = 0.0
    sampler: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    custom_singular_axes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if not 1 <= self.n <= 3:
            raise ValueError("n must be 1, 2 or 3")
        if not 1 <= self.m <= linalg.MAX_SIZE:
            raise ValueError(f"m must be in 1..{linalg.MAX_SIZE}")
        a = self.exponents
        if self.kind == "power":
            if len(a) != 1 or a[0] <= -self.n:
                raise ValueError("power weight needs one exponent d > -n")
        elif self.kind == "anisotropic":
            if len(a) != self.n or any(ai <= -1 for ai in a):
                raise ValueError("anisotropic weight needs n exponents, each > -1")
        elif self.kind == "conjugated":
            if len(a) != self.m or any(ai <= -self.n for ai in a):
                raise ValueError("conjugated weight needs m exponents, each > -n")
        elif self.kind == "custom" and self.sampler is None:
            raise ValueError("custom weight needs a sampler")

    # constructors -----------------------------------------------------
    @classmethod
    def identity(cls, n: int = 1, m: int = 1) -> "MatrixWeightSpec":
        return cls(n, m, "identity")

    @classmethod
    def power(cls, d: float, n: int = 1, m: int = 1) -> "MatrixWeightSpec":
        """``|x|^d I_m``."""
        return cls(n, m, "power", (float(d),))

    @classmethod
    def anisotropic(cls, a, m: int = 1) -> "MatrixWeightSpec":
        """``prod_i |x_i|^{a_i} I_m``."""
        a = tuple(float(v) for v in a)
        return cls(len(a), m, "anisotropic", a)

    @classmethod
    def conjugated(cls, a, angle: float, n: int = 1) -> "MatrixWeightSpec":
        """``U diag(|x|^{a_1}, ..., |x|^{a_m}) U*`` with ``U`` a fixed rotation."""
        a = tuple(float(v) for v in a)
        return cls(n, len(a), "conjugated", a, float(angle))

    @classmethod
    def custom(cls, sampler, n: int, m: int, singular_axes=()) -> "MatrixWeightSpec":
        """``sampler`` maps an ``(K, n)`` array of points to ``(K, m, m)`` matrices."""
        return cls(n, m, "custom", sampler=sampler, custom_singular_axes=tuple(singular_axes))

    # structure --------------------------------------------------------
    @property
    def is_scalar_type(self) -> bool:
        """``W(x) = w(x) I_m`` for a scalar function ``w``."""
        return self.kind in ("identity", "power", "anisotropic") or (
            self.kind == "conjugated" and len(set(self.exponents)) == 1)

    @property
    def unitary(self) -> np.ndarray:
        return rotation_unitary(self.m, self.angle)

    @property
    def singular_axes(self) -> tuple[int, ...]:
        if self.kind == "identity":
            return ()
        if self.kind == "anisotropic":
            return tuple(i for i, a in enumerate(self.exponents) if a != 0)
        if self.kind in ("power", "conjugated"):
            return tuple(range(self.n)) if any(self.exponents) else ()
        return self.custom_singular_axes

    def log_scalar(self, X: np.ndarray) -> np.ndarray:
        """``log w(x)`` for scalar-type weights, shape ``(K,)``."""
        X = np.atleast_2d(X)
        if self.kind == "identity":
            return np.zeros(len(X))
        if self.kind == "power" or self.kind == "conjugated":
            return self.exponents[0] * np.log(radius(X))
        if self.kind == "anisotropic":
            with np.errstate(divide="ignore"):
                logs = np.log(np.abs(X))
            return np.sum(np.where(np.asarray(self.exponents) != 0, logs * self.exponents, 0.0), axis=1)
        raise TypeError("not a scalar-type weight")

    def log_eigenvalues(self, X: np.ndarray) -> np.ndarray:
        """``log`` of the eigenvalues of ``W(x)`` for built-in weights, ``(K, m)``."""
        X = np.atleast_2d(X)
        if self.kind == "conjugated":
            r = np.log(radius(X))
            return r[:, None] * np.asarray(self.exponents)[None, :]
        if self.kind == "custom":
            raise TypeError("custom weights have no closed-form spectrum")
        return np.repeat(self.log_scalar(X)[:, None], self.m, axis=1)

    def power_at(self, X: np.ndarray, alpha: float) -> np.ndarray:
        """``W(x)^alpha`` at points ``X`` (``(K, n)``), shape ``(K, m, m)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "custom":
            return linalg.power_batch(self.sampler(X), alpha)
        lam = np.exp(alpha * self.log_eigenvalues(X))
        if self.kind == "conjugated" and not self.is_scalar_type:
            U = self.unitary
            return np.einsum("ij,kj,lj->kil", U, lam, U).astype(complex)
        out = np.zeros((len(X), self.m, self.m), dtype=complex)
        idx = np.arange(self.m)
        out[:, idx, idx] = lam
        return out

    def singular_margin(self, scale: float = 1.0) -> Optional[float]:
        """Integrability margin of ``|W^scale|`` at its singular set.

        Near the singular set the integrand behaves like ``r^{b}`` in ``k``
        transversal dimensions; the margin is the smallest ``k + b``.  It is
        ``None`` when unknown (custom weights) or when nothing is singular,
        and nonpositive when the integrand is not locally integrable.
        """
        if self.kind in ("identity", "custom") or not self.singular_axes:
            return None
        if self.kind == "anisotropic":
            return min(1.0 + scale * a for a in self.exponents if a != 0)
        return min(self.n + scale * a for a in self.exponents)

    def on_singular_set(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind in ("power", "conjugated"):
            return bool(any(self.exponents)) and not np.any(x)
        axes = self.singular_axes
        return any(x[i] == 0 for i in axes)


def eval_weight(W: MatrixWeightSpec, x) -> np.ndarray:
    """The matrix ``W(x)`` at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (W.n,):
        raise ValueError(f"point must have {W.n} coordinates")
    if W.on_singular_set(x):
        raise SingularPointError(f"W is singular at {x}")
    if W.kind == "custom":
        A = np.asarray(W.sampler(x[None]), dtype=complex)[0]
        linalg.spectral_decomp(A)
        return A
    return W.power_at(x[None], 1.0)[0]


# ----------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class Quadrature:
    """Tensor-product cube rule.

    ``scheme`` is ``"gauss"`` (``order`` Gauss-Legendre points per cell) or
    ``"midpoint"``; each axis is cut into ``refinement`` cells.  With
    ``singular_split``, an axis whose interval touches a singular hyperplane
    ``x_i = 0`` is instead cut into ``layers`` dyadic layers shrinking toward
    the hyperplane (plus the innermost remainder cell), so no node sits on it.
    """

    scheme: str = "gauss"
    order: int = 4
    refinement: int = 2
    singular_split: bool = True
    layers: int = 20

    def __post_init__(self):
        if self.scheme not in ("gauss", "midpoint"):
            raise ValueError("scheme must be 'gauss' or 'midpoint'")
        if self.order < 1 or self.refinement < 1 or self.layers < 1:
            raise ValueError("order, refinement and layers must be positive")

    def adapted(self, margin: Optional[float]) -> "Quadrature":
        """Enough layers that the unresolved innermost cell holds ~2^-30 of the mass.

        A nonpositive margin (non-integrable integrand) leaves the rule
        unchanged so that layer refinement exposes the divergence.
        """
        if margin is None or margin <= 0 or not self.singular_split:
            return self
        need = min(int(math.ceil(30.0 / margin)), MAX_LAYERS)
        return self if need <= self.layers else self.with_layers(need)

    def refined(self) -> "Quadrature":
        return Quadrature(self.scheme, self.order, 2 * self.refinement, self.singular_split,
                          min(2 * self.layers, MAX_LAYERS))

    def with_layers(self, layers: int) -> "Quadrature":
        return Quadrature(self.scheme, self.order, self.refinement, self.singular_split,
                          min(layers, MAX_LAYERS))

    def _base(self) -> tuple[np.ndarray, np.ndarray]:
        if self.scheme == "midpoint":
            return np.array([0.5]), np.array([1.0])
        t, w = np.polynomial.legendre.leggauss(self.order)
        return 0.5 * (t + 1.0), 0.5 * w

    def rule_1d(self, a: float, b: float, singular: bool) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights (summing to ``b - a``) on ``[a, b)``."""
        return _rule_1d(self, float(a), float(b), bool(singular and self.singular_split))

    def cube_rule(self, corner, edge: float, singular_axes=()) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``(K, n)`` and averaging weights ``(K,)`` (summing to 1) on a cube."""
        corner = np.atleast_1d(np.asarray(corner, dtype=float))
        return self.box_rule(corner, corner + edge, singular_axes)

    def box_rule(self, lo, hi, singular_axes=()) -> tuple[np.ndarray, np.ndarray]:
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        rules = [self.rule_1d(lo[i], hi[i], i in singular_axes) for i in range(len(lo))]
        grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
        X = np.stack([g.ravel() for g in grids], axis=1)
        w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
        return X, w / np.prod(hi - lo)


@functools.lru_cache(maxsize=4096)
def _rule_1d(quad: Quadrature, a: float, b: float, singular: bool):
    t, w = quad._base()
    if singular and a < 0.0 < b:
        x1, w1 = _rule_1d(quad, a, 0.0, True)
        x2, w2 = _rule_1d(quad, 0.0, b, True)
        return np.concatenate([x1, x2]), np.concatenate([w1, w2])
    if singular and (a == 0.0 or b == 0.0):
        h = b - a
        # layers [h/2, h], [h/4, h/2], ... measured from the singular endpoint
        edges = np.ldexp(h, -np.arange(quad.layers + 1))
        edges = np.append(edges, 0.0)[::-1]
        lo, hi = edges[:-1], edges[1:]
        dist = (lo[:, None] + (hi - lo)[:, None] * t[None, :]).ravel()
        wts = ((hi - lo)[:, None] * w[None, :]).ravel()
        x = a + dist if a == 0.0 else b - dist
        return x, wts
    cells = quad.refinement
    lo = a + (b - a) * np.arange(cells) / cells
    h = (b - a) / cells
    x = (lo[:, None] + h * t[None, :]).ravel()
    return x, np.tile(h * w, cells)


def cube_nodes(W: MatrixWeightSpec, Q: CubeIndex, quad: Quadrature, scale: Optional[float] = 1.0):
    """Quadrature on ``Q`` adapted to integrands behaving like ``W^scale``.

    ``scale=None`` uses ``quad`` as given.
    """
    if scale is not None:
        quad = quad.adapted(W.singular_margin(scale))
    return quad.cube_rule(Q.corner, Q.edge, W.singular_axes)


def cube_average_norm(W: MatrixWeightSpec, p: float, Q: CubeIndex, M, quad: Quadrature,
                      check_convergence: bool = False) -> float:
    """``(avg_Q |W^{1/p}(x) M|^p)^{1/p}`` with the operator norm."""
    if p <= 0:
        raise ValueError("p must be positive")
    M = np.atleast_2d(np.asarray(M, dtype=complex))

    def value(qd):
        X, w = cube_nodes(W, Q, qd)
        norms = linalg.op_norm_batch(W.power_at(X, 1.0 / p) @ M)
        return float(np.sum(w * norms ** p) ** (1.0 / p))

    v = value(quad)
    if check_convergence:
        v2 = value(quad.refined())
        if abs(v2 - v) > 1e-6 * abs(v2):
            raise QuadratureNotConverged(f"relative change {abs(v2 - v) / abs(v2):.2e} on refinement")
    return v


def rho(W: MatrixWeightSpec, p: float, X: np.ndarray, w: np.ndarray, Z: np.ndarray,
        Wp: Optional[np.ndarray] = None) -> np.ndarray:
    """``rho(z) = (sum_k w_k |W^{1/p}(x_k) z|^p)^{1/p}`` for each row ``z`` of ``Z``.

    Evaluated in the log domain: near strong singularities the integrand
    exceeds the floating-point range before averaging.
    """
    Z = np.asarray(Z, dtype=complex)
    if Wp is None and W.is_scalar_type and W.kind != "custom":
        logmag = W.log_scalar(X)[:, None] / p + np.log(radius(np.abs(Z)))[None, :]
    else:
        if Wp is None:
            Wp = W.power_at(X, 1.0 / p)
        V = np.einsum("kij,dj->kdi", Wp, Z)
        K, D, m = V.shape
        logmag = np.log(radius(np.abs(V).reshape(K * D, m))).reshape(K, D)
    return np.exp(logsumexp(p * logmag, b=w[:, None], axis=0) / p)


# ----------------------------------------------------------------------------
# directions on the complex unit sphere


@functools.lru_cache(maxsize=64)
def sphere_directions(m: int, count: int, offset: int = 0) -> np.ndarray:
    """Deterministic low-discrepancy unit vectors in ``C^m`` (rows).

    Coordinate axes and the pairwise real/imaginary diagonals come first,
    then Halton points pushed through the Gaussian quantile and normalized.
    """
    if m == 1:
        return np.ones((1, 1), dtype=complex)
    fixed = [np.eye(m)[i] for i in range(m)]
    for i in range(m):
        for k in range(i + 1, m):
            for c in (1.0, -1.0, 1j, -1j):
                v = np.zeros(m, dtype=complex)
                v[i], v[k] = 1.0, c
                fixed.append(v / math.sqrt(2.0))
    fixed = np.array(fixed, dtype=complex)
    extra = max(count - len(fixed), 0)
    if offset:
        fixed = fixed[:0]
        extra = count
    if extra == 0:
        return fixed[:count]
    halton = qmc.Halton(d=2 * m, scramble=False).random(extra + 1 + offset)[1 + offset:]
    g = _normal.ppf(np.clip(halton, 1e-12, 1 - 1e-12))
    Z = g[:, :m] + 1j * g[:, m:]
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return np.concatenate([fixed, Z]) if len(fixed) else Z


def default_direction_count(m: int) -> int:
    return {1: 1, 2: 96, 3: 256}.get(m, 64 * m * m)


# ----------------------------------------------------------------------------
# reducing operators


@dataclass
class ReducingFamily:
    """Lazily computed reducing operators ``Q -> A_Q`` of order ``p`` for ``W``.

    The cache tolerates concurrent fills: values are deterministic, so a
    racing duplicate computation inserts the same matrix.
    """

    weight: MatrixWeightSpec
    p: float
    method: str = "john"
    quad: Quadrature = field(default_factory=Quadrature)
    n_directions: Optional[int] = None
    mvee_tol: float = 1e-8
    _cache: dict = field(default_factory=dict, repr=False)
    _certs: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.p <= 0:
            raise ValueError("p must be positive")
        if self.method not in ("gram2", "john"):
            raise ValueError("method must be 'gram2' or 'john'")
        if self.n_directions is None:
            self.n_directions = default_direction_count(self.weight.m)

    def __getitem__(self, Q: CubeIndex) -> np.ndarray:
        A = self._cache.get(Q)
        if A is None:
            A = reducing_operator(self, Q)
        return A

    def batch(self, cubes) -> np.ndarray:
        return np.stack([self[Q] for Q in cubes])

    def _store(self, Q, A):
        with self._lock:
            return self._cache.setdefault(Q, A)

    def record_certificate(self, Q, c_lo, c_hi):
        with self._lock:
            self._certs[Q] = (c_lo, c_hi)

    def certificate(self, Q: CubeIndex) -> Optional[tuple[float, float]]:
        return self._certs.get(Q)


def _scalar_reducing(W, p, X, w) -> np.ndarray:
    # rho_Q(1) = (avg w)^{1/p}
    return np.array([[rho(W, p, X, w, np.ones((1, 1)))[0]]], dtype=complex)


def reducing_operator(fam: ReducingFamily, Q: CubeIndex) -> np.ndarray:
    W, p = fam.weight, fam.p
    cached = fam._cache.get(Q)
    if cached is not None:
        return cached
    X, w = cube_nodes(W, Q, fam.quad)
    if W.m == 1:
        A = _scalar_reducing(W, p, X, w)
    elif W.is_scalar_type and W.kind != "custom":
        # W = w I: the unit ball of rho_Q is a Euclidean ball
        A = rho(W, p, X, w, np.eye(1))[0] * np.eye(W.m, dtype=complex)
    elif fam.method == "gram2":
        X, w = cube_nodes(W, Q, fam.quad, 2.0 / p)
        G = np.einsum("k,kij->ij", w, W.power_at(X, 2.0 / p))
        A = linalg.matrix_power(0.5 * (G + np.conj(G.T)), 0.5)
    else:
        Z = sphere_directions(W.m, fam.n_directions)
        r = rho(W, p, X, w, Z)
        if np.any(~np.isfinite(r)) or np.any(r <= 0):
            raise EllipsoidFitError(f"degenerate norm body on {Q}")
        res = mvee_symmetric(Z / r[:, None], tol=fam.mvee_tol)
        A = linalg.matrix_power(res.shape, 0.5)
    return fam._store(Q, A)


def verify_reducing(fam: ReducingFamily, Q: CubeIndex, directions: int = 64) -> tuple[float, float]:
    """Extreme ratios ``rho_Q(z) / |A_Q z|`` over a check set of unit directions."""
    if directions < 32:
        raise ValueError("use at least 32 check directions")
    W, p = fam.weight, fam.p
    A = fam[Q]
    Z = sphere_directions(W.m, directions, offset=1009) if W.m > 1 else np.ones((1, 1), dtype=complex)
    X, w = cube_nodes(W, Q, fam.quad)
    r = rho(W, p, X, w, Z)
    az = np.linalg.norm(Z @ A.T, axis=1)
    ratios = r / az
    c_lo, c_hi = float(ratios.min()), float(ratios.max())
    fam.record_certificate(Q, c_lo, c_hi)
    return c_lo, c_hi
