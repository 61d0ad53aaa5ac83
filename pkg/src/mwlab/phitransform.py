"""Band-limited Littlewood-Paley machinery on the torus ``[0,1)^n``.

Functions are sampled on an ``N^n`` grid and filters are Fourier
multipliers, so convolution with ``phi_j`` is exact.  The frequency of the
mode ``exp(2 pi i k.x)`` is ``xi = 2 pi k``.  The windows come from a smooth
radial cutoff ``chi`` (1 on ``|xi| <= 1``, 0 on ``|xi| >= 2``):

    Phi^ = sqrt(chi(xi)),    phi^ = sqrt(chi(xi) - chi(2 xi)),

so ``Phi^2 + sum_{j>=1} phi^(2^-j xi)^2 = chi(2^-J xi)`` telescopes and is
exactly 1 on the resolved band ``|xi| <= 2^J``.  With ``Psi = Phi`` and
``psi = phi`` the analysis and synthesis maps are adjoint and their
composition is the identity on that band.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dyadic import CubeIndex, CubeWindow
from .seqspaces import INF, SequenceField, SpaceParams
from .weights import MatrixWeightSpec, Quadrature, ReducingFamily

SAMPLING_ALPHA = 2.0
SAMPLING_BETA = 3.0
NEUMANN_TOL = 1e-12
LEAKAGE_TOL = 1e-12


class ResolutionError(ValueError):
    """The grid is too coarse for the requested level."""


class SpectrumLeakage(ValueError):
    """A function has spectrum outside the band required by a sampling formula."""


class ContractionError(RuntimeError):
    """The generic-sampling residual is not a contraction; increase N."""


# ----------------------------------------------------------------------------
# smooth cutoffs


def _h(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(r, a: float, b: float) -> np.ndarray:
    """C-infinity function of ``r``: 1 for ``r <= a``, 0 for ``r >= b``, strictly between."""
    r = np.asarray(r, dtype=float)
    u = (r - a) / (b - a)
    num = _h(1.0 - u)
    return num / (num + _h(u))


def _smooth_step_complement(r, a: float, b: float) -> np.ndarray:
    """``1 - smooth_step(r, a, b)`` without cancellation."""
    r = np.asarray(r, dtype=float)
    u = (r - a) / (b - a)
    num = _h(u)
    return num / (num + _h(1.0 - u))


def chi(r) -> np.ndarray:
    return smooth_step(r, 1.0, 2.0)


def Phi_hat(r) -> np.ndarray:
    return np.sqrt(chi(r))


def phi_hat(r) -> np.ndarray:
    # chi(2r) > 0 forces chi(r) = 1, so chi(r) - chi(2r) = chi(r) (1 - chi(2r))
    r = np.asarray(r, dtype=float)
    return np.sqrt(chi(r) * _smooth_step_complement(2.0 * r, 1.0, 2.0))


# ----------------------------------------------------------------------------
# grid functions


@dataclass
class GridFunction:
    """Complex ``m``-vector field on the ``N^n`` grid of the torus; samples ``(N,)*n + (m,)``."""

    n: int
    N: int
    samples: np.ndarray

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two")
        s = np.asarray(self.samples, dtype=complex)
        if s.shape == (self.N,) * self.n:
            s = s[..., None]
        if s.shape[:-1] != (self.N,) * self.n:
            raise ValueError(f"samples must have shape {(self.N,) * self.n + ('m',)}")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        self.samples = s

    @property
    def m(self) -> int:
        return self.samples.shape[-1]

    @property
    def axes(self) -> tuple:
        return tuple(range(self.n))

    def spectrum(self) -> np.ndarray:
        """Fourier coefficients ``f^_k`` with ``f(x) = sum_k f^_k e^{2 pi i k.x}`` (fft ordering)."""
        return np.fft.fftn(self.samples, axes=self.axes) / self.N ** self.n

    @classmethod
    def from_spectrum(cls, n: int, N: int, F: np.ndarray) -> "GridFunction":
        return cls(n, N, np.fft.ifftn(F, axes=tuple(range(n))) * N ** n)

    def nodes(self) -> np.ndarray:
        x = np.arange(self.N) / self.N
        return np.stack(np.meshgrid(*([x] * self.n), indexing="ij"), axis=-1)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.mean(np.sum(np.abs(self.samples) ** 2, axis=-1))))

    def inner(self, other: "GridFunction") -> complex:
        return complex(np.mean(np.sum(self.samples * np.conj(other.samples), axis=-1)))

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.n, self.N, self.samples - other.samples)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Exact trigonometric interpolation at arbitrary points ``(P, n)``."""
        F = self.spectrum()
        k = _int_freqs(self.N, self.n)
        mask = np.any(np.abs(F) > 0, axis=-1)
        kk = k[mask]
        phase = np.exp(2j * np.pi * np.asarray(points, dtype=float).reshape(-1, self.n) @ kk.T)
        return phase @ F[mask]


def _int_freqs(N: int, n: int) -> np.ndarray:
    k = np.fft.fftfreq(N, d=1.0 / N)
    return np.stack(np.meshgrid(*([k] * n), indexing="ij"), axis=-1)


def _xi_radius(N: int, n: int) -> np.ndarray:
    return 2.0 * np.pi * np.linalg.norm(_int_freqs(N, n), axis=-1)


def random_band_function(N: int, n: int, m: int, radius: float, rng: np.random.Generator) -> GridFunction:
    """Random complex field with spectrum in ``|xi| <= radius``."""
    r = _xi_radius(N, n)
    F = (rng.standard_normal(r.shape + (m,)) + 1j * rng.standard_normal(r.shape + (m,)))
    F[r > radius] = 0.0
    return GridFunction.from_spectrum(n, N, F)


def grid_to_text(f: GridFunction) -> str:
    lines = [f"#mwlab-grid n={f.n} N={f.N} m={f.m}"]
    flat = f.samples.reshape(-1, f.m)
    for row in flat:
        lines.append(",".join(f"{repr(float(z.real))},{repr(float(z.imag))}" for z in row))
    return "\n".join(lines) + "\n"


def grid_from_text(text: str) -> GridFunction:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#mwlab-grid"):
        raise ValueError("missing '#mwlab-grid' header line")
    hdr = dict(item.split("=", 1) for item in lines[0].split()[1:])
    n, N, m = int(hdr["n"]), int(hdr["N"]), int(hdr["m"])
    body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if body.shape != (N ** n, 2 * m):
        raise ValueError(f"expected {N ** n} rows of {2 * m} numbers")
    vals = body[:, 0::2] + 1j * body[:, 1::2]
    return GridFunction(n, N, vals.reshape((N,) * n + (m,)))


# ----------------------------------------------------------------------------
# Littlewood-Paley family


@dataclass
class LPFamily:
    N: int
    n: int
    j_max: int
    xi: np.ndarray = field(repr=False)  # |2 pi k| on the fft grid
    windows: list = field(repr=False)  # multiplier of level j on the fft grid

    @property
    def band(self) -> float:
        """Radius of the resolved band."""
        return float(2 ** self.j_max)

    def partition_defect(self) -> float:
        total = sum(w ** 2 for w in self.windows)
        mask = self.xi <= self.band
        return float(np.max(np.abs(total[mask] - 1.0)))

    def window_cube(self) -> CubeWindow:
        return CubeWindow(self.n, 0, self.j_max, 1, inhomogeneous=True)


def max_level(N: int) -> int:
    """Deepest ``j`` with ``2^{j+1}`` below the grid Nyquist frequency ``pi N``."""
    j = 0
    while 2 ** (j + 2) < math.pi * N:
        j += 1
    return j


def build_lp_family(N: int, n: int = 1, j_max: Optional[int] = None) -> LPFamily:
    if N < 2 or N & (N - 1):
        raise ValueError("N must be a power of two")
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    if j_max is None:
        j_max = max_level(N)
    if j_max < 0 or 2 ** (j_max + 1) >= math.pi * N or 2 ** j_max > N:
        raise ResolutionError(f"grid N={N} cannot resolve level {j_max}")
    xi = _xi_radius(N, n)
    windows = [Phi_hat(xi)] + [phi_hat(xi / 2 ** j) for j in range(1, j_max + 1)]
    return LPFamily(N, n, j_max, xi, windows)


def _check_grid(f: GridFunction, fam: LPFamily):
    if f.N != fam.N or f.n != fam.n:
        raise ResolutionError("grid function and family use different grids")


def band_filter(f: GridFunction, fam: LPFamily, j: int) -> GridFunction:
    """``phi_j * f`` (``Phi * f`` for ``j = 0``)."""
    _check_grid(f, fam)
    if not 0 <= j <= fam.j_max:
        raise ValueError(f"level {j} outside 0..{fam.j_max}")
    F = np.fft.fftn(f.samples, axes=f.axes)
    return GridFunction(f.n, f.N, np.fft.ifftn(F * fam.windows[j][..., None], axes=f.axes))


def band_sup_norms(f: GridFunction, fam: LPFamily) -> list[float]:
    return [float(np.max(np.linalg.norm(band_filter(f, fam, j).samples, axis=-1)))
            for j in range(fam.j_max + 1)]


# ----------------------------------------------------------------------------
# phi-transform


def analyze(f: GridFunction, fam: LPFamily) -> SequenceField:
    """``(S_phi f)_Q = <f, phi_Q> = |Q|^{1/2} (phi~_j * f)(x_Q)`` for the torus cubes of levels ``0..j_max``."""
    _check_grid(f, fam)
    F = np.fft.fftn(f.samples, axes=f.axes)
    cubes, vals = [], []
    for j in range(fam.j_max + 1):
        # phi^ is real, so the reflected conjugate filter has the same multiplier
        g = np.fft.ifftn(F * fam.windows[j][..., None], axes=f.axes)
        stride = f.N >> j
        sub = g[(slice(None, None, stride),) * f.n]
        side = 1 << j
        amp = 2.0 ** (-j * f.n / 2.0)
        for idx in np.ndindex(*(side,) * f.n):
            cubes.append(CubeIndex(j, idx))
            vals.append(amp * sub[idx])
    return SequenceField(fam.window_cube(), tuple(cubes), np.array(vals))


def synthesize(t: SequenceField, fam: LPFamily) -> GridFunction:
    """``T_psi t = sum_Q t_Q psi_Q`` on the grid (with ``psi = phi``, ``Psi = Phi``)."""
    n, N = fam.n, fam.N
    if t.n != n:
        raise ResolutionError("sequence and family dimensions differ")
    k = _int_freqs(N, n).astype(int)
    spec = np.zeros((N,) * n + (t.m,), dtype=complex)
    levels: dict = {}
    for Q, v in zip(t.cubes, t.values):
        if not 0 <= Q.j <= fam.j_max:
            raise ResolutionError(f"cube {Q} outside levels 0..{fam.j_max}")
        side = 1 << Q.j
        arr = levels.setdefault(Q.j, np.zeros((side,) * n + (t.m,), dtype=complex))
        arr[tuple(x % side for x in Q.k)] += v
    for j, arr in levels.items():
        side = 1 << j
        That = np.fft.fftn(arr, axes=tuple(range(n)))  # sum_m a_m e^{-2 pi i k.m / 2^j}
        idx = tuple(np.mod(k[..., i], side) for i in range(n))
        spec += 2.0 ** (-j * n / 2.0) * fam.windows[j][..., None] * That[idx]
    return GridFunction.from_spectrum(n, N, spec)


def sequence_inner(t: SequenceField, u: SequenceField) -> complex:
    """``sum_Q t_Q . conj(u_Q)``."""
    if t.cubes == u.cubes:
        return complex(np.sum(t.values * np.conj(u.values)))
    du = u.as_dict()
    return complex(sum(np.sum(v * np.conj(du[Q])) for Q, v in zip(t.cubes, t.values) if Q in du))


def calderon_error(f: GridFunction, fam: LPFamily) -> float:
    """Relative l2 error of ``T_psi S_phi f`` against ``f``."""
    g = synthesize(analyze(f, fam), fam)
    return (g - f).l2_norm() / f.l2_norm()


def adjoint_defect(t: SequenceField, g: GridFunction, fam: LPFamily) -> float:
    """``|<T t, g> - <t, S g>|`` relative to ``||t|| ||g||``."""
    lhs = synthesize(t, fam).inner(g)
    rhs = sequence_inner(t, analyze(g, fam))
    scale = np.linalg.norm(t.values) * g.l2_norm()
    return float(abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs))


# ----------------------------------------------------------------------------
# lattice sampling


def gamma_hat(r, alpha: float = SAMPLING_ALPHA, beta: float = SAMPLING_BETA) -> np.ndarray:
    """Radial window: 1 on ``|xi| <= alpha``, supported in ``|xi| < beta <= pi``."""
    if not 0 < alpha < beta <= math.pi:
        raise ValueError("need 0 < alpha < beta <= pi")
    return smooth_step(r, alpha, beta)


def _check_band(f: GridFunction, radius: float):
    F = f.spectrum()
    r = _xi_radius(f.N, f.n)
    outside = np.abs(F[r > radius]).max(initial=0.0)
    if outside > LEAKAGE_TOL * max(np.abs(F).max(), 1e-300):
        raise SpectrumLeakage(f"spectrum beyond |xi| = {radius:g} (size {outside:.2e})")


def lattice_sampling(f: GridFunction, j: int, y=None, alpha: float = SAMPLING_ALPHA,
                     beta: float = SAMPLING_BETA) -> GridFunction:
    """``sum_{R in Q_j} 2^{-jn} f(x_R + y) gamma_j(x - x_R - y)`` on the grid."""
    n, N = f.n, f.N
    _check_band(f, alpha * 2 ** j)
    if 2 ** j > N:
        raise ResolutionError("level finer than the grid")
    y = np.zeros(n) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
    side = 1 << j
    corners = np.stack(np.meshgrid(*([np.arange(side) / side] * n), indexing="ij"), axis=-1)
    samples = f.evaluate(corners.reshape(-1, n) + y).reshape((side,) * n + (f.m,))
    G = np.fft.fftn(samples, axes=tuple(range(n))) / side ** n
    k = _int_freqs(N, n)
    idx = tuple(np.mod(k[..., i].astype(int), side) for i in range(n))
    phase = np.exp(-2j * np.pi * (k @ y))
    spec = (gamma_hat(_xi_radius(N, n) / 2 ** j, alpha, beta) * phase)[..., None] * G[idx]
    return GridFunction.from_spectrum(n, N, spec)


def lattice_sampling_check(f: GridFunction, j: int, y=None, alpha: float = SAMPLING_ALPHA,
                           beta: float = SAMPLING_BETA) -> float:
    """Maximal grid error of the lattice reconstruction, relative to ``max |f|``."""
    h = lattice_sampling(f, j, y, alpha, beta)
    scale = max(np.abs(f.samples).max(), 1e-300)
    return float(np.abs(h.samples - f.samples).max() / scale)


# ----------------------------------------------------------------------------
# generic sampling


@dataclass
class GenericSampling:
    reconstruction: GridFunction
    contraction_norm: float
    neumann_terms: int
    error: float  # max grid error relative to max |f|


def _cube_exp_integral(k: np.ndarray, corners: np.ndarray, h: float) -> np.ndarray:
    """``int_R e^{-2 pi i k.y} dy`` for frequencies ``(K, n)`` and cubes ``(C, n)`` of edge ``h``."""
    out = np.ones((len(k), len(corners)), dtype=complex)
    for i in range(k.shape[1]):
        ki = k[:, i][:, None]
        a = corners[:, i][None, :]
        w = 2j * np.pi * ki
        safe = np.where(ki == 0, 1.0, w)
        val = (np.exp(-w * a) - np.exp(-w * (a + h))) / safe
        out *= np.where(ki == 0, h, val)
    return out


def sample_points(j: int, N: int, n: int, mode: Union[str, Callable] = "corner", seed: int = 0) -> np.ndarray:
    """One point ``y_R`` in each cube ``R`` of level ``j + N`` on the torus."""
    side = 1 << (j + N)
    h = 1.0 / side
    corners = np.stack(np.meshgrid(*([np.arange(side) * h] * n), indexing="ij"), axis=-1).reshape(-1, n)
    if callable(mode):
        return np.asarray(mode(corners, h), dtype=float)
    if mode == "corner":
        return corners.copy()
    if mode == "center":
        return corners + h / 2.0
    if mode == "random":
        return corners + h * np.random.default_rng(seed).random(corners.shape)
    raise ValueError("mode must be 'corner', 'center', 'random' or a callable")


def _check_points(points: np.ndarray, j: int, N: int, n: int):
    side = 1 << (j + N)
    corners = sample_points(j, N, n, "corner")
    if points.shape != corners.shape:
        raise ValueError(f"expected {len(corners)} points of dimension {n}")
    if np.any(np.floor(points * side + 1e-12) / side != corners):
        raise ValueError("each point must lie in its own cube of level j + N")


def is_periodic_pattern(points: np.ndarray, j: int, N: int) -> bool:
    """Whether every point sits at the same relative position in its fine cube."""
    side = 1 << (j + N)
    rel = points * side - np.floor(points * side)
    return bool(np.all(np.abs(rel - rel[0]) < 1e-12))


def residual_operator(j: int, N: int, n: int, points: np.ndarray, beta: float = SAMPLING_BETA,
                      alpha: float = SAMPLING_ALPHA):
    """Mode set ``K``, sampling matrix ``C`` (modes x cubes) and residual ``R`` on ``K``.

    ``S g = sum_R (int_R gamma_j(x - y) dy) g(y_R)`` has Fourier coefficients
    ``C @ g(y)``, and ``R = Gamma^2 - S Gamma`` with ``Gamma = diag(gamma^_j)``.
    """
    radius = beta * 2 ** j / (2 * math.pi)
    r = int(math.ceil(radius))
    rng1 = np.arange(-r, r + 1)
    K = np.stack(np.meshgrid(*([rng1] * n), indexing="ij"), axis=-1).reshape(-1, n)
    g = gamma_hat(2 * np.pi * np.linalg.norm(K, axis=1) / 2 ** j, alpha, beta)
    keep = g > 0
    K, g = K[keep], g[keep]
    side = 1 << (j + N)
    h = 1.0 / side
    corners = np.floor(points * side) / side
    C = g[:, None] * _cube_exp_integral(K, corners, h)
    E = np.exp(2j * np.pi * points @ K.T)  # evaluation of modes at the sample points
    R = np.diag(g ** 2) - (C @ E) * g[None, :]
    return K, C, R


def residual_sup_norm(K: np.ndarray, R: np.ndarray, j: int, N: int, n: int, per_cell: int = 4,
                      periodic: bool = True) -> float:
    """``sup_x int |rho_j(x, z)| dz`` on a grid, over the rows of one fine cell.

    The sample pattern repeats with period ``2^{-j-N}`` when the points sit at
    the same relative position in every fine cube, so one cell of rows
    suffices; for general points every row of the grid is scanned.
    """
    side = 1 << (j + N)
    G = max(side * per_cell, 16 << j)
    x = np.arange(G) / G
    grid = np.stack(np.meshgrid(*([x] * n), indexing="ij"), axis=-1).reshape(-1, n)
    rows = grid[np.all(grid < 1.0 / side - 1e-15, axis=1)] if periodic else grid
    Erow = np.exp(2j * np.pi * rows @ K.T)  # rows x modes
    A = Erow @ R  # coefficient functional of (R g)(x) in terms of g^_l
    # kernel rho(x, z) = sum_l A_l e^{-2 pi i l.z}: evaluate on the grid by a dense DFT over K
    best = 0.0
    Ez = np.exp(-2j * np.pi * grid @ K.T)
    for a in A:
        best = max(best, float(np.abs(Ez @ a).sum() / G ** n))
    return best


def generic_sampling_reconstruct(f: GridFunction, j: int, N: int, points: Optional[np.ndarray] = None,
                                 M: Optional[float] = None, d1: float = 0.0, d2: float = 0.0, p: float = 1.0,
                                 max_terms: int = 10_000) -> GenericSampling:
    """Recover ``f`` (band-limited to ``|xi| <= alpha 2^j``) from one sample per cube of level ``j+N``.

    Solves ``(I - R) f = S f`` by the Neumann series.  ``M`` is the kernel
    decay exponent; it must exceed ``n + (d1 + d2)/p``.
    """
    n = f.n
    if M is None:
        M = n + 1.0 + (d1 + d2) / p
    if M <= n + (d1 + d2) / p:
        raise ValueError("M must exceed n + (d1 + d2)/p")
    _check_band(f, SAMPLING_ALPHA * 2 ** j)
    if points is None:
        points = sample_points(j, N, n, "corner")
    _check_points(points, j, N, n)
    K, C, R = residual_operator(j, N, n, points)
    norm = residual_sup_norm(K, R, j, N, n, periodic=is_periodic_pattern(points, j, N))
    if norm >= 1.0:
        raise ContractionError(f"residual norm {norm:.3f} >= 1 at N={N}")
    vals = f.evaluate(points)
    u0 = C @ vals
    u, term = u0.copy(), u0.copy()
    scale = max(np.abs(u0).max(), 1e-300)
    terms = 0
    while np.abs(term).max() >= NEUMANN_TOL * scale:
        term = R @ term
        u += term
        terms += 1
        if terms >= max_terms:
            raise ContractionError("Neumann series did not converge")
    spec = np.zeros((f.N,) * n + (f.m,), dtype=complex)
    idx = tuple(np.mod(K[:, i], f.N) for i in range(n))
    spec[idx] = u
    rec = GridFunction.from_spectrum(n, f.N, spec)
    err = float(np.abs(rec.samples - f.samples).max() / max(np.abs(f.samples).max(), 1e-300))
    return GenericSampling(rec, norm, terms, err)


def contraction_decay(j: int, n: int = 1, Ns: Sequence[int] = (2, 3, 4, 5, 6), mode="corner") -> tuple[list, float]:
    """Residual norms over ``N`` and the fitted decay factor per unit ``N``."""
    norms = []
    for N in Ns:
        pts = sample_points(j, N, n, mode)
        K, _, R = residual_operator(j, N, n, pts)
        norms.append(residual_sup_norm(K, R, j, N, n, periodic=is_periodic_pattern(pts, j, N)))
    slope = np.polyfit(np.asarray(Ns, dtype=float), np.log2(norms), 1)[0]
    return norms, float(2.0 ** (-slope))


# ----------------------------------------------------------------------------
# function-space norms


@dataclass(frozen=True)
class GridPointwise:
    weight: MatrixWeightSpec


def _level_moduli(f: GridFunction, fam: LPFamily, sp: SpaceParams, weighting, offset: bool) -> np.ndarray:
    """``2^{js} |A_j (phi_j * f)|`` on the grid for every level: ``(J+1,) + (N,)*n``."""
    n, N = f.n, f.N
    F = np.fft.fftn(f.samples, axes=f.axes)
    if offset:
        k = _int_freqs(N, n)
        F = F * np.exp(2j * np.pi * (k @ np.full(n, 0.5 / N)))[..., None]
    x = (np.arange(N) + (0.5 if offset else 0.0)) / N
    X = np.stack(np.meshgrid(*([x] * n), indexing="ij"), axis=-1).reshape(-1, n)
    out = np.zeros((fam.j_max + 1,) + (N,) * n)
    Wp = None
    if isinstance(weighting, GridPointwise):
        W = weighting.weight
        Wp = W.power_at(X, 1.0 / sp.p)
    for j in range(fam.j_max + 1):
        g = np.fft.ifftn(F * fam.windows[j][..., None], axes=f.axes).reshape(-1, f.m)
        if Wp is not None:
            v = np.linalg.norm(np.einsum("kab,kb->ka", Wp, g), axis=1)
        elif isinstance(weighting, ReducingFamily):
            side = 1 << j
            cell = (np.floor(X * side).astype(int))
            v = np.empty(len(X))
            for idx in np.ndindex(*(side,) * n):
                sel = np.all(cell == np.array(idx), axis=1)
                A = weighting[CubeIndex(j, idx)]
                v[sel] = np.linalg.norm(g[sel] @ A.T, axis=1)
        else:
            v = np.linalg.norm(g, axis=1)
        out[j] = 2.0 ** (j * sp.s) * v.reshape((N,) * n)
    return out


def _pool(a: np.ndarray, n: int, side: int) -> np.ndarray:
    """Sum of ``a`` over the ``side^n`` congruent blocks."""
    N = a.shape[0]
    b = N // side
    shape = []
    for _ in range(n):
        shape += [side, b]
    return a.reshape(shape).sum(axis=tuple(range(1, 2 * n, 2)))


def function_norm(f: GridFunction, fam: LPFamily, sp: SpaceParams, weighting=None) -> float:
    """``A^{s,tau}_{p,q}`` norm of the filtered stack; sup over torus cubes ``P`` of levels ``0..j_max``.

    ``weighting`` is ``None``, a :class:`GridPointwise` weight or a
    :class:`ReducingFamily` (giving ``A_j``).  Singular weights are sampled
    on the grid shifted by half a cell.
    """
    _check_grid(f, fam)
    offset = False
    if isinstance(weighting, GridPointwise):
        offset = bool(weighting.weight.singular_axes)
    elif isinstance(weighting, ReducingFamily):
        offset = bool(weighting.weight.singular_axes)
    G = _level_moduli(f, fam, sp, weighting, offset)
    n, N = f.n, f.N
    p, q = sp.p, sp.q
    cell = 1.0 / N ** n
    best = 0.0
    if sp.family == "F":
        if math.isinf(q):
            acc = np.maximum.accumulate(G[::-1], axis=0)[::-1] ** p
        else:
            acc = np.cumsum((G ** q)[::-1], axis=0)[::-1] ** (p / q)
        for jp in range(fam.j_max + 1):
            masses = _pool(acc[jp], n, 1 << jp) * cell
            val = float(masses.max()) ** (1.0 / p) * 2.0 ** (jp * n * sp.tau)
            best = max(best, val)
    else:
        for jp in range(fam.j_max + 1):
            side = 1 << jp
            masses = np.stack([_pool(G[j] ** p, n, side) * cell for j in range(jp, fam.j_max + 1)])
            if math.isinf(q):
                per_p = masses.max(axis=0) ** (1.0 / p)
            else:
                per_p = np.sum(masses ** (q / p), axis=0) ** (1.0 / q)
            best = max(best, float(per_p.max()) * 2.0 ** (jp * n * sp.tau))
    return best


def function_equivalence(funcs: Sequence[GridFunction], fam: LPFamily, sp: SpaceParams,
                         W: MatrixWeightSpec, method: str = "gram2",
                         quad: Optional[Quadrature] = None) -> tuple[float, float]:
    """Extreme ratios of pointwise to averaged function norms over a batch."""
    red = ReducingFamily(W, sp.p, method, quad or Quadrature())
    ratios = []
    for f in funcs:
        den = function_norm(f, fam, sp, red)
        if den > 0:
            ratios.append(function_norm(f, fam, sp, GridPointwise(W)) / den)
    return float(min(ratios)), float(max(ratios))
