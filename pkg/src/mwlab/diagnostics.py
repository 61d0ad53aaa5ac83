"""Weight constants and related diagnostics on truncated dyadic windows.

All functionals are built from the pair kernel
``K(x, y) = |W^{1/p}(x) W^{-1/p}(y)|^p``.  For product weights (identity,
anisotropic products, scalar weights on the line) the kernel factorizes over
coordinates and every cube functional is evaluated axis by axis; this is
identical to the tensor-product quadrature but costs one-dimensional work,
so deep singular layering stays cheap.  Everything else goes through
chunked log-domain reductions over node pairs.

"Infinite" constants cannot be certified; a value is flagged divergent when
doubling the window more than doubles it, or when refining the singular
layers keeps increasing it at a non-decaying rate.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import linalg
from .dyadic import CubeIndex, CubeWindow
from .weights import (MatrixWeightSpec, Quadrature, ReducingFamily, cube_nodes, radius,
                      sphere_directions)

GROWTH_FACTOR = 2.0
_PAIR_BUDGET = 2_000_000


class GridTooCoarse(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# boxes and product structure


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    @classmethod
    def of_cube(cls, Q: CubeIndex) -> "Box":
        c = Q.corner
        return cls(tuple(c), tuple(c + Q.edge))

    @classmethod
    def dilate(cls, Q: CubeIndex, lam: float) -> "Box":
        """Concentric dilation ``lam Q``."""
        c, h = Q.center, 0.5 * lam * Q.edge
        return cls(tuple(c - h), tuple(c + h))

    def touches(self, axes) -> bool:
        return any(self.lo[i] <= 0.0 <= self.hi[i] for i in axes)


def _axis_exponents(W: MatrixWeightSpec) -> Optional[np.ndarray]:
    """Per-axis exponents when ``K`` factorizes as ``prod_i |x_i/y_i|^{a_i}``."""
    if W.kind == "identity":
        return np.zeros(W.n)
    if W.kind == "anisotropic":
        return np.asarray(W.exponents)
    if W.n == 1 and W.is_scalar_type and W.kind in ("power", "conjugated"):
        return np.array([W.exponents[0]])
    return None


def _axis_rule(quad: Quadrature, lo: float, hi: float, a: float, scale: float):
    q = quad.adapted(1.0 + scale * a) if a != 0 else quad
    x, w = q.rule_1d(lo, hi, a != 0)
    return x, w / (hi - lo)


def _log_abs(x):
    return np.log(np.abs(x))


def _nodes(W, box: Box, quad: Quadrature, scale: Optional[float]):
    if scale is not None:
        quad = quad.adapted(W.singular_margin(scale))
    return quad.box_rule(box.lo, box.hi, W.singular_axes)


def _log_kernel(W: MatrixWeightSpec, p: float, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``log K(x, y)`` for all node pairs, shape ``(len(X), len(Y))``."""
    if W.is_scalar_type and W.kind != "custom":
        return W.log_scalar(X)[:, None] - W.log_scalar(Y)[None, :]
    if W.kind == "conjugated":
        # unitary invariance: K = max_i (|x|/|y|)^{a_i}
        d = np.log(radius(X))[:, None] - np.log(radius(Y))[None, :]
        a = np.asarray(W.exponents)
        return np.maximum(a.max() * d, a.min() * d)
    Wx = W.power_at(X, 1.0 / p)
    Wy = W.power_at(Y, -1.0 / p)
    prod = Wx[:, None] @ Wy[None, :]
    return p * np.log(linalg.op_norm_batch(prod))


def _chunk_rows(W, nx, ny):
    budget = _PAIR_BUDGET // (W.m * W.m * 8) if W.kind == "custom" else _PAIR_BUDGET
    return max(1, budget // max(ny, 1))


def log_mean_over_x(W, p, X, wx, Y, e: float = 1.0) -> np.ndarray:
    """``log avg_x K(x, y)^e`` for every ``y`` (rows of ``Y``)."""
    step = _chunk_rows(W, len(X), len(Y))
    acc = np.full(len(Y), -np.inf)
    logw = np.log(wx)
    for s in range(0, len(X), step):
        L = e * _log_kernel(W, p, X[s:s + step], Y) + logw[s:s + step, None]
        acc = np.logaddexp(acc, logsumexp(L, axis=0))
    return acc


def log_mean_over_y(W, p, X, Y, wy, e: float = 1.0) -> np.ndarray:
    """``log avg_y K(x, y)^e`` for every ``x``."""
    step = _chunk_rows(W, len(X), len(Y))
    out = np.empty(len(X))
    logw = np.log(wy)
    for s in range(0, len(X), step):
        L = e * _log_kernel(W, p, X[s:s + step], Y) + logw[None, :]
        out[s:s + step] = logsumexp(L, axis=1)
    return out


# ----------------------------------------------------------------------------
# cube functionals (all return logarithms)


def log_mean_log(W, p, xbox: Box, ybox: Box, quad: Quadrature) -> float:
    """``avg_{y in ybox} log avg_{x in xbox} K(x, y)``."""
    a = _axis_exponents(W)
    if a is not None:
        total = 0.0
        for i, ai in enumerate(a):
            if ai == 0:
                continue
            x, wx = _axis_rule(quad, xbox.lo[i], xbox.hi[i], ai, 1.0)
            y, wy = _axis_rule(quad, ybox.lo[i], ybox.hi[i], ai, 1.0)
            total += logsumexp(ai * _log_abs(x), b=wx) - ai * float(wy @ _log_abs(y))
        return float(total)
    X, wx = _nodes(W, xbox, quad, 1.0)
    Y, wy = _nodes(W, ybox, quad, 1.0)
    return float(wy @ log_mean_over_x(W, p, X, wx, Y))


def log_sup(W, p, box: Box, quad: Quadrature) -> float:
    """``max_{y node} log avg_x K(x, y)`` (x and y share the rule)."""
    a = _axis_exponents(W)
    if a is not None:
        total = 0.0
        for i, ai in enumerate(a):
            if ai == 0:
                continue
            x, wx = _axis_rule(quad, box.lo[i], box.hi[i], ai, 1.0)
            total += logsumexp(ai * _log_abs(x), b=wx) + float(np.max(-ai * _log_abs(x)))
        return float(total)
    X, wx = _nodes(W, box, quad, 1.0)
    return float(np.max(log_mean_over_x(W, p, X, wx, X)))


def log_dual(W, p, box: Box, quad: Quadrature) -> float:
    """``log avg_x [avg_y K(x, y)^{p'/p}]^{p/p'}`` for ``p > 1``."""
    pp = p / (p - 1.0)
    e = pp / p
    a = _axis_exponents(W)
    if a is not None:
        total = 0.0
        for i, ai in enumerate(a):
            if ai == 0:
                continue
            x, wx = _axis_rule(quad, box.lo[i], box.hi[i], ai, 1.0)
            y, wy = _axis_rule(quad, box.lo[i], box.hi[i], ai, -e)
            total += logsumexp(ai * _log_abs(x), b=wx) + logsumexp(-e * ai * _log_abs(y), b=wy) / e
        return float(total)
    X, wx = _nodes(W, box, quad, 1.0)
    Y, wy = _nodes(W, box, quad, -e)
    inner = log_mean_over_y(W, p, X, Y, wy, e) / e
    return float(logsumexp(inner, b=wx))


def log_ap_cube(W, p, Q: CubeIndex, quad: Quadrature) -> float:
    box = Box.of_cube(Q)
    return log_sup(W, p, box, quad) if p <= 1 else log_dual(W, p, box, quad)


def log_apinfty_cube(W, p, Q: CubeIndex, quad: Quadrature) -> float:
    box = Box.of_cube(Q)
    return log_mean_log(W, p, box, box, quad)


# ----------------------------------------------------------------------------
# divergence probing


@dataclass
class WindowValue:
    value: float
    diverges: bool
    argmax: Optional[CubeIndex]
    reason: str = ""


def _effective_layers(W, quad: Quadrature) -> int:
    a = _axis_exponents(W)
    if a is not None:
        margins = [1.0 + ai for ai in a if ai != 0]
    else:
        margins = [W.singular_margin(1.0)]
    layers = quad.layers
    for mg in margins:
        if mg is not None:
            layers = max(layers, quad.adapted(mg).layers)
    return layers


def _window_max(fn, cubes, quad):
    best, arg = -np.inf, None
    for Q in cubes:
        v = fn(Q, quad)
        if v > best:
            best, arg = v, Q
    return best, arg


def probe_window_constant(fn: Callable[[CubeIndex, Quadrature], float], W: MatrixWeightSpec,
                          window: CubeWindow, quad: Quadrature,
                          detect_divergence: bool = True) -> WindowValue:
    """Window maximum of ``exp(fn(Q))`` with the two divergence probes."""
    cubes = list(window.cubes())
    if not cubes:
        raise ValueError("empty window")
    logv, arg = _window_max(fn, cubes, quad)
    value = float(np.exp(logv))
    if not detect_divergence:
        return WindowValue(value, False, arg)
    if not np.isfinite(logv):
        return WindowValue(math.inf, True, arg, "non-finite")
    # window doubling
    extra = [Q for Q in window.doubled().cubes() if not window.contains(Q)]
    if extra:
        logd, argd = _window_max(fn, extra, quad)
        if logd > logv + math.log(GROWTH_FACTOR):
            return WindowValue(math.inf, True, argd, "window doubling")
    # singular layer refinement: L, L + D, L + 2D layers.  Convergent
    # integrands change by ~2^-30 per step, logarithmic divergence by equal
    # steps, blow-up of a supremum by growing steps.
    axes = W.singular_axes
    sing = [Q for Q in cubes if Box.of_cube(Q).touches(axes)]
    if sing:
        L = _effective_layers(W, quad)
        step = L if (_axis_exponents(W) is not None or W.n == 1) else 4
        vals = []
        for f in (0, 1, 2):
            qf = quad.with_layers(L + f * step)
            vals.append(max(fn(Q, qf) for Q in sing))
        v = np.exp(np.array(vals) - logv)
        d1, d2 = v[1] - v[0], v[2] - v[1]
        if d1 > 1e-9 and d2 >= 0.5 * d1:
            return WindowValue(math.inf, True, arg, "layer refinement")
    return WindowValue(value, False, arg)


def ap_constant(W, p, window: CubeWindow, quad: Optional[Quadrature] = None,
                detect_divergence: bool = True) -> float:
    """``[W]_{A_p}`` over the window; ``inf`` when divergence is flagged."""
    if p <= 0:
        raise ValueError("p must be positive")
    quad = quad or Quadrature()
    return probe_window_constant(lambda Q, q: log_ap_cube(W, p, Q, q), W, window, quad,
                                 detect_divergence).value


def apinfty_constant(W, p, window: CubeWindow, quad: Optional[Quadrature] = None,
                     detect_divergence: bool = True) -> float:
    """``[W]_{A_{p,inf}}`` over the window; ``inf`` when divergence is flagged."""
    if p <= 0:
        raise ValueError("p must be positive")
    quad = quad or Quadrature()
    return probe_window_constant(lambda Q, q: log_apinfty_cube(W, p, Q, q), W, window, quad,
                                 detect_divergence).value


# ----------------------------------------------------------------------------
# Fujii-Wilson constants


def sample_matrices(m: int, count: int = 8, seed: int = 0) -> list[np.ndarray]:
    """Identity, rank-one ``z e_1^*`` for sphere directions ``z``, and seeded random matrices."""
    mats = [np.eye(m, dtype=complex)]
    if m == 1:
        return mats
    for z in sphere_directions(m, max(count, 2 * m)):
        M = np.zeros((m, m), dtype=complex)
        M[:, 0] = z
        mats.append(M)
    rng = np.random.default_rng(seed)
    for _ in range(count):
        mats.append(rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)))
    return mats


def _scalar_family(W, p, X, mats) -> np.ndarray:
    """``w_M(x) = |W^{1/p}(x) M|^p`` for each matrix, shape ``(len(mats), len(X))``."""
    if W.is_scalar_type and W.kind != "custom":
        w = np.exp(W.log_scalar(X))
        return np.array([w * linalg.op_norm(M) ** p for M in mats])
    Wp = W.power_at(X, 1.0 / p)
    return np.array([linalg.op_norm_batch(Wp @ M) ** p for M in mats])


def _cell_averages(W, p, Q: CubeIndex, depth: int, quad: Quadrature, mats) -> np.ndarray:
    """Averages of each ``w_M`` over the level ``j+depth`` cells of ``Q``: ``(len(mats), 2^depth, ...)``."""
    n = Q.n
    shape = (1 << depth,) * n
    base = Quadrature(quad.scheme, quad.order, 1, False, quad.layers)
    h = Q.edge / (1 << depth)
    t, wt = base.rule_1d(0.0, 1.0, False)
    # regular rule on every cell at once
    idx = np.stack(np.meshgrid(*[np.arange(1 << depth)] * n, indexing="ij"), axis=-1).reshape(-1, n)
    tt = np.stack(np.meshgrid(*[t] * n, indexing="ij"), axis=-1).reshape(-1, n)
    ww = np.prod(np.stack(np.meshgrid(*[wt] * n, indexing="ij"), axis=-1).reshape(-1, n), axis=1)
    corners = Q.corner[None, :] + h * idx
    X = (corners[:, None, :] + h * tt[None, :, :]).reshape(-1, n)
    vals = _scalar_family(W, p, X, mats).reshape(len(mats), len(idx), len(ww)) @ ww
    out = vals.reshape((len(mats),) + shape)
    axes = W.singular_axes
    if axes and quad.singular_split:
        for c, k in zip(corners, idx):
            if any(c[i] <= 0.0 <= c[i] + h for i in axes):
                Xs, ws = cube_nodes(W, CubeIndex(Q.j + depth, tuple(int(v) for v in
                                                 (np.asarray(Q.k) << depth) + k)), quad)
                out[(slice(None),) + tuple(k)] = _scalar_family(W, p, Xs, mats) @ ws
    return out


def _dyadic_maximal_cells(avg: np.ndarray, n: int) -> np.ndarray:
    """Discrete dyadic maximal function of cell averages, per finest cell.

    ``avg`` has ``n`` trailing spatial axes of equal power-of-two length.
    """
    best = avg.copy()
    level = avg
    size = avg.shape[-1]
    factor = 1
    while size > 1:
        size //= 2
        factor *= 2
        shp = level.shape[:-n] + sum(((size, 2) for _ in range(n)), ())
        level = level.reshape(shp).mean(axis=tuple(range(level.ndim - n + 1, level.ndim - n + 1 + 2 * n, 2)))
        up = level
        for ax in range(n):
            up = np.repeat(up, factor, axis=up.ndim - n + ax)
        best = np.maximum(best, up)
    return best


def fujii_wilson_cube(W, p, Q: CubeIndex, depth: int, quad: Quadrature, mats) -> np.ndarray:
    """``(1/w(Q)) int_Q M_d(w 1_Q)`` for each ``w_M``; ``M_d`` the depth-limited dyadic maximal operator."""
    avg = _cell_averages(W, p, Q, depth, quad, mats)
    mx = _dyadic_maximal_cells(avg, Q.n)
    axes = tuple(range(1, avg.ndim))
    return mx.mean(axis=axes) / avg.mean(axis=axes)


def fujii_wilson_constants(W, p, window: CubeWindow, grid_depth: int = 6,
                           quad: Optional[Quadrature] = None, n_matrices: int = 8,
                           check_stability: bool = False) -> tuple[float, float]:
    """``(sc, vec)``: sup of the Fujii-Wilson constants of ``w_M`` over sampled matrices / vectors.

    The vector family is the rank-one subset ``M = z e_1^*`` (so ``w_M = w_z``),
    hence ``vec <= sc`` holds exactly.
    """
    quad = quad or Quadrature()
    m = W.m
    mats = sample_matrices(m, n_matrices)
    is_vec = np.array([m == 1 or (np.allclose(M[:, 1:], 0) and not np.allclose(M, np.eye(m)))
                       for M in mats])

    def sweep(depth):
        sc = vec = 0.0
        for Q in window.cubes():
            vals = fujii_wilson_cube(W, p, Q, depth, quad, mats)
            sc = max(sc, float(vals.max()))
            vec = max(vec, float(vals[is_vec].max()))
        return sc, vec

    sc, vec = sweep(grid_depth)
    if check_stability:
        sc2, _ = sweep(grid_depth + 1)
        if abs(sc2 - sc) > 0.05 * sc:
            raise GridTooCoarse(f"Fujii-Wilson constant moved {sc:.4g} -> {sc2:.4g} at depth {grid_depth + 1}")
    return sc, vec


# ----------------------------------------------------------------------------
# reports


@dataclass
class ConstantsReport:
    ap: float
    apinfty: float
    fujii_sc: float
    fujii_vec: float
    window: CubeWindow
    quad: Quadrature
    p: float = 1.0

    FIELDS = ("p", "ap", "apinfty", "fujii_sc", "fujii_vec")

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}

    def to_json(self) -> str:
        d = self.row()
        d["window"] = asdict(self.window)
        d["quad"] = asdict(self.quad)
        return json.dumps(d, indent=2, default=_json_default)

    def to_csv(self) -> str:
        return rows_to_csv([self.row()])


def constants_report(W, p, window, quad=None, grid_depth: int = 6) -> ConstantsReport:
    quad = quad or Quadrature()
    sc, vec = fujii_wilson_constants(W, p, window, grid_depth, quad)
    return ConstantsReport(ap_constant(W, p, window, quad), apinfty_constant(W, p, window, quad),
                           sc, vec, window, quad, p)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, CubeIndex):
        return str(o)
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ----------------------------------------------------------------------------
# equivalent conditions


@dataclass
class ApInftyDiagnostics:
    cond_iii: float
    cond_v: float
    cond_vi: float
    cond_vii: float
    cond_x: dict  # u -> window max of (avg |W^{-1/p} A_Q|^u)^{1/u}

    def rows(self) -> list[dict]:
        out = [{"condition": c, "u": "", "value": getattr(self, "cond_" + c)}
               for c in ("iii", "v", "vi", "vii")]
        out += [{"condition": "x", "u": u, "value": v} for u, v in sorted(self.cond_x.items())]
        return out


def apinfty_diagnostics(W, p, window: CubeWindow, fam: Optional[ReducingFamily] = None,
                        quad: Optional[Quadrature] = None, us=(0.1, 0.25, 0.5),
                        n_directions: int = 64) -> ApInftyDiagnostics:
    """Window maxima of the equivalent ``A_{p,inf}`` conditions (iii), (v), (vi), (vii), (x)."""
    quad = quad or Quadrature()
    fam = fam or ReducingFamily(W, p, "john", quad)
    m = W.m
    V = sphere_directions(m, n_directions) if m > 1 else np.ones((1, 1), dtype=complex)
    c3 = c5 = c6 = c7 = 1.0
    cx = {u: 0.0 for u in us}
    for Q in window.cubes():
        X, w = cube_nodes(W, Q, quad, -1.0)
        A = fam[Q]
        B = W.power_at(X, -1.0 / p) @ A  # W^{-1/p}(x) A_Q
        vec = np.linalg.norm(np.einsum("kij,dj->kdi", B, V), axis=2)
        c3 = max(c3, float(np.exp(np.max(w @ np.log(np.maximum(vec, 1.0))))))
        nrm = linalg.op_norm_batch(B)
        c5 = max(c5, float(np.exp(w @ np.log(np.maximum(nrm, 1.0)))))
        for u in us:
            cx[u] = max(cx[u], float((w @ nrm ** u) ** (1.0 / u)))
        box = Box.of_cube(Q)
        Xs, ws = _nodes(W, box, quad, 1.0)
        inner = log_mean_over_x(W, p, Xs, ws, Xs)
        c6 = max(c6, float(np.exp(ws @ np.maximum(inner, 0.0))))
        c7 = max(c7, float(np.exp(log_apinfty_cube(W, p, Q, quad))))
    return ApInftyDiagnostics(c3, c5, c6, c7, cx)


# ----------------------------------------------------------------------------
# reverse Hoelder


@dataclass
class ReverseHolderReport:
    r_grid: list
    worst_ratio: float
    worst_cube: Optional[CubeIndex]
    sc: float

    def rows(self) -> list[dict]:
        return [{"r": r, "worst_ratio": self.worst_ratio, "sc": self.sc} for r in self.r_grid]


def rhi_endpoint(sc: float, n: int) -> float:
    return 1.0 + 1.0 / (2 ** (n + 1) * sc - 1.0)


def reverse_holder_check(W, p, window: CubeWindow, r_grid=None, quad: Optional[Quadrature] = None,
                         sc: Optional[float] = None, grid_depth: int = 6,
                         n_matrices: int = 8) -> ReverseHolderReport:
    """Worst ``avg_Q w_M^r / (avg_Q w_M)^r`` over window cubes, sampled ``M`` and ``r``."""
    quad = quad or Quadrature()
    if sc is None:
        sc, _ = fujii_wilson_constants(W, p, window, grid_depth, quad)
    r_end = rhi_endpoint(sc, W.n)
    r_grid = [r_end] if r_grid is None else list(r_grid)
    if any(r < 1 or r > r_end * (1 + 1e-12) for r in r_grid):
        raise ValueError(f"r_grid must lie in [1, {r_end}]")
    mats = sample_matrices(W.m, n_matrices)
    worst, wq = 1.0, None
    for Q in window.cubes():
        for r in r_grid:
            X, w = cube_nodes(W, Q, quad, r)
            vals = _scalar_family(W, p, X, mats)
            ratio = (vals ** r @ w) / (vals @ w) ** r
            if ratio.max() > worst:
                worst, wq = float(ratio.max()), Q
    return ReverseHolderReport(r_grid, worst, wq, sc)


# ----------------------------------------------------------------------------
# distributional estimate


@dataclass
class BadSetReport:
    cube: CubeIndex
    pairs: list  # (M, fraction)

    @property
    def products(self) -> list:
        return [M * f for M, f in self.pairs]

    @property
    def fitted_log_constant(self) -> float:
        """Smallest ``log(C [W])`` consistent with ``fraction(M) <= log(C [W]) / M`` on the grid."""
        return max(self.products) if self.pairs else 0.0

    def rows(self) -> list[dict]:
        return [{"M": M, "fraction": f, "M_times_fraction": M * f} for M, f in self.pairs]


def bad_set_fraction(W, p, Q: CubeIndex, M_grid, fam: Optional[ReducingFamily] = None,
                     quad: Optional[Quadrature] = None) -> BadSetReport:
    """Measure fraction of ``{y in Q : |A_Q W^{-1/p}(y)|^p >= e^M}`` for each ``M``."""
    M_grid = [float(M) for M in M_grid]
    if any(M <= 0 for M in M_grid) or any(b <= a for a, b in zip(M_grid, M_grid[1:])):
        raise ValueError("M_grid must be positive and increasing")
    quad = quad or Quadrature()
    fam = fam or ReducingFamily(W, p, "john", quad)
    Y, w = cube_nodes(W, Q, quad, None)
    vals = linalg.op_norm_batch(fam[Q][None] @ W.power_at(Y, -1.0 / p)) ** p
    logv = np.log(vals)
    pairs = [(M, float(np.sum(w[logv >= M]))) for M in M_grid]
    return BadSetReport(Q, pairs)


# ----------------------------------------------------------------------------
# dimensions


@dataclass
class DimensionReport:
    d_lower_est: float
    d_upper_est: float
    lower_residual: float
    upper_residual: float
    lambda_grid: list
    base_cubes: list
    lower_log2: dict = field(default_factory=dict)  # cube -> log2 functional per lambda
    upper_log2: dict = field(default_factory=dict)
    monotone: bool = True
    d1: Optional[float] = None
    d2: Optional[float] = None
    lower_slope: float = 0.0
    upper_slope: float = 0.0

    def rows(self) -> list[dict]:
        out = []
        for Q in self.base_cubes:
            for i, lam in enumerate(self.lambda_grid):
                out.append({"cube": str(Q), "lambda": lam,
                            "log2_lower": self.lower_log2[Q][i], "log2_upper": self.upper_log2[Q][i]})
        return out


def _tail_slope(x: np.ndarray, y: np.ndarray, tail: float):
    """Least-squares slope over the last ``tail`` fraction of points (at least 3)."""
    k = min(len(x), max(3, int(math.ceil(tail * len(x)))))
    xs, ys = x[-k:], y[-k:]
    if np.ptp(xs) == 0:
        return 0.0, 0.0
    A = np.stack([xs, np.ones_like(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


def default_lambda_grid(max_exp: int = 8) -> list:
    return [2.0 ** k for k in range(max_exp + 1)]


def dimension_estimate(W, p, base_cubes=None, lambda_grid=None, quad: Optional[Quadrature] = None,
                       tail: float = 0.5, d1=None, d2=None) -> DimensionReport:
    """Growth exponents of the lower/upper dimension functionals in ``lambda``.

    The slope is fitted in ``log2``-coordinates over the large-``lambda``
    half of the grid: the functionals are only asymptotically power laws.
    """
    quad = quad or Quadrature()
    if lambda_grid is None:
        lambda_grid = default_lambda_grid()
    lam = np.asarray(lambda_grid, dtype=float)
    if np.any(lam < 1) or np.any(lam > 2 ** 10) or np.any(np.diff(lam) <= 0):
        raise ValueError("lambda_grid must be increasing within [1, 2^10]")
    if base_cubes is None:
        base_cubes = [CubeIndex(0, (0,) * W.n), CubeIndex(0, (2,) * W.n)]
    lower, upper = {}, {}
    monotone = True
    for Q in base_cubes:
        box = Box.of_cube(Q)
        lo, up = [], []
        for L in lam:
            big = Box.dilate(Q, L)
            lo.append(log_mean_log(W, p, box, big, quad) / math.log(2))
            up.append(log_mean_log(W, p, big, box, quad) / math.log(2))
        lower[Q], upper[Q] = lo, up
        for seq in (lo, up):
            if np.any(np.diff(seq) < -1e-6 * (1 + np.abs(seq[:-1]))):
                monotone = False
    x = np.log2(lam)
    fits_lo = [_tail_slope(x, np.asarray(lower[Q]), tail) for Q in base_cubes]
    fits_up = [_tail_slope(x, np.asarray(upper[Q]), tail) for Q in base_cubes]
    ilo = int(np.argmax([f[0] for f in fits_lo]))
    iup = int(np.argmax([f[0] for f in fits_up]))
    # dimensions are nonnegative; the raw slopes are kept alongside
    return DimensionReport(max(fits_lo[ilo][0], 0.0), max(fits_up[iup][0], 0.0),
                           fits_lo[ilo][1], fits_up[iup][1], list(lam), list(base_cubes),
                           lower, upper, monotone, d1, d2, fits_lo[ilo][0], fits_up[iup][0])


@dataclass
class CriticalIndex:
    value: Optional[float]  # analytic r_w, None for custom weights
    bracket: tuple
    approximate: bool


def critical_index(w: MatrixWeightSpec, window: Optional[CubeWindow] = None,
                   quad: Optional[Quadrature] = None, steps: int = 8) -> CriticalIndex:
    """``r_w = inf{r : w in A_r}``: analytic ``1 + max_i (a_i)_+`` plus a bisection bracket."""
    if w.m != 1 and not w.is_scalar_type:
        raise ValueError("critical index is defined for scalar weights")
    quad = quad or Quadrature()
    window = window or CubeWindow(w.n, -1, 1, 1)
    analytic = None
    if w.kind == "anisotropic":
        analytic = 1.0 + max(max(a, 0.0) for a in w.exponents)
    elif w.kind == "identity":
        analytic = 1.0
    elif w.kind == "power" and w.n == 1:
        analytic = 1.0 + max(w.exponents[0], 0.0)

    def finite(p):
        return math.isfinite(ap_constant(w, p, window, quad))

    if finite(1.0):
        return CriticalIndex(analytic, (1.0, 1.0), analytic is None)
    lo, hi = 1.0, 2.0
    while not finite(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e3:
            return CriticalIndex(analytic, (lo, math.inf), True)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if finite(mid):
            hi = mid
        else:
            lo = mid
    return CriticalIndex(analytic, (lo, hi), analytic is None)


# ----------------------------------------------------------------------------
# strong doubling


@dataclass
class DoublingReport:
    strong: float
    same_level: float
    nested: float
    worst_pair: Optional[tuple]

    def rows(self) -> list[dict]:
        return [{"variant": "strong", "worst_ratio": self.strong},
                {"variant": "same_level", "worst_ratio": self.same_level},
                {"variant": "nested", "worst_ratio": self.nested}]


def strong_doubling_check(fam: ReducingFamily, d1: float, d2: float, window: CubeWindow) -> DoublingReport:
    """Worst ratio of ``|A_Q A_R^{-1}|^p`` to the two-cube bound over all window pairs."""
    cubes = list(window.cubes())
    p = fam.p
    A = fam.batch(cubes)
    Ainv = np.linalg.inv(A)
    j = np.array([Q.j for Q in cubes], dtype=float)
    ell = 2.0 ** (-j)
    corner = np.array([Q.corner for Q in cubes])
    worst = np.zeros(3)
    pair = None
    for i, Q in enumerate(cubes):
        norms = linalg.op_norm_batch(A[i][None] @ Ainv) ** p
        lq, lr = ell[i], ell
        size = np.maximum((lr / lq) ** d1, (lq / lr) ** d2)
        dist = np.linalg.norm(corner - corner[i], axis=1) / np.maximum(lq, lr)
        ratio = norms / (size * (1.0 + dist) ** (d1 + d2))
        k = int(np.argmax(ratio))
        if ratio[k] > worst[0]:
            worst[0], pair = ratio[k], (Q, cubes[k])
        same = j == j[i]
        worst[1] = max(worst[1], float(np.max(norms[same] / (1.0 + dist[same]) ** (d1 + d2))))
        nested = np.array([Q.contains(R) or R.contains(Q) for R in cubes])
        worst[2] = max(worst[2], float(np.max(norms[nested] / size[nested])))
    return DoublingReport(float(worst[0]), float(worst[1]), float(worst[2]), pair)
