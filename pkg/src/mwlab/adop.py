"""(D,E,F)-almost diagonal operators on sequence fields.

The model kernel

    b_{Q,R} = [1 + |x_Q - x_R| / max(l(Q), l(R))]^{-D} * { (l(Q)/l(R))^E   if l(Q) <= l(R)
                                                         { (l(R)/l(Q))^F   otherwise

is applied to finitely supported fields on a window, boundedness thresholds
are computed from the space parameters and the weight dimensions, and the
extremal sums that witness sharpness are classified as convergent or
divergent from their partial sums along doubling cutoffs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .dyadic import CubeIndex, CubeWindow
from .seqspaces import SequenceField, SpaceParams, random_field, seq_norm
from .weights import MatrixWeightSpec, Quadrature, ReducingFamily

PLATEAU_RTOL = 0.01
SLOPE_CONVERGENT = -0.05
BORDERLINE = 0.05
GROWTH_TOL = 0.05


@dataclass(frozen=True)
class ADKernel:
    D: float
    E: float
    F: float

    def shifted(self, dD: float = 0.0, dE: float = 0.0, dF: float = 0.0) -> "ADKernel":
        return ADKernel(self.D + dD, self.E + dE, self.F + dF)


def kernel_eval(k: ADKernel, Q: CubeIndex, R: CubeIndex) -> float:
    if Q.n != R.n:
        raise ValueError("cubes of different dimension")
    lq, lr = Q.edge, R.edge
    dist = float(np.linalg.norm(Q.corner - R.corner))
    decay = (1.0 + dist / max(lq, lr)) ** (-k.D)
    size = (lq / lr) ** k.E if lq <= lr else (lr / lq) ** k.F
    return decay * size


def _geometry(cubes: Sequence[CubeIndex]):
    j = np.array([Q.j for Q in cubes], dtype=float)
    corners = np.array([Q.corner for Q in cubes], dtype=float).reshape(len(cubes), -1)
    return j, corners


def kernel_matrix(k: ADKernel, rows: Sequence[CubeIndex], cols: Sequence[CubeIndex]) -> np.ndarray:
    """``[b_{Q,R}]`` for ``Q`` in ``rows`` and ``R`` in ``cols``."""
    jq, xq = _geometry(rows)
    jr, xr = _geometry(cols)
    if len(rows) == 0 or len(cols) == 0:
        return np.zeros((len(rows), len(cols)))
    dist = np.linalg.norm(xq[:, None, :] - xr[None, :, :], axis=2)
    # l = 2^{-j}; max(l_Q, l_R) = 2^{-min(j_Q, j_R)}
    jmin = np.minimum(jq[:, None], jr[None, :])
    decay = (1.0 + dist * np.exp2(jmin)) ** (-k.D)
    gap = jq[:, None] - jr[None, :]  # log2(l_R / l_Q)
    size = np.where(gap >= 0, np.exp2(-k.E * gap), np.exp2(k.F * gap))
    return decay * size


def apply(k: ADKernel, t: SequenceField, targets: Optional[Sequence[CubeIndex]] = None,
          chunk: int = 4096) -> SequenceField:
    """``(Bt)_Q = sum_R b_{Q,R} t_R`` for every window cube ``Q`` (or ``targets``)."""
    if targets is None:
        targets = list(t.window.cubes())
    if len(t) == 0:
        return SequenceField.zeros(t.window, t.m)
    out = np.empty((len(targets), t.m), dtype=complex)
    for i in range(0, len(targets), chunk):
        out[i:i + chunk] = kernel_matrix(k, targets[i:i + chunk], t.cubes) @ t.values
    return SequenceField(t.window, tuple(targets), out)


def row_sum(k: ADKernel, Q: CubeIndex, window: CubeWindow) -> float:
    """``sum_R b_{Q,R}`` over the window cubes at the level of ``Q``."""
    cols = list(window.cubes_at(Q.j))
    return float(kernel_matrix(k, [Q], cols).sum())


def composition_constant(k1: ADKernel, k2: ADKernel, target: ADKernel, window: CubeWindow) -> float:
    """Smallest ``C`` with ``(B1 B2)_{Q,R} <= C b^{target}_{Q,R}`` on the window."""
    cubes = list(window.cubes())
    prod = kernel_matrix(k1, cubes, cubes) @ kernel_matrix(k2, cubes, cubes)
    return float(np.max(prod / kernel_matrix(target, cubes, cubes)))


# ----------------------------------------------------------------------------
# thresholds


def thresholds(sp: SpaceParams, d1: float, d2: float, n: int = 1) -> tuple[float, float, float]:
    """Strict lower bounds ``(D*, E*, F*)`` for boundedness on ``a^{s,tau}_{p,q}(W)``."""
    if not 1 <= n <= 3:
        raise ValueError("n must be 1, 2 or 3")
    if not 0.0 <= d1 < n:
        raise ValueError("d1 must lie in [0, n)")
    if d2 < 0:
        raise ValueError("d2 must be nonnegative")
    Jt = sp.J_tilde(n, d1, d2)
    st = sp.s_tilde(n, d1)
    return Jt, n / 2.0 + st, Jt - n / 2.0 - st


def kernel_above_thresholds(sp: SpaceParams, d1: float, d2: float, n: int = 1, margin: float = 0.1) -> ADKernel:
    D, E, F = thresholds(sp, d1, d2, n)
    return ADKernel(D + margin, E + margin, F + margin)


# ----------------------------------------------------------------------------
# growth classification


def classify_partial_sums(sums: Sequence[float]) -> str:
    """Label partial sums taken at doubling cutoffs ``convergent`` or ``divergent``.

    A plateau (last relative increment below 1%) is convergent.  Otherwise
    the increments between consecutive cutoffs are fitted by a power of the
    cutoff over the second half of the schedule: an exponent at or below
    ``-0.05`` (increments decaying geometrically in the number of doublings)
    is convergent, anything else (log growth, power growth) is divergent.
    """
    S = np.asarray(sums, dtype=float)
    if len(S) < 4:
        raise ValueError("need at least four cutoffs")
    inc = np.diff(S)
    if S[-1] > 0 and inc[-1] <= PLATEAU_RTOL * S[-1] and np.all(np.isfinite(S)):
        return "convergent"
    if not np.all(np.isfinite(S)) or np.any(inc <= 0):
        return "divergent" if np.any(~np.isfinite(S)) or inc[-1] > 0 else "convergent"
    slope = increment_slope(S)
    return "convergent" if slope <= SLOPE_CONVERGENT else "divergent"


def increment_slope(sums: Sequence[float]) -> float:
    """Least-squares slope of ``log2`` increments against the doubling index (second half)."""
    inc = np.diff(np.asarray(sums, dtype=float))
    idx = np.arange(1, len(inc) + 1, dtype=float)
    h = len(inc) // 2
    x, y = idx[h:], np.log2(inc[h:])
    return float(np.polyfit(x, y, 1)[0])


def p_series_partial_sums(alpha: float, max_exp: int = 16) -> np.ndarray:
    """``sum_{k <= 2^i} k^{-alpha}`` for ``i = 0..max_exp``."""
    k = np.arange(1, (1 << max_exp) + 1, dtype=float)
    c = np.cumsum(k ** (-alpha))
    return c[(1 << np.arange(max_exp + 1)) - 1]


# ----------------------------------------------------------------------------
# sharpness sums


def _lattice_shell_sums(alpha: float, n: int, cutoffs: Sequence[int]) -> np.ndarray:
    """``sum_{|k|_inf <= K} (1 + |k|)^{-alpha}`` for each cutoff ``K``.

    For ``n >= 2`` the lattice points of the cube are counted by squared
    radius, as the ``n``-fold convolution of the one-dimensional counts.
    """
    if n == 1:
        k = np.arange(0, max(cutoffs) + 1, dtype=float)
        c = np.cumsum(np.where(k == 0, 1.0, 2.0) * (1.0 + k) ** (-alpha))
        return c[list(cutoffs)]
    out = np.zeros(len(cutoffs))
    for i, K in enumerate(cutoffs):
        sq = np.zeros(K * K + 1)
        sq[np.arange(K + 1) ** 2] = 2.0
        sq[0] = 1.0
        counts = sq
        for _ in range(n - 1):
            counts = np.rint(fftconvolve(counts, sq))
        r = np.sqrt(np.arange(counts.size, dtype=float))
        out[i] = float(np.dot(counts, (1.0 + r) ** (-alpha)))
    return out


@dataclass
class SharpnessReport:
    kind: str  # "D" or "F"
    exponent: float  # the decisive exponent (Dp - d2 - n, or F + n/2 + s - n/p - d2/p)
    cutoffs: list
    partial_sums: list
    classification: str
    slope: float

    def rows(self) -> list[dict]:
        return [{"sum": self.kind, "cutoff": c, "partial_sum": s, "classification": self.classification}
                for c, s in zip(self.cutoffs, self.partial_sums)]


def d_sum(D: float, p: float, d2: float, n: int = 1, max_exp: Optional[int] = None) -> SharpnessReport:
    """``sum_{Q in Q_0, |k|_inf <= K} (1 + |x_Q|)^{-(Dp - d2)}`` along ``K = 2^i``."""
    if max_exp is None:
        max_exp = {1: 16, 2: 10, 3: 10}[n]
    alpha = D * p - d2
    cutoffs = [1 << i for i in range(max_exp + 1)]
    sums = _lattice_shell_sums(alpha, n, cutoffs)
    margin = alpha - n
    if abs(margin) < BORDERLINE:
        label = "inconclusive"
    else:
        label = classify_partial_sums(sums)
    return SharpnessReport("D", margin, cutoffs, list(map(float, sums)), label, increment_slope(sums))


def f_sum(sp: SpaceParams, k: ADKernel, d2: float, n: int = 1, max_exp: int = 8,
          k_cutoff: int = 64) -> SharpnessReport:
    """``sum_{j=-K'}^{-1} [2^{jp e} sum_k (1+|k|)^{-(Dp-d2)}]^{r/p}`` with
    ``e = F + n/2 + s - n/p - d2/p`` and ``r = q`` (B) or ``max(p, q)`` (F)."""
    p, q = sp.p, sp.q
    e = k.F + n / 2.0 + sp.s - n / p - d2 / p
    if sp.family == "B":
        r = 1.0 if math.isinf(q) else q
    else:
        r = p if math.isinf(q) else max(p, q)
    ksum = float(_lattice_shell_sums(k.D * p - d2, n, [k_cutoff])[0])
    cutoffs = [1 << i for i in range(max_exp + 1)]
    levels = np.arange(1, cutoffs[-1] + 1, dtype=float)
    # work in logs: terms can be astronomically large when e < 0
    logt = (r / p) * (-levels * p * e * math.log(2.0) + math.log(ksum))
    with np.errstate(over="ignore"):
        c = np.cumsum(np.exp(logt))
    sums = c[np.array(cutoffs) - 1]
    if abs(e) < BORDERLINE:
        label = "inconclusive"
    else:
        label = classify_partial_sums(sums)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        slope = increment_slope(sums) if np.all(np.isfinite(sums)) else math.inf
    return SharpnessReport("F", e, cutoffs, list(map(float, sums)), label, slope)


def sharpness_probe(sp: SpaceParams, d2: float, k: ADKernel, n: int = 1) -> tuple[SharpnessReport, SharpnessReport]:
    """Growth classification of the two extremal sums for ``W = |x|^{d2} I``."""
    return d_sum(k.D, sp.p, d2, n), f_sum(sp, k, d2, n)


# ----------------------------------------------------------------------------
# boundedness probe


@dataclass
class ProbeReport:
    kernel: ADKernel
    sp: SpaceParams
    window_sizes: list
    ratios: list
    worst_field: list
    growth: list = field(default_factory=list)
    verdict: str = ""

    def rows(self) -> list[dict]:
        return [{"window_size": w, "ratio": r, "classification": self.verdict}
                for w, r in zip(self.window_sizes, self.ratios)]


def surrogate_reducing(d2: float, p: float):
    """``A_Q = 2^{-j d2/p} (1 + |k|)^{d2/p}``, the model reducing operators of ``|x|^{d2}``."""
    def A(Q: CubeIndex) -> float:
        return 2.0 ** (-Q.j * d2 / p) * (1.0 + float(np.linalg.norm(Q.k))) ** (d2 / p)
    return A


def boundedness_probe(k: ADKernel, sp: SpaceParams, weight: Optional[MatrixWeightSpec], window: CubeWindow,
                      batch: int = 20, doublings: int = 3, seed: int = 0, method: str = "gram2",
                      quad: Optional[Quadrature] = None, density: float = 0.3) -> ProbeReport:
    """Empirical ``sup ||Bt|| / ||t||`` over a fixed batch as the window grows.

    The batch (random fields plus unit fields at ``Q_{j,0}`` of every level)
    is drawn once on ``window``; each enlarged window only adds target cubes
    for ``Bt``, so the ratio is nondecreasing and its growth per doubling is
    the truncation effect alone.
    """
    m = 1 if weight is None else weight.m
    fam = None if weight is None else ReducingFamily(weight, sp.p, method, quad or Quadrature())
    rng = np.random.default_rng(seed)
    fields = [random_field(window, m, rng, density) for _ in range(batch)]
    for j in window.levels:
        fields.append(SequenceField.unit(window, CubeIndex(j, (0,) * window.n), m=m))
    base_norms = [seq_norm(t, sp, fam) for t in fields]
    sizes, ratios, worst = [], [], []
    win = window
    for step in range(doublings + 1):
        best, arg = 0.0, -1
        for i, (t, nt) in enumerate(zip(fields, base_norms)):
            Bt = apply(k, t.on_window(win))
            r = seq_norm(Bt, sp, fam) / nt
            if r > best:
                best, arg = r, i
        sizes.append(len(win))
        ratios.append(best)
        worst.append(arg)
        win = win.doubled()
    growth = [ratios[i + 1] / ratios[i] - 1.0 for i in range(len(ratios) - 1)]
    verdict = "bounded-consistent" if growth and growth[-1] <= GROWTH_TOL else "growing"
    return ProbeReport(k, sp, sizes, ratios, worst, growth, verdict)
