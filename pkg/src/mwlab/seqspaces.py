"""Matrix-weighted Besov-type and Triebel-Lizorkin-type sequence norms.

A sequence ``t = {t_Q}`` is a finitely supported map from dyadic cubes to
``C^m``.  Its ``a^{s,tau}_{p,q}`` norm is the Morrey-type quantity

    sup_P |P|^{-tau} || {2^{js} |A_j t_j|}_{j >= j_P} ||_{LA_{pq}(P)}

with ``t_j = sum_{Q in level j} t_Q |Q|^{-1/2} 1_Q`` and ``A_j`` either the
pointwise weight ``W^{1/p}(x)``, piecewise-constant reducing operators, or
the identity.  The supremum runs over all dyadic cubes ``P``; only
finitely many of them matter for a finitely supported field.

Evaluation walks the trie of all support cubes and their ancestors.  Every
leaf region (a part of the plane on which the set of support cubes covering
it is constant) carries, for each cutoff level ``l``, its contribution to
``int_P (sum_{j>=l} g_j^q)^{p/q}`` and to the level-wise ``L^p`` masses, and
these vectors are summed up the trie, which yields every candidate ``P`` at
once.  For averaged and unweighted flavors the integrand is constant on a
leaf region and the result is exact; the pointwise flavor integrates each
leaf region with quadrature nodes refined down to the finest support level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .dyadic import CubeIndex, CubeWindow
from .weights import MatrixWeightSpec, Quadrature, ReducingFamily, cube_nodes

INF = math.inf
EMBEDDING_RTOL = 1e-12
_MAX_REFINEMENT = 64


# ----------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class SpaceParams:
    s: float
    tau: float
    p: float
    q: float
    family: str = "B"
    homogeneous: bool = True

    def __post_init__(self):
        if self.family not in ("B", "F"):
            raise ValueError("family must be 'B' or 'F'")
        if not self.p > 0 or math.isinf(self.p):
            raise ValueError("p must be a positive finite number")
        if not self.q > 0:
            raise ValueError("q must be positive (or inf)")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")

    def with_(self, **kw) -> "SpaceParams":
        d = dict(s=self.s, tau=self.tau, p=self.p, q=self.q, family=self.family,
                 homogeneous=self.homogeneous)
        d.update(kw)
        return SpaceParams(**d)

    def J(self, n: int) -> float:
        if self.family == "B":
            return n / min(1.0, self.p)
        return n / min(1.0, self.p, self.q)

    @property
    def criticality(self) -> str:
        inv = 1.0 / self.p
        if self.tau > inv or (self.tau == inv and math.isinf(self.q)):
            return "supercritical"
        if self.tau == inv and self.family == "F":
            return "critical"
        return "subcritical"

    def J_tau(self, n: int) -> float:
        c = self.criticality
        if c == "supercritical":
            return float(n)
        if c == "critical":
            return n / min(1.0, self.q)
        return self.J(n)

    def tau_hat(self, n: int, d1: float) -> float:
        return max(self.tau - 1.0 / self.p + d1 / (n * self.p), 0.0)

    def J_tilde(self, n: int, d1: float, d2: float) -> float:
        return self.J_tau(n) + min(n * self.tau_hat(n, d1), d1 / self.p) + d2 / self.p

    def s_tilde(self, n: int, d1: float) -> float:
        return self.s + n * self.tau_hat(n, d1)


# ----------------------------------------------------------------------------
# sequence fields


@dataclass(frozen=True)
class SequenceField:
    """Finitely supported ``Q -> C^m`` on a window; immutable."""

    window: CubeWindow
    cubes: tuple
    values: np.ndarray  # (len(cubes), m)

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex, copy=True)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != len(self.cubes):
            raise ValueError("one value vector per cube is required")
        if len(set(self.cubes)) != len(self.cubes):
            raise ValueError("duplicate cubes in sequence field")
        for Q in self.cubes:
            if not self.window.contains(Q):
                raise ValueError(f"cube {Q} lies outside the window")
        order = sorted(range(len(self.cubes)), key=lambda i: (self.cubes[i].j, self.cubes[i].k))
        vals = vals[order] if len(order) else vals.reshape(0, vals.shape[1] if vals.ndim == 2 else 1)
        vals.setflags(write=False)
        object.__setattr__(self, "cubes", tuple(self.cubes[i] for i in order))
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_dict(cls, window: CubeWindow, data: dict, m: Optional[int] = None) -> "SequenceField":
        cubes = list(data)
        if not cubes:
            return cls.zeros(window, m or 1)
        vals = np.array([np.atleast_1d(np.asarray(data[Q], dtype=complex)) for Q in cubes])
        return cls(window, tuple(cubes), vals)

    @classmethod
    def zeros(cls, window: CubeWindow, m: int = 1) -> "SequenceField":
        return cls(window, (), np.zeros((0, m), dtype=complex))

    @classmethod
    def unit(cls, window: CubeWindow, Q: CubeIndex, e=None, m: int = 1) -> "SequenceField":
        if e is None:
            e = np.zeros(m)
            e[0] = 1.0
        return cls(window, (Q,), np.atleast_2d(np.asarray(e, dtype=complex)))

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.window.n

    def __len__(self) -> int:
        return len(self.cubes)

    def as_dict(self) -> dict:
        return {Q: self.values[i] for i, Q in enumerate(self.cubes)}

    def get(self, Q: CubeIndex) -> np.ndarray:
        return self.as_dict().get(Q, np.zeros(self.m, dtype=complex))

    def scaled(self, c) -> "SequenceField":
        return SequenceField(self.window, self.cubes, c * self.values)

    def __add__(self, other: "SequenceField") -> "SequenceField":
        if other.window != self.window:
            raise ValueError("fields live on different windows")
        d = self.as_dict()
        for Q, v in other.as_dict().items():
            d[Q] = d[Q] + v if Q in d else v
        return SequenceField.from_dict(self.window, d, self.m)

    def map_values(self, fn) -> "SequenceField":
        return SequenceField(self.window, self.cubes, np.array([fn(Q, v) for Q, v in zip(self.cubes, self.values)])
                             if self.cubes else self.values)

    def magnitudes(self) -> "SequenceField":
        return SequenceField(self.window, self.cubes, np.linalg.norm(self.values, axis=1)[:, None])

    def on_window(self, window: CubeWindow) -> "SequenceField":
        return SequenceField(window, self.cubes, self.values)


def random_field(window: CubeWindow, m: int, rng: np.random.Generator, density: float = 0.3,
                 levels: Optional[Iterable[int]] = None, real: bool = False) -> SequenceField:
    """Random field: each window cube is in the support with probability ``density``."""
    levels = list(window.levels if levels is None else levels)
    cubes = [Q for Q in window.cubes() if Q.j in levels]
    keep = rng.random(len(cubes)) < density
    if not np.any(keep) and cubes:
        keep[rng.integers(len(cubes))] = True
    chosen = [Q for Q, k in zip(cubes, keep) if k]
    vals = rng.standard_normal((len(chosen), m))
    if not real:
        vals = vals + 1j * rng.standard_normal((len(chosen), m))
    return SequenceField(window, tuple(chosen), vals)


def field_to_text(t: SequenceField) -> str:
    w = t.window
    lines = [f"#mwlab-seq n={w.n} m={t.m} j_min={w.j_min} j_max={w.j_max} "
             f"radius={w.spatial_radius} inhomogeneous={int(w.inhomogeneous)}"]
    for Q, v in zip(t.cubes, t.values):
        parts = [str(Q.j)] + [str(x) for x in Q.k]
        for z in v:
            parts += [repr(float(z.real)), repr(float(z.imag))]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def field_from_text(text: str) -> SequenceField:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#mwlab-seq"):
        raise ValueError("missing '#mwlab-seq' header line")
    hdr = dict(item.split("=", 1) for item in lines[0].split()[1:])
    try:
        n, m = int(hdr["n"]), int(hdr["m"])
        window = CubeWindow(n, int(hdr["j_min"]), int(hdr["j_max"]), int(hdr["radius"]),
                            bool(int(hdr["inhomogeneous"])))
    except KeyError as exc:
        raise ValueError(f"header field {exc.args[0]!r} missing") from exc
    cubes, vals = [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        if ln.startswith("#"):
            continue
        tok = ln.split()
        if len(tok) != 1 + n + 2 * m:
            raise ValueError(f"line {lineno}: expected {1 + n + 2 * m} fields, got {len(tok)}")
        cubes.append(CubeIndex(int(tok[0]), tuple(int(x) for x in tok[1:1 + n])))
        re_im = np.array([float(x) for x in tok[1 + n:]])
        vals.append(re_im[0::2] + 1j * re_im[1::2])
    if not cubes:
        return SequenceField.zeros(window, m)
    return SequenceField(window, tuple(cubes), np.array(vals))


# ----------------------------------------------------------------------------
# weightings


@dataclass(frozen=True)
class Pointwise:
    """Weighting by ``W^{1/p}(x)`` itself, integrated by quadrature."""

    weight: MatrixWeightSpec
    quad: Quadrature = field(default_factory=Quadrature)


Weighting = Union[None, Pointwise, ReducingFamily]


def _check_weighting(weighting, sp: SpaceParams, m: int):
    if isinstance(weighting, ReducingFamily):
        if weighting.p != sp.p:
            raise ValueError("reducing operators must have the order p of the space")
        if weighting.weight.m != m:
            raise ValueError("weight size differs from the field dimension")
    elif isinstance(weighting, Pointwise):
        if weighting.weight.m != m:
            raise ValueError("weight size differs from the field dimension")
    elif weighting is not None:
        raise TypeError("weighting must be None, Pointwise or ReducingFamily")


# ----------------------------------------------------------------------------
# the tree evaluator


@dataclass
class _Piece:
    region: CubeIndex  # where the piece lives (Q itself, or a subset E_Q)
    slot: int  # level index j used by the 2^{js} factor and by the cutoff j >= j_P
    amp: float  # 2^{js} |Q|^{-1/2}
    vec: np.ndarray  # A_Q t_Q (constant flavors) or t_Q (pointwise)


def _leaf_regions(pieces: Sequence[_Piece], top: int):
    """Yield ``(region, pieces covering it)`` for every leaf region of the support trie."""
    by_region: dict = {}
    for pc in pieces:
        by_region.setdefault(pc.region, []).append(pc)
    trie: dict = {}
    for R in by_region:
        C = R
        while C.j > top:
            par = C.parent()
            kids = trie.setdefault(par, set())
            if C in kids:
                break
            kids.add(C)
            C = par
        trie.setdefault(R, set())
    n = pieces[0].region.n

    def covering(C):
        out = []
        D = C
        while D.j >= top:
            out.extend(by_region.get(D, ()))
            D = D.parent()
        return out

    for C, kids in trie.items():
        if not kids:
            if C in by_region:
                yield C, covering(C)
            continue
        cov = covering(C)
        if not cov:
            continue
        for i in range(1 << n):
            ch = C.child(i)
            if ch not in trie:
                yield ch, cov


def _region_nodes(weighting, R: CubeIndex, target: int):
    if not isinstance(weighting, Pointwise):
        return None, np.array([R.volume])
    W, quad = weighting.weight, weighting.quad
    factor = min(quad.refinement << max(target - R.j, 0), _MAX_REFINEMENT)
    qd = Quadrature(quad.scheme, quad.order, max(factor, quad.refinement), quad.singular_split, quad.layers)
    X, w = cube_nodes(W, R, qd)
    return X, w * R.volume


def _region_values(weighting, sp: SpaceParams, cov, X, slots) -> np.ndarray:
    """``G[l, x] = g_{slot l}(x)`` on the region nodes."""
    K = 1 if X is None else len(X)
    G = np.zeros((len(slots), K))
    index = {j: i for i, j in enumerate(slots)}
    if isinstance(weighting, Pointwise):
        W = weighting.weight
        if W.is_scalar_type and W.kind != "custom":
            scal = np.exp(W.log_scalar(X) / sp.p)
            for pc in cov:
                G[index[pc.slot]] = pc.amp * scal * np.linalg.norm(pc.vec)
        else:
            Wp = W.power_at(X, 1.0 / sp.p)
            for pc in cov:
                G[index[pc.slot]] = pc.amp * np.linalg.norm(Wp @ pc.vec, axis=1)
    else:
        for pc in cov:
            G[index[pc.slot]] = pc.amp * np.linalg.norm(pc.vec)
    return G


def _stable_level(cubes: Sequence[CubeIndex]) -> int:
    """Coarsest level that matters for the supremum over all dyadic ``P``.

    Going up, ancestors merge until each occupied orthant has a single one;
    coarser ``P`` hold the same pieces and a smaller ``|P|^{-tau}``.
    """
    orthants = {tuple(v < 0 for v in Q.k) for Q in cubes}
    level = min(Q.j for Q in cubes)
    while len({Q.ancestor_at(level) for Q in cubes}) > len(orthants):
        level -= 1
    return level


def _evaluate(pieces: Sequence[_Piece], sp: SpaceParams, window: CubeWindow, weighting,
              p_range: str = "all") -> float:
    if not pieces:
        return 0.0
    if p_range == "all":
        top = _stable_level([pc.region for pc in pieces])
        allowed = lambda j: True  # noqa: E731
    elif p_range == "window":
        top = window.j_min
        allowed = window.allows_p_level
    else:
        raise ValueError("p_range must be 'all' or 'window'")
    p, q = sp.p, sp.q
    target = max(pc.region.j for pc in pieces)
    lo = top
    hi = max(target, max(pc.slot for pc in pieces))
    slots = list(range(lo, hi + 1))
    nl = len(slots)
    # normalize to keep powers in range (norm is 1-homogeneous); entries first,
    # since |v| squares them
    vmax = max(float(np.max(np.abs(pc.vec))) for pc in pieces)
    if vmax == 0.0:
        return 0.0
    pieces = [_Piece(pc.region, pc.slot, pc.amp, pc.vec / vmax) for pc in pieces]
    scale = max(pc.amp * float(np.linalg.norm(pc.vec)) for pc in pieces)
    if scale == 0.0:
        return 0.0
    pieces = [_Piece(pc.region, pc.slot, pc.amp / scale, pc.vec) for pc in pieces]
    scale *= vmax
    bmass: dict = {}
    fmass: dict = {}
    for R, cov in _leaf_regions(pieces, top):
        X, w = _region_nodes(weighting, R, target)
        G = _region_values(weighting, sp, cov, X, slots)
        if sp.family == "B":
            vec = (G ** p) @ w
            store = bmass
        else:
            if math.isinf(q):
                acc = np.maximum.accumulate(G[::-1], axis=0)[::-1] ** p
            else:
                acc = np.cumsum((G ** q)[::-1], axis=0)[::-1] ** (p / q)
            vec = acc @ w
            store = fmass
        C = R
        while C.j >= top:
            if C in store:
                store[C] = store[C] + vec
            else:
                store[C] = vec.copy()
            C = C.parent()
    best = 0.0
    store = bmass if sp.family == "B" else fmass
    for P, vec in store.items():
        if not allowed(P.j):
            continue
        i0 = P.j - lo
        if i0 >= nl:
            continue
        if sp.family == "B":
            masses = np.maximum(vec[i0:], 0.0)
            if math.isinf(q):
                val = float(np.max(masses)) ** (1.0 / p)
            else:
                val = float(np.sum(masses ** (q / p))) ** (1.0 / q)
        else:
            val = float(max(vec[i0], 0.0)) ** (1.0 / p)
        val *= P.volume ** (-sp.tau)
        best = max(best, val)
    return best * scale


def _pieces(t: SequenceField, sp: SpaceParams, weighting, subset_child: Optional[int] = None):
    if not sp.homogeneous and any(Q.j < 0 for Q in t.cubes):
        raise ValueError("inhomogeneous spaces need support in levels j >= 0")
    out = []
    for Q, v in zip(t.cubes, t.values):
        if not np.any(v):
            continue
        amp = 2.0 ** (Q.j * sp.s) * Q.volume ** -0.5
        if isinstance(weighting, ReducingFamily):
            vec = weighting[Q] @ v
        else:
            vec = v
        region = Q if subset_child is None else Q.child(subset_child)
        out.append(_Piece(region, Q.j, amp, vec))
    return out


def seq_norm(t: SequenceField, sp: SpaceParams, weighting: Weighting = None, p_range: str = "all") -> float:
    """``a^{s,tau}_{p,q}`` norm of ``t``; ``weighting`` selects the flavor.

    ``None`` is unweighted, a :class:`ReducingFamily` gives the averaging
    norm with ``A_Q`` and a :class:`Pointwise` the norm with ``W^{1/p}(x)``.
    With ``p_range="all"`` the supremum runs over every dyadic ``P`` (exact,
    as the support is finite); ``"window"`` restricts ``P`` to window levels.
    """
    if len(t.window) == 0:
        raise ValueError("empty window")
    _check_weighting(weighting, sp, t.m)
    return _evaluate(_pieces(t, sp, weighting), sp, t.window, weighting, p_range)


def subset_norm(t: SequenceField, sp: SpaceParams, child: int = 0, p_range: str = "all") -> float:
    """Unweighted norm with each ``1_Q`` replaced by ``1_{E_Q}``, ``E_Q`` the given child of ``Q``.

    ``|E_Q| = 2^{-n} |Q|``; the normalization ``2^{j(s+n/2)}`` is unchanged.
    """
    _check_weighting(None, sp, t.m)
    return _evaluate(_pieces(t, sp, None, subset_child=child), sp, t.window, None, p_range)


# ----------------------------------------------------------------------------
# maximal sequences and experiments


def maximal_sequence(t: SequenceField, r: float, lam: float) -> SequenceField:
    """``t*_{r,lam}`` on the window cubes of every level that carries support."""
    if r <= 0:
        raise ValueError("r must be positive")
    if lam <= t.n:
        raise ValueError("lambda must exceed n")
    mags = np.linalg.norm(t.values, axis=1)
    out_cubes, out_vals = [], []
    for j in sorted({Q.j for Q in t.cubes}):
        idx = [i for i, Q in enumerate(t.cubes) if Q.j == j]
        src_k = np.array([t.cubes[i].k for i in idx], dtype=float)
        src_v = mags[idx] ** r
        targets = list(t.window.cubes_at(j))
        tk = np.array([Q.k for Q in targets], dtype=float)
        # |x_R - x_Q| / l = |k_R - k_Q|
        dist = np.linalg.norm(tk[:, None, :] - src_k[None, :, :], axis=2)
        vals = ((1.0 + dist) ** (-lam) @ src_v) ** (1.0 / r)
        out_cubes.extend(targets)
        out_vals.extend(vals)
    if not out_cubes:
        return SequenceField.zeros(t.window, 1)
    return SequenceField(t.window, tuple(out_cubes), np.array(out_vals)[:, None])


def maximal_ratio(t: SequenceField, sp: SpaceParams, fam: ReducingFamily, lam: float) -> float:
    """``||{|A_Q t_Q|}*_{p^q, lam}|| / ||t||_{a(A)}``."""
    reduced = t.map_values(lambda Q, v: np.array([np.linalg.norm(fam[Q] @ v)]))
    star = maximal_sequence(reduced, min(sp.p, sp.q), lam)
    den = seq_norm(t, sp, fam)
    return seq_norm(star, sp, None) / den if den > 0 else 1.0


def embedding_norms(t: SequenceField, s: float, p: float, q: float, weighting: Weighting = None):
    """``(b^s_{p, p v q}, f^s_{p,q}, b^s_{p, p ^ q})`` norms at ``tau = 0``."""
    b_big = seq_norm(t, SpaceParams(s, 0.0, p, max(p, q), "B"), weighting)
    f_mid = seq_norm(t, SpaceParams(s, 0.0, p, q, "F"), weighting)
    b_small = seq_norm(t, SpaceParams(s, 0.0, p, min(p, q), "B"), weighting)
    return b_big, f_mid, b_small


def embedding_check(t: SequenceField, s: float, p: float, q: float, weighting: Weighting = None,
                    rtol: float = EMBEDDING_RTOL) -> bool:
    b_big, f_mid, b_small = embedding_norms(t, s, p, q, weighting)
    return b_big <= f_mid * (1 + rtol) and f_mid <= b_small * (1 + rtol)


def pointwise_vs_averaged(fields: Sequence[SequenceField], sp: SpaceParams, W: MatrixWeightSpec,
                          fam: ReducingFamily, quad: Optional[Quadrature] = None) -> tuple[float, float]:
    """Extreme ratios ``||t||_{a(W)} / ||t||_{a(A)}`` over a batch of fields."""
    pw = Pointwise(W, quad or fam.quad)
    ratios = []
    for t in fields:
        den = seq_norm(t, sp, fam)
        if den > 0:
            ratios.append(seq_norm(t, sp, pw) / den)
    if not ratios:
        raise ValueError("all fields vanish")
    return float(min(ratios)), float(max(ratios))


@dataclass
class EquivalenceReport:
    sp: SpaceParams
    band: tuple  # (min, max) on the base window
    band_doubled: tuple  # (min, max) on the doubled window

    @property
    def drift(self) -> float:
        return max(abs(self.band_doubled[0] / self.band[0] - 1.0),
                   abs(self.band_doubled[1] / self.band[1] - 1.0))

    def row(self) -> dict:
        return {"family": self.sp.family, "p": self.sp.p, "q": self.sp.q, "s": self.sp.s,
                "tau": self.sp.tau, "ratio_min": self.band[0], "ratio_max": self.band[1],
                "ratio_min_doubled": self.band_doubled[0], "ratio_max_doubled": self.band_doubled[1],
                "drift": self.drift}


def equivalence_band(sp: SpaceParams, W: MatrixWeightSpec, window: CubeWindow, count: int = 100,
                     seed: int = 0, method: str = "gram2", quad: Optional[Quadrature] = None,
                     density: float = 0.3) -> EquivalenceReport:
    """Pointwise-versus-averaged ratio band on ``window`` and on its spatial double.

    The doubled window sees the same base batch plus ``count`` fields drawn on
    the larger window, so drift measures how far new cubes widen the band.
    """
    quad = quad or Quadrature()
    fam = ReducingFamily(W, sp.p, method, quad)
    rng = np.random.default_rng(seed)
    base = [random_field(window, W.m, rng, density) for _ in range(count)]
    big = window.doubled()
    extra = [random_field(big, W.m, rng, density) for _ in range(count)]
    b0 = pointwise_vs_averaged(base, sp, W, fam, quad)
    b1 = pointwise_vs_averaged(extra, sp, W, fam, quad)
    return EquivalenceReport(sp, b0, (min(b0[0], b1[0]), max(b0[1], b1[1])))

