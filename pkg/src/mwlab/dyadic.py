"""Dyadic cube lattice on R^n.

A cube ``Q_{j,k} = 2^{-j}([0,1)^n + k)`` is stored by its integer data
``(j, k)`` so that all lattice logic (containment, children, ancestors) is
exact.  Floating point only appears when geometry is handed to quadrature.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

MAX_DIM = 3
# children() refuses to enumerate more than this many cubes
MAX_CHILDREN = 1 << 22


class WindowTooDeep(ValueError):
    """Raised when a refinement would enumerate an unreasonable number of cubes."""


@dataclass(frozen=True, order=True)
class CubeIndex:
    j: int
    k: tuple[int, ...]

    def __post_init__(self):
        if not 1 <= len(self.k) <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {len(self.k)}")

    @classmethod
    def of(cls, j: int, *k: int) -> "CubeIndex":
        return cls(int(j), tuple(int(v) for v in k))

    @property
    def n(self) -> int:
        return len(self.k)

    @property
    def edge(self) -> float:
        return math.ldexp(1.0, -self.j)

    @property
    def volume(self) -> float:
        return math.ldexp(1.0, -self.j * self.n)

    @property
    def corner(self) -> np.ndarray:
        return np.ldexp(np.asarray(self.k, dtype=float), -self.j)

    @property
    def center(self) -> np.ndarray:
        return self.corner + 0.5 * self.edge

    def corner_exact(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(v) * Fraction(2) ** (-self.j) for v in self.k)

    def parent(self, levels: int = 1) -> "CubeIndex":
        if levels < 0:
            raise ValueError("levels must be nonnegative")
        return CubeIndex(self.j - levels, tuple(v >> levels for v in self.k))

    def ancestor_at(self, j: int) -> "CubeIndex":
        if j > self.j:
            raise ValueError(f"level {j} is finer than {self.j}")
        return self.parent(self.j - j)

    def contains(self, other: "CubeIndex") -> bool:
        """True when ``other`` is a (non-strict) dyadic descendant of self."""
        return other.j >= self.j and other.ancestor_at(self.j) == self

    def child(self, index: int) -> "CubeIndex":
        """The child with bit ``i`` of ``index`` selecting the upper half on axis i."""
        return CubeIndex(self.j + 1, tuple(2 * v + ((index >> i) & 1) for i, v in enumerate(self.k)))

    def __str__(self) -> str:
        return f"Q[{self.j};{','.join(map(str, self.k))}]"


def cube_geometry(Q: CubeIndex) -> tuple[np.ndarray, float, np.ndarray]:
    """Return ``(x_Q, edge, center)`` of a dyadic cube."""
    return Q.corner, Q.edge, Q.center


def children(Q: CubeIndex, N: int) -> list[CubeIndex]:
    """All ``2^{nN}`` cubes of level ``j+N`` tiling ``Q``, in lexicographic order."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    if N * Q.n > MAX_CHILDREN.bit_length() - 1:
        raise WindowTooDeep(f"{2 ** (N * Q.n)} children requested")
    base = [v << N for v in Q.k]
    offsets = range(1 << N)
    return [CubeIndex(Q.j + N, tuple(b + o for b, o in zip(base, off)))
            for off in itertools.product(offsets, repeat=Q.n)]


@dataclass(frozen=True)
class CubeWindow:
    """Finite truncation of the dyadic lattice.

    Level ``j`` keeps the cubes with ``|k|_inf <= R 2^{j - j_min}``, so every
    level covers (roughly) the same box ``[-R 2^{-j_min}, (R+1) 2^{-j_min}]^n``.
    With ``inhomogeneous`` set, sequences live on levels ``j >= 0`` only, while
    the supremum over ``P`` in the Morrey-type norms may still use coarser
    window levels.
    """

    n: int
    j_min: int
    j_max: int
    spatial_radius: int
    inhomogeneous: bool = False

    def __post_init__(self):
        if self.j_min > self.j_max:
            raise ValueError("j_min must not exceed j_max")
        if not 1 <= self.n <= MAX_DIM:
            raise ValueError(f"n must be in 1..{MAX_DIM}")
        if self.spatial_radius < 0:
            raise ValueError("spatial_radius must be nonnegative")
        if self.inhomogeneous and self.j_max < 0:
            raise ValueError("inhomogeneous window needs j_max >= 0")

    @property
    def levels(self) -> range:
        lo = max(self.j_min, 0) if self.inhomogeneous else self.j_min
        return range(lo, self.j_max + 1)

    def radius_at(self, j: int) -> int:
        return self.spatial_radius << (j - self.j_min)

    def cubes_at(self, j: int) -> Iterator[CubeIndex]:
        r = self.radius_at(j)
        for k in itertools.product(range(-r, r + 1), repeat=self.n):
            yield CubeIndex(j, k)

    def cubes(self) -> Iterator[CubeIndex]:
        """Deterministic enumeration, lexicographic in ``(j, k)``."""
        for j in self.levels:
            yield from self.cubes_at(j)

    def __len__(self) -> int:
        return sum((2 * self.radius_at(j) + 1) ** self.n for j in self.levels)

    def contains(self, Q: CubeIndex) -> bool:
        if Q.n != self.n or Q.j not in self.levels:
            return False
        r = self.radius_at(Q.j)
        return all(-r <= v <= r for v in Q.k)

    def allows_p_level(self, j: int) -> bool:
        return self.j_min <= j <= self.j_max

    def doubled(self) -> "CubeWindow":
        """Same levels, twice the spatial extent."""
        return CubeWindow(self.n, self.j_min, self.j_max, 2 * self.spatial_radius, self.inhomogeneous)


@dataclass(frozen=True)
class ShiftedCube:
    """The cube ``2^{-j}([0,1)^n + k + (-1)^j gamma)`` of a shifted dyadic system."""

    gamma: tuple[Fraction, ...]
    j: int
    k: tuple[int, ...]

    @property
    def edge(self) -> Fraction:
        return Fraction(2) ** (-self.j)

    def corner_exact(self) -> tuple[Fraction, ...]:
        sign = -1 if self.j % 2 else 1
        return tuple((kv + sign * g) * self.edge for kv, g in zip(self.k, self.gamma))

    def contains_box(self, corner: Sequence[Fraction], edge: Fraction) -> bool:
        L = self.edge
        return all(c <= a and a + edge <= c + L for c, a in zip(self.corner_exact(), corner))

    def as_cube_index(self) -> CubeIndex:
        if any(self.gamma):
            raise ValueError("only the unshifted system coincides with the standard lattice")
        return CubeIndex(self.j, self.k)


_THIRDS = (Fraction(0), Fraction(1, 3), Fraction(2, 3))


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def covering_shifted_cube(corner: Sequence, edge) -> tuple[tuple[Fraction, ...], ShiftedCube]:
    """Find a shifted dyadic cube ``S`` with ``Q ⊂ S`` and ``1.5 l(Q) < l(S) <= 3 l(Q)``.

    ``Q = corner + [0, edge)^n``.  Inputs may be floats (converted exactly) or
    Fractions.  The search runs over the three shifts per axis at the unique
    admissible level; axes decouple, so each axis picks its own shift.
    """
    ell = _as_fraction(edge)
    if ell <= 0:
        raise ValueError("edge must be positive")
    a = tuple(_as_fraction(c) for c in corner)
    # unique j with 2^{-j} in (1.5 ell, 3 ell]
    j = -math.floor(math.log2(3 * ell))
    while Fraction(2) ** (-j) > 3 * ell:
        j += 1
    while Fraction(2) ** (-j) <= Fraction(3, 2) * ell:
        j -= 1
    L = Fraction(2) ** (-j)
    sign = -1 if j % 2 else 1
    gamma, ks = [], []
    for ai in a:
        for g in _THIRDS:
            s = sign * g
            kv = math.floor(ai / L - s)
            c = (kv + s) * L
            if c <= ai and ai + ell <= c + L:
                gamma.append(g)
                ks.append(kv)
                break
        else:  # pragma: no cover - excluded by the three-shift covering property
            raise RuntimeError(f"no shifted cube covers the interval at {ai}")
    S = ShiftedCube(tuple(gamma), j, tuple(ks))
    return S.gamma, S
