"""Geometry of the spread-out lattice.

Vertices are points of Z^d; two vertices are adjacent when their l-infinity
distance is between 1 and L.  Regions form a small closed algebra (full
space, centred boxes, half-spaces ``{x_1 >= -n}``, slabs ``{0 <= x_1 <= n}``,
complements of boxes/half-spaces, and intersections).  Every region
normalises to an axis-aligned product of intervals with at most one centred
box removed, which is what the exploration kernels consume.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

Point = tuple[int, ...]

# Stand-in for an unbounded side; far outside any packable coordinate.
INF = 1 << 40


@dataclass(frozen=True)
class LatticeSpec:
    d: int
    L: int

    def __post_init__(self):
        if not isinstance(self.d, int) or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if not isinstance(self.L, int) or self.L < 1:
            raise ValueError(f"spread must be a positive integer, got {self.L!r}")

    @property
    def degree(self) -> int:
        """Number of neighbours of any vertex, (2L+1)^d - 1."""
        return (2 * self.L + 1) ** self.d - 1

    @property
    def origin(self) -> Point:
        return (0,) * self.d


# --------------------------------------------------------------------------
# Regions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Bounds:
    """Normal form of a region: ``lo <= x <= hi`` coordinatewise, minus the
    centred box of radius ``hole`` when ``hole >= 0``."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]
    hole: int = -1

    def contains(self, x: Sequence[int]) -> bool:
        for xi, a, b in zip(x, self.lo, self.hi):
            if xi < a or xi > b:
                return False
        if self.hole >= 0 and max(abs(xi) for xi in x) <= self.hole:
            return False
        return True

    @property
    def bounded(self) -> bool:
        return all(a > -INF and b < INF for a, b in zip(self.lo, self.hi))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, int]:
        return (
            np.asarray(self.lo, dtype=np.int64),
            np.asarray(self.hi, dtype=np.int64),
            int(self.hole),
        )


class Region:
    """Base class of the region algebra."""

    def bounds(self, d: int) -> Bounds:
        raise NotImplementedError

    def __contains__(self, x) -> bool:
        return self.bounds(len(x)).contains(x)

    def __and__(self, other: "Region") -> "Intersect":
        return Intersect((self, other))


@dataclass(frozen=True)
class Full(Region):
    def bounds(self, d):
        return Bounds((-INF,) * d, (INF,) * d)


@dataclass(frozen=True)
class Box(Region):
    """The box [-n, n]^d."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("box radius must be nonnegative")

    def bounds(self, d):
        return Bounds((-self.n,) * d, (self.n,) * d)


@dataclass(frozen=True)
class HalfSpace(Region):
    """The translated half-space {x : x_1 >= -n}."""

    n: int

    def bounds(self, d):
        return Bounds((-self.n,) + (-INF,) * (d - 1), (INF,) * d)


@dataclass(frozen=True)
class Slab(Region):
    """The slab {x : 0 <= x_1 <= n}."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("slab width must be nonnegative")

    def bounds(self, d):
        return Bounds((0,) + (-INF,) * (d - 1), (self.n,) + (INF,) * (d - 1))


@dataclass(frozen=True)
class Complement(Region):
    """Complement of a half-space (a half-space in the other direction) or
    of a box (its exterior).  Other operands are not representable."""

    of: Union[HalfSpace, Box]

    def __post_init__(self):
        if not isinstance(self.of, (HalfSpace, Box)):
            raise TypeError("only HalfSpace and Box regions can be complemented")

    def bounds(self, d):
        if isinstance(self.of, HalfSpace):
            return Bounds((-INF,) * d, (-self.of.n - 1,) + (INF,) * (d - 1))
        return Bounds((-INF,) * d, (INF,) * d, hole=self.of.n)


@dataclass(frozen=True)
class Intersect(Region):
    parts: tuple[Region, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    def bounds(self, d):
        lo = [-INF] * d
        hi = [INF] * d
        hole = -1
        for part in self.parts:
            b = part.bounds(d)
            lo = [max(a, c) for a, c in zip(lo, b.lo)]
            hi = [min(a, c) for a, c in zip(hi, b.hi)]
            # centred holes are nested, so their union is the largest one
            hole = max(hole, b.hole)
        return Bounds(tuple(lo), tuple(hi), hole)


def contains(r: Region, x: Sequence[int]) -> bool:
    return r.bounds(len(x)).contains(x)


# --------------------------------------------------------------------------
# Neighbourhoods
# --------------------------------------------------------------------------


def stencil_offsets(spec: LatticeSpec) -> np.ndarray:
    """All nonzero offsets with |delta|_inf <= L, in lexicographic order,
    as an ``(degree, d)`` int64 array."""
    rng = range(-spec.L, spec.L + 1)
    offs = np.array(list(itertools.product(rng, repeat=spec.d)), dtype=np.int64)
    keep = np.any(offs != 0, axis=1)
    return offs[keep]


def neighbors(spec: LatticeSpec, x: Sequence[int]) -> Iterator[Point]:
    """Yield the neighbours of ``x`` in lexicographic offset order."""
    _check_dim(spec, x)
    rng = range(-spec.L, spec.L + 1)
    for delta in itertools.product(rng, repeat=spec.d):
        if any(delta):
            yield tuple(xi + di for xi, di in zip(x, delta))


def _overlap(a: int, b: int, c: int, e: int) -> int:
    return max(0, min(b, e) - max(a, c) + 1)


def stencil_count_inside(spec: LatticeSpec, b: Bounds, x: Sequence[int]) -> int:
    """Number of points y (x itself included) with |x-y|_inf <= L inside ``b``."""
    L = spec.L
    inside = 1
    for xi, lo, hi in zip(x, b.lo, b.hi):
        inside *= _overlap(xi - L, xi + L, lo, hi)
    if b.hole >= 0 and inside:
        h = b.hole
        removed = 1
        for xi, lo, hi in zip(x, b.lo, b.hi):
            removed *= _overlap(xi - L, xi + L, max(lo, -h), min(hi, h))
        inside -= removed
    return inside


def boundary_and_outdegree(spec: LatticeSpec, r: Region, x: Sequence[int]) -> tuple[bool, int]:
    """Inner-boundary flag and out-degree of ``x`` in ``r``.

    The boundary uses l1 unit neighbours; the out-degree counts L-stencil
    neighbours outside ``r``.
    """
    _check_dim(spec, x)
    b = r.bounds(spec.d)
    if not b.contains(x):
        raise ValueError(f"{tuple(x)} is not in {r}")
    on_boundary = False
    y = list(x)
    for i in range(spec.d):
        for step in (-1, 1):
            y[i] += step
            outside = not b.contains(y)
            y[i] -= step
            if outside:
                on_boundary = True
                break
        if on_boundary:
            break
    out = (2 * spec.L + 1) ** spec.d - stencil_count_inside(spec, b, x)
    return on_boundary, out


# --------------------------------------------------------------------------
# Packing
# --------------------------------------------------------------------------


class PackingOverflow(OverflowError):
    """A coordinate does not fit in the packed key layout."""


@dataclass(frozen=True)
class Packing:
    """Packed 63-bit keys for points of Z^d.

    Each coordinate gets ``bits = min(32, 63 // d)`` bits and is stored with
    a bias of ``2**(bits-1)``; coordinate ``i`` occupies bits
    ``[i*bits, (i+1)*bits)``.  Representable coordinates are
    ``[-2**(bits-1), 2**(bits-1) - 1]`` (d=7: 9 bits, [-256, 255]).
    Keys are nonnegative and ``pack(x + delta) == pack(x) + pack_offset(delta)``
    whenever both points are representable.
    """

    d: int

    @property
    def bits(self) -> int:
        return min(32, 63 // self.d)

    @property
    def bias(self) -> int:
        return 1 << (self.bits - 1)

    @property
    def coord_min(self) -> int:
        return -self.bias

    @property
    def coord_max(self) -> int:
        return self.bias - 1

    def pack(self, x: Sequence[int]) -> int:
        if len(x) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(x)}")
        key = 0
        for i, xi in enumerate(x):
            xi = int(xi)
            if xi < self.coord_min or xi > self.coord_max:
                raise PackingOverflow(
                    f"coordinate {xi} outside packable range [{self.coord_min}, {self.coord_max}] for d={self.d}"
                )
            key |= (xi + self.bias) << (self.bits * i)
        return key

    def unpack(self, key: int) -> Point:
        key = int(key)
        if key < 0 or key >= 1 << (self.bits * self.d):
            raise PackingOverflow(f"key {key} outside the packed range for d={self.d}")
        mask = (1 << self.bits) - 1
        return tuple(((key >> (self.bits * i)) & mask) - self.bias for i in range(self.d))

    def pack_offset(self, delta: Sequence[int]) -> int:
        return sum(int(di) << (self.bits * i) for i, di in enumerate(delta))


def pack(x: Sequence[int]) -> int:
    return Packing(len(x)).pack(x)


def unpack(key: int, d: int) -> Point:
    return Packing(d).unpack(key)


def _check_dim(spec: LatticeSpec, x: Sequence[int]) -> None:
    if len(x) != spec.d:
        raise ValueError(f"point {tuple(x)} does not have dimension {spec.d}")
