"""Stateless, coupled randomness for edges and ghost links.

Every edge state is a pure function of ``(master_seed, sample, edge)``, so
an exploration may query edges in any order, any number of times, from any
worker, and always sees the same configuration.  Using one uniform per edge
for every ``p`` gives the standard monotone coupling: an edge open at ``p'``
is open at every ``p >= p'``.

Mixing function, version ``MIX_VERSION`` (all arithmetic mod 2**64)::

    mix64(z)      = splitmix64 finaliser
                    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
                    z ^= z >> 27; z *= 0x94D049BB133111EB
                    z ^= z >> 31
    stream(s, i)  = mix64(s ^ mix64((i + 1) * G))        G = 0x9E3779B97F4A7C15
    edge(k, a, b) = mix64(((a * G) ^ k) + b * C)         a < b packed endpoints
                                                         C = 0xD6E8FEB86659FD93
    ghost(k, v)   = mix64(mix64(k ^ (v | 2**63)) ^ GHOST_SALT)
    uniform(h)    = (h >> 11) * 2**-53

Packed keys are below 2**63, so the top bit separates ghost links from
edges.  The edge hash needs a single finaliser call, and because packed
keys are additive in offsets (``pack(x + delta) = pack(x) + pack(delta)``)
the products ``a * G`` and ``b * C`` of a neighbour split into a per-vertex
term plus a per-offset term that can be tabulated once.  Test vectors live in ``docs/mixing.md``
and the test-suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .lattice import Packing, Point

MIX_VERSION = "splitmix-edge-v1"

MASK64 = (1 << 64) - 1
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB
GOLDEN = 0x9E3779B97F4A7C15
EDGE_C = 0xD6E8FEB86659FD93
GHOST_TAG = 1 << 63
GHOST_SALT = 0xD1B54A32D192ED03
TWO53 = 1 << 53


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) <= MASK64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class EdgeKey:
    """An undirected edge with endpoints in canonical (packed) order."""

    a: Point
    b: Point

    def __post_init__(self):
        a, b = tuple(self.a), tuple(self.b)
        if len(a) != len(b):
            raise ValueError("endpoints have different dimensions")
        if a == b:
            raise ValueError("an edge needs two distinct endpoints")
        packing = Packing(len(a))
        if packing.pack(a) > packing.pack(b):
            a, b = b, a
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def packed(self) -> tuple[int, int]:
        packing = Packing(len(self.a))
        return packing.pack(self.a), packing.pack(self.b)


@dataclass(frozen=True)
class GhostKey:
    vertex: Point


def mix64(z: int) -> int:
    z &= MASK64
    z ^= z >> 30
    z = (z * M1) & MASK64
    z ^= z >> 27
    z = (z * M2) & MASK64
    z ^= z >> 31
    return z


def stream_key(seed: int, sample: int) -> int:
    return mix64(int(seed) ^ mix64((int(sample) + 1) * GOLDEN))


def edge_hash(stream: int, a: int, b: int) -> int:
    if a > b:
        a, b = b, a
    return mix64((((a * GOLDEN) & MASK64) ^ stream) + b * EDGE_C)


def ghost_hash(stream: int, v: int) -> int:
    return mix64(mix64(stream ^ (v | GHOST_TAG)) ^ GHOST_SALT)


def to_uniform(h: int) -> float:
    return (h >> 11) * 2.0**-53


def threshold(p: float) -> int:
    """Integer cut ``t`` with ``uniform < p  <=>  (h >> 11) < t``."""
    return math.ceil(float(p) * TWO53)


def ghost_probability(h: float) -> float:
    return -math.expm1(-h)


def _check_p(p):
    if not 0.0 <= p <= 1.0 or p != p:
        raise ValueError(f"p must lie in [0, 1], got {p!r}")


def _check_h(h):
    if not h >= 0.0:
        raise ValueError(f"ghost field must be nonnegative, got {h!r}")


def edge_uniform(seed: SeedSpec | int, sample: int, e: EdgeKey) -> float:
    s = seed.master_seed if isinstance(seed, SeedSpec) else seed
    a, b = e.packed()
    return to_uniform(edge_hash(stream_key(s, sample), a, b))


def edge_open(seed: SeedSpec | int, sample: int, e: EdgeKey, p: float) -> bool:
    _check_p(p)
    return edge_uniform(seed, sample, e) < p


def ghost_uniform(seed: SeedSpec | int, sample: int, g: GhostKey) -> float:
    s = seed.master_seed if isinstance(seed, SeedSpec) else seed
    v = Packing(len(g.vertex)).pack(g.vertex)
    return to_uniform(ghost_hash(stream_key(s, sample), v))


def ghost_open(seed: SeedSpec | int, sample: int, g: GhostKey, h: float) -> bool:
    _check_h(h)
    return ghost_uniform(seed, sample, g) < ghost_probability(h)


# --------------------------------------------------------------------------
# numba kernels (must agree bit-for-bit with the functions above)
# --------------------------------------------------------------------------

_M1 = np.uint64(M1)
_M2 = np.uint64(M2)
_G = np.uint64(GOLDEN)
_C = np.uint64(EDGE_C)
_TAG = np.uint64(GHOST_TAG)
_SALT = np.uint64(GHOST_SALT)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)


@nb.njit(inline="always", cache=True)
def nb_mix64(z):
    z = z ^ (z >> _S30)
    z = z * _M1
    z = z ^ (z >> _S27)
    z = z * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def nb_stream_key(seed, sample):
    return nb_mix64(np.uint64(seed) ^ nb_mix64((np.uint64(sample) + _ONE) * _G))


@nb.njit(inline="always", cache=True)
def nb_edge_hash(stream, a, b):
    if a > b:
        a, b = b, a
    return nb_mix64(((np.uint64(a) * _G) ^ np.uint64(stream)) + np.uint64(b) * _C)


@nb.njit(inline="always", cache=True)
def nb_ghost_hash(stream, v):
    return nb_mix64(nb_mix64(np.uint64(stream) ^ (np.uint64(v) | _TAG)) ^ _SALT)


@nb.njit(cache=True)
def nb_uniform_bits(h):
    return h >> _S11


@nb.njit(cache=True)
def nb_edge_uniforms(stream, a, b):
    """Vector form used by the uniformity tests."""
    out = np.empty(a.shape[0], np.float64)
    for i in range(a.shape[0]):
        out[i] = np.float64(nb_edge_hash(stream, a[i], b[i]) >> _S11) * 2.0**-53
    return out


@nb.njit(cache=True)
def nb_ghost_uniforms(stream, v):
    out = np.empty(v.shape[0], np.float64)
    for i in range(v.shape[0]):
        out[i] = np.float64(nb_ghost_hash(stream, v[i]) >> _S11) * 2.0**-53
    return out
