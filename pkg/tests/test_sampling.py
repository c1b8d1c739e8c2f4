import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spreadperc import sampling as S
from spreadperc.lattice import Packing

MASK = (1 << 64) - 1


# standalone re-implementation, written from the documented formulas
def _mix(z):
    z &= MASK
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & MASK
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def _stream(s, i):
    return _mix(s ^ _mix((i + 1) * 0x9E3779B97F4A7C15))


def _edge(k, a, b):
    a, b = min(a, b), max(a, b)
    return _mix((((a * 0x9E3779B97F4A7C15) & MASK) ^ k) + b * 0xD6E8FEB86659FD93)


def _ghost(k, v):
    return _mix(_mix(k ^ (v | 1 << 63)) ^ 0xD1B54A32D192ED03)


# frozen vectors (docs/mixing.md)
STREAM = 8069637894854739453
ORIGIN7 = 4620710844295151872
X7 = 4620640475550974209
EDGE7 = 2745292287239311319
EDGE1 = 5710489215734161269
GHOST7 = 17901026109205081972
GHOST1 = 2039388212646701006


def test_frozen_vectors_reference():
    assert _stream(12345, 7) == STREAM
    assert _edge(STREAM, ORIGIN7, X7) == EDGE7
    assert _edge(STREAM, 1 << 31, (1 << 31) + 1) == EDGE1
    assert _ghost(STREAM, ORIGIN7) == GHOST7
    assert _ghost(STREAM, 1 << 31) == GHOST1


def test_frozen_vectors_library():
    pk = Packing(7)
    assert pk.pack((0,) * 7) == ORIGIN7
    assert pk.pack((1, 0, 0, 0, 0, -2, 0)) == X7
    assert S.stream_key(12345, 7) == STREAM
    assert S.edge_hash(STREAM, ORIGIN7, X7) == EDGE7
    assert S.edge_hash(STREAM, X7, ORIGIN7) == EDGE7
    assert S.edge_hash(STREAM, 1 << 31, (1 << 31) + 1) == EDGE1
    assert S.ghost_hash(STREAM, ORIGIN7) == GHOST7
    assert S.ghost_hash(STREAM, 1 << 31) == GHOST1


def test_frozen_vectors_numba():
    s = S.nb_stream_key(np.uint64(12345), 7)
    assert int(s) == STREAM
    # Python ints at the boundary must give the same bits as uint64
    assert int(S.nb_ghost_hash(int(s), ORIGIN7)) == GHOST7
    assert int(S.nb_edge_hash(int(s), ORIGIN7, X7)) == EDGE7
    assert int(S.nb_edge_hash(s, np.int64(X7), np.int64(ORIGIN7))) == EDGE7
    assert int(S.nb_ghost_hash(s, np.int64(ORIGIN7))) == GHOST7


keys = st.integers(0, (1 << 63) - 1)


@given(st.integers(0, MASK), st.integers(0, 2**40), keys, keys)
def test_python_and_numba_agree(seed, sample, a, b):
    s = S.stream_key(seed, sample)
    assert s == _stream(seed, sample) == int(S.nb_stream_key(np.uint64(seed), sample))
    assert S.edge_hash(s, a, b) == _edge(s, a, b) == int(S.nb_edge_hash(np.uint64(s), np.int64(a), np.int64(b)))
    assert S.ghost_hash(s, a) == _ghost(s, a) == int(S.nb_ghost_hash(np.uint64(s), np.int64(a)))


@given(st.floats(0, 1), st.integers(0, (1 << 64) - 1))
def test_threshold_matches_uniform_comparison(p, h):
    assert (S.to_uniform(h) < p) == ((h >> 11) < S.threshold(p))


def test_threshold_ends():
    assert S.threshold(0.0) == 0
    assert S.threshold(1.0) == 1 << 53


def test_edge_open_is_monotone_in_p():
    e = S.EdgeKey((0, 0), (1, -1))
    u = S.edge_uniform(5, 3, e)
    for p in np.linspace(0, 1, 41):
        assert S.edge_open(5, 3, e, p) == (u < p)
    assert not S.edge_open(5, 3, e, 0.0) and S.edge_open(5, 3, e, 1.0)


def test_edge_key_is_canonical():
    assert S.EdgeKey((1, 0), (0, 0)) == S.EdgeKey((0, 0), (1, 0))
    with pytest.raises(ValueError):
        S.EdgeKey((0,), (0,))
    with pytest.raises(ValueError):
        S.EdgeKey((0,), (0, 1))


def test_seed_validation():
    S.SeedSpec(0)
    S.SeedSpec(MASK)
    with pytest.raises(ValueError):
        S.SeedSpec(-1)
    with pytest.raises(ValueError):
        S.SeedSpec(MASK + 1)
    with pytest.raises(ValueError):
        S.edge_open(1, 0, S.EdgeKey((0,), (1,)), 1.5)
    with pytest.raises(ValueError):
        S.ghost_open(1, 0, S.GhostKey((0,)), -0.1)


def test_ghost_probability():
    assert S.ghost_probability(0.0) == 0.0
    assert math.isclose(S.ghost_probability(1.0), 1 - math.exp(-1))


def _chi2_uniform(u, bins=64):
    counts = np.bincount(np.minimum((u * bins).astype(int), bins - 1), minlength=bins)
    exp = len(u) / bins
    return float(((counts - exp) ** 2 / exp).sum())


def test_edge_uniforms_look_uniform():
    # consecutive packed keys are the worst case for weak mixing
    n = 200_000
    a = np.arange(n, dtype=np.int64) + (1 << 31)
    for s in (0, 1, 0xDEADBEEF):
        u = S.nb_edge_uniforms(np.uint64(S.stream_key(s, 0)), a, a + 1)
        # chi-square with 63 dof: mean 63, sd ~11.2; 130 is ~6 sd
        assert _chi2_uniform(u) < 130
        assert abs(u.mean() - 0.5) < 5 * math.sqrt(1 / 12 / n)


def test_ghost_uniforms_look_uniform():
    n = 200_000
    v = np.arange(n, dtype=np.int64)
    u = S.nb_ghost_uniforms(np.uint64(S.stream_key(9, 4)), v)
    assert _chi2_uniform(u) < 130


def test_streams_decorrelate_samples():
    a = np.arange(50_000, dtype=np.int64)
    u0 = S.nb_edge_uniforms(np.uint64(S.stream_key(3, 0)), a, a + 7)
    u1 = S.nb_edge_uniforms(np.uint64(S.stream_key(3, 1)), a, a + 7)
    assert abs(np.corrcoef(u0, u1)[0, 1]) < 5 / math.sqrt(len(a))
