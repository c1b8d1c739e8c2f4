import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spreadperc import oracle as O
from spreadperc.lattice import Box, HalfSpace, LatticeSpec

S1, S2 = LatticeSpec(1, 1), LatticeSpec(1, 2)


def test_triangle_two_point():
    g = O.tiny_suite()["L2-triangle"]
    r = O.exact_observables(g, 0.5, None)
    # direct edge, or both edges through (1,) with the direct one closed
    assert r.tau[(2,)] == pytest.approx(0.625, abs=1e-15)
    assert r.tau[(1,)] == pytest.approx(0.625, abs=1e-15)
    assert r.tau[(0,)] == 1.0


def test_suite_sizes():
    suite = O.tiny_suite()
    assert all(g.n_edges <= 8 for g in suite.values())
    assert {g.spec.L for g in suite.values()} == {1, 2}
    assert suite["L2-segment-5"].n_edges == 7


def test_edges_must_match_stencil():
    with pytest.raises(ValueError):
        O.TinyGraph(S2, ((0,), (1,), (2,)), edges=(((0,), (1,)),))
    with pytest.raises(ValueError):
        O.TinyGraph(S1, ((1,), (2,)))
    with pytest.raises(O.EnumerationTooLarge):
        O.TinyGraph(S2, tuple((i,) for i in range(-6, 7)))


def test_single_edge_closed_forms():
    g = O.tiny_suite()["single-edge"]
    for p in (0.1, 0.5, 0.9):
        r = O.exact_observables(g, p, None)
        assert r.chi == pytest.approx(1 + p)
        # out-pairs counted on the lattice: 0 has -1 outside, 1 has 2 outside
        assert r.phi == pytest.approx(p * (1 + p))
        for h in (0.3, 1.0):
            q = -math.expm1(-h)
            exp = q + (1 - q) * p * q
            assert O.exact_observables(g, p, None, h).M == pytest.approx(exp, abs=1e-14)


def test_polynomial_matches_value_and_derivative():
    g = O.tiny_suite()["L2-segment-5"]
    f = lambda c: len(c.cluster())  # noqa: E731
    ev = O.exact_expectation(g, 0.3, 0.0, f)
    assert ev.at(0.3) == pytest.approx(ev.value, abs=1e-13)
    assert all(isinstance(c, int) for c in ev.coeffs)
    assert ev.coeffs[0] == 1
    for p in (0.2, 0.6):
        hstep = 1e-6
        fd = (O.exact_expectation(g, p + hstep, 0.0, f).value
              - O.exact_expectation(g, p - hstep, 0.0, f).value) / (2 * hstep)
        assert ev.derivative(p) == pytest.approx(fd, rel=1e-7)


def test_ghost_expectation_has_no_polynomial():
    g = O.tiny_suite()["single-edge"]
    ev = O.exact_expectation(g, 0.5, 0.2, lambda c: int(c.ghost_hit(c.cluster())))
    with pytest.raises(ValueError):
        ev.at(0.5)


def test_distribution_sums_to_one():
    g = O.tiny_suite()["L1-segment-5"]
    dist = O.exact_distribution(g, 0.37, lambda c: len(c.cluster()))
    assert math.fsum(dist.values()) == pytest.approx(1.0, abs=1e-14)
    assert set(dist) == {1, 2, 3, 4, 5}


@settings(max_examples=30, deadline=None)
@given(st.fractions(min_value=0, max_value=1, max_denominator=50))
def test_bernstein_conversion(p):
    A = [3, 0, 5, 1]
    m = len(A) - 1
    mono = O._bernstein_to_monomial(A, m)
    lhs = sum(a * p ** k * (1 - p) ** (m - k) for k, a in enumerate(A))
    rhs = sum(c * p ** t for t, c in enumerate(mono))
    assert Fraction(lhs) == Fraction(rhs)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(sorted(O.tiny_suite())), st.floats(0.02, 0.98))
def test_observable_relations(name, p):
    g = O.tiny_suite()[name]
    r = O.exact_observables(g, p, Box(1))
    assert p * r.psi <= r.phi + O.TOL
    assert 1.0 <= r.chi <= len(r.S) + 1e-12
    assert all(r.tau_S[x] <= r.tau[x] + 1e-15 for x in r.tau_S)


def test_bk_single_edge_cannot_occur_twice():
    # A o A for a single edge is impossible, so the left side is 0
    g = O.tiny_suite()["single-edge"]
    rep = O.bk_check(g, O.ConnEvent((0,), (1,)), O.ConnEvent((0,), (1,)))
    assert rep.passed
    assert all(lhs == 0.0 for _, lhs, _ in rep.rows)


def test_bk_triangle_disjoint_paths():
    g = O.tiny_suite()["L2-triangle"]
    rep = O.bk_check(g, O.ConnEvent((0,), (2,)), O.ConnEvent((0,), (2,)))
    # two edge-disjoint routes: the direct edge and the two-step path
    for p, lhs, rhs in rep.rows:
        assert lhs == pytest.approx(p * p * p, abs=1e-14)
    assert rep.passed


def test_box_halfspace_needs_symmetry_inputs():
    g = O.tiny_suite()["L2-box-1"]
    rep = O.box_halfspace_check(g, 0)
    assert rep.passed
    r = O.exact_observables(g, 0.5, HalfSpace(0))
    assert r.S == frozenset({(0,), (1,)})


def test_inequality_suite_passes():
    reports = O.run_inequality_suite()
    assert len(reports) >= 40
    failed = [r.name for r in reports if not r.passed]
    assert not failed
    kinds = {r.name.split(":")[1].split()[0] for r in reports}
    assert kinds == {"bk", "entropic", "psi-phi", "box-halfspace"}
