import json

import pytest

from spreadperc import critical as C
from spreadperc.estimators import est_phi
from spreadperc.lattice import Box, LatticeSpec

D1 = LatticeSpec(1, 1)
D1L2 = LatticeSpec(1, 2)
SMALL = C.Budget(n0=512, n_max=8192)


@pytest.mark.parametrize("k,p", [(1, 0.5), (3, 0.8), (5, 0.9)])
def test_d1_box_functional(k, p):
    # phi(Box(k)) = 2 p^(k+1) on the line with L = 1
    e = est_phi(D1, Box(k), p, 20000, 3)
    assert e.within(2 * p ** (k + 1), 4.0)


def test_evaluate_box_sides():
    ev = C.evaluate_box(D1, 1.0, 4, 1.0, 1, SMALL)
    assert ev.side == 1 and ev.mean == 2.0 and ev.n_samples == 512
    ev = C.evaluate_box(D1, 0.5, 4, 1.0, 1, SMALL)
    assert ev.side == -1
    # 2 * 2^(-1/5)^5 = 1: the threshold itself cannot be resolved
    ev = C.evaluate_box(D1, 2 ** (-1 / 5), 4, 1.0, 1, C.Budget(256, 1024))
    assert ev.side == 0 and ev.n_samples == 1024


def test_evaluate_box_is_reproducible_across_chunking():
    a = C.evaluate_box(D1, 0.85, 3, 1.0, 9, C.Budget(128, 4096))
    b = C.evaluate_box(D1, 0.85, 3, 1.0, 9, C.Budget(a.n_samples, a.n_samples))
    assert (a.mean, a.stderr) == (b.mean, b.stderr)


def test_predicate_monotone_in_p():
    k_max = 4  # threshold p = 2^(-1/5) ~ 0.8706
    grid = [0.5, 0.7, 0.8, 0.95, 1.0]
    verdicts = [C.subcritical_predicate(D1, p, k_max, 5, SMALL) for p in grid]
    assert verdicts == [True, True, True, False, False]


def test_predicate_records_evaluations():
    rec = []
    assert C.subcritical_predicate(D1, 0.99, 3, 5, SMALL, rec) is False
    assert sorted(r["k"] for r in rec) == [1, 2, 3]
    assert all(r["side"] == 1 for r in rec)


def test_estimate_pc_d1_brackets_threshold():
    k_max = 5
    thr = 2 ** (-1 / (k_max + 1))
    r = C.estimate_pc(D1, (0.5, 1.0), k_max, C.Budget(256, 4096), 11, max_steps=12)
    assert r.p_low <= thr <= r.p_high
    assert r.p_high - r.p_low < 0.05
    assert r.notes
    # endpoints are certified by the recorded evaluations
    lo_evals = [e for e in r.evaluations if e["p"] == r.p_low]
    assert any(e["side"] < 0 for e in lo_evals)
    hi_evals = [e for e in r.evaluations if e["p"] == r.p_high]
    assert {e["k"] for e in hi_evals if e["side"] > 0} == set(range(1, k_max + 1))


def test_estimate_pc_rejects_bad_bracket():
    with pytest.raises(ValueError):
        C.estimate_pc(D1, (0.95, 1.0), 3, SMALL, 1)
    with pytest.raises(ValueError):
        C.estimate_pc(D1, (0.5, 0.6), 3, SMALL, 1)
    with pytest.raises(ValueError):
        C.estimate_pc(D1, (0.6, 0.5), 3, SMALL, 1)


def test_pc_estimate_json_round_trip():
    r = C.PcEstimate(0.1, 0.3, 12, 4096, 7, True, ["x"], [{"p": 0.1}])
    d = json.loads(json.dumps(r.to_json()))
    assert d["midpoint"] == pytest.approx(0.2)
    assert d["relative_width"] == pytest.approx(1.0)
    back = C.PcEstimate.from_json(d)
    assert back == r
    with pytest.raises(ValueError):
        C.PcEstimate(0.3, 0.3, 1, 1, 1)


def test_length_trivial_cases():
    assert C.length_of_p(D1, 0.0, 8, 1, SMALL).L_hat == 1
    assert C.length_of_p(D1L2, 0.05, 8, 1, SMALL).L_hat == 1
    r = C.length_of_p(D1, 0.99, 8, 1, SMALL)
    assert r.sentinel and r.label() == ">=8"
    with pytest.raises(ValueError):
        C.length_of_p(D1, 1.5, 8, 1)


@pytest.mark.parametrize("p", [0.6, 0.7, 0.8])
def test_length_search_matches_linear_scan(p):
    a = C.length_of_p(D1, p, 32, 2, SMALL)
    b = C.sharp_length_box_family(D1, p, 32, 2, SMALL)
    # crossing of 2 p^(k+1) below e^-2
    k = 1
    while 2 * p ** (k + 1) >= C.LENGTH_THRESHOLD:
        k += 1
    assert a.L_hat == b.L_hat == k
    # at p = 0.8 the box below the crossing sits at 0.1374, too close to resolve
    assert a.ambiguous == (p == 0.8)


def test_sweep_rows():
    rows = C.near_critical_sweep(D1, [0.2, 0.1], ["chi", "length", "phi_half"], 4, SMALL,
                                 p_c=1.0, n_list=[1, 2], N=2000, k_max=32)
    obs = [(r.eps, r.observable, r.n) for r in rows]
    assert obs[0][0] == 0.2  # largest eps first
    assert sum(1 for o in obs if o[1] == "phi_half") == 4
    chi = [r for r in rows if r.observable == "chi"]
    # chi at 0.9 exceeds chi at 0.8 on the line: (1+p)/(1-p)
    assert chi[1].mean > chi[0].mean
    assert chi[0].mean == pytest.approx(1.8 / 0.2, rel=0.1)
    with pytest.raises(ValueError):
        C.near_critical_sweep(D1, [0.1], ["bogus"], 1, SMALL, p_c=1.0)
    with pytest.raises(ValueError):
        C.near_critical_sweep(D1, [1.5], ["chi"], 1, SMALL, p_c=1.0)
