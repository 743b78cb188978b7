import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chi2_cdf, tau_grid_2x2
from sdrdiv import diversity as dv
from sdrdiv import sdp
from sdrdiv.model import ChannelConfig, draw_channel
from sdrdiv.numerics import RngStream


def _channels(n, m, count, seed):
    s = RngStream(seed, 41)
    return np.array([draw_channel(ChannelConfig(n, m), s) for _ in range(count)])


def test_tau_examples():
    assert dv.compute_tau(np.eye(2)).tau == pytest.approx(1.0, abs=1e-7)
    assert dv.compute_tau(3 * np.eye(2)).tau == pytest.approx(9.0, abs=1e-6)
    assert dv.compute_tau([[2.0]]).tau == 4.0
    with pytest.raises(ValueError):
        dv.compute_tau([[np.nan, 1.0]])


def test_tau_matches_y_space_grid():
    H = np.array([[1.0, 0.0], [0.0, 0.1]])
    grid = tau_grid_2x2(H.T @ H)
    # frozen oracle value: the rank-one point on the weak column
    assert grid == pytest.approx(0.01, abs=1e-12)
    assert dv.compute_tau(H).tau == pytest.approx(grid, abs=1e-3)
    for Hk in _channels(2, 2, 10, 1):
        assert dv.compute_tau(Hk).tau == pytest.approx(tau_grid_2x2(Hk.T @ Hk), abs=1e-3)


def test_tau_result_invariants():
    for H in _channels(3, 3, 20, 2):
        r = dv.compute_tau(H)
        assert r.status == sdp.CONVERGED
        assert r.tau >= -1e-8
        M = dv.hyperplane_matrix(3)
        np.testing.assert_allclose(r.Y, M @ r.X @ M.T, atol=1e-9)
        assert abs(np.trace(r.Y) - 1.0) <= 1e-8
        assert dv.lemma5_feasible(r.Y, tol=1e-7)


def test_tau_scaling():
    for H in _channels(3, 2, 5, 3):
        base = dv.compute_tau(H).tau
        for c in (0.1, 10.0, 1e3):
            assert dv.compute_tau(c * H).tau == pytest.approx(c * c * base, rel=1e-6)


def test_rank_one_examples():
    Ys = dv.enumerate_rank_one(2)
    assert len(Ys) == 3
    # s = (1, -1) is code 0b10 in candidate order
    assert any(np.array_equal(Y, [[0, 0], [0, 1]]) for Y in Ys)
    Y3 = dv.enumerate_rank_one(3)
    assert len(Y3) == 7
    for i in range(7):
        for j in range(i + 1, 7):
            assert np.abs(Y3[i] - Y3[j]).max() > 1e-12
    for m in (1, 17):
        with pytest.raises(ValueError):
            dv.enumerate_rank_one(m)


def test_rank_one_points_are_feasible():
    for m in (2, 3, 4, 5, 6):
        Ys = dv.enumerate_rank_one(m)
        assert len(Ys) == 2 ** m - 1
        for Y in Ys:
            assert abs(np.trace(Y) - 1) <= 1e-10
            assert np.linalg.matrix_rank(Y, tol=1e-10) == 1
            assert dv.lemma5_feasible(Y, tol=1e-9)


def test_tau_rank_one_examples():
    assert dv.tau_rank_one(np.eye(2)) == pytest.approx(1.0)
    H = np.array([[1.0, 0.0, 0.3], [0.5, 0.0, 1.0]])
    assert dv.tau_rank_one(H) == 0.0
    Q = H.T @ H
    direct = min(np.sum(Q * Y) for Y in dv.enumerate_rank_one(3))
    assert dv.tau_rank_one(H) == pytest.approx(direct, abs=1e-15)
    with pytest.raises(ValueError):
        dv.tau_rank_one(np.ones((2, 1)))


def test_containment_1000_channels():
    for m in (2, 3):
        H = _channels(m, m, 500, 4 + m)
        r = dv.compute_tau_batch(H)
        assert np.all(r.status == sdp.CONVERGED)
        assert np.all(r.tau <= dv.tau_rank_one_batch(H) + 1e-6)


def test_lemma5_examples():
    assert dv.lemma5_feasible([[0.0, 0.0], [0.0, 1.0]])
    assert dv.lemma5_feasible(0.5 * np.eye(2))
    Y = np.array([[0.8, 0.39], [0.39, 0.2]])
    d = np.diag(Y)
    assert np.linalg.det(Y - np.outer(d, d) / 4) == pytest.approx(-0.0009, abs=1e-12)
    assert not dv.lemma5_feasible(Y)
    assert not dv.lemma5_feasible(np.eye(2))


def test_lemma1_examples():
    H = np.array([[1.0, 0.2], [0.1, 0.8]])
    ok, tau, energy = dv.lemma1_certificate(H, np.zeros(2))
    assert ok and tau > 0 and energy == 0.0
    ok, _, energy = dv.lemma1_certificate(H, np.full(2, 1e3 * math.sqrt(tau)))
    assert not ok and energy > 1e6 * tau
    with pytest.raises(ValueError):
        dv.lemma1_certificate(H, np.zeros(3))


def test_lemma1_certificate_is_never_wrong_small():
    # the full 10^4-instance run lives in the acceptance suite
    from sdrdiv.detectors import round_sign
    rng = RngStream(5, 42)
    certified = 0
    for m in (2, 3):
        H = _channels(m, m, 300, 10 + m)
        tau = dv.compute_tau_batch(H).tau
        v = rng.normal(300 * m).reshape(300, m) / math.sqrt(10.0)
        y = np.einsum("bij,j->bi", H, np.ones(m)) + v
        X = sdp.solve_batch(sdp.build_lift(H, y)).X
        ok = tau > 4 * np.sum(v ** 2, axis=1)
        certified += ok.sum()
        assert np.all(round_sign(X[ok]) == 1.0)
    assert certified > 50


def test_zeta_examples():
    z = dv.zeta_exponent(4, 4)
    assert (z.zeta, z.theorem2_d, z.nontrivial) == (2.0, 2.0, True)
    assert dv.zeta_exponent(3, 4).zeta == 1.0
    z = dv.zeta_exponent(2, 4)
    assert z.zeta == -0.5 and not z.nontrivial
    assert dv.zeta_exponent(2, 2).mmse_zf_diversity == 0.5
    assert dv.zeta_exponent(5, 2).zeta == 2.5
    with pytest.raises(ValueError):
        dv.zeta_exponent(0, 2)


def test_zeta_square_and_closed_form():
    for n in range(1, 17):
        assert dv.zeta_exponent(n, n).zeta == n / 2
    for n in range(1, 17):
        for m in range(1, 17):
            z = dv.zeta_exponent(n, m)
            assert z.zeta == pytest.approx(z.theorem2_d, abs=1e-12)
            assert z.mmse_zf_diversity == (n - m + 1) / 2
            if n >= m:
                assert z.zeta == n / 2


def test_fit_slope_examples():
    slope, err = dv.fit_slope([(r, r ** -2.0) for r in (10.0, 100.0, 1000.0)])
    assert slope == pytest.approx(2.0, abs=1e-12) and err == pytest.approx(0.0, abs=1e-12)
    slope, _ = dv.fit_slope([(r, 0.3) for r in (10.0, 100.0, 1000.0)])
    assert slope == pytest.approx(0.0, abs=1e-12)
    assert dv.fit_slope([(1.0, 0.5), (10.0, 0.05)]) == (pytest.approx(1.0), 0.0)
    with pytest.raises(dv.InsufficientData):
        dv.fit_slope([(1.0, 0.5), (10.0, 0.0)])
    with pytest.raises(dv.InsufficientData):
        dv.fit_slope([(2.0, 0.5), (2.0, 0.1)])


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(0.1, 4.0), st.lists(st.floats(0.5, 8.0), min_size=2, max_size=6, unique=True))
def test_fit_slope_prefactor_invariance(c, d, logs):
    pts = [(10.0 ** x, c * (10.0 ** x) ** -d) for x in sorted(logs)]
    assert dv.fit_slope(pts)[0] == pytest.approx(d, abs=1e-9)


def test_report_rejects_unordered_scales():
    with pytest.raises(ValueError):
        dv.ExponentReport([dv.TailPoint(10.0, 0.1, 5, 10), dv.TailPoint(1.0, 1.0, 5, 10)], 0.0, 0.0)


def test_tau_tail_examples():
    cfg = ChannelConfig(2, 2)
    with pytest.raises(dv.InsufficientData):
        dv.estimate_tau_tail(cfg, [1e-6], 10, RngStream(1, 2))
    rep = dv.estimate_tau_tail(cfg, [1e3, 1e2], 200, RngStream(1, 2))
    assert rep.points[0].probability == 1.0
    assert [p.scale for p in rep.points] == [1e-3, 1e-2]
    with pytest.raises(ValueError):
        dv.estimate_tau_tail(cfg, [1e-2, 1e-1], 10, RngStream(1))


def test_tau_tail_chunking_is_invisible():
    cfg = ChannelConfig(2, 2)
    a = dv.estimate_tau_tail(cfg, [1.0, 0.1], 5000, RngStream(3, 4))
    s = RngStream(3, 4)
    H = np.array([draw_channel(cfg, s) for _ in range(5000)])
    tau = dv.compute_tau_batch(H).tau
    assert [p.hits for p in a.points] == [int(np.sum(tau <= 1.0)), int(np.sum(tau <= 0.1))]


def test_chi2_tail_against_exact_cdf():
    rhos = [10.0, 100.0, 1000.0]
    rep = dv.chi2_tail_check(2, 1.0, rhos, 2 * 10 ** 5, RngStream(7, 1))
    for p in rep.points:
        exact = chi2_cdf(2, p.threshold)
        assert exact == pytest.approx(1 - math.exp(-p.threshold / 2), rel=1e-12)
        sd = math.sqrt(exact * (1 - exact) / p.trials)
        if p.hits >= 10:
            assert abs(p.probability - exact) <= 4 * sd
    assert rep.slope == pytest.approx(1.0, abs=0.3)
    flat = dv.chi2_tail_check(2, -1.0, rhos, 10 ** 4, RngStream(7, 2))
    assert flat.slope == pytest.approx(0.0, abs=0.01)
    with pytest.raises(dv.InsufficientData):
        dv.chi2_tail_check(6, 1.0, [1e3, 1e4], 100, RngStream(1))


def test_full_rank_bound():
    # Y >= cI gives tr(QY) >= c tr(Q) = c ||H||_F^2
    rng = np.random.default_rng(9)
    for _ in range(500):
        m = int(rng.integers(2, 5))
        H = rng.standard_normal((m, m))
        B = rng.standard_normal((m, m))
        c = float(rng.uniform(0, 1))
        Y = B @ B.T + c * np.eye(m)
        assert np.trace(H.T @ H @ Y) >= c * np.sum(H ** 2) - 1e-12


def test_full_rank_energy_tail():
    # P(||H||^2 <= eps) ~ eps^(mn/2) with mn = 4
    rep = dv.chi2_tail_check(4, 1.0, [10 ** 0.5, 10.0, 10 ** 1.5], 10 ** 6, RngStream(8, 4))
    assert rep.slope == pytest.approx(2.0, abs=0.3)
