import math

import numpy as np
import pytest

from normsgd.rates import (
    NoGuaranteeError,
    chung_simulate,
    fit_loglog_slope,
    gamma1_log_rate,
    phi_rate,
    phi_threshold,
    phi_x_rate,
    psi_rate,
    psi_threshold,
    psi_x_rate,
    rate_surface,
    rate_surface_csv,
    tadic_psi_x_rate,
)


def test_psi_examples():
    assert psi_rate(1.0, 0.5) == 2.0
    assert psi_rate(1.0, 0.9) == pytest.approx(1.25)
    assert psi_x_rate(1.0, 0.9) == pytest.approx(0.125)
    r = 1.0
    th = psi_threshold(r)
    assert psi_rate(r, th) == 1.0 / (2 * th - 1)
    assert psi_x_rate(r, th) == (1 - th) / (2 * th - 1)


@pytest.mark.parametrize("args", [(0.5, 0.2), (1.0, 1.0), (1.0, -0.1)])
def test_psi_domain_errors(args):
    with pytest.raises(ValueError):
        psi_rate(*args)


def test_phi_examples():
    assert phi_rate(0.75, 0.0) == pytest.approx(0.5)
    assert phi_x_rate(0.75, 0.0) == pytest.approx(0.125)
    assert phi_rate(0.75, 0.8) == pytest.approx(0.25 / 0.6)
    assert phi_threshold(0.75) == 0.75
    assert phi_rate(0.75, 0.75) == pytest.approx(0.25 / 0.5)
    with pytest.raises(NoGuaranteeError):
        phi_rate(2.0 / 3.0, 0.3)
    with pytest.raises(ValueError):
        phi_x_rate(1.0, 0.3)


def test_branch_continuity_random():
    rng = np.random.default_rng(0)
    for r in rng.uniform(0.51, 5.0, 100):
        th = psi_threshold(r)
        if th < 1:
            assert 2 * r == pytest.approx(1 / (2 * th - 1), rel=1e-12)
            assert r - 0.5 == pytest.approx((1 - th) / (2 * th - 1), rel=1e-12)
    for g in rng.uniform(2 / 3 + 1e-6, 1 - 1e-6, 100):
        th = phi_threshold(g)
        assert 2 * g - 1 == pytest.approx((1 - g) / (2 * th - 1), rel=1e-12)
        assert 1.5 * g - 1 == pytest.approx((1 - th) * (1 - g) / (2 * th - 1), rel=1e-12)


def test_tadic_comparison_requires_r_above_one():
    assert tadic_psi_x_rate(2.0, 0.5) == 1.0
    assert tadic_psi_x_rate(2.0, 0.9) == pytest.approx(0.125)
    with pytest.raises(ValueError):
        tadic_psi_x_rate(1.0, 0.5)


def test_gamma1_log_rate_examples():
    d = gamma1_log_rate("iterate_dist", 0.1)
    assert (d.k_exponent, d.log_exponent) == (-0.5, pytest.approx(0.6))
    f = gamma1_log_rate("fnat_sq", 1.0)
    assert (f.k_exponent, f.log_exponent) == (-1.0, 2.0)
    assert f(math.e) == pytest.approx(1 / math.e)
    with pytest.raises(ValueError):
        gamma1_log_rate("psi_gap", 0.0)
    with pytest.raises(ValueError):
        gamma1_log_rate("other", 0.1)


def test_fit_loglog_slope_examples():
    k = np.arange(1, 1001)
    slope, r2 = fit_loglog_slope(np.column_stack([k, k**-0.5]))
    assert abs(slope + 0.5) < 1e-12 and r2 == pytest.approx(1.0)
    slope, _ = fit_loglog_slope(np.column_stack([k, np.full(k.size, 3.0)]))
    assert abs(slope) < 1e-12
    slope, _ = fit_loglog_slope(np.column_stack([k, k**-0.5 * (1 + 0.01 * np.sin(k))]))
    assert abs(slope + 0.5) <= 0.02
    for p in (-2.0, -0.3, 0.7):
        s, _ = fit_loglog_slope(np.column_stack([k, 5.0 * k**p]), burn_in=100)
        assert abs(s - p) < 1e-10


def test_fit_loglog_slope_errors():
    k = np.arange(1, 20)
    with pytest.raises(ValueError):
        fit_loglog_slope(np.column_stack([k, k - 5.0]))
    with pytest.raises(ValueError):
        fit_loglog_slope(np.column_stack([k, 1.0 / k]), burn_in=15)


def test_chung_examples():
    res = chung_simulate(lambda b: 2.0, lambda b: b * b, lambda k: k + 1.0, 1.0, 100_000)
    assert res.bounded
    # a_k ~ 2/k^2 so a_k b_k^2 / 2 approaches 1
    assert res.ratio[-1] == pytest.approx(1.0, rel=1e-3)
    geo = chung_simulate(lambda b: 4.0, lambda b: math.inf, lambda k: k + 1.0, 1.0, 50)
    np.testing.assert_allclose(geo.a, 0.75 ** np.arange(51), rtol=1e-12)
    with pytest.raises(ValueError):
        chung_simulate(lambda b: 0.25 * b, lambda b: b, lambda k: float(k), 1.0, 10)


def test_rate_surface():
    rows = rate_surface([0.75, 1.0], [0.0, 0.8])
    assert rows[0] == {"gamma": 0.75, "theta": 0.0, "phi": pytest.approx(0.5), "phi_x": pytest.approx(0.125)}
    assert rows[2]["phi"] == 1.0 and math.isnan(rows[3]["phi"])
    text = rate_surface_csv([], [0.1])
    assert text == "gamma,theta,phi,phi_x\n"
