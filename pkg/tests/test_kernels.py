import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from ssips.kernels import (
    MomentConstraintError,
    PeriodOverlapError,
    averaged_weights,
    consistency_error,
    dirichlet_variant,
    make_kernel,
    neumann_variant,
    periodized_eval,
)
from ssips.reference import TrigPoly
from ssips.transport import Quadrature

EPANECHNIKOV = dict(preset="custom", pieces=[(-1, 1, (0.75, 0.0, -0.75))], parity="even")


def test_preset_moments():
    odd = make_kernel("odd_box", 0.1)
    assert odd.moments["z1"] == pytest.approx(-1.0, abs=1e-15)
    assert odd.c_eta == pytest.approx(1 / 3, abs=1e-15)
    even = make_kernel("even_box", 0.1)
    assert even.m2 == pytest.approx(1 / 3, abs=1e-15)
    assert even.m4 == pytest.approx(1 / 5, abs=1e-15)
    up = make_kernel("upwind_box", 0.1)
    assert up.moments["z0"] == pytest.approx(1.0, abs=1e-15)
    assert up.moments["z1"] == pytest.approx(1.0, abs=1e-15)


def test_custom_kernel_moment_rejection():
    with pytest.raises(MomentConstraintError, match="int rho"):
        make_kernel(pieces=[(-1, 1, (1.0,))], parity="even")
    with pytest.raises(MomentConstraintError, match="int z eta"):
        make_kernel(pieces=[(-1, 0, (2.0,)), (0, 1, (-2.0,))], parity="odd")
    assert make_kernel(epsilon=0.2, **EPANECHNIKOV).m2 == pytest.approx(0.2, abs=1e-15)


def test_periodized_eval_examples():
    even = make_kernel("even_box", 0.1)
    assert periodized_eval(even, 0.95) == pytest.approx(5.0)
    assert periodized_eval(make_kernel("odd_box", 0.1), 0.0) == 0.0
    assert periodized_eval(even, 0.3) == 0.0
    assert periodized_eval(even, -0.35) == 0.0
    with pytest.raises(PeriodOverlapError, match="period overlap"):
        periodized_eval(make_kernel("even_box", 0.5), 0.1)


def test_even_box_closed_form_entries():
    wm = averaged_weights(make_kernel("even_box", 1 / 3), 1, "linear_generic", k=3)
    d = wm.dense
    assert np.allclose(np.diag(d), 1.5, atol=1e-12, rtol=0)
    assert np.allclose(d[~np.eye(3, dtype=bool)], 0.75, atol=1e-12, rtol=0)
    # 10^3 x 10^3 midpoint oracle on one off-diagonal and one diagonal block
    per = 1000
    s = (np.arange(per) + 0.5) / per / 3
    kf = make_kernel("even_box", 1 / 3)
    diag = periodized_eval(kf, s[:, None] - s[None, :]).mean()
    off = periodized_eval(kf, s[:, None] - (s[None, :] + 1 / 3)).mean()
    assert diag == pytest.approx(1.5, abs=1e-3) and off == pytest.approx(0.75, abs=1e-3)


@pytest.mark.parametrize("k", [2, 3])
@pytest.mark.parametrize("m", [1, 3, 5])
@pytest.mark.parametrize("eps", [2.0**-2, 2.0**-4])
def test_row_sums(k, m, eps):
    even = averaged_weights(make_kernel("even_box", eps), m, "heat", k=k, kappa=1.0)
    assert np.allclose(even.weighted_row_sums() / even.prefactor, 1.0, atol=1e-10, rtol=0)
    odd = averaged_weights(make_kernel("odd_box", eps), m, "transport", k=k)
    assert np.max(np.abs(odd.weighted_row_sums())) < 1e-10


@given(st.integers(2, 3), st.integers(1, 6), st.floats(0.02, 0.49))
@settings(max_examples=40, deadline=None)
def test_parity_transfer(k, m, eps):
    odd = averaged_weights(make_kernel("odd_box", eps), m, "transport", k=k).dense
    assert np.max(np.abs(odd + odd.T)) <= 1e-12 * max(1.0, np.max(np.abs(odd)))
    even = averaged_weights(make_kernel("even_box", eps), m, "heat", k=k, kappa=1.0).dense
    assert np.max(np.abs(even - even.T)) <= 1e-12 * max(1.0, np.max(np.abs(even)))
    assert np.min(even) >= -1e-14


def test_period_overlap_rejected():
    with pytest.raises(PeriodOverlapError, match="period overlap"):
        averaged_weights(make_kernel("even_box", 0.5), 3, "heat", kappa=1.0)


@pytest.mark.parametrize("preset,mode,a", [("odd_box", "transport", 2), ("even_box", "linear_generic", 1)])
def test_scaling_identity(preset, mode, a):
    # E depends on eps / h only, up to the eps^-a amplitude
    coarse = averaged_weights(make_kernel(preset, 2.0**-3), 5, mode).dense
    fine = averaged_weights(make_kernel(preset, 2.0**-4), 6, mode).dense
    for d in range(-6, 7):
        assert fine[10, (10 - d) % 64] == pytest.approx(2**a * coarse[10, (10 - d) % 32], rel=1e-12, abs=1e-12)


def test_band_is_sparse_and_pruned():
    wm = averaged_weights(make_kernel("even_box", 2.0**-6), 8, "heat", kappa=1.0)
    assert wm.band <= 5
    row = wm.dense[100]
    nz = np.nonzero(row)[0]
    assert np.all(np.minimum(np.abs(nz - 100), 256 - np.abs(nz - 100)) <= wm.band)


def test_quadrature_fallback_close_to_exact():
    kf = make_kernel(epsilon=0.125, **EPANECHNIKOV)
    exact = averaged_weights(kf, 5, "linear_generic").dense
    approx = averaged_weights(kf, 5, "linear_generic", quad=Quadrature(16)).dense
    assert np.max(np.abs(exact - approx)) < 1e-3 * np.max(exact)


def test_upwind_coefficients_orientation():
    # sum_v a_wv = nu_w^-1 int_{Q_w} int_0^inf rho_eps = 1 / eps for the eps^-2 scaling
    wm = averaged_weights(make_kernel("upwind_box", 2.0**-4), 5, "upwind")
    d = wm.dense
    assert np.allclose(d.sum(axis=1), 16.0, atol=1e-12, rtol=0)
    # cell w couples to cells downstream (larger index)
    assert d[10, 11] > 0 and d[10, 9] == 0


def test_dirichlet_examples():
    wm = dirichlet_variant(make_kernel("even_box", 1 / 3), 1, k=3)
    assert wm.absorption[0] == pytest.approx(0.25, abs=1e-14)
    assert wm.absorption[2] == pytest.approx(0.25, abs=1e-14)
    assert np.allclose(wm.weighted_row_sums() + wm.absorption, 1.0, atol=1e-10, rtol=0)
    wm = dirichlet_variant(make_kernel("even_box", 0.05), 5)
    interior = np.arange(32)
    far = (interior >= 2) & (interior <= 29)
    assert np.all(wm.absorption[far] == 0)
    assert np.all(wm.absorption >= 0)
    assert np.allclose(wm.weighted_row_sums() + wm.absorption, 1.0, atol=1e-10, rtol=0)


def epanechnikov_cdf(t):
    t = min(max(t, -1.0), 1.0)
    return 0.5 + 0.75 * t - 0.25 * t**3


def reflected_entry(eps, a, b, h):
    """Neumann pair average with y reflected at 0 and 1: closed-form inner integral, adaptive outer."""
    R = lambda t: epanechnikov_cdf(t / eps)

    def inner(x):
        direct = R(x - b) - R(x - b - h)
        left = R(x + b + h) - R(x + b)
        right = R(x + b + h - 2) - R(x + b - 2)
        return direct + left + right

    val, _ = quad(inner, a, a + h, epsabs=1e-14, epsrel=1e-14, limit=200)
    return val / h**2


def test_neumann_boundary_vs_reflection_oracle():
    kf = make_kernel(epsilon=0.3, **EPANECHNIKOV)
    wm = neumann_variant(kf, 2)
    d = wm.dense
    h = 0.25
    for w in range(4):
        for v in range(4):
            assert d[w, v] == pytest.approx(reflected_entry(0.3, w * h, v * h, h), abs=1e-8)


def test_neumann_preserves_constants():
    for eps in (0.05, 0.3, 0.7):
        wm = neumann_variant(make_kernel("even_box", eps), 4, kappa=1.0)
        assert np.allclose(wm.weighted_row_sums() / wm.prefactor, 1.0, atol=1e-12, rtol=0)
    with pytest.raises(ValueError):
        neumann_variant(make_kernel("even_box", 1.2), 3)


def test_neumann_interior_matches_whole_line():
    kf = make_kernel("even_box", 0.05)
    neu = neumann_variant(kf, 6).dense
    per = averaged_weights(kf, 6).dense
    assert np.array_equal(neu[20:44, 20:44], per[20:44, 20:44])


def test_weight_csv(tmp_path):
    wm = averaged_weights(make_kernel("even_box", 0.25), 2, "heat", kappa=1.0)
    wm.to_csv(tmp_path / "w.csv", tmp_path / "w.json")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "row_word,col_word,value"
    assert len(lines) - 1 == np.count_nonzero(wm.dense)
    hdr = json.loads((tmp_path / "w.json").read_text())
    assert hdr["mode"] == "heat" and hdr["prefactor"] == pytest.approx(96.0)


SIN = TrigPoly(0.0, {}, {1: 1.0})


def test_heat_consistency_ratio():
    kf = make_kernel("even_box", 2.0**-4)
    e1 = consistency_error(kf, "heat", SIN)
    e2 = consistency_error(kf.with_epsilon(2.0**-5), "heat", SIN)
    assert e1 / e2 == pytest.approx(4.0, rel=0.15)
    # closed form kappa xi^4 eps^2 / 20 in grid rms
    xi = 2 * math.pi
    assert e1 == pytest.approx(xi**4 * 2.0**-8 / 20 / math.sqrt(2), rel=0.02)


def test_transport_consistency_bound():
    for eps in (0.1, 0.05, 0.01):
        kf = make_kernel("odd_box", eps)
        err = consistency_error(kf, "transport", SIN)
        upp = (2 * math.pi) ** 2 / math.sqrt(2)
        assert err <= kf.c_eta * eps * upp


@pytest.mark.parametrize("preset,mode", [("even_box", "heat"), ("odd_box", "transport"),
                                          ("odd_box", "burgers"), ("upwind_box", "upwind")])
def test_constants_are_annihilated(preset, mode):
    assert consistency_error(make_kernel(preset, 0.05), mode, TrigPoly(2.0)) < 1e-12
