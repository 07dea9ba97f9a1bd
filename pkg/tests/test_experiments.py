import math

import numpy as np
import pytest

from ssips.experiments import (
    SweepSpec,
    consistency_sweep,
    fit_rate,
    galerkin_sweep,
    kernel_galerkin_sweep,
    random_vs_deterministic,
    run_two_scale,
)
from ssips.reference import ReferenceProblem, TrigPoly
from ssips.symbolic import sg_preset
from ssips.transport import exp_abs_coord_diff, exp_dist, fractal_cell_averages

COS = TrigPoly(0.0, {1: 1.0}, {})
SIN = TrigPoly(0.0, {}, {1: 1.0})
HALF_BOX = {"preset": "custom", "pieces": [(-0.5, 0.5, (1.0,))], "parity": "even"}


def heat_problem(horizon=0.5):
    return ReferenceProblem("heat", COS, horizon, kappa=0.05)


def test_fit_rate_exact_power():
    eps = 2.0 ** -np.arange(2, 8)
    slope, intercept, resid = fit_rate(eps, eps**2)
    assert abs(slope - 2.0) < 1e-12 and abs(intercept) < 1e-12 and resid < 1e-12


def test_fit_rate_degenerate_inputs():
    with pytest.raises(ValueError):
        fit_rate([0.1, 0.1, 0.1], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fit_rate([0.1, 0.2], [0.0, 1.0])
    with pytest.raises(ValueError):
        fit_rate([0.1], [1.0])


def test_fit_rate_noisy_synthetic():
    rng = np.random.default_rng(11)
    eps = 2.0 ** -np.arange(2, 10)
    err = 3 * eps**1.5 * (1 + 0.01 * rng.standard_normal(eps.size))
    slope, _, _ = fit_rate(eps, err)
    assert abs(slope - 1.5) < 0.05


def test_galerkin_sweep_linear():
    for k in (2, 3):
        rep = galerkin_sweep(lambda x: x, range(1, 6), k)
        assert np.allclose(rep.errors, [k**-m / math.sqrt(12) for m in range(1, 6)], atol=1e-12, rtol=0)
        assert rep.slope == pytest.approx(1.0, abs=1e-9)


def test_galerkin_sweep_constant_is_exact():
    rep = galerkin_sweep(lambda x: np.full(np.shape(x), 2.0), [1, 2, 3])
    assert rep.exact and rep.slope is None


def test_galerkin_sweep_sg_pullback_function():
    sg = sg_preset()
    fine = fractal_cell_averages(exp_abs_coord_diff, sg, 7, 1)
    rep = galerkin_sweep(fine, [2, 3, 4, 5], q=0.5)
    assert rep.strictly_decreasing()
    assert rep.slope > 0


def test_kernel_galerkin_sweep_sg():
    rep = kernel_galerkin_sweep(exp_dist, sg_preset(), [2, 3, 4, 5])
    assert rep.strictly_decreasing()
    assert rep.slope > 0


def test_heat_consistency_slope():
    rep = consistency_sweep("even_box", "heat", SIN, 2.0 ** -np.arange(3, 8), n=2**12)
    assert abs(rep.slope - 2.0) <= 0.2
    assert rep.slope <= 2.5


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(heat_problem(), [], epsilons=[0.1])
    with pytest.raises(ValueError):
        SweepSpec(heat_problem(), [2, 3], epsilons=[0.1], balanced="k^-m/2")
    with pytest.raises(ValueError):
        SweepSpec(heat_problem(), [2, 3])
    with pytest.raises(ValueError, match="inconsistent"):
        SweepSpec(heat_problem(), [2, 3], balanced="k^-m")
    spec = SweepSpec(heat_problem(), [2, 3], epsilons=[0.1, 0.2])
    assert spec.configurations() == [(2, 0.1), (2, 0.2), (3, 0.1), (3, 0.2)]


def test_small_heat_balanced_sweep():
    spec = SweepSpec(heat_problem(), [2, 3, 4], HALF_BOX, balanced="k^-m/2")
    rep = run_two_scale(spec)
    assert rep.strictly_decreasing()
    assert all(r["dt"] > 0 for r in rep.rows)


def test_invalid_configuration_raises():
    spec = SweepSpec(heat_problem(), [2, 3], epsilons=[0.6, 0.1])
    with pytest.raises(ValueError, match="period overlap"):
        run_two_scale(spec)


def test_sweep_determinism_and_threads(tmp_path):
    spec = SweepSpec(ReferenceProblem("transport", SIN, 0.25, b=TrigPoly(1.0)), [3, 4, 5], balanced="k^-m")
    a = run_two_scale(spec)
    b = run_two_scale(spec, threads=3)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    a.to_json(tmp_path / "a.json")
    b.to_json(tmp_path / "b.json")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "m,epsilon,N,dt,error,runtime_ms"


def test_surrogate_reference_isolates_galerkin_term():
    spec = SweepSpec(heat_problem(0.2), [2, 3, 4], HALF_BOX, epsilons=[0.25], reference="surrogate", surrogate_level=7)
    rep = run_two_scale(spec)
    assert rep.strictly_decreasing()
    assert rep.mean_reduction() > 1.5


def test_burgers_sweep_runs_both_schemes():
    prob = ReferenceProblem("burgers_smooth", TrigPoly(0.5, {}, {1: 0.25}), 0.3)
    for scheme in ("centered", "upwind"):
        rep = run_two_scale(SweepSpec(prob, [4, 5, 6], balanced="k^-m", scheme=scheme))
        assert rep.strictly_decreasing()


def test_random_vs_deterministic_trivial_cases():
    binary = lambda x, y: (x < 0.5).astype(float) * np.ones_like(y)
    rep = random_vs_deterministic(binary, levels=[1, 2], seeds=range(3), t_end=0.2, dt=0.05, samples=3)
    assert np.all(rep.errors == 0) and rep.exact
    ones = lambda x, y: np.ones(np.broadcast(x, y).shape)
    rep = random_vs_deterministic(ones, levels=[2, 3], seeds=range(3), t_end=0.2, dt=0.05, samples=3)
    # Gauss-Legendre averages of W = 1 are 1 up to one rounding of the weight sum
    assert np.all(rep.errors <= 1e-15)
