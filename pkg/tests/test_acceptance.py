"""Acceptance criteria 1-11, one test each; every test records a PASS/FAIL line."""

import json
import math

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from ssips.cli import main
from ssips.experiments import (
    SweepSpec,
    consistency_sweep,
    galerkin_sweep,
    kernel_galerkin_sweep,
    random_vs_deterministic,
    run_two_scale,
)
from ssips.ips import IpsSystem, integrate
from ssips.kernels import averaged_weights, dirichlet_variant, make_kernel
from ssips.reference import ReferenceProblem, TrigPoly
from ssips.symbolic import Partition, cell_measure, sg_preset
from ssips.transport import (
    Quadrature,
    cell_averages,
    exp_dist,
    fractal_pair_averages,
    integral_of_step,
    kernel_cell_averages,
    l2_error,
    pullback_kernel,
)

SIN = TrigPoly(0.0, {}, {1: 1.0})
HALF_BOX = {"preset": "custom", "pieces": [(-0.5, 0.5, (1.0,))], "parity": "even"}


def verdict(n: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_measure_algebra():
    worst = 0.0
    for k in (2, 3):
        rng = np.random.default_rng(k)
        p = rng.dirichlet(np.ones(k))
        for m in range(0, 9):
            worst = max(worst, abs(Partition.build(k, m, p).measures.sum() - 1.0))
            worst = max(worst, abs(Partition.build(k, m).measures.sum() - 1.0))
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(100):
        k = int(rng.integers(2, 4))
        p = rng.dirichlet(np.ones(k))
        w = tuple(int(x) for x in rng.integers(1, k + 1, size=int(rng.integers(0, 12))))
        if cell_measure(w, p) != math.prod(p[i - 1] for i in w):
            mismatches += 1
    verdict(1, "measure algebra", worst <= 1e-12 and mismatches == 0,
            f"max |sum nu - 1| = {worst:.2e}, product mismatches {mismatches}/100")


def test_criterion_02_integral_preservation():
    funcs = [
        lambda x: np.sin(2 * np.pi * x),
        lambda x: np.exp(x),
        lambda x: x**3 - 0.5 * x,
        lambda x: 1.0 / (1.0 + x**2),
        lambda x: np.cos(7 * x) * np.exp(-x),
    ]
    spread = 0.0
    for f in funcs:
        vals = [integral_of_step(cell_averages(f, m, k)) for k in (2, 3) for m in range(0, 8)]
        spread = max(spread, max(vals) - min(vals))
    verdict(2, "integral preservation", spread <= 1e-10, f"max spread over m, k = {spread:.2e}")


def test_criterion_03_weight_invariants():
    even_dev = odd_dev = asym = sym = 0.0
    min_heat = math.inf
    for k in (2, 3):
        for m in range(1, 8):
            for j in range(2, 7):
                eps = 2.0**-j
                even = averaged_weights(make_kernel("even_box", eps), m, "linear_generic", k=k)
                even_dev = max(even_dev, np.max(np.abs(even.weighted_row_sums() - 1.0)))
                heat = averaged_weights(make_kernel("even_box", eps), m, "heat", k=k, kappa=1.0).dense
                sym = max(sym, np.max(np.abs(heat - heat.T)))
                min_heat = min(min_heat, heat.min())
                odd = averaged_weights(make_kernel("odd_box", eps), m, "transport", k=k)
                odd_dev = max(odd_dev, np.max(np.abs(odd.weighted_row_sums())))
                d = odd.dense
                asym = max(asym, np.max(np.abs(d + d.T)))
    small = averaged_weights(make_kernel("even_box", 1 / 3), 1, "linear_generic", k=3).dense
    closed = np.where(np.eye(3, dtype=bool), 1.5, 0.75)
    derived = np.max(np.abs(small - closed))
    ok = even_dev <= 1e-10 and odd_dev <= 1e-10 and sym <= 1e-12 and min_heat >= 0 and asym <= 1e-12 and derived <= 1e-12
    verdict(3, "weight-matrix invariants", ok,
            f"even row dev {even_dev:.1e}, odd row dev {odd_dev:.1e}, heat asym {sym:.1e}, "
            f"min heat {min_heat:.1e}, transport sym {asym:.1e}, closed form dev {derived:.1e}")


def test_criterion_04_heat_structure():
    u0f = lambda x: 1.0 + np.cos(2 * np.pi * x) + 0.4 * np.sin(6 * np.pi * x)
    drift = 0.0
    violations = 0
    for boundary in ("periodic", "neumann"):
        for m, eps in ((5, 2.0**-3), (7, 2.0**-4)):
            wm = averaged_weights(make_kernel("even_box", eps), m, "heat", boundary, kappa=0.1)
            tr = integrate(IpsSystem("heat", wm), cell_averages(u0f, m), 1.0, samples=5)
            a = tr.audit()
            drift = max(drift, a["mass_drift_rel"])
            violations += a["energy_violations"]
    split = 0.0
    for k, m, eps in ((2, 4, 0.1), (3, 3, 1 / 3), (2, 7, 2.0**-5)):
        wm = dirichlet_variant(make_kernel("even_box", eps), m, k=k)
        split = max(split, np.max(np.abs(wm.weighted_row_sums() + wm.absorption - 1.0)))
    verdict(4, "heat IPS structure", drift <= 1e-10 and violations == 0 and split <= 1e-10,
            f"mass drift {drift:.1e}, energy increases > 1e-12: {violations}, Dirichlet split dev {split:.1e}")


def test_criterion_05_consistency_orders():
    eps = 2.0 ** -np.arange(3, 8)
    heat = consistency_sweep("even_box", "heat", SIN, eps, n=2**12)
    transport = consistency_sweep("odd_box", "transport", SIN, eps, n=2**12)
    u = TrigPoly(0.5, {}, {1: 0.25})
    burgers = consistency_sweep("odd_box", "burgers", u, eps, n=2**12)
    const = np.max(burgers.errors / eps)
    ok = abs(heat.slope - 2.0) <= 0.2 and transport.slope >= 1.8 and burgers.slope >= 1.8
    verdict(5, "consistency orders", ok,
            f"heat slope {heat.slope:.3f}, transport slope {transport.slope:.3f}, "
            f"burgers slope {burgers.slope:.3f} (max error/eps {const:.3f})")


def test_criterion_06_galerkin_decay():
    worst = 0.0
    for k in (2, 3):
        rep = galerkin_sweep(lambda x: x, range(1, 9), k)
        target = np.array([k**-m / math.sqrt(12) for m in range(1, 9)])
        worst = max(worst, np.max(np.abs(rep.errors - target)))
    kern = kernel_galerkin_sweep(exp_dist, sg_preset(), [2, 3, 4, 5])
    ok = worst <= 1e-12 and kern.strictly_decreasing()
    verdict(6, "Galerkin decay", ok,
            f"linear closed-form dev {worst:.1e}; SG kernel errors {np.array2string(kern.errors, precision=4)}")


def test_criterion_07_balanced_convergence():
    heat = run_two_scale(SweepSpec(ReferenceProblem("heat", TrigPoly(0.0, {1: 1.0}, {}), 0.5, kappa=0.05),
                                   list(range(2, 7)), HALF_BOX, balanced="k^-m/2"))
    transport = run_two_scale(SweepSpec(ReferenceProblem("transport", SIN, 0.25, b=TrigPoly(1.0)),
                                        list(range(3, 9)), balanced="k^-m"))
    ok = (heat.strictly_decreasing() and transport.strictly_decreasing()
          and heat.mean_reduction() >= 1.3 and transport.mean_reduction() >= 1.3
          and not heat.failures and not transport.failures)
    verdict(7, "balanced two-scale convergence", ok,
            f"heat reduction {heat.mean_reduction():.3f}, transport reduction {transport.mean_reduction():.3f}")


def test_criterion_08_burgers_conservation():
    m, eps = 7, 2.0**-7
    u0 = cell_averages(lambda x: 0.5 + 0.25 * np.sin(2 * np.pi * x), m)
    centered = IpsSystem("burgers_centered", averaged_weights(make_kernel("odd_box", eps), m, "transport"))
    upwind = IpsSystem("burgers_upwind", averaged_weights(make_kernel("upwind_box", eps), m, "upwind"))
    tc = integrate(centered, u0, 0.3, samples=4)
    tu = integrate(upwind, u0, 0.3, samples=4)
    drift = max(tc.audit()["mass_drift_rel"], tu.audit()["mass_drift_rel"])
    low = float(np.min(tu.states))
    verdict(8, "Burgers conservation", drift <= 1e-10 and low >= -1e-12,
            f"mass drift {drift:.1e}, upwind min {low:.3f}")


def test_criterion_09_random_graph():
    rep = random_vs_deterministic(levels=[3, 4, 5, 6, 7], seeds=range(20))
    verdict(9, "random graph consistency", rep.nonincreasing(),
            f"median gaps {np.array2string(rep.errors, precision=4)}")


def test_criterion_10_pullback_identity():
    sg = sg_preset()
    exact = True
    for m, n in ((1, 3), (2, 4), (2, 5), (3, 4)):
        q_side = kernel_cell_averages(pullback_kernel(exp_dist, sg, n), m, 3, Quadrature(rule="anchor", depth=n))
        k_side = fractal_pair_averages(exp_dist, sg, m, n - m)
        exact &= bool(np.array_equal(q_side.dense, k_side.dense))
    verdict(10, "pullback identity", exact, "bit-exact for (m, n) in (1,3), (2,4), (2,5), (3,4)")


def test_criterion_11_reproducibility(tmp_path):
    configs = {
        "two_scale": {"sweep": {"type": "two_scale",
                                "problem": {"kind": "transport", "initial": {"sin": {"1": 1.0}}, "horizon": 0.25, "b": 1.0},
                                "levels": [3, 4, 5], "balanced": {"rule": "k^-m"}}},
        "random": {"sweep": {"type": "random_vs_deterministic", "levels": [3, 4], "n_seeds": 5}},
        "galerkin": {"sweep": {"type": "galerkin", "function": "sin2pi", "levels": [1, 2, 3, 4]}},
    }
    identical = True
    for name, cfg in configs.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        outputs = []
        for run in range(2):
            out = tmp_path / f"{name}_{run}"
            assert main(["sweep", "--config", str(path), "--out", str(out), "--seed", "123"]) == 0
            outputs.append(((out / "report.csv").read_bytes(), (out / "report.json").read_bytes()))
        identical &= outputs[0] == outputs[1]
    verdict(11, "reproducibility", identical, "two_scale, random_vs_deterministic and galerkin sweeps byte-identical")
