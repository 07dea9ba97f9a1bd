"""Convergence sweeps for the two-scale error law ``eps**beta + q**(alpha m)``."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ips import IntegrationAborted, IpsSystem, StabilityError, integrate, sample_random_graph
from .kernels import KernelFamily, averaged_weights, consistency_error, make_kernel
from .reference import ReferenceProblem
from .symbolic import IfsSpec, Partition
from .transport import (
    StepFunction,
    cell_averages,
    fractal_pair_averages,
    kernel_cell_averages,
    l2_error,
)

BALANCED_RULES = {"k^-m": 1.0, "k^-m/2": 0.5}
EXPECTED_RULE = {"heat": "k^-m/2", "transport": "k^-m", "burgers_smooth": "k^-m"}


def fit_rate(scales: Sequence[float], errors: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares fit of ``log error = slope * log scale + intercept``.

    Returns ``(slope, intercept, residual)`` with the residual the RMS of the
    log-space misfit.
    """
    s = np.asarray(scales, dtype=float)
    e = np.asarray(errors, dtype=float)
    if s.size != e.size or s.size < 2:
        raise ValueError("need at least two (scale, error) points")
    if np.any(e <= 0) or np.any(s <= 0):
        raise ValueError("scales and errors must be positive for a log-log fit")
    x, y = np.log(s), np.log(e)
    if np.ptp(x) == 0:
        raise ValueError("degenerate fit: all scales are equal")
    (slope, intercept), *_ = np.linalg.lstsq(np.column_stack([x, np.ones_like(x)]), y, rcond=None)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), float(intercept), resid


@dataclass
class ErrorReport:
    """Rows of ``(m, epsilon, N, dt, error, runtime_ms)`` plus a log-log fit.

    ``scale`` names the fitted abscissa (``epsilon`` or ``q^m``).  ``exact``
    is set when every error vanishes, in which case no slope is reported.
    """

    label: str
    rows: list[dict]
    scale: str = "epsilon"
    slope: float | None = None
    intercept: float | None = None
    residual: float | None = None
    exact: bool = False
    failures: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return np.array([r["error"] for r in self.rows], dtype=float)

    def strictly_decreasing(self) -> bool:
        e = self.errors
        return bool(np.all(np.diff(e) < 0))

    def nonincreasing(self) -> bool:
        e = self.errors
        return bool(np.all(np.diff(e) <= 0))

    def mean_reduction(self) -> float:
        """Geometric mean of ``error(m) / error(m+1)`` over consecutive rows."""
        e = self.errors
        if e.size < 2 or np.any(e <= 0):
            return math.nan
        return float(np.exp(np.mean(np.log(e[:-1] / e[1:]))))

    def fit(self, scales: Sequence[float]) -> None:
        e = self.errors
        if e.size and np.all(e <= 1e-13):
            self.exact = True
            return
        if e.size >= 2 and np.all(e > 0):
            self.slope, self.intercept, self.residual = fit_rate(scales, e)

    def summary(self) -> dict:
        return {
            "label": self.label,
            "scale": self.scale,
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "exact": self.exact,
            "strictly_decreasing": self.strictly_decreasing(),
            "mean_reduction": None if math.isnan(self.mean_reduction()) else self.mean_reduction(),
            "failures": self.failures,
            **self.extra,
        }

    def to_csv(self, path: str | Path, timing: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["m", "epsilon", "N", "dt", "error", "runtime_ms"])
            for r in self.rows:
                wr.writerow([
                    r["m"],
                    "" if r.get("epsilon") is None else repr(float(r["epsilon"])),
                    r["N"],
                    "" if r.get("dt") is None else repr(float(r["dt"])),
                    repr(float(r["error"])),
                    f"{r['runtime_ms']:.3f}" if timing and r.get("runtime_ms") is not None else "",
                ])

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


@dataclass
class SweepSpec:
    """Configurations for a two-scale sweep.

    Either ``epsilons`` (crossed with ``levels``) or a ``balanced`` rule
    (``"k^-m"`` or ``"k^-m/2"``, scaled by ``balanced_c``) must be given.
    ``kernel`` is a preset name or a dict of :func:`make_kernel` arguments.
    """

    problem: ReferenceProblem
    levels: list[int]
    kernel: str | dict = "auto"
    epsilons: list[float] | None = None
    balanced: str | None = None
    balanced_c: float = 1.0
    times: list[float] | None = None
    k: int = 2
    method: str = "rk4"
    c_stab: float = 0.5
    dt_max: float | None = None
    scheme: str = "centered"  # burgers only: centered | upwind
    reference: str = "exact"  # exact | surrogate
    surrogate_level: int | None = None

    def __post_init__(self):
        if not self.levels:
            raise ValueError("levels must be non-empty")
        if (self.epsilons is None) == (self.balanced is None):
            raise ValueError("give exactly one of an explicit epsilon list or a balanced rule")
        if self.epsilons is not None and not self.epsilons:
            raise ValueError("epsilons must be non-empty")
        if self.balanced is not None:
            if self.balanced not in BALANCED_RULES:
                raise ValueError(f"balanced rule must be one of {sorted(BALANCED_RULES)}")
            want = EXPECTED_RULE[self.problem.kind]
            if self.balanced != want:
                raise ValueError(f"balanced rule {self.balanced!r} is inconsistent with {self.problem.kind}; use {want!r}")
        if self.scheme not in ("centered", "upwind"):
            raise ValueError("scheme must be 'centered' or 'upwind'")
        if self.reference not in ("exact", "surrogate"):
            raise ValueError("reference must be 'exact' or 'surrogate'")
        if self.reference == "surrogate" and self.surrogate_level is None:
            raise ValueError("surrogate reference needs surrogate_level")
        if self.times is None:
            h = self.problem.horizon
            self.times = [0.0, 0.5 * h, h] if h > 0 else [0.0]

    def configurations(self) -> list[tuple[int, float]]:
        if self.balanced is not None:
            power = BALANCED_RULES[self.balanced]
            return [(m, self.balanced_c * float(self.k) ** (-power * m)) for m in self.levels]
        return [(m, float(e)) for m in self.levels for e in self.epsilons]

    def kernel_for(self, eps: float) -> KernelFamily:
        if isinstance(self.kernel, dict):
            return make_kernel(epsilon=eps, **self.kernel)
        name = self.kernel
        if name == "auto":
            kind = self.problem.kind
            if kind == "heat":
                name = "even_box"
            elif kind == "burgers_smooth" and self.scheme == "upwind":
                name = "upwind_box"
            else:
                name = "odd_box"
        return make_kernel(name, eps)


def build_system(spec: SweepSpec, m: int, eps: float) -> IpsSystem:
    prob = spec.problem
    kf = spec.kernel_for(eps)
    if prob.kind == "heat":
        return IpsSystem("heat", averaged_weights(kf, m, "heat", k=spec.k, kappa=prob.kappa))
    if prob.kind == "transport":
        b = cell_averages(prob.b, m, spec.k).values
        return IpsSystem("transport", averaged_weights(kf, m, "transport", k=spec.k), b=b)
    if spec.scheme == "upwind":
        return IpsSystem("burgers_upwind", averaged_weights(kf, m, "upwind", k=spec.k))
    return IpsSystem("burgers_centered", averaged_weights(kf, m, "transport", k=spec.k))


def _simulate(spec: SweepSpec, m: int, eps: float):
    system = build_system(spec, m, eps)
    u0 = cell_averages(spec.problem.initial, m, spec.k)
    guard = system.stable_dt(u0.values, spec.c_stab)
    dt = guard if spec.dt_max is None else min(guard, spec.dt_max)
    if not math.isfinite(dt):
        dt = spec.dt_max or max(spec.problem.horizon, 1.0)
    return integrate(system, u0, spec.problem.horizon, dt, spec.method, spec.times, spec.c_stab)


def _run_one(spec: SweepSpec, m: int, eps: float, surrogate=None) -> dict:
    t0 = time.perf_counter()
    row = {"m": m, "epsilon": eps, "N": spec.k**m}
    try:
        traj = _simulate(spec, m, eps)
    except (IntegrationAborted, StabilityError, FloatingPointError) as exc:
        row.update(error=None, reason=f"{type(exc).__name__}: {exc}")
        return row
    if surrogate is None:
        err = max(
            l2_error(traj.state(i), spec.problem.solution(t)) for i, t in enumerate(traj.times)
        )
    else:
        err = max(
            float(np.sqrt(np.sum((traj.state(i).refine(surrogate.partition.level).values - s) ** 2
                                 * surrogate.partition.measures)))
            for i, s in enumerate(surrogate.states)
        )
    row.update(dt=traj.dt, error=float(err), runtime_ms=1e3 * (time.perf_counter() - t0))
    return row


def run_two_scale(spec: SweepSpec, threads: int = 1) -> ErrorReport:
    """Sup-in-time L2 error of each IPS trajectory against the reference.

    With ``spec.reference == "surrogate"`` the reference is the IPS at
    ``surrogate_level`` with the same ``eps``, which isolates the Galerkin term.
    """
    configs = spec.configurations()
    surrogates = {}
    if spec.reference == "surrogate":
        for _, eps in configs:
            if eps not in surrogates:
                surrogates[eps] = _simulate(spec, spec.surrogate_level, eps)

    def job(cfg):
        m, eps = cfg
        return _run_one(spec, m, eps, surrogates.get(eps))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, configs))
    else:
        results = [job(c) for c in configs]
    rows = [r for r in results if r["error"] is not None]
    failures = [{"m": r["m"], "epsilon": r["epsilon"], "reason": r["reason"]} for r in results if r["error"] is None]
    label = f"two_scale:{spec.problem.kind}"
    if len({r["epsilon"] for r in rows}) > 1:
        rep = ErrorReport(label, rows, "epsilon", failures=failures)
        rep.fit([r["epsilon"] for r in rows])
    else:
        # fixed eps: the level is the only varying scale
        rep = ErrorReport(label, rows, "k^-m", failures=failures)
        if len({r["m"] for r in rows}) > 1:
            rep.fit([float(spec.k) ** -r["m"] for r in rows])
    return rep


def consistency_sweep(
    kernel: str | dict,
    mode: str,
    u,
    epsilons: Sequence[float],
    n: int = 4096,
    kappa: float = 1.0,
    b=None,
) -> ErrorReport:
    """Continuum consistency errors ``||A_eps u - A u||`` over an eps-sweep."""
    rows = []
    for eps in epsilons:
        kf = make_kernel(epsilon=eps, **kernel) if isinstance(kernel, dict) else make_kernel(kernel, eps)
        err = consistency_error(kf, mode, u, n=n, kappa=kappa, b=b)
        rows.append({"m": None, "epsilon": float(eps), "N": n, "dt": None, "error": err})
    rep = ErrorReport(f"consistency:{mode}", rows, "epsilon")
    rep.fit(list(epsilons))
    return rep


def galerkin_sweep(f, levels: Sequence[int], k: int = 2, q: float | None = None) -> ErrorReport:
    """Projection errors ``||f - P_m f||`` with the decay exponent fitted against ``q**m``.

    ``f`` is a callable on [0, 1] or a fine :class:`StepFunction`, in which
    case the error is measured at the fine level.
    """
    q = 1.0 / k if q is None else q
    rows = []
    for m in levels:
        if isinstance(f, StepFunction):
            if m > f.level:
                raise ValueError("level exceeds the resolution of the fine step function")
            coarse = f.coarsen(m).refine(f.level)
            err = float(np.sqrt(np.sum((coarse.values - f.values) ** 2 * f.partition.measures)))
            n = f.partition.k**m
        else:
            err = l2_error(cell_averages(f, m, k), f)
            n = k**m
        rows.append({"m": m, "epsilon": None, "N": n, "dt": None, "error": err})
    rep = ErrorReport("galerkin", rows, "q^m")
    rep.fit([q**m for m in levels])
    return rep


def kernel_galerkin_sweep(
    J: Callable, ifs: IfsSpec, levels: Sequence[int], fine_level: int = 6, depth: int = 1
) -> ErrorReport:
    """``||J - J_m||_{L2(nu x nu)}`` for cell-pair averages ``J_m``, measured at ``fine_level``."""
    if max(levels) >= fine_level:
        raise ValueError("fine_level must exceed every swept level")
    fine = fractal_pair_averages(J, ifs, fine_level, depth).dense
    mu = Partition.build(ifs.k, fine_level, ifs.p).measures
    pair_mu = np.outer(mu, mu)
    nf = fine.shape[0]
    rows = []
    for m in levels:
        r = ifs.k ** (fine_level - m)
        nm = nf // r
        blocks = (fine * pair_mu).reshape(nm, r, nm, r).sum(axis=(1, 3))
        block_mu = pair_mu.reshape(nm, r, nm, r).sum(axis=(1, 3))
        avg = np.repeat(np.repeat(blocks / block_mu, r, axis=0), r, axis=1)
        err = float(np.sqrt(np.sum((avg - fine) ** 2 * pair_mu)))
        rows.append({"m": m, "epsilon": None, "N": ifs.k**m, "dt": None, "error": err})
    q = ifs.q if ifs.q is not None else max(ifs.ratios)
    rep = ErrorReport("kernel_galerkin", rows, "q^m")
    rep.fit([q**m for m in levels])
    return rep


def smooth_probability_kernel(x, y):
    """``W(x, y) = (1 + x y) / 2``, a smooth kernel with values in [1/2, 1]."""
    return 0.5 * (1.0 + x * y)


def difference_interaction(a, b):
    return b - a


def random_vs_deterministic(
    W: Callable = smooth_probability_kernel,
    levels: Sequence[int] = (3, 4, 5, 6, 7),
    seeds: Sequence[int] = tuple(range(20)),
    initial: Callable | None = None,
    t_end: float = 1.0,
    dt: float = 0.01,
    samples: int = 11,
    k: int = 2,
    D: Callable = difference_interaction,
) -> ErrorReport:
    """Median over seeds of ``sup_t ||u_xi(t) - u_W(t)||`` for the W-random graph system.

    Both systems share the interaction ``D`` and the projected initial data;
    the random one replaces ``W_wv`` by Bernoulli edges ``xi_wv``.
    """
    if initial is None:
        initial = lambda x: np.sin(2 * np.pi * x) + 0.5 * np.cos(4 * np.pi * x)  # noqa: E731
    rows = []
    per_level = {}
    for m in levels:
        wm = kernel_cell_averages(W, m, k).dense
        if np.any(wm < 0) or np.any(wm > 1):
            raise ValueError("kernel averages must lie in [0, 1]")
        part = Partition.build(k, m)
        u0 = cell_averages(initial, m, k)
        det = integrate(IpsSystem("generic_nonlinear", (wm, part.measures), interaction=D), u0, t_end, dt, samples=samples)
        diffs = []
        for seed in seeds:
            adj = sample_random_graph(wm, seed).adjacency.astype(float)
            rnd = integrate(IpsSystem("generic_nonlinear", (adj, part.measures), interaction=D), u0, t_end, dt, samples=samples)
            gap = np.sqrt(((rnd.states - det.states) ** 2) @ part.measures)
            diffs.append(float(np.max(gap)))
        per_level[str(m)] = diffs
        rows.append({"m": m, "epsilon": None, "N": k**m, "dt": dt, "error": float(np.median(diffs))})
    rep = ErrorReport("random_vs_deterministic", rows, "N", extra={"seeds": list(seeds), "per_seed": per_level})
    errs = rep.errors
    if np.all(errs <= 1e-13):
        rep.exact = True
    elif np.all(errs > 0):
        rep.fit([r["N"] for r in rows])
    return rep
