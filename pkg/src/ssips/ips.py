"""Right-hand sides of the self-similar particle systems and explicit time stepping.

Every system has the shape ``du_w/dt = F(t, u_w) + sum_v W_wv D(u_w, u_v) nu(K_v)``
for some averaged weights ``W``.  The specialized assemblers below exploit
the structure of each kind (linear, transport, Burgers, heat) but agree with
the generic form.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .kernels import WeightMatrix, upwind_flux
from .symbolic import Partition
from .transport import StepFunction, StepKernel

KINDS = ("linear", "transport", "burgers_centered", "burgers_upwind", "heat", "generic_nonlinear")


class StabilityError(ValueError):
    pass


class IntegrationAborted(RuntimeError):
    """Non-finite state; ``trajectory`` holds everything up to ``t_last``."""

    def __init__(self, message, t_last, trajectory):
        super().__init__(message)
        self.t_last = t_last
        self.trajectory = trajectory


def _operands(weights) -> tuple[np.ndarray | sp.spmatrix, np.ndarray]:
    if isinstance(weights, WeightMatrix):
        return weights.entries, weights.measures
    if isinstance(weights, StepKernel):
        return weights.entries, weights.partition.measures
    if isinstance(weights, tuple) and len(weights) == 2:
        mat, meas = weights
        return mat, np.asarray(meas, dtype=float)
    raise TypeError("weights must be a WeightMatrix, StepKernel or (matrix, measures) pair")


def _check_dims(mat, meas, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if mat.shape != (u.size, u.size) or meas.size != u.size:
        raise ValueError(f"dimension mismatch: weights {mat.shape}, measures {meas.size}, state {u.size}")
    return u


def _triplets(mat):
    coo = sp.coo_matrix(mat)
    return coo.row, coo.col, coo.data


def rhs_linear(weights, u) -> np.ndarray:
    """``(L u)_w = sum_v sigma_wv u_v nu(K_v)``."""
    mat, meas = _operands(weights)
    u = _check_dims(mat, meas, u)
    return np.asarray(mat @ (u * meas)).ravel()


def rhs_transport(weights, b, u) -> np.ndarray:
    """``du_w = -b_w sum_v eta_wv u_v nu(K_v)``."""
    if b is None:
        raise ValueError("transport system needs cell velocities b")
    return -np.asarray(b, dtype=float) * rhs_linear(weights, u)


def burgers_flux(s):
    return 0.5 * np.asarray(s) ** 2


def rhs_burgers_centered(weights, u) -> np.ndarray:
    """``du_w = sum_v eta_wv (F(u_w) - F(u_v)) nu(K_v)`` with ``F(s) = s**2 / 2``.

    This is the Galerkin form of ``A_eps(u) = -D_eps F(u)``, which approximates
    ``-d_x F(u)``.
    """
    mat, meas = _operands(weights)
    u = _check_dims(mat, meas, u)
    flux = burgers_flux(u)
    row_mass = np.asarray(mat @ meas).ravel()
    return flux * row_mass - np.asarray(mat @ (flux * meas)).ravel()


def rhs_burgers_upwind(weights, u) -> np.ndarray:
    """``du_w = -[sum_v a_wv g(u_w, u_v) - sum_v a_vw g(u_v, u_w)]`` for oriented ``a``."""
    mat, meas = _operands(weights)
    u = _check_dims(mat, meas, u)
    r, c, a = _triplets(mat)
    pair = a * upwind_flux(u[r], u[c])
    n = u.size
    return -(np.bincount(r, pair, minlength=n) - np.bincount(c, pair, minlength=n))


def rhs_heat(weights, u) -> np.ndarray:
    """Weighted graph Laplacian ``sum_v rho_wv (u_v - u_w) nu(K_v)``, minus Dirichlet absorption."""
    mat, meas = _operands(weights)
    u = _check_dims(mat, meas, u)
    row_mass = np.asarray(mat @ meas).ravel()
    out = np.asarray(mat @ (u * meas)).ravel() - u * row_mass
    if isinstance(weights, WeightMatrix) and weights.absorption is not None:
        out = out - weights.prefactor * weights.absorption * u
    return out


def rhs_generic(weights, local: Callable | None, interaction: Callable | None, t: float, u, saturation=None):
    """``F(t, u_w) + sum_v W_wv D(u_w, u_v) nu(K_v)``.

    ``saturation = (lo, hi)`` clamps the arguments of ``D`` to a bounded box.
    """
    mat, meas = _operands(weights)
    u = _check_dims(mat, meas, u)
    out = np.zeros(u.size) if local is None else np.asarray(local(t, u), dtype=float).copy()
    if interaction is not None:
        ud = u if saturation is None else np.clip(u, *saturation)
        if sp.issparse(mat):
            r, c, wt = _triplets(mat)
            out += np.bincount(r, wt * interaction(ud[r], ud[c]) * meas[c], minlength=u.size)
        else:
            out += (np.asarray(mat) * interaction(ud[:, None], ud[None, :])) @ meas
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite right-hand side")
    return out


@dataclass
class IpsSystem:
    kind: str
    weights: WeightMatrix | StepKernel | tuple
    b: np.ndarray | None = None
    local: Callable | None = None
    interaction: Callable | None = None
    saturation: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if isinstance(self.weights, WeightMatrix):
            dense_check = self.weights.size <= 4096
            if self.kind == "heat" and dense_check:
                d = self.weights.dense
                if np.max(np.abs(d - d.T)) > 1e-12 * max(1.0, np.max(np.abs(d))):
                    raise ValueError("heat system needs symmetric weights")
            if self.kind in ("transport", "burgers_centered") and dense_check:
                d = self.weights.dense
                if np.max(np.abs(d + d.T)) > 1e-12 * max(1.0, np.max(np.abs(d))):
                    raise ValueError(f"{self.kind} system needs antisymmetric weights")
        if self.kind == "transport" and self.b is None:
            raise ValueError("transport system needs cell velocities b")

    @property
    def measures(self) -> np.ndarray:
        return _operands(self.weights)[1]

    def rhs(self, t: float, u) -> np.ndarray:
        if self.kind == "linear":
            return rhs_linear(self.weights, u)
        if self.kind == "transport":
            return rhs_transport(self.weights, self.b, u)
        if self.kind == "burgers_centered":
            return rhs_burgers_centered(self.weights, u)
        if self.kind == "burgers_upwind":
            return rhs_burgers_upwind(self.weights, u)
        if self.kind == "heat":
            return rhs_heat(self.weights, u)
        return rhs_generic(self.weights, self.local, self.interaction, t, u, self.saturation)

    def stable_dt(self, u0, c_stab: float = 0.5) -> float:
        """Largest step allowed by the explicit stability guard (``inf`` if unconstrained)."""
        mat, meas = _operands(self.weights)
        eps = self.weights.epsilon if isinstance(self.weights, WeightMatrix) else None
        if self.kind == "heat":
            rate = np.asarray(abs(mat) @ meas).ravel()
            if isinstance(self.weights, WeightMatrix) and self.weights.absorption is not None:
                rate = rate + self.weights.prefactor * self.weights.absorption
            top = float(np.max(rate))
            return math.inf if top == 0 else c_stab / top
        if self.kind in ("transport", "burgers_centered", "burgers_upwind") and eps is not None:
            speed = np.max(np.abs(self.b)) if self.kind == "transport" else np.max(np.abs(u0))
            return math.inf if speed == 0 else c_stab * eps / float(speed)
        top = float(np.max(np.asarray(abs(mat) @ meas).ravel()))
        return math.inf if top == 0 else c_stab / top


@dataclass
class RandomGraph:
    adjacency: np.ndarray
    seed: int
    probabilities: np.ndarray = field(repr=False)


def _edge_uniforms(seed: int, row: int, n: int) -> np.ndarray:
    """Counter-based stream for one row: the ``v``-th draw belongs to edge ``(row, v)``."""
    bitgen = np.random.Philox(np.random.SeedSequence([int(seed), int(row)]))
    return np.random.Generator(bitgen).random(n)


def sample_random_graph(probabilities, seed: int) -> RandomGraph:
    """Independent Bernoulli edges with ``P(xi_wv = 1) = probabilities[w, v]``."""
    p = probabilities.dense if isinstance(probabilities, StepKernel) else np.asarray(probabilities, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError("probabilities must be a square matrix")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("edge probabilities must lie in [0, 1]")
    n = p.shape[0]
    adj = np.empty((n, n), dtype=np.uint8)
    for w in range(n):
        adj[w] = _edge_uniforms(seed, w, n) < p[w]
    return RandomGraph(adj, seed, p)


@dataclass
class Trajectory:
    partition: Partition
    times: np.ndarray
    states: np.ndarray
    dt: float
    method: str
    step_times: np.ndarray
    step_mass: np.ndarray
    step_energy: np.ndarray

    @property
    def mass(self) -> np.ndarray:
        return self.states @ self.partition.measures

    @property
    def energy(self) -> np.ndarray:
        return (self.states**2) @ self.partition.measures

    @property
    def steps(self) -> int:
        return self.step_times.size - 1

    def state(self, i: int) -> StepFunction:
        return StepFunction(self.partition, self.states[i])

    def audit(self, slack: float = 1e-12) -> dict:
        m0 = self.step_mass[0]
        # relative to the l1 mass so mean-zero data is not divided by ~0
        scale = float(np.abs(self.states[0]) @ self.partition.measures) or 1.0
        inc = np.diff(self.step_energy)
        return {
            "steps": int(self.steps),
            "dt": float(self.dt),
            "method": self.method,
            "t_end": float(self.times[-1]),
            "mass_initial": float(m0),
            "mass_drift_abs": float(np.max(np.abs(self.step_mass - m0))),
            "mass_drift_rel": float(np.max(np.abs(self.step_mass - m0)) / scale),
            "energy_initial": float(self.step_energy[0]),
            "energy_final": float(self.step_energy[-1]),
            "energy_increase_max": float(np.max(inc, initial=0.0)),
            "energy_violations": int(np.sum(inc > slack)),
        }

    def to_csv(self, path: str | Path) -> None:
        labels = self.partition.labels()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "word", "value"])
            for t, row in zip(self.times, self.states):
                for label, v in zip(labels, row):
                    wr.writerow([repr(float(t)), label, repr(float(v))])

    def write_audit(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.audit(), indent=2, sort_keys=True) + "\n")


def read_trajectory_csv(path: str | Path, k: int) -> tuple[np.ndarray, list[StepFunction]]:
    """Times and per-time step functions from a trajectory CSV."""
    from .symbolic import parse_word, word_index

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    times: list[float] = []
    by_time: dict[float, list] = {}
    for r in rows:
        t = float(r["time"])
        if t not in by_time:
            times.append(t)
            by_time[t] = []
        by_time[t].append((parse_word(r["word"]), float(r["value"])))
    out = []
    for t in times:
        entries = by_time[t]
        m = len(entries[0][0])
        part = Partition.build(k, m)
        vals = np.empty(part.size)
        for w, v in entries:
            vals[word_index(w, k)] = v
        out.append(StepFunction(part, vals))
    return np.array(times), out


def _sample_grid(t_end: float, samples) -> np.ndarray:
    if samples is None:
        return np.array([0.0, t_end]) if t_end > 0 else np.array([0.0])
    if isinstance(samples, int):
        return np.linspace(0.0, t_end, max(samples, 1)) if t_end > 0 else np.array([0.0])
    grid = np.asarray(samples, dtype=float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or grid[-1] > t_end + 1e-15:
        raise ValueError("sample times must start at 0, increase strictly and end by t_end")
    return grid


def integrate(
    system: IpsSystem,
    u0,
    t_end: float,
    dt: float | None = None,
    method: str = "rk4",
    samples=None,
    c_stab: float = 0.5,
) -> Trajectory:
    """Fixed-step explicit march storing states at the sample times.

    Each interval between sample times is split into equal steps no longer
    than ``dt``.  Mass and energy are recorded after every step.
    """
    if method not in ("rk4", "euler"):
        raise ValueError("method must be 'rk4' or 'euler'")
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    u = np.array(u0.values if isinstance(u0, StepFunction) else u0, dtype=float)
    meas = system.measures
    part = u0.partition if isinstance(u0, StepFunction) else _partition_for(system, u.size)
    guard = system.stable_dt(u, c_stab)
    if dt is None:
        dt = guard if math.isfinite(guard) else max(t_end, 1.0)
    elif dt <= 0:
        raise ValueError("dt must be positive")
    elif dt > guard * (1 + 1e-12):
        raise StabilityError(f"dt = {dt:.6g} exceeds the stability guard {guard:.6g}")
    grid = _sample_grid(t_end, samples)

    f = system.rhs
    states = [u.copy()]
    step_t, step_m, step_e = [0.0], [float(u @ meas)], [float((u * u) @ meas)]
    t = 0.0
    used_dt = 0.0
    for t_next in grid[1:]:
        n = max(1, math.ceil((t_next - t) / dt - 1e-9))
        h = (t_next - t) / n
        used_dt = max(used_dt, h)
        for _ in range(n):
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    new = _step(f, t, u, h, method)
            except FloatingPointError:
                new = np.full_like(u, np.nan)
            if not np.all(np.isfinite(new)):
                traj = _trajectory(part, grid[: len(states)], states, used_dt, method, step_t, step_m, step_e)
                raise IntegrationAborted(f"non-finite state after t = {t:.6g}", t, traj)
            u = new
            t += h
            step_t.append(t)
            with np.errstate(over="ignore"):
                step_m.append(float(u @ meas))
                step_e.append(float((u * u) @ meas))
        t = float(t_next)
        states.append(u.copy())
    return _trajectory(part, grid, states, used_dt if used_dt else dt, method, step_t, step_m, step_e)


def _step(f, t, u, h, method):
    if method == "euler":
        return u + h * f(t, u)
    k1 = f(t, u)
    k2 = f(t + 0.5 * h, u + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, u + 0.5 * h * k2)
    k4 = f(t + h, u + h * k3)
    return u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _trajectory(part, times, states, dt, method, st, sm, se) -> Trajectory:
    return Trajectory(part, np.asarray(times, float), np.array(states), float(dt), method,
                      np.array(st), np.array(sm), np.array(se))


def _partition_for(system: IpsSystem, n: int) -> Partition:
    w = system.weights
    if isinstance(w, WeightMatrix):
        return Partition.build(w.k, w.level)
    if isinstance(w, StepKernel):
        return w.partition
    # infer a uniform partition from the size
    for k in range(2, n + 1):
        m = round(math.log(n) / math.log(k))
        if k**m == n:
            return Partition.build(k, m)
    raise ValueError("cannot infer a partition; pass a StepFunction as u0")
