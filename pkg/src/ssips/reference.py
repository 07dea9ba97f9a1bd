"""Exact or high-accuracy solutions of the local PDEs on the unit torus."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TrigPoly:
    """``const + sum_n a_n cos(2 pi n x) + b_n sin(2 pi n x)``."""

    const: float = 0.0
    cos: dict = field(default_factory=dict)
    sin: dict = field(default_factory=dict)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, float(self.const))
        for n, a in self.cos.items():
            out = out + a * np.cos(TWO_PI * n * x)
        for n, b in self.sin.items():
            out = out + b * np.sin(TWO_PI * n * x)
        return out

    def derivative(self) -> "TrigPoly":
        cos = {n: TWO_PI * n * b for n, b in self.sin.items()}
        sin = {n: -TWO_PI * n * a for n, a in self.cos.items()}
        return TrigPoly(0.0, cos, sin)

    def decayed(self, kappa: float, t: float) -> "TrigPoly":
        """Heat flow ``exp(t kappa d_xx)`` applied mode by mode."""
        f = {n: math.exp(-kappa * (TWO_PI * n) ** 2 * t) for n in set(self.cos) | set(self.sin)}
        return TrigPoly(
            self.const,
            {n: a * f[n] for n, a in self.cos.items()},
            {n: b * f[n] for n, b in self.sin.items()},
        )

    def shifted(self, s: float) -> "TrigPoly":
        """``x -> self(x - s)``."""
        cos, sin = {}, {}
        for n in set(self.cos) | set(self.sin):
            a, b = self.cos.get(n, 0.0), self.sin.get(n, 0.0)
            c, d = math.cos(TWO_PI * n * s), math.sin(TWO_PI * n * s)
            cos[n] = a * c - b * d
            sin[n] = a * d + b * c
        return TrigPoly(self.const, cos, sin)

    def max_abs(self) -> float:
        return abs(self.const) + sum(abs(v) for v in self.cos.values()) + sum(abs(v) for v in self.sin.values())

    def is_constant(self) -> bool:
        return all(v == 0 for v in self.cos.values()) and all(v == 0 for v in self.sin.values())

    def to_dict(self) -> dict:
        return {
            "const": self.const,
            "cos": {str(n): v for n, v in sorted(self.cos.items())},
            "sin": {str(n): v for n, v in sorted(self.sin.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrigPoly":
        unknown = set(d) - {"const", "cos", "sin"}
        if unknown:
            raise ValueError(f"unknown trig-poly keys: {sorted(unknown)}")
        return cls(
            float(d.get("const", 0.0)),
            {int(n): float(v) for n, v in d.get("cos", {}).items()},
            {int(n): float(v) for n, v in d.get("sin", {}).items()},
        )


class ReferenceSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReferenceProblem:
    kind: str  # transport | heat | burgers_smooth
    initial: TrigPoly
    horizon: float
    kappa: float | None = None
    b: TrigPoly | None = None

    def __post_init__(self):
        if self.kind not in ("transport", "heat", "burgers_smooth"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "heat" and not (self.kappa and self.kappa > 0):
            raise ValueError("heat problems need kappa > 0")
        if self.kind == "transport" and self.b is None:
            raise ValueError("transport problems need a velocity b")
        if self.kind == "burgers_smooth":
            t_star = shock_time(self.initial)
            if self.horizon >= 0.9 * t_star:
                raise ValueError(
                    f"horizon {self.horizon} is not safely before the shock time {t_star:.6g}"
                )

    def solution(self, t: float) -> Callable:
        """The exact solution at time ``t`` as a callable of ``x``."""
        if self.kind == "heat":
            return self.initial.decayed(self.kappa, t)
        if self.kind == "transport":
            return lambda x: transport_exact(self.b, self.initial, t, x)
        return lambda x: burgers_smooth_exact(self.initial, t, x)


def shock_time(u0: Callable, samples: int = 2**12) -> float:
    """``1 / max(-u0')`` estimated on ``samples`` points (``inf`` if ``u0`` is nondecreasing)."""
    x = np.arange(samples) / samples
    du = u0.derivative()(x) if hasattr(u0, "derivative") else np.gradient(u0(x), 1.0 / samples)
    worst = -float(np.min(du))
    return math.inf if worst <= 0 else 1.0 / worst


def transport_exact(b, u0: Callable, t: float, x, rtol: float = 1e-12):
    """``u0(X(-t; x))`` with ``X`` the characteristic flow of ``dX/ds = b(X)``."""
    x = np.asarray(x, dtype=float)
    if t == 0:
        return u0(x)
    if isinstance(b, (int, float)) or (isinstance(b, TrigPoly) and b.is_constant()):
        speed = float(b) if isinstance(b, (int, float)) else b.const
        return u0(np.mod(x - speed * t, 1.0))
    flat = x.ravel()
    sol = solve_ivp(
        lambda s, y: -b(y), (0.0, t), flat, method="DOP853", rtol=rtol, atol=rtol, vectorized=False
    )
    if not sol.success:
        raise ReferenceSolverError(f"characteristic solver failed: {sol.message}")
    return u0(np.mod(sol.y[:, -1], 1.0)).reshape(x.shape)


def heat_exact(u0: TrigPoly, kappa: float, t: float, x):
    return u0.decayed(kappa, t)(x)


def burgers_smooth_exact(u0: Callable, t: float, x, tol: float = 1e-13, max_iter: int = 60):
    """Solve ``u = u0(x - t u)`` by Newton's method from ``u0(x)``."""
    x = np.asarray(x, dtype=float)
    if t == 0:
        return u0(x)
    du0 = u0.derivative()
    u = u0(x)
    for _ in range(max_iter):
        arg = x - t * u
        phi = u - u0(arg)
        dphi = 1.0 + t * du0(arg)
        if np.any(dphi <= 0):
            raise ReferenceSolverError("characteristics crossed: t is at or past the shock time")
        step = phi / dphi
        u = u - step
        if np.max(np.abs(step)) < tol:
            return u
    raise ReferenceSolverError("Newton iteration did not converge; t may be too close to the shock time")
