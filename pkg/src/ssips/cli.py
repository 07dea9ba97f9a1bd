"""Command-line front end: ``ssips {simulate,sweep,weights,pullback,export-sg}``.

Every command reads one JSON config (``--config``) and writes CSV/JSON into
``--out``.  Exit codes: 0 success, 1 numerical failure, 2 validation failure.
Failures also produce ``{code, message, context}`` on stderr and in
``error.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .experiments import (
    SweepSpec,
    consistency_sweep,
    galerkin_sweep,
    kernel_galerkin_sweep,
    random_vs_deterministic,
    run_two_scale,
)
from .ips import IntegrationAborted, IpsSystem, integrate, read_trajectory_csv
from .kernels import averaged_weights, make_kernel
from .reference import ReferenceProblem, ReferenceSolverError, TrigPoly
from .symbolic import IfsSpec, interval_preset, load_ifs, project_all, sg_preset
from .transport import (
    Quadrature,
    cell_averages,
    exp_abs_coord_diff,
    exp_dist,
    fractal_cell_averages,
    kernel_cell_averages,
    pullback_kernel,
)

log = logging.getLogger("ssips")

POINT_FUNCTIONS = {
    "exp_abs_coord_diff": exp_abs_coord_diff,
    "constant": lambda x: np.ones(np.shape(x)[:-1]),
    "exp_abs_x1_centered": lambda x: np.exp(-np.abs(x[..., 0] - 0.5)),
}
PAIR_FUNCTIONS = {"exp_dist": exp_dist}
INTERVAL_FUNCTIONS = {
    "identity": lambda x: np.asarray(x, dtype=float),
    "constant": lambda x: np.ones(np.shape(x)),
    "sin2pi": lambda x: np.sin(2 * np.pi * np.asarray(x)),
}


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrigConfig(Strict):
    const: float = 0.0
    cos: dict[int, float] = Field(default_factory=dict)
    sin: dict[int, float] = Field(default_factory=dict)

    def build(self) -> TrigPoly:
        return TrigPoly(self.const, dict(self.cos), dict(self.sin))


class ProblemConfig(Strict):
    kind: Literal["heat", "transport", "burgers_smooth"]
    initial: TrigConfig
    horizon: float = Field(ge=0)
    kappa: float | None = None
    b: TrigConfig | float | None = None

    def build(self) -> ReferenceProblem:
        b = self.b
        if isinstance(b, (int, float)):
            b = TrigPoly(float(b))
        elif b is not None:
            b = b.build()
        return ReferenceProblem(self.kind, self.initial.build(), self.horizon, self.kappa, b)


class CustomKernel(Strict):
    pieces: list[tuple[float, float, list[float]]]
    parity: Literal["odd", "even", "one_sided"]
    scaling: int | None = None

    def args(self) -> dict:
        return {"preset": "custom", "pieces": [(a, b, tuple(c)) for a, b, c in self.pieces],
                "parity": self.parity, "scaling": self.scaling}


class BalancedConfig(Strict):
    rule: Literal["k^-m", "k^-m/2"]
    c: float = Field(default=1.0, gt=0)


class IntegratorConfig(Strict):
    method: Literal["rk4", "euler"] = "rk4"
    dt: float | None = Field(default=None, gt=0)
    c_stab: float = Field(default=0.5, gt=0)
    samples: int | list[float] = 2


class IfsConfig(Strict):
    preset: Literal["sg", "interval"] | None = "sg"
    k: int = 2
    file: str | None = None

    def build(self) -> IfsSpec:
        if self.file is not None:
            return load_ifs(self.file)
        return sg_preset() if self.preset == "sg" else interval_preset(self.k)


def _kernel_arg(kernel):
    return kernel.args() if isinstance(kernel, CustomKernel) else kernel


class SimulateConfig(Strict):
    problem: ProblemConfig
    m: int = Field(ge=0)
    k: int = Field(default=2, ge=2)
    kernel: str | CustomKernel = "auto"
    epsilon: float | None = Field(default=None, gt=0)
    balanced: BalancedConfig | None = None
    scheme: Literal["centered", "upwind"] = "centered"
    boundary: Literal["periodic", "dirichlet", "neumann"] = "periodic"
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    seed: int | None = None

    @model_validator(mode="after")
    def _one_scale(self):
        if (self.epsilon is None) == (self.balanced is None):
            raise ValueError("give exactly one of epsilon or balanced")
        if self.boundary != "periodic" and self.problem.kind != "heat":
            raise ValueError("Dirichlet/Neumann boundaries are only available for heat")
        return self


class TwoScaleSweep(Strict):
    type: Literal["two_scale"]
    problem: ProblemConfig
    levels: list[int] = Field(min_length=1)
    kernel: str | CustomKernel = "auto"
    epsilons: list[float] | None = None
    balanced: BalancedConfig | None = None
    times: list[float] | None = None
    k: int = 2
    method: Literal["rk4", "euler"] = "rk4"
    c_stab: float = 0.5
    dt_max: float | None = None
    scheme: Literal["centered", "upwind"] = "centered"
    reference: Literal["exact", "surrogate"] = "exact"
    surrogate_level: int | None = None
    timing: bool = False

    @model_validator(mode="after")
    def _one_scale(self):
        if (self.epsilons is None) == (self.balanced is None):
            raise ValueError("mixing balanced and explicit epsilon (or giving neither) is not allowed")
        if self.epsilons is not None and not self.epsilons:
            raise ValueError("epsilons must be non-empty")
        return self


class ConsistencySweep(Strict):
    type: Literal["consistency"]
    kernel: str | CustomKernel
    mode: Literal["heat", "transport", "burgers", "upwind"]
    initial: TrigConfig
    epsilons: list[float] = Field(min_length=2)
    n: int = 4096
    kappa: float = 1.0
    timing: bool = False


class GalerkinSweep(Strict):
    type: Literal["galerkin"]
    function: str = "identity"
    levels: list[int] = Field(min_length=1)
    k: int = 2
    timing: bool = False


class KernelGalerkinSweep(Strict):
    type: Literal["kernel_galerkin"]
    ifs: IfsConfig = Field(default_factory=IfsConfig)
    kernel: str = "exp_dist"
    levels: list[int] = Field(min_length=1)
    fine_level: int = 6
    depth: int = 1
    timing: bool = False


class RandomSweep(Strict):
    type: Literal["random_vs_deterministic"]
    levels: list[int] = Field(min_length=1)
    n_seeds: int = Field(default=20, ge=1)
    t_end: float = 1.0
    dt: float = 0.01
    samples: int = 11
    k: int = 2
    timing: bool = False


class SweepConfig(Strict):
    sweep: Annotated[
        Union[TwoScaleSweep, ConsistencySweep, GalerkinSweep, KernelGalerkinSweep, RandomSweep],
        Field(discriminator="type"),
    ]
    seed: int | None = None


class WeightsConfig(Strict):
    kernel: str | CustomKernel
    epsilon: float = Field(gt=0)
    m: int = Field(ge=0)
    k: int = 2
    mode: Literal["transport", "heat", "upwind", "linear_generic"] = "linear_generic"
    boundary: Literal["periodic", "dirichlet", "neumann"] = "periodic"
    kappa: float | None = None


class PullbackConfig(Strict):
    ifs: IfsConfig = Field(default_factory=IfsConfig)
    kernel: str = "exp_dist"
    m: int = Field(ge=0)
    depth: int | None = None
    nodes: int = 8


class ExportConfig(Strict):
    ifs: IfsConfig = Field(default_factory=IfsConfig)
    depth: int = Field(ge=0)
    function: str | None = None
    trajectory: str | None = None
    time_index: int = -1

    @model_validator(mode="after")
    def _one_source(self):
        if (self.function is None) == (self.trajectory is None):
            raise ValueError("give exactly one of function or trajectory")
        return self


class CliError(Exception):
    def __init__(self, code: int, message: str, context: dict | None = None):
        super().__init__(message)
        self.code = code
        self.context = context or {}


def _scale(cfg: SimulateConfig) -> float:
    if cfg.epsilon is not None:
        return cfg.epsilon
    power = 1.0 if cfg.balanced.rule == "k^-m" else 0.5
    return cfg.balanced.c * float(cfg.k) ** (-power * cfg.m)


def cmd_simulate(cfg: SimulateConfig, out: Path, args) -> None:
    prob = cfg.problem.build()
    eps = _scale(cfg)
    spec = SweepSpec(prob, [cfg.m], _kernel_arg(cfg.kernel), epsilons=[eps], k=cfg.k, scheme=cfg.scheme)
    kf = spec.kernel_for(eps)
    if cfg.boundary != "periodic":
        system = IpsSystem("heat", averaged_weights(kf, cfg.m, "heat", cfg.boundary, cfg.k, prob.kappa))
    else:
        from .experiments import build_system

        system = build_system(spec, cfg.m, eps)
    u0 = cell_averages(prob.initial, cfg.m, cfg.k)
    it = cfg.integrator
    log.info("simulate %s m=%d eps=%g", prob.kind, cfg.m, eps)
    traj = integrate(system, u0, prob.horizon, it.dt, it.method, it.samples, it.c_stab)
    traj.to_csv(out / "trajectory.csv")
    audit = traj.audit()
    audit.update(epsilon=eps, m=cfg.m, k=cfg.k, kind=prob.kind, boundary=cfg.boundary, seed=args.seed)
    (out / "audit.json").write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n")


def cmd_sweep(cfg: SweepConfig, out: Path, args) -> None:
    sw = cfg.sweep
    seed = args.seed if args.seed is not None else (cfg.seed or 0)
    if isinstance(sw, TwoScaleSweep):
        spec = SweepSpec(
            sw.problem.build(), sw.levels, _kernel_arg(sw.kernel), sw.epsilons,
            None if sw.balanced is None else sw.balanced.rule,
            1.0 if sw.balanced is None else sw.balanced.c,
            sw.times, sw.k, sw.method, sw.c_stab, sw.dt_max, sw.scheme, sw.reference, sw.surrogate_level,
        )
        rep = run_two_scale(spec, threads=args.threads)
    elif isinstance(sw, ConsistencySweep):
        rep = consistency_sweep(_kernel_arg(sw.kernel), sw.mode, sw.initial.build(), sw.epsilons, sw.n, sw.kappa)
    elif isinstance(sw, GalerkinSweep):
        if sw.function not in INTERVAL_FUNCTIONS:
            raise ValueError(f"unknown function {sw.function!r}; choose from {sorted(INTERVAL_FUNCTIONS)}")
        rep = galerkin_sweep(INTERVAL_FUNCTIONS[sw.function], sw.levels, sw.k)
    elif isinstance(sw, KernelGalerkinSweep):
        rep = kernel_galerkin_sweep(_pair_function(sw.kernel), sw.ifs.build(), sw.levels, sw.fine_level, sw.depth)
    else:
        seeds = [seed + i for i in range(sw.n_seeds)]
        rep = random_vs_deterministic(levels=sw.levels, seeds=seeds, t_end=sw.t_end, dt=sw.dt, samples=sw.samples, k=sw.k)
    log.info("sweep %s: slope %s", rep.label, rep.slope)
    rep.to_csv(out / "report.csv", timing=sw.timing)
    rep.to_json(out / "report.json")


def cmd_weights(cfg: WeightsConfig, out: Path, args) -> None:
    kf = make_kernel(epsilon=cfg.epsilon, **cfg.kernel.args()) if isinstance(cfg.kernel, CustomKernel) \
        else make_kernel(cfg.kernel, cfg.epsilon)
    wm = averaged_weights(kf, cfg.m, cfg.mode, cfg.boundary, cfg.k, cfg.kappa)
    wm.to_csv(out / "weights.csv", out / "weights_header.json")


def _pair_function(name: str):
    if name not in PAIR_FUNCTIONS:
        raise ValueError(f"unknown kernel {name!r}; choose from {sorted(PAIR_FUNCTIONS)}")
    return PAIR_FUNCTIONS[name]


def cmd_pullback(cfg: PullbackConfig, out: Path, args) -> None:
    ifs = cfg.ifs.build()
    depth = cfg.m + 6 if cfg.depth is None else cfg.depth
    if depth < cfg.m:
        raise ValueError("pullback depth must be >= m")
    ker = pullback_kernel(_pair_function(cfg.kernel), ifs, depth)
    sk = kernel_cell_averages(ker, cfg.m, ifs.k, Quadrature(cfg.nodes))
    sk.to_csv(out / "pullback.csv")


def cmd_export_sg(cfg: ExportConfig, out: Path, args) -> None:
    ifs = cfg.ifs.build()
    if ifs.k != 3 or ifs.dim != 2:
        raise ValueError("export-sg needs the Sierpinski gasket preset (k = 3 maps in the plane)")
    pts = project_all(ifs, cfg.depth, cap=3**14)
    if cfg.function is not None:
        if cfg.function not in POINT_FUNCTIONS:
            raise ValueError(f"unknown function {cfg.function!r}; choose from {sorted(POINT_FUNCTIONS)}")
        vals = fractal_cell_averages(POINT_FUNCTIONS[cfg.function], ifs, cfg.depth, 0).values
    else:
        _, snaps = read_trajectory_csv(cfg.trajectory, ifs.k)
        snap = snaps[cfg.time_index]
        if snap.level > cfg.depth:
            raise ValueError("export depth must be at least the trajectory level")
        vals = np.repeat(snap.values, ifs.k ** (cfg.depth - snap.level))
    with open(out / "sg_points.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "value"])
        for (x, y), v in zip(pts, vals):
            wr.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


COMMANDS = {
    "simulate": (SimulateConfig, cmd_simulate),
    "sweep": (SweepConfig, cmd_sweep),
    "weights": (WeightsConfig, cmd_weights),
    "pullback": (PullbackConfig, cmd_pullback),
    "export-sg": (ExportConfig, cmd_export_sg),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssips", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON config file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--verbose", action="store_true")
    return parser


def _fail(err: CliError, out: Path | None) -> int:
    payload = {"code": err.code, "message": str(err), "context": err.context}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None and out.is_dir():
        (out / "error.json").write_text(text + "\n")
    return err.code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    model, handler = COMMANDS[args.command]
    out = args.out
    ctx = {"command": args.command, "config": str(args.config)}
    try:
        out.mkdir(parents=True, exist_ok=True)
        raw = json.loads(args.config.read_text())
        cfg = model.model_validate(raw)
        handler(cfg, out, args)
    except ValidationError as exc:
        return _fail(CliError(2, f"invalid config: {exc.errors(include_url=False)}", ctx), out)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(CliError(2, f"cannot read config: {exc}", ctx), out)
    except IntegrationAborted as exc:
        return _fail(CliError(1, str(exc), {**ctx, "t_last": exc.t_last}), out)
    except (FloatingPointError, ReferenceSolverError, ArithmeticError) as exc:
        return _fail(CliError(1, str(exc), ctx), out)
    except ValueError as exc:
        return _fail(CliError(2, str(exc), ctx), out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
