"""Scaled nonlocal kernels and their cell-pair averaged weight matrices.

Profiles are piecewise polynomials on bounded support.  The scaled kernel is
``eps**-a * profile(z / eps)`` with ``a = 2`` for derivative kernels (odd and
one-sided) and ``a = 1`` for diffusion kernels (even).

On uniform periodic cells of width ``h`` the average of ``K(x - y)`` over
``Q_w x Q_v`` depends only on the index offset ``D = j_w - j_v``::

    E(D) = h**-2 * int_{-h}^{h} (h - |s|) K(D h + s) ds

Each polynomial piece of that integrand is integrated with a Gauss-Legendre
rule of sufficient degree, so ``E`` is exact up to rounding.  Periodic,
Dirichlet and Neumann matrices are all assembled from ``E``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import Polynomial

from .symbolic import Partition, check_cap
from .transport import Quadrature, kernel_cell_averages, write_sparse_csv

PARITIES = ("odd", "even", "one_sided")
MODES = ("transport", "heat", "upwind", "linear_generic")
BOUNDARIES = ("periodic", "dirichlet", "neumann")

MOMENT_TOL = 1e-12


class MomentConstraintError(ValueError):
    pass


class PeriodOverlapError(ValueError):
    pass


@dataclass(frozen=True)
class Piece:
    lo: float
    hi: float
    coef: tuple[float, ...]  # low -> high powers of z

    @property
    def poly(self) -> Polynomial:
        return Polynomial(self.coef)


def _moment(pieces: Sequence[Piece], power: int, absolute: bool = False) -> float:
    """``int z**power P(z) dz`` (or ``|P|``) over the pieces, by exact polynomial integration."""
    total = 0.0
    zp = Polynomial([0.0] * power + [1.0])
    for pc in pieces:
        cuts = [pc.lo, pc.hi]
        if absolute:
            roots = pc.poly.roots()
            cuts += [r.real for r in roots if abs(r.imag) < 1e-14 and pc.lo < r.real < pc.hi]
        cuts = sorted(cuts)
        for a, b in zip(cuts[:-1], cuts[1:]):
            q = zp * pc.poly
            if absolute and pc.poly(0.5 * (a + b)) < 0:
                q = -q
            anti = q.integ()
            total += anti(b) - anti(a)
    return float(total)


@dataclass(frozen=True)
class KernelFamily:
    """A piecewise-polynomial profile with parity, scaling exponent and scale ``eps``."""

    pieces: tuple[Piece, ...]
    parity: str
    scaling: int
    epsilon: float
    name: str = "custom"
    moments: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.parity not in PARITIES:
            raise ValueError(f"parity must be one of {PARITIES}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        mom = {f"z{j}": _moment(self.pieces, j) for j in range(5)}
        mom["abs_z1"] = _moment(self.pieces, 1, absolute=True)
        mom["abs_z2"] = _moment(self.pieces, 2, absolute=True)
        mom["abs_z0"] = _moment(self.pieces, 0, absolute=True)
        object.__setattr__(self, "moments", mom)

    @property
    def support(self) -> tuple[float, float]:
        return min(p.lo for p in self.pieces), max(p.hi for p in self.pieces)

    @property
    def radius(self) -> float:
        """``Z``: the profile vanishes outside ``[-Z, Z]``."""
        lo, hi = self.support
        return max(abs(lo), abs(hi))

    @property
    def c_eta(self) -> float:
        return 0.5 * self.moments["abs_z2"]

    @property
    def m2(self) -> float:
        return self.moments["z2"]

    @property
    def m4(self) -> float:
        return self.moments["z4"]

    def with_epsilon(self, epsilon: float) -> "KernelFamily":
        return KernelFamily(self.pieces, self.parity, self.scaling, epsilon, self.name)

    def profile(self, z):
        z = np.asarray(z, dtype=float)
        if self.parity == "odd":
            return 0.5 * (self._raw(z) - self._raw(-z))
        if self.parity == "even":
            return 0.5 * (self._raw(z) + self._raw(-z))
        return self._raw(z)

    def _raw(self, z):
        out = np.zeros_like(z)
        for pc in self.pieces:
            sel = (z >= pc.lo) & (z < pc.hi)
            out = np.where(sel, pc.poly(z), out)
        return out

    def __call__(self, z):
        """Scaled kernel ``eps**-a profile(z / eps)``."""
        eps = self.epsilon
        return eps ** (-self.scaling) * self.profile(np.asarray(z, dtype=float) / eps)

    def scaled_pieces(self) -> list[tuple[float, float, Polynomial]]:
        """Pieces of the scaled kernel as polynomials in the unscaled variable ``y``."""
        eps = self.epsilon
        out = []
        for pc in self.pieces:
            coef = [c * eps ** (-j - self.scaling) for j, c in enumerate(pc.coef)]
            out.append((eps * pc.lo, eps * pc.hi, Polynomial(coef)))
        return out


def _box(lo, hi, value) -> Piece:
    return Piece(float(lo), float(hi), (float(value),))


PRESETS = {
    # eta(z) = -sign(z) on |z| <= 1
    "odd_box": ((_box(-1, 0, 1.0), _box(0, 1, -1.0)), "odd", 2),
    # rho(z) = 1/2 on |z| <= 1
    "even_box": ((_box(-1, 1, 0.5),), "even", 1),
    # rho(z) = 1/2 on 0 <= z <= 2
    "upwind_box": ((_box(0, 2, 0.5),), "one_sided", 2),
}


def _validate(kf: KernelFamily) -> None:
    mom = kf.moments

    def require(label, value, target):
        if abs(value - target) > MOMENT_TOL * max(1.0, abs(target)):
            raise MomentConstraintError(f"{kf.name}: moment {label} = {value!r}, required {target}")

    grid = np.linspace(-kf.radius, kf.radius, 2001)[1:-1]
    breaks = np.array([b for pc in kf.pieces for b in (pc.lo, pc.hi)])
    grid = grid[np.min(np.abs(np.abs(grid)[:, None] - np.abs(breaks)[None, :]), axis=1) > 1e-9]
    raw = kf._raw(grid)
    if kf.parity == "odd":
        if np.max(np.abs(raw + kf._raw(-grid))) > 1e-12:
            raise MomentConstraintError(f"{kf.name}: profile is not odd")
        require("int eta", mom["z0"], 0.0)
        require("int z eta", mom["z1"], -1.0)
        require("int z^2 eta", mom["z2"], 0.0)
    elif kf.parity == "even":
        if np.max(np.abs(raw - kf._raw(-grid))) > 1e-12:
            raise MomentConstraintError(f"{kf.name}: profile is not even")
        if np.min(raw) < 0:
            raise MomentConstraintError(f"{kf.name}: diffusion profile must be nonnegative")
        require("int rho", mom["z0"], 1.0)
        require("int z rho", mom["z1"], 0.0)
    else:
        if kf.support[0] < 0:
            raise MomentConstraintError(f"{kf.name}: one-sided profile must vanish on z < 0")
        if np.min(raw) < 0:
            raise MomentConstraintError(f"{kf.name}: one-sided profile must be nonnegative")
        require("int rho", mom["z0"], 1.0)
        require("int z rho", mom["z1"], 1.0)


def make_kernel(
    preset: str = "custom",
    epsilon: float = 0.1,
    pieces: Sequence | None = None,
    parity: str | None = None,
    scaling: int | None = None,
) -> KernelFamily:
    """Build a kernel family from a preset name or custom polynomial pieces.

    Custom ``pieces`` are ``(lo, hi, coefficients)`` triples with coefficients
    ordered from the constant term up.  The profile must satisfy the moment
    constraints of its parity class, otherwise :class:`MomentConstraintError`
    names the failing moment.
    """
    if preset in PRESETS:
        pcs, par, a = PRESETS[preset]
        kf = KernelFamily(pcs, par, a, float(epsilon), preset)
    elif preset == "custom":
        if pieces is None or parity is None:
            raise ValueError("custom kernels need pieces and parity")
        pcs = tuple(p if isinstance(p, Piece) else Piece(float(p[0]), float(p[1]), tuple(map(float, p[2]))) for p in pieces)
        a = scaling if scaling is not None else (1 if parity == "even" else 2)
        kf = KernelFamily(pcs, parity, a, float(epsilon), "custom")
    else:
        raise ValueError(f"unknown kernel preset {preset!r}")
    _validate(kf)
    return kf


def periodized_eval(kf: KernelFamily, z):
    """Scaled kernel at the representative of ``z`` in ``(-1/2, 1/2]``."""
    if kf.epsilon * kf.radius >= 0.5:
        raise PeriodOverlapError(
            f"period overlap: eps*Z = {kf.epsilon * kf.radius} >= 1/2; kernel images would overlap"
        )
    z = np.asarray(z, dtype=float)
    zr = z - np.ceil(z - 0.5)
    return kf(zr)


def offset_averages(kf: KernelFamily, h: float, offsets) -> np.ndarray:
    """Exact ``E(D)`` (pair average of ``K(x - y)`` for ``j_w - j_v = D``) for integer offsets."""
    offsets = np.asarray(offsets, dtype=np.int64)
    if kf.parity == "odd" or kf.parity == "even":
        # compute on |D| and use the parity of K for exact (anti)symmetry
        mag = np.abs(offsets)
        uniq, inv = np.unique(mag, return_inverse=True)
        vals = _offset_averages_raw(kf, h, uniq)
        if kf.parity == "odd":
            vals = np.where(uniq == 0, 0.0, vals)
            return np.sign(offsets) * vals[inv]
        return vals[inv]
    return _offset_averages_raw(kf, h, offsets)


def _offset_averages_raw(kf: KernelFamily, h: float, offsets: np.ndarray) -> np.ndarray:
    centers = offsets.astype(float) * h
    total = np.zeros(offsets.shape, dtype=float)
    for lo, hi, poly in kf.scaled_pieces():
        npts = poly.degree() // 2 + 2
        t, wt = np.polynomial.legendre.leggauss(npts)
        for side in (-1.0, 1.0):
            # s in [-h, 0] (weight h + s) or [0, h] (weight h - s); y = D h + s
            a = centers if side > 0 else centers - h
            b = centers + h if side > 0 else centers
            a = np.maximum(a, lo)
            b = np.minimum(b, hi)
            ok = b > a
            if not np.any(ok):
                continue
            aa, bb = a[ok], b[ok]
            half = 0.5 * (bb - aa)
            y = 0.5 * (aa + bb)[:, None] + half[:, None] * t[None, :]
            s = y - centers[ok][:, None]
            weight = h - side * s
            total[ok] += half * np.sum(wt[None, :] * weight * poly(y), axis=1)
    return total / h**2


def _offset_range(kf: KernelFamily, h: float) -> np.ndarray:
    lo, hi = kf.support
    eps = kf.epsilon
    d_lo = int(math.floor(eps * lo / h)) - 1
    d_hi = int(math.ceil(eps * hi / h)) + 1
    return np.arange(d_lo, d_hi + 1)


@dataclass
class WeightMatrix:
    """Averaged kernel weights on a level-``m`` partition.

    ``entries[w, v]`` is the cell-pair average of the kernel, times
    ``prefactor`` (``2 kappa / (m2 eps**2)`` for heat, 1 otherwise).  In
    upwind mode the entries are the oriented coefficients
    ``a_wv = nu(K_w)**-1 int_{Q_w} int_0^inf rho_eps(z) 1[x + z in Q_v] dz dx``.
    """

    k: int
    level: int
    epsilon: float
    mode: str
    entries: sp.csr_matrix | np.ndarray
    prefactor: float
    measures: np.ndarray
    boundary: str = "periodic"
    absorption: np.ndarray | None = None
    kernel: KernelFamily | None = None
    band: int = 0

    @property
    def size(self) -> int:
        return self.measures.size

    @property
    def partition(self) -> Partition:
        return Partition.build(self.k, self.level)

    @property
    def dense(self) -> np.ndarray:
        return self.entries.toarray() if sp.issparse(self.entries) else np.asarray(self.entries)

    def weighted_row_sums(self) -> np.ndarray:
        """``sum_v entry(w, v) nu(K_v)``."""
        return np.asarray(self.entries @ self.measures).ravel()

    def header(self) -> dict:
        return {
            "m": self.level,
            "k": self.k,
            "epsilon": self.epsilon,
            "mode": self.mode,
            "prefactor": self.prefactor,
            "boundary": self.boundary,
            "kernel": None if self.kernel is None else self.kernel.name,
            "band": self.band,
        }

    def to_csv(self, path: str | Path, header_path: str | Path | None = None) -> None:
        write_sparse_csv(path, self.entries, self.partition.labels(), ("row_word", "col_word", "value"))
        if header_path is not None:
            hdr = self.header()
            if self.absorption is not None:
                hdr["absorption"] = [float(a) for a in self.absorption]
            Path(header_path).write_text(json.dumps(hdr, indent=2, sort_keys=True) + "\n")


def _assemble(n: int, rows, cols, data) -> sp.csr_matrix | np.ndarray:
    mat = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    mat.sum_duplicates()
    mat.eliminate_zeros()
    if mat.nnz > n * n // 2:
        return mat.toarray()
    return mat


def _circulant(stencil: dict[int, float], n: int):
    rows, cols, data = [], [], []
    idx = np.arange(n)
    for d, val in sorted(stencil.items()):
        if val == 0.0:
            continue
        rows.append(idx)
        cols.append((idx - d) % n)
        data.append(np.full(n, val))
    if not rows:
        return sp.csr_matrix((n, n))
    return _assemble(n, np.concatenate(rows), np.concatenate(cols), np.concatenate(data))


def heat_prefactor(kf: KernelFamily, kappa: float) -> float:
    return 2.0 * kappa / (kf.m2 * kf.epsilon**2)


def averaged_weights(
    kf: KernelFamily,
    m: int,
    mode: str = "linear_generic",
    boundary: str = "periodic",
    k: int = 2,
    kappa: float | None = None,
    quad: Quadrature | None = None,
    cap: int | None = None,
) -> WeightMatrix:
    """Cell-pair averaged weights of the (periodized) kernel at level ``m``.

    Passing ``quad`` switches from exact piecewise integration to tensor
    quadrature of the periodized kernel (useful for non-box profiles and as a
    cross-check).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    required = {"transport": "odd", "heat": "even", "upwind": "one_sided"}.get(mode)
    if required and kf.parity != required:
        raise ValueError(f"{mode} mode needs a {required} kernel, got {kf.parity}")
    if boundary == "dirichlet":
        return dirichlet_variant(kf, m, k=k, kappa=kappa, cap=cap)
    if boundary == "neumann":
        return neumann_variant(kf, m, k=k, kappa=kappa, cap=cap)
    if boundary != "periodic":
        raise ValueError(f"boundary must be one of {BOUNDARIES}")
    if kf.epsilon * kf.radius >= 0.5:
        raise PeriodOverlapError(f"period overlap: eps*Z = {kf.epsilon * kf.radius} >= 1/2")
    n = check_cap(k, m, cap)
    part = Partition.build(k, m)
    h = part.width
    prefactor = 1.0
    if mode == "heat":
        if kappa is None:
            raise ValueError("heat mode needs kappa")
        prefactor = heat_prefactor(kf, kappa)

    if quad is not None:
        sk = kernel_cell_averages(
            lambda x, y: periodized_eval(kf, x - y), m, k, quad, support_radius=kf.epsilon * kf.radius + h
        )
        entries = sp.csr_matrix(sk.entries) * prefactor
        if mode == "upwind":
            entries = (entries.T * h).tocsr()
        band = int(math.ceil(kf.epsilon * kf.radius / h)) + 1
        return WeightMatrix(k, m, kf.epsilon, mode, entries, prefactor, part.measures, "periodic", None, kf, band)

    offsets = _offset_range(kf, h)
    vals = offset_averages(kf, h, offsets)
    if mode == "upwind":
        # a(D) = h * (average of rho_eps(y - x)) = h * E(-D)
        offsets = -offsets
        vals = h * vals
    stencil: dict[int, float] = {}
    for d, val in zip(offsets, vals):
        if val != 0.0:
            key = int(d) % n
            stencil[key] = stencil.get(key, 0.0) + float(val) * prefactor
    nz = [int(d) for d, v in zip(offsets, vals) if v != 0.0]
    band = max((abs(d) for d in nz), default=0)
    entries = _circulant(stencil, n)
    return WeightMatrix(k, m, kf.epsilon, mode, entries, prefactor, part.measures, "periodic", None, kf, band)


def _whole_line_table(kf: KernelFamily, h: float) -> tuple[np.ndarray, np.ndarray]:
    offsets = _offset_range(kf, h)
    return offsets, offset_averages(kf, h, offsets)


def _lookup(offsets: np.ndarray, vals: np.ndarray, d: np.ndarray) -> np.ndarray:
    pos = d - offsets[0]
    ok = (pos >= 0) & (pos < offsets.size)
    out = np.zeros(d.shape)
    out[ok] = vals[pos[ok]]
    return out


def _pairs_within(n: int, reach: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = [], []
    idx = np.arange(n)
    for d in range(-reach, reach + 1):
        j = idx - d
        ok = (j >= 0) & (j < n)
        rows.append(idx[ok])
        cols.append(j[ok])
    return np.concatenate(rows), np.concatenate(cols)


def dirichlet_variant(
    kf: KernelFamily, m: int, k: int = 2, kappa: float | None = None, cap: int | None = None
) -> WeightMatrix:
    """Zero-extension weights on [0, 1] plus the per-cell absorbed exterior mass.

    ``absorption[w]`` is the ``Q_w``-average of ``int_{R \\ [0,1]} rho_eps(x - y) dy``
    (raw, without the heat prefactor).
    """
    if kf.parity != "even":
        raise ValueError("Dirichlet variant needs an even kernel")
    n = check_cap(k, m, cap)
    part = Partition.build(k, m)
    h = part.width
    offsets, vals = _whole_line_table(kf, h)
    prefactor = 1.0 if kappa is None else heat_prefactor(kf, kappa)
    reach = int(np.max(np.abs(offsets[vals != 0]))) if np.any(vals != 0) else 0
    rows, cols = _pairs_within(n, min(reach, n - 1))
    data = _lookup(offsets, vals, rows - cols) * prefactor
    entries = _assemble(n, rows, cols, data)
    idx = np.arange(n)
    absorption = np.zeros(n)
    for d, val in zip(offsets, vals):
        outside = (idx - d < 0) | (idx - d >= n)
        absorption[outside] += h * val
    return WeightMatrix(
        k, m, kf.epsilon, "heat" if kappa is not None else "linear_generic", entries, prefactor,
        part.measures, "dirichlet", absorption, kf, reach,
    )


def neumann_variant(
    kf: KernelFamily, m: int, k: int = 2, kappa: float | None = None, cap: int | None = None
) -> WeightMatrix:
    """Even-reflection weights: exterior cells are folded back onto their mirror images."""
    if kf.parity != "even":
        raise ValueError("Neumann variant needs an even kernel")
    if kf.epsilon * kf.radius >= 1.0:
        raise ValueError("Neumann variant needs eps*Z < 1 (single reflection)")
    n = check_cap(k, m, cap)
    part = Partition.build(k, m)
    h = part.width
    offsets, vals = _whole_line_table(kf, h)
    prefactor = 1.0 if kappa is None else heat_prefactor(kf, kappa)
    reach = int(np.max(np.abs(offsets[vals != 0]))) if np.any(vals != 0) else 0
    rows, cols = _pairs_within(n, n - 1) if 2 * reach >= n else _neumann_pairs(n, reach)
    direct = _lookup(offsets, vals, rows - cols)
    left = _lookup(offsets, vals, rows + cols + 1)  # mirror of v at 0 is cell -1 - j_v
    right = _lookup(offsets, vals, rows + cols + 1 - 2 * n)  # mirror at 1 is cell 2n - 1 - j_v
    data = (direct + left + right) * prefactor
    entries = _assemble(n, rows, cols, data)
    return WeightMatrix(
        k, m, kf.epsilon, "heat" if kappa is not None else "linear_generic", entries, prefactor,
        part.measures, "neumann", None, kf, reach,
    )


def _neumann_pairs(n: int, reach: int) -> tuple[np.ndarray, np.ndarray]:
    r1, c1 = _pairs_within(n, reach)
    # reflected couplings live near the corners (0,0) and (n-1,n-1)
    near = np.arange(min(reach + 1, n))
    a, b = np.meshgrid(near, near, indexing="ij")
    r2, c2 = a.ravel(), b.ravel()
    r3, c3 = n - 1 - r2, n - 1 - c2
    rows = np.concatenate([r1, r2, r3])
    cols = np.concatenate([c1, c2, c3])
    key = np.unique(rows * n + cols)
    return key // n, key % n


# --- consistency of the continuum surrogates ---------------------------------


def _z_nodes(kf: KernelFamily, sub: int = 8, npts: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes in ``z`` with the scaled kernel folded into the weights."""
    t, wt = np.polynomial.legendre.leggauss(npts)
    zs, ws = [], []
    for lo, hi, poly in kf.scaled_pieces():
        edges = np.linspace(lo, hi, sub + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            z = 0.5 * (a + b) + 0.5 * (b - a) * t
            zs.append(z)
            ws.append(0.5 * (b - a) * wt * poly(z))
    return np.concatenate(zs), np.concatenate(ws)


def upwind_flux(a, b):
    """Monotone two-point flux ``g(a, b) = (a+)**2 / 2 + (b-)**2 / 2``."""
    return 0.5 * np.maximum(a, 0.0) ** 2 + 0.5 * np.minimum(b, 0.0) ** 2


def apply_surrogate(kf: KernelFamily, mode: str, u, x, kappa: float = 1.0, b=None):
    """Continuum nonlocal operator applied to a callable ``u`` at points ``x``.

    ``heat``: ``2 kappa/(m2 eps^2) int rho_eps(z)(u(x-z) - u(x)) dz``;
    ``transport``: ``-b D_eps u``; ``burgers``: ``-D_eps(u^2/2)``;
    ``upwind``: ``int_0^inf rho_eps(z)(g(u(x),u(x+z)) - g(u(x-z),u(x))) dz``.
    """
    x = np.asarray(x, dtype=float)
    z, w = _z_nodes(kf)
    ux = u(x)
    shifted = u(x[:, None] - z[None, :])
    if mode == "heat":
        return heat_prefactor(kf, kappa) * ((shifted - ux[:, None]) @ w)
    if mode == "transport":
        d = (shifted - ux[:, None]) @ w
        bx = 1.0 if b is None else b(x)
        return -bx * d
    if mode == "burgers":
        return (0.5 * ux[:, None] ** 2 - 0.5 * shifted**2) @ w
    if mode == "upwind":
        ahead = u(x[:, None] + z[None, :])
        return (upwind_flux(ux[:, None], ahead) - upwind_flux(shifted, ux[:, None])) @ w
    raise ValueError(f"unknown surrogate mode {mode!r}")


def consistency_error(kf: KernelFamily, mode: str, u, n: int = 4096, kappa: float = 1.0, b=None) -> float:
    """Grid L2 norm of ``A_eps u - A u`` on ``n`` equispaced torus points.

    ``u`` must expose ``derivative()`` (see :class:`ssips.reference.TrigPoly`).
    The local operators are ``kappa u''``, ``-b u'``, ``-u u'`` and ``u u'``
    for heat, transport, burgers and upwind respectively.
    """
    x = np.arange(n) / n
    approx = apply_surrogate(kf, mode, u, x, kappa, b)
    du = u.derivative()
    if mode == "heat":
        exact = kappa * du.derivative()(x)
    elif mode == "transport":
        exact = -(1.0 if b is None else b(x)) * du(x)
    elif mode == "burgers":
        exact = -u(x) * du(x)
    elif mode == "upwind":
        exact = u(x) * du(x)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(np.sqrt(np.mean((approx - exact) ** 2)))
