"""Level-m action of the isometry between L2(K, nu) and L2([0,1]).

A function on the fractal and its transported version on the interval share
the same cell averages, so at level ``m`` both are represented by a single
:class:`StepFunction` indexed by words.  Interval-side averages use Gauss-Legendre
quadrature per cell; fractal-side averages use deterministic descendant
anchors ``f_{wv}(base)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .symbolic import (
    IfsSpec,
    Partition,
    check_cap,
    composite_maps,
    format_word,
    parse_word,
    point_index,
    project_all,
    project_indices,
    word_index,
)


@dataclass(frozen=True)
class Quadrature:
    """Per-cell rule: ``gauss`` (``nodes``-point Gauss-Legendre) or ``anchor``.

    The anchor rule places equal weights at the midpoints of the depth-``depth``
    subcells, i.e. the interval images of the symbolic anchors.
    """

    nodes: int = 8
    rule: str = "gauss"
    depth: int | None = None

    def reference(self, m: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes in [0, 1] and weights summing to 1 for a single cell."""
        if self.rule == "gauss":
            x, w = np.polynomial.legendre.leggauss(self.nodes)
            return 0.5 * (x + 1.0), 0.5 * w
        if self.rule == "anchor":
            depth = m if self.depth is None else self.depth
            if depth < m:
                raise ValueError("anchor depth must be >= the partition level")
            n = k ** (depth - m)
            return (np.arange(n) + 0.5) / n, np.full(n, 1.0 / n)
        raise ValueError(f"unknown quadrature rule {self.rule!r}")


DEFAULT_QUAD = Quadrature()
# one-dimensional averages are cheap; 16 nodes keep coarse cells (m = 0, 1) at rounding level
CELL_QUAD = Quadrature(nodes=16)


@dataclass
class StepFunction:
    partition: Partition
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.partition.size,):
            raise ValueError(f"expected {self.partition.size} values, got {self.values.shape}")

    @property
    def level(self) -> int:
        return self.partition.level

    def norm(self) -> float:
        """L2(K, nu) norm of the step function."""
        return float(np.sqrt(np.sum(self.values**2 * self.partition.measures)))

    def refine(self, level: int) -> "StepFunction":
        """Same function represented on a finer partition."""
        if level < self.level:
            raise ValueError("can only refine to a finer level")
        rep = self.partition.k ** (level - self.level)
        fine = Partition.build(self.partition.k, level, self.partition.p, cap=self.partition.k**level)
        return StepFunction(fine, np.repeat(self.values, rep))

    def coarsen(self, level: int) -> "StepFunction":
        """Conditional expectation onto a coarser partition."""
        if level > self.level:
            raise ValueError("can only coarsen to a coarser level")
        rep = self.partition.k ** (self.level - level)
        mu = self.partition.measures.reshape(-1, rep)
        vals = np.sum(self.values.reshape(-1, rep) * mu, axis=1) / np.sum(mu, axis=1)
        return StepFunction(Partition.build(self.partition.k, level, self.partition.p), vals)

    def __call__(self, x):
        """Evaluate the interval-side step function ``sum u_w 1_{Q_w}``."""
        return self.values[point_index(x, self.partition.k, self.partition.level)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["word", "value"])
            for label, v in zip(self.partition.labels(), self.values):
                wr.writerow([label, repr(float(v))])

    @classmethod
    def from_csv(cls, path: str | Path, k: int) -> "StepFunction":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        words = [parse_word(r["word"]) for r in rows]
        m = len(words[0]) if words else 0
        part = Partition.build(k, m)
        vals = np.empty(part.size)
        seen = np.zeros(part.size, dtype=bool)
        for w, r in zip(words, rows):
            j = word_index(w, k)
            vals[j] = float(r["value"])
            seen[j] = True
        if not seen.all():
            raise ValueError("CSV does not cover every word of the level")
        return cls(part, vals)


@dataclass
class StepKernel:
    partition: Partition
    entries: np.ndarray | sp.spmatrix

    @property
    def dense(self) -> np.ndarray:
        return self.entries.toarray() if sp.issparse(self.entries) else np.asarray(self.entries)

    def to_csv(self, path: str | Path) -> None:
        write_sparse_csv(path, self.entries, self.partition.labels(), ("word_row", "word_col", "value"))


def write_sparse_csv(path, matrix, labels, columns) -> None:
    """Nonzero entries in row-major order, one ``(row, col, value)`` line each."""
    mat = sp.coo_matrix(matrix)
    order = np.lexsort((mat.col, mat.row))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(list(columns))
        for i in order:
            wr.writerow([labels[mat.row[i]], labels[mat.col[i]], repr(float(mat.data[i]))])


def _cell_nodes(part: Partition, quad: Quadrature) -> tuple[np.ndarray, np.ndarray]:
    """Absolute node positions (cells x nodes) and per-cell weights."""
    ref_x, ref_w = quad.reference(part.level, part.k)
    h = part.width
    x = part.lefts[:, None] + h * ref_x[None, :]
    return x, ref_w


def cell_averages(f: Callable, m: int, k: int = 2, quad: Quadrature = CELL_QUAD, p=None) -> StepFunction:
    """Lebesgue averages of ``f`` over the interval cells ``Q_w``."""
    part = Partition.build(k, m, p)
    x, w = _cell_nodes(part, quad)
    fx = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise ValueError("non-finite function value in cell_averages")
    return StepFunction(part, fx @ w)


def kernel_cell_averages(
    kernel: Callable,
    m: int,
    k: int = 2,
    quad: Quadrature = DEFAULT_QUAD,
    support_radius: float | None = None,
) -> StepKernel:
    """Tensor-quadrature averages of ``kernel(x, y)`` over all ``Q_w x Q_v``.

    With ``support_radius`` set, pairs whose periodic cell distance exceeds
    the radius are skipped and the result is stored sparse.
    """
    part = Partition.build(k, m)
    n = part.size
    x, w = _cell_nodes(part, quad)
    q = w.size
    if support_radius is None:
        vals = kernel(x.reshape(n, 1, q, 1), x.reshape(1, n, 1, q))
        vals = np.asarray(vals, dtype=float)
        if quad.rule == "anchor":
            out = _block_mean(vals)
        else:
            out = np.einsum("wvab,a,b->wv", vals, w, w)
        return StepKernel(part, out)
    h = part.width
    reach = int(np.ceil(support_radius / h)) + 1
    offsets = np.arange(-reach, reach + 1)
    rows, cols, data = [], [], []
    for d in np.unique(offsets % n):
        wi = np.arange(n)
        vi = (wi - d) % n
        vals = np.asarray(kernel(x[wi][:, :, None], x[vi][:, None, :]), dtype=float)
        if quad.rule == "anchor":
            entry = vals.mean(axis=(1, 2))
        else:
            entry = np.einsum("nab,a,b->n", vals, w, w)
        rows.append(wi)
        cols.append(vi)
        data.append(entry)
    mat = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return StepKernel(part, mat)


def _block_mean(vals: np.ndarray) -> np.ndarray:
    """Mean over the trailing two axes of a ``(n, n, q, q)`` array."""
    n = vals.shape[0]
    return np.ascontiguousarray(vals).reshape(n, n, -1).mean(axis=2)


def integral_of_step(u: StepFunction) -> float:
    return float(np.dot(u.values, u.partition.measures))


def l2_error(u: StepFunction, f: Callable, quad: Quadrature = CELL_QUAD) -> float:
    """``|| sum u_w 1_{Q_w} - f ||_{L2[0,1]}``, equal to the L2(K, nu) distance by isometry."""
    x, w = _cell_nodes(u.partition, quad)
    diff = u.values[:, None] - np.asarray(f(x), dtype=float)
    return float(np.sqrt(np.sum((diff**2 @ w) * u.partition.measures)))


def _weights_at_depth(p, depth: int) -> np.ndarray:
    wts = np.ones(1)
    for _ in range(depth):
        wts = np.concatenate([pi * wts for pi in p])
    return wts


def fractal_cell_averages(
    f: Callable, ifs: IfsSpec, m: int, depth: int, base=None, cap: int | None = None
) -> StepFunction:
    """nu-averages over ``K_w`` from the descendant anchors ``f_{wv}(base)``, ``|v| = depth``.

    ``f`` takes points with coordinates along the last axis.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    check_cap(ifs.k, m + depth, cap if cap is not None else 3**14)
    part = Partition.build(ifs.k, m, ifs.p)
    cloud = project_all(ifs, depth, base, cap=ifs.k**depth)
    wts = _weights_at_depth(ifs.p, depth)
    lin, off = composite_maps(ifs, m, cap=part.size)
    vals = np.empty(part.size)
    for j in range(part.size):
        pts = np.einsum("ij,nj->ni", lin[j], cloud) + off[j]
        vals[j] = np.dot(np.asarray(f(pts), dtype=float), wts)
    return StepFunction(part, vals)


def fractal_pair_averages(J: Callable, ifs: IfsSpec, m: int, depth: int, base=None) -> StepKernel:
    """Symbolic pair averages of ``J`` over ``K_w x K_v`` (uniform ``p``), anchors at level ``m + depth``."""
    n = m + depth
    pts = project_all(ifs, n, base, cap=ifs.k**n)
    nm = ifs.k**m
    q = ifs.k**depth
    a = pts.reshape(nm, 1, q, 1, -1)
    b = pts.reshape(1, nm, 1, q, -1)
    vals = np.asarray(J(a, b), dtype=float)
    return StepKernel(Partition.build(ifs.k, m, ifs.p), _block_mean(vals))


def pullback_kernel(J: Callable, ifs: IfsSpec, depth: int, base=None) -> Callable:
    """Interval kernel ``(xi, eta) -> J(Phi_n(xi), Phi_n(eta))`` with ``Phi`` truncated at depth ``n``.

    ``Phi_n(xi)`` is the anchor of the depth-``n`` word containing ``xi``.
    """
    k = ifs.k

    def kernel(xi, eta):
        xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        a = project_indices(point_index(xi, k, depth), ifs, depth, base)
        b = project_indices(point_index(eta, k, depth), ifs, depth, base)
        return J(a, b)

    return kernel


def pullback_function(f: Callable, ifs: IfsSpec, depth: int, base=None) -> Callable:
    """Interval function ``xi -> f(Phi_n(xi))``."""

    def g(xi):
        xi = np.asarray(xi, float)
        return f(project_indices(point_index(xi, ifs.k, depth), ifs, depth, base))

    return g


def exp_abs_coord_diff(x):
    """``exp(-|x_1 - x_2|)`` on points in the plane."""
    return np.exp(-np.abs(x[..., 0] - x[..., 1]))


def exp_dist(x, y):
    """``exp(-||x - y||)`` for points along the last axis."""
    return np.exp(-np.sqrt(np.sum((x - y) ** 2, axis=-1)))


def step_from_fine(u: StepFunction, level: int) -> StepFunction:
    return u.coarsen(level)


def word_label(w) -> str:
    return format_word(w)
