"""Words, cylinders and self-similar partitions.

Words are plain tuples of letters in ``1..k``.  All vectors and matrices in
the package are indexed by words in lexicographic order, which coincides with
the left-to-right order of the interval cells ``Q_w`` on ``[0, 1]``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

Word = tuple[int, ...]

#: Default bound on the number of cells ``k**m`` any routine may allocate.
MAX_CELLS = 3**10


class CellCapError(ValueError):
    """Raised when ``k**m`` exceeds the configured cell cap."""


def check_cap(k: int, m: int, cap: int | None = None) -> int:
    n = k**m
    cap = MAX_CELLS if cap is None else cap
    if n > cap:
        raise CellCapError(f"k**m = {k}**{m} = {n} exceeds the cell cap {cap}")
    return n


def _check_word(w: Sequence[int], k: int) -> None:
    for letter in w:
        if not 1 <= letter <= k:
            raise ValueError(f"letter {letter} out of range 1..{k} in word {tuple(w)}")


def enumerate_words(k: int, m: int, cap: int | None = None) -> list[Word]:
    """All words of length ``m`` over ``1..k`` in lexicographic order."""
    if k < 2:
        raise ValueError("alphabet size k must be >= 2")
    if m < 0:
        raise ValueError("word length m must be >= 0")
    check_cap(k, m, cap)
    return list(itertools.product(range(1, k + 1), repeat=m))


def word_index(w: Sequence[int], k: int) -> int:
    """Position of ``w`` in the lexicographic order of its level."""
    j = 0
    for letter in w:
        j = j * k + (letter - 1)
    return j


def word_from_index(j: int, k: int, m: int) -> Word:
    letters = []
    for _ in range(m):
        j, d = divmod(j, k)
        letters.append(d + 1)
    return tuple(reversed(letters))


def format_word(w: Sequence[int]) -> str:
    """Digit-string form used in files, e.g. ``(2, 1, 3) -> "213"``."""
    if any(letter > 9 for letter in w):
        raise ValueError("digit-string serialization needs letters <= 9")
    return "".join(str(letter) for letter in w)


def parse_word(s: str) -> Word:
    s = s.strip()
    if not s.isdigit() and s != "":
        raise ValueError(f"not a word: {s!r}")
    return tuple(int(c) for c in s)


def cell_measure(w: Sequence[int], p: Sequence[float]) -> float:
    """Self-similar measure of the cylinder cell ``K_w``: the product of ``p``."""
    _check_word(w, len(p))
    out = 1.0
    for letter in w:
        out *= p[letter - 1]
    return out


def interval_cell(w: Sequence[int], k: int) -> tuple[float, float]:
    """Endpoints of ``Q_w = g_w([0, 1])`` for the model IFS ``g_i(x) = (x + i - 1)/k``."""
    _check_word(w, k)
    n = k ** len(w)
    j = word_index(w, k)
    return j / n, (j + 1) / n


def point_index(x, k: int, m: int):
    """Lexicographic index of the level-``m`` cell containing ``x`` (vectorized).

    Cells are half-open ``[a, a + k**-m)``; ``x = 1`` goes to the last cell.
    """
    n = k**m
    j = np.floor(np.asarray(x, dtype=float) * n).astype(np.int64)
    return np.clip(j, 0, n - 1)


def word_of_point(x: float, k: int, m: int) -> Word:
    """Base-``k`` digits of ``x`` shifted to letters ``1..k``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x = {x} outside [0, 1]")
    return word_from_index(int(point_index(x, k, m)), k, m)


@dataclass(frozen=True)
class Similitude:
    linear: np.ndarray  # 2x2 (or dxd)
    offset: np.ndarray
    ratio: float

    def __call__(self, x):
        return apply_affine(self.linear, self.offset, x)


def apply_affine(linear: np.ndarray, offset: np.ndarray, x):
    """``linear @ x + offset`` for points stored along the last axis.

    Written out coordinate-wise so that identical inputs give bit-identical
    outputs no matter how many points are processed at once.
    """
    x = np.asarray(x, dtype=float)
    d = linear.shape[0]
    cols = []
    for i in range(d):
        acc = linear[i, 0] * x[..., 0]
        for j in range(1, d):
            acc = acc + linear[i, j] * x[..., j]
        cols.append(acc + offset[i])
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class IfsSpec:
    """A probabilistic IFS of similitudes in R^d."""

    maps: tuple[Similitude, ...]
    p: tuple[float, ...]
    name: str = "custom"

    def __post_init__(self):
        if len(self.maps) < 2:
            raise ValueError("an IFS needs at least two maps")
        if len(self.p) != len(self.maps):
            raise ValueError("probability vector length must equal the number of maps")
        if any(pi <= 0 for pi in self.p) or abs(sum(self.p) - 1.0) > 1e-12:
            raise ValueError(f"p must be positive and sum to 1, got {self.p}")
        for i, f in enumerate(self.maps):
            if not 0 < f.ratio < 1:
                raise ValueError(f"map {i + 1}: contraction ratio {f.ratio} not in (0, 1)")
            sv = np.linalg.svd(f.linear, compute_uv=False)
            if np.max(np.abs(sv - f.ratio)) > 1e-9:
                raise ValueError(f"map {i + 1} is not a similitude with ratio {f.ratio}")

    @property
    def k(self) -> int:
        return len(self.maps)

    @property
    def dim(self) -> int:
        return self.maps[0].linear.shape[0]

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(f.ratio for f in self.maps)

    @property
    def q(self) -> float | None:
        """Common contraction ratio, or ``None`` when the ratios differ."""
        r = self.ratios
        return r[0] if all(abs(ri - r[0]) < 1e-15 for ri in r) else None

    @property
    def similarity_dimension(self) -> float:
        q = self.q
        if q is None:
            raise ValueError("similarity dimension needs a common ratio")
        return math.log(self.k) / math.log(1.0 / q)

    def barycenter(self) -> np.ndarray:
        """Barycenter of the self-similar measure: the fixed point of ``sum p_i f_i``."""
        d = self.dim
        a = np.eye(d)
        rhs = np.zeros(d)
        for pi, f in zip(self.p, self.maps):
            a -= pi * f.linear
            rhs += pi * f.offset
        return np.linalg.solve(a, rhs)


def sg_preset() -> IfsSpec:
    """Sierpinski gasket: half-scale maps towards (0,0), (1,0), (1/2, sqrt(3)/2)."""
    vertices = [(0.0, 0.0), (1.0, 0.0), (0.5, math.sqrt(3) / 2)]
    half = 0.5 * np.eye(2)
    maps = tuple(Similitude(half, 0.5 * np.array(v), 0.5) for v in vertices)
    return IfsSpec(maps, (1 / 3, 1 / 3, 1 / 3), name="sg")


def interval_preset(k: int) -> IfsSpec:
    """The model IFS ``g_i(x) = x/k + (i-1)/k`` on [0, 1], embedded as 1-d maps."""
    maps = tuple(
        Similitude(np.array([[1.0 / k]]), np.array([(i - 1) / k]), 1.0 / k) for i in range(1, k + 1)
    )
    return IfsSpec(maps, tuple([1.0 / k] * k), name=f"interval{k}")


def ifs_from_dict(cfg: dict) -> IfsSpec:
    allowed = {"k", "maps", "p", "name"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ValueError(f"unknown IFS keys: {sorted(unknown)}")
    maps = tuple(
        Similitude(np.array(m["matrix"], dtype=float), np.array(m["offset"], dtype=float), float(m["ratio"]))
        for m in cfg["maps"]
    )
    k = cfg.get("k", len(maps))
    if k != len(maps):
        raise ValueError(f"k = {k} but {len(maps)} maps given")
    p = tuple(cfg.get("p", [1.0 / k] * k))
    return IfsSpec(maps, p, name=cfg.get("name", "custom"))


def ifs_to_dict(ifs: IfsSpec) -> dict:
    return {
        "name": ifs.name,
        "k": ifs.k,
        "maps": [
            {"matrix": f.linear.tolist(), "offset": f.offset.tolist(), "ratio": f.ratio} for f in ifs.maps
        ],
        "p": list(ifs.p),
    }


def load_ifs(path: str | Path) -> IfsSpec:
    with open(path) as fh:
        return ifs_from_dict(json.load(fh))


def project_point(w: Sequence[int], ifs: IfsSpec, base=None) -> np.ndarray:
    """``f_{w_1} o ... o f_{w_m}(base)``; ``base`` defaults to the measure barycenter."""
    _check_word(w, ifs.k)
    x = ifs.barycenter() if base is None else np.asarray(base, dtype=float)
    for letter in reversed(w):
        x = ifs.maps[letter - 1](x)
    return x


def projection_error_bound(w: Sequence[int], ifs: IfsSpec, base=None) -> float:
    """Upper bound on the distance from ``project_point(w)`` to ``pi_K`` of any extension of ``w``."""
    x = ifs.barycenter() if base is None else np.asarray(base, dtype=float)
    rmax = max(ifs.ratios)
    reach = max(float(np.linalg.norm(x - f(x))) for f in ifs.maps) / (1.0 - rmax)
    scale = 1.0
    for letter in w:
        scale *= ifs.ratios[letter - 1]
    return scale * reach


def project_all(ifs: IfsSpec, n: int, base=None, cap: int | None = None) -> np.ndarray:
    """Anchor points ``f_w(base)`` of all words of length ``n``, lexicographic order."""
    check_cap(ifs.k, n, cap)
    x = ifs.barycenter() if base is None else np.asarray(base, dtype=float)
    pts = x[None, :]
    for _ in range(n):
        pts = np.concatenate([f(pts) for f in ifs.maps], axis=0)
    return pts


def project_indices(j, ifs: IfsSpec, n: int, base=None) -> np.ndarray:
    """Vectorized ``project_point`` for lexicographic indices ``j`` at level ``n``.

    Applies the maps innermost-first, exactly like :func:`project_all`, so the
    two agree bit for bit.
    """
    j = np.asarray(j, dtype=np.int64)
    x = ifs.barycenter() if base is None else np.asarray(base, dtype=float)
    pts = np.broadcast_to(x, j.shape + x.shape).copy()
    k = ifs.k
    rest = j.copy()
    for _ in range(n):
        digit = rest % k
        rest = rest // k
        new = np.empty_like(pts)
        for i, f in enumerate(ifs.maps):
            sel = digit == i
            if np.any(sel):
                new[sel] = f(pts[sel])
        pts = new
    return pts


def composite_maps(ifs: IfsSpec, m: int, cap: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Linear parts and offsets of ``f_w`` for all level-``m`` words."""
    check_cap(ifs.k, m, cap)
    d = ifs.dim
    lin = np.eye(d)[None]
    off = np.zeros((1, d))
    for _ in range(m):
        # prepend a letter: f_i o f_v
        lin = np.concatenate([np.einsum("ij,njk->nik", f.linear, lin) for f in ifs.maps])
        off = np.concatenate([f(off) for f in ifs.maps])
    return lin, off


@dataclass(frozen=True)
class Partition:
    """Level-``m`` cell structure shared by the fractal and the unit interval."""

    k: int
    level: int
    p: tuple[float, ...]
    measures: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, k: int, m: int, p: Sequence[float] | None = None, cap: int | None = None) -> "Partition":
        check_cap(k, m, cap)
        p = tuple([1.0 / k] * k) if p is None else tuple(float(x) for x in p)
        if len(p) != k:
            raise ValueError("len(p) must equal k")
        meas = np.ones(1)
        for _ in range(m):
            meas = np.concatenate([pi * meas for pi in p])
        if all(pi == 1.0 / k for pi in p):
            # uniform case: exact value, no accumulated rounding
            meas = np.full(k**m, 1.0 / k**m)
        return cls(k, m, p, meas)

    @property
    def size(self) -> int:
        return self.k**self.level

    @property
    def width(self) -> float:
        return 1.0 / self.size

    @property
    def uniform(self) -> bool:
        return all(pi == 1.0 / self.k for pi in self.p)

    @property
    def words(self) -> list[Word]:
        return enumerate_words(self.k, self.level, cap=max(self.size, MAX_CELLS))

    @property
    def lefts(self) -> np.ndarray:
        return np.arange(self.size) / self.size

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.size) + 0.5) / self.size

    def labels(self) -> list[str]:
        return [format_word(w) for w in self.words]


@dataclass(frozen=True)
class RateModel:
    """Scales of the two-parameter error law ``eps**beta + q**(alpha m)``."""

    k: int
    q: float
    alpha: float = 1.0
    beta: float = 1.0

    @property
    def s(self) -> float:
        return math.log(self.k) / math.log(1.0 / self.q)

    def n_cells(self, m: int) -> int:
        return self.k**m

    def balanced_epsilon(self, m: int, c: float = 1.0) -> float:
        """``c * N_m ** (-alpha / (beta s))``, i.e. ``eps**beta ~ q**(alpha m)``."""
        return c * self.n_cells(m) ** (-self.alpha / (self.beta * self.s))

    def balanced_level(self, eps: float) -> int:
        """Smallest ``m`` with ``q**(alpha m) <= eps**beta``."""
        m = math.log(eps**self.beta) / (self.alpha * math.log(self.q))
        return max(0, math.ceil(m - 1e-12))

    @classmethod
    def for_ifs(cls, ifs: IfsSpec, alpha: float = 1.0, beta: float = 1.0) -> "RateModel":
        q = ifs.q
        if q is None:
            raise ValueError("rate model needs a common contraction ratio")
        return cls(ifs.k, q, alpha, beta)
