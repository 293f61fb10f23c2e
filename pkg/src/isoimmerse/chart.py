"""Gridded chart domain and finite-difference exterior calculus.

Fields live on the nodes of a rectangular chart ``U = prod [a_i, b_i]``.
A :class:`MatrixForm` of degree ``r`` stores one ``m x m`` matrix per node
and per strictly increasing multi-index ``(i_1 < ... < i_r)``; its ``data``
array has shape ``(n_components, *grid.shape, m, m)``.

Derivatives use second-order central differences at interior nodes and
second-order one-sided differences on the boundary (``np.gradient`` with
``edge_order=2``).  Partial derivatives along different axes commute
exactly, so ``d(d(alpha))`` only carries rounding error.  Composing two
derivatives along the *same* axis is only first-order accurate within two
nodes of the boundary; see :func:`interior_mask`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import prod
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class GridMismatchError(ValueError):
    """Raised when two fields do not live on the same grid or matrix size."""


@dataclass(frozen=True)
class ChartGrid:
    """Rectangular node grid on a chart ``U`` of dimension 2 or 3.

    Parameters
    ----------
    extents : sequence of (a, b)
        Coordinate interval per axis.
    counts : sequence of int
        Node count per axis, each at least 3.
    """

    extents: tuple[tuple[float, float], ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        extents = tuple((float(a), float(b)) for a, b in self.extents)
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "counts", counts)
        if len(extents) != len(counts):
            raise ValueError("extents and counts must have the same length")
        if len(counts) not in (2, 3):
            raise ValueError(f"chart dimension must be 2 or 3, got {len(counts)}")
        if any(c < 3 for c in counts):
            raise ValueError(f"every axis needs at least 3 nodes, got {counts}")
        if any(not (b > a) for a, b in extents):
            raise ValueError(f"degenerate extents {extents}")

    @classmethod
    def square(cls, n: int, count: int, lo: float = 0.0, hi: float = 1.0) -> "ChartGrid":
        return cls(((lo, hi),) * n, (count,) * n)

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (c - 1) for (a, b), c in zip(self.extents, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(prod(self.spacing))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum((b - a) ** 2 for a, b in self.extents)))

    @property
    def num_nodes(self) -> int:
        return int(prod(self.counts))

    def axis(self, i: int) -> np.ndarray:
        a, _ = self.extents[i]
        return a + self.spacing[i] * np.arange(self.counts[i])

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.axis(i) for i in range(self.n)), indexing="ij"))

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, n)``."""
        return np.stack(self.mesh(), axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Dual-cell quadrature weights (trapezoid rule); they sum to ``|U|``."""
        w = np.ones(self.shape)
        for i, (c, h) in enumerate(zip(self.counts, self.spacing)):
            wi = np.full(c, h)
            wi[0] = wi[-1] = h / 2
            w = w * wi.reshape([-1 if j == i else 1 for j in range(self.n)])
        return w

    def scaled(self, s: float) -> "ChartGrid":
        return ChartGrid(tuple((a * s, b * s) for a, b in self.extents), self.counts)

    def to_header(self) -> dict:
        return {"n": self.n, "counts": list(self.counts), "extents": [list(e) for e in self.extents]}


def interior_mask(grid: ChartGrid, margin: int = 1) -> np.ndarray:
    """Boolean mask of nodes at least ``margin`` nodes away from every face."""
    mask = np.zeros(grid.shape, dtype=bool)
    sl = tuple(slice(margin, c - margin) for c in grid.counts)
    mask[sl] = True
    return mask


def multi_indices(n: int, r: int) -> list[tuple[int, ...]]:
    return list(combinations(range(n), r))


@dataclass(frozen=True)
class ScalarField:
    grid: ChartGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridMismatchError(f"values shape {values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("scalar field has non-finite values")
        object.__setattr__(self, "values", values)

    def max(self, margin: int = 0) -> float:
        if margin == 0:
            return float(np.max(self.values))
        return float(np.max(self.values[interior_mask(self.grid, margin)]))


@dataclass(frozen=True)
class MatrixForm:
    """Matrix-valued differential form sampled on grid nodes."""

    grid: ChartGrid
    degree: int
    data: np.ndarray
    antisymmetric: bool = False
    projection_defect: float = field(default=0.0, compare=False)

    def __post_init__(self):
        n = self.grid.n
        if not 0 <= self.degree <= n:
            raise ValueError(f"degree {self.degree} outside [0, {n}]")
        data = np.asarray(self.data, dtype=float)
        ncomp = len(multi_indices(n, self.degree))
        if data.ndim != n + 3 or data.shape[0] != ncomp or data.shape[1:-2] != self.grid.shape:
            raise GridMismatchError(
                f"data shape {data.shape} incompatible with degree {self.degree} on grid {self.grid.shape}"
            )
        if data.shape[-1] != data.shape[-2]:
            raise GridMismatchError("component values must be square matrices")
        object.__setattr__(self, "data", data)

    @property
    def m(self) -> int:
        return self.data.shape[-1]

    @property
    def indices(self) -> list[tuple[int, ...]]:
        return multi_indices(self.grid.n, self.degree)

    def component(self, index: Sequence[int]) -> np.ndarray:
        return self.data[self.indices.index(tuple(index))]

    @classmethod
    def zeros(cls, grid: ChartGrid, degree: int, m: int, antisymmetric: bool = False) -> "MatrixForm":
        ncomp = len(multi_indices(grid.n, degree))
        return cls(grid, degree, np.zeros((ncomp, *grid.shape, m, m)), antisymmetric)

    @classmethod
    def from_components(cls, grid: ChartGrid, degree: int, comps, antisymmetric: bool = False) -> "MatrixForm":
        return cls(grid, degree, np.stack([np.asarray(c, dtype=float) for c in comps]), antisymmetric)

    @classmethod
    def scalar(cls, grid: ChartGrid, degree: int, comps) -> "MatrixForm":
        """Wrap real-valued components as a form with 1 x 1 matrix values."""
        arr = np.stack([np.asarray(c, dtype=float) for c in comps])
        return cls(grid, degree, arr[..., None, None])

    def with_data(self, data: np.ndarray, antisymmetric: bool | None = None) -> "MatrixForm":
        flag = self.antisymmetric if antisymmetric is None else antisymmetric
        return MatrixForm(self.grid, self.degree, data, flag)

    def project_antisymmetric(self) -> "MatrixForm":
        """Return the so(m) part; the removed symmetric defect is recorded."""
        sym = self.data + np.swapaxes(self.data, -1, -2)
        defect = float(np.max(np.abs(sym))) if sym.size else 0.0
        anti = 0.5 * (self.data - np.swapaxes(self.data, -1, -2))
        return MatrixForm(self.grid, self.degree, anti, True, defect)

    def antisymmetry_error(self) -> float:
        return float(np.max(np.abs(self.data + np.swapaxes(self.data, -1, -2))))

    def pointwise_norm(self) -> np.ndarray:
        """Frobenius norm over components and matrix entries, per node."""
        return np.sqrt(np.sum(self.data**2, axis=(0, -2, -1)))

    def norm_field(self) -> ScalarField:
        return ScalarField(self.grid, self.pointwise_norm())

    def __add__(self, other: "MatrixForm") -> "MatrixForm":
        _check_compatible(self, other)
        return MatrixForm(self.grid, self.degree, self.data + other.data, self.antisymmetric and other.antisymmetric)

    def __sub__(self, other: "MatrixForm") -> "MatrixForm":
        _check_compatible(self, other)
        return MatrixForm(self.grid, self.degree, self.data - other.data, self.antisymmetric and other.antisymmetric)

    def __mul__(self, c: float) -> "MatrixForm":
        return MatrixForm(self.grid, self.degree, self.data * c, self.antisymmetric)

    __rmul__ = __mul__


def _check_compatible(a: MatrixForm, b: MatrixForm) -> None:
    if a.grid != b.grid:
        raise GridMismatchError("forms live on different grids")
    if a.degree != b.degree or a.data.shape != b.data.shape:
        raise GridMismatchError(f"shape mismatch: degree {a.degree} {a.data.shape} vs {b.degree} {b.data.shape}")


def partial(values: np.ndarray, grid: ChartGrid, axis: int, offset: int = 0) -> np.ndarray:
    """Second-order derivative along a grid axis; ``offset`` is the index of
    the first grid axis inside ``values``."""
    return np.gradient(values, grid.spacing[axis], axis=offset + axis, edge_order=2)


def second_partial(values: np.ndarray, grid: ChartGrid, axis: int, offset: int = 0) -> np.ndarray:
    """Second derivative along one axis with a 3-point interior stencil and
    4-point one-sided boundary stencils (both second order)."""
    h = grid.spacing[axis]
    v = np.moveaxis(values, offset + axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    if v.shape[0] >= 4:
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, offset + axis)


def hessian(values: np.ndarray, grid: ChartGrid, offset: int = 0) -> list[list[np.ndarray]]:
    """All second partials ``[[d_i d_j values]]``; mixed ones by composition."""
    n = grid.n
    first = [partial(values, grid, i, offset) for i in range(n)]
    out = [[None] * n for _ in range(n)]
    for i in range(n):
        out[i][i] = second_partial(values, grid, i, offset)
        for j in range(i + 1, n):
            out[i][j] = out[j][i] = partial(first[j], grid, i, offset)
    return out


def derivative_matrix(count: int, h: float) -> sp.csr_matrix:
    """Sparse 1-D matrix reproducing ``np.gradient(..., edge_order=2)``."""
    rows, cols, vals = [], [], []
    for i in range(1, count - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [0, 0, 0, count - 1, count - 1, count - 1]
    cols += [0, 1, 2, count - 1, count - 2, count - 3]
    vals += [-1.5 / h, 2.0 / h, -0.5 / h, 1.5 / h, -2.0 / h, 0.5 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(count, count))


def partial_operator(grid: ChartGrid, axis: int) -> sp.csr_matrix:
    """Sparse matrix of ``d/dx^axis`` acting on C-ordered node vectors."""
    mats = [sp.identity(c, format="csr") for c in grid.counts]
    mats[axis] = derivative_matrix(grid.counts[axis], grid.spacing[axis])
    out = mats[0]
    for mat in mats[1:]:
        out = sp.kron(out, mat, format="csr")
    return out


def _perm_sign(seq: Sequence[int]) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def exterior_derivative(alpha: MatrixForm) -> MatrixForm:
    """``(d alpha)_{i0..ir} = sum_s (-1)^s d_{i_s} alpha_{I without i_s}``."""
    n, r = alpha.grid.n, alpha.degree
    if r >= n:
        raise ValueError("top-degree form has no exterior derivative")
    src = {I: k for k, I in enumerate(alpha.indices)}
    derivs: dict[tuple[int, int], np.ndarray] = {}
    comps = []
    for J in multi_indices(n, r + 1):
        acc = np.zeros(alpha.data.shape[1:])
        for s, axis in enumerate(J):
            rest = J[:s] + J[s + 1:]
            key = (axis, src[rest])
            if key not in derivs:
                derivs[key] = partial(alpha.data[src[rest]], alpha.grid, axis)
            acc = acc + derivs[key] if s % 2 == 0 else acc - derivs[key]
        comps.append(acc)
    return MatrixForm(alpha.grid, r + 1, np.stack(comps), alpha.antisymmetric)


def wedge_bracket(alpha: MatrixForm, beta: MatrixForm) -> MatrixForm:
    """``(alpha ^ beta)_{ij} = alpha_i beta_j - alpha_j beta_i`` for 1-forms."""
    if alpha.grid != beta.grid or alpha.m != beta.m:
        raise GridMismatchError("wedge_bracket needs forms on the same grid with equal matrix size")
    if alpha.degree != 1 or beta.degree != 1:
        raise ValueError("wedge_bracket is defined for two 1-forms")
    comps = []
    for i, j in multi_indices(alpha.grid.n, 2):
        comps.append(alpha.data[i] @ beta.data[j] - alpha.data[j] @ beta.data[i])
    return MatrixForm(alpha.grid, 2, np.stack(comps), alpha.antisymmetric and beta.antisymmetric)


def hodge_star(alpha: MatrixForm) -> MatrixForm:
    """Euclidean star with orientation ``dx^1 ^ ... ^ dx^n``."""
    n, r = alpha.grid.n, alpha.degree
    src = {I: k for k, I in enumerate(alpha.indices)}
    comps = []
    for J in multi_indices(n, n - r):
        I = tuple(i for i in range(n) if i not in J)
        comps.append(_perm_sign(I + J) * alpha.data[src[I]])
    return MatrixForm(alpha.grid, n - r, np.stack(comps), alpha.antisymmetric)


def codifferential(alpha: MatrixForm) -> MatrixForm:
    """``d* = (-1)^(n(r+1)+1) * d *``; on 1-forms this is minus the divergence."""
    n, r = alpha.grid.n, alpha.degree
    if r < 1:
        raise ValueError("codifferential of a 0-form is undefined")
    sign = -1.0 if (n * (r + 1) + 1) % 2 else 1.0
    out = hodge_star(exterior_derivative(hodge_star(alpha)))
    return MatrixForm(alpha.grid, r - 1, sign * out.data, alpha.antisymmetric)


def gradient_form(values: np.ndarray, grid: ChartGrid) -> MatrixForm:
    """``d`` of a matrix-valued 0-form given as an array ``(*shape, m, m)``."""
    return MatrixForm(grid, 1, np.stack([partial(values, grid, i) for i in range(grid.n)]))
