"""Discrete estimators for Lebesgue, Morrey, Campanato and Hardy norms.

Matrix-valued forms are scalarised by their pointwise Frobenius norm over
components and entries, except in :func:`hardy_seminorm`, which convolves
each entry separately so that cancellations survive.  Integrals use the
trapezoid (dual-cell) weights of :attr:`ChartGrid.weights`; balls are sets
of nodes within distance ``r`` of a centre node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.signal import fftconvolve

from .chart import ChartGrid, MatrixForm, ScalarField, exterior_derivative, hodge_star, wedge_bracket

VARIANTS = ("strong", "weak", "campanato", "bmo", "hardy")
_CHUNK = 4_000_000


@dataclass(frozen=True)
class NormSpec:
    """Exponents and the finite family of balls a norm is maximised over.

    ``radii=None`` means the dyadic ladder ``2h, 4h, ...`` capped by and
    ending at ``diam U``; ``center_stride`` subsamples the centre nodes.
    """

    p: float = 2.0
    lam: float = 0.0
    variant: str = "strong"
    radii: tuple[float, ...] | None = None
    center_stride: int = 1

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if int(self.center_stride) < 1:
            raise ValueError("center_stride must be a positive integer")
        if self.radii is not None:
            r = tuple(float(x) for x in self.radii)
            if not r or any(b <= a for a, b in zip(r, r[1:])) or r[0] <= 0:
                raise ValueError("radii must be positive and strictly increasing")
            object.__setattr__(self, "radii", r)

    def ladder(self, grid: ChartGrid) -> tuple[float, ...]:
        if self.lam > grid.n:
            raise ValueError(f"lambda must lie in [0, {grid.n}]")
        hmin = min(grid.spacing)
        if self.radii is not None:
            if self.radii[0] < hmin * (1 - 1e-12):
                raise ValueError(f"smallest radius {self.radii[0]} is below the grid spacing {hmin}")
            return self.radii
        return dyadic_radii(grid)

    def centers(self, grid: ChartGrid) -> tuple[slice, ...]:
        s = int(self.center_stride)
        return tuple(slice(0, c, s) for c in grid.counts)


def dyadic_radii(grid: ChartGrid) -> tuple[float, ...]:
    h = min(grid.spacing)
    diam = grid.diameter
    out = []
    r = 2 * h
    while r < diam:
        out.append(r)
        r *= 2
    out.append(diam)
    return tuple(out)


def _values(f) -> tuple[ChartGrid, np.ndarray]:
    if isinstance(f, ScalarField):
        return f.grid, np.abs(f.values)
    if isinstance(f, MatrixForm):
        return f.grid, f.pointwise_norm()
    raise TypeError(f"expected ScalarField or MatrixForm, got {type(f).__name__}")


def lp_norm(f, p: float) -> float:
    """``(sum_x |f(x)|^p w_x)^(1/p)`` with trapezoid weights ``w``."""
    if not p >= 1:
        raise ValueError("p must be >= 1")
    grid, v = _values(f)
    return float(np.sum(grid.weights * v**p) ** (1.0 / p))


def _weak_from_arrays(v: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    """Row-wise ``max_k v_(k) W_k^(1/p)`` with values sorted decreasingly and
    ``W_k`` the cumulative weight of the ``k`` largest values."""
    order = np.argsort(-v, axis=-1, kind="stable")
    vs = np.take_along_axis(v, order, axis=-1)
    cw = np.cumsum(np.take_along_axis(w, order, axis=-1), axis=-1)
    return np.max(vs * cw ** (1.0 / p), axis=-1)


def weak_lp_norm(f, p: float) -> float:
    """``sup_t t * |{|f| > t}|^(1/p)``, exact on the discrete measure."""
    if not p >= 1:
        raise ValueError("p must be >= 1")
    grid, v = _values(f)
    return float(_weak_from_arrays(v.ravel(), grid.weights.ravel(), p))


def ball_offsets(grid: ChartGrid, r: float) -> np.ndarray:
    """Integer node offsets within Euclidean distance ``r``, shape ``(B, n)``."""
    h = np.asarray(grid.spacing)
    reach = [int(np.floor(r / hi + 1e-9)) for hi in h]
    axes = [np.arange(-k, k + 1) for k in reach]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.n)
    d2 = np.sum((mesh * h) ** 2, axis=-1)
    return mesh[d2 <= r * r * (1 + 1e-12)]


def _ball_kernel(grid: ChartGrid, r: float) -> np.ndarray:
    off = ball_offsets(grid, r)
    reach = off.max(axis=0)
    ker = np.zeros(tuple(2 * k + 1 for k in reach))
    ker[tuple((off + reach).T)] = 1.0
    return ker


def morrey_norm(f, p: float, lam: float, spec: NormSpec | None = None) -> float:
    """``max r^(-lam/p) |f|_{L^p(B_r(x) cap U)}`` over the balls of ``spec``.

    Ball integrals for every centre come from one FFT convolution per radius.
    """
    spec = spec or NormSpec(p=p, lam=lam)
    grid, v = _values(f)
    _check_exponents(p, lam)
    mass = grid.weights * v**p
    sel = spec.centers(grid)
    best = 0.0
    for r in spec.ladder(grid):
        ker = _ball_kernel(grid, r)
        S = np.clip(fftconvolve(mass, ker, mode="same"), 0.0, None)[sel]
        best = max(best, float(r ** (-lam / p) * np.max(S) ** (1.0 / p)))
    return best


def _check_exponents(p: float, lam: float) -> None:
    NormSpec(p=p, lam=lam)


def _ball_gather(grid: ChartGrid, arrays, r: float, sel):
    """Yield per-chunk arrays ``(C, B)`` of the given node arrays over the
    ball of radius ``r`` around each selected centre (padding has zero weight).
    Column 0 holds the centre node itself."""
    off = ball_offsets(grid, r)
    off = off[np.argsort(np.any(off != 0, axis=1), kind="stable")]
    reach = np.abs(off).max(axis=0)
    padded = [np.pad(a, [(k, k) for k in reach]) for a in arrays]
    pshape = padded[0].shape
    strides = np.cumprod((1,) + pshape[::-1][:-1])[::-1]
    off_flat = (off * strides).sum(axis=1)
    centre_idx = np.stack(np.meshgrid(*(np.arange(c)[s] for c, s in zip(grid.counts, sel)), indexing="ij"), axis=-1)
    centre_idx = centre_idx.reshape(-1, grid.n) + reach
    centre_flat = (centre_idx * strides).sum(axis=1)
    flat = [a.ravel() for a in padded]
    chunk = max(1, _CHUNK // max(1, off_flat.size))
    for start in range(0, centre_flat.size, chunk):
        idx = centre_flat[start:start + chunk, None] + off_flat[None, :]
        yield [a[idx] for a in flat]


def weak_morrey_norm(f, p: float, lam: float, spec: NormSpec | None = None) -> float:
    """As :func:`morrey_norm` with the weak ``L^p`` quasi-norm on each ball."""
    spec = spec or NormSpec(p=p, lam=lam)
    grid, v = _values(f)
    _check_exponents(p, lam)
    sel = spec.centers(grid)
    best = 0.0
    for r in spec.ladder(grid):
        for vals, wts in _ball_gather(grid, (v, grid.weights), r, sel):
            best = max(best, float(r ** (-lam / p) * np.max(_weak_from_arrays(vals, wts, p))))
    return best


def campanato_seminorm(f, p: float, lam: float, spec: NormSpec | None = None) -> float:
    """``max r^(-lam/p) |f - f_{B}|_{L^p(B)}`` over balls ``B = B_r(x) cap U``.

    ``lam = n`` gives the BMO seminorm.  Values are taken relative to the
    centre value before averaging, so constants give exactly zero.
    """
    spec = spec or NormSpec(p=p, lam=lam)
    if isinstance(f, MatrixForm):
        f = f.norm_field()
    if not isinstance(f, ScalarField):
        raise TypeError("campanato_seminorm expects a ScalarField or MatrixForm")
    grid, v = f.grid, f.values
    _check_exponents(p, lam)
    sel = spec.centers(grid)
    best = 0.0
    for r in spec.ladder(grid):
        for vals, wts in _ball_gather(grid, (v, grid.weights), r, sel):
            rel = np.where(wts > 0, vals - vals[:, :1], 0.0)
            mean = np.sum(wts * rel, axis=1) / np.sum(wts, axis=1)
            osc = np.sum(wts * np.abs(rel - mean[:, None]) ** p, axis=1) ** (1.0 / p)
            best = max(best, float(r ** (-lam / p) * np.max(osc)))
    return best


# ---------------------------------------------------------------------------
# Hardy space


def gaussian_kernel_1d(t: float, h: float) -> np.ndarray:
    """Gaussian of width ``t`` sampled at spacing ``h``, truncated at four
    widths and scaled so that ``sum(kernel) * h = 1``."""
    reach = max(1, int(np.ceil(4.0 * t / h)))
    z = h * np.arange(-reach, reach + 1)
    k = np.exp(-0.5 * (z / t) ** 2)
    return k / (np.sum(k) * h)


def default_scales(grid: ChartGrid) -> tuple[float, ...]:
    h = min(grid.spacing)
    out = []
    t = h
    while t < grid.diameter:
        out.append(t)
        t *= 2
    out.append(grid.diameter)
    return tuple(out)


def _transfer_1d(t: float, h: float, length: int, real: bool) -> np.ndarray:
    """Transfer function of the truncated Gaussian on a periodic axis."""
    k = gaussian_kernel_1d(t, h)
    reach = k.size // 2
    circ = np.zeros(length)
    circ[: reach + 1] = k[reach:]
    if reach:
        circ[-reach:] = k[:reach]
    return (sfft.rfft if real else sfft.fft)(circ)


def hardy_seminorm(f, scales=None, p: float = 1.0) -> float:
    """``|| max_t |f * h_t| ||_{L^p(R^n)}`` for ``f`` extended by zero.

    ``h_t`` is the truncated Gaussian of width ``t``.  Matrix-valued input
    is convolved entry by entry and the Frobenius norm of the smoothed
    matrix is maximised over ``t``; the result is integrated over a grid
    padded far enough to hold every kernel's support, so the periodic
    convolution below equals the linear one.
    """
    if isinstance(f, ScalarField):
        grid, vals, wts = f.grid, f.values[..., None], np.ones(1)
    elif isinstance(f, MatrixForm):
        grid = f.grid
        vals = np.moveaxis(f.data, 0, grid.n)
        if f.antisymmetric:
            iu = np.triu_indices(f.m, 1)
            vals = vals[..., iu[0], iu[1]]
            wts = np.full(vals.shape[-1], 2.0)
        else:
            wts = np.ones(vals.shape[-2] * vals.shape[-1])
        vals = vals.reshape(*grid.shape, -1)
        wts = np.resize(wts, vals.shape[-1])
    else:
        raise TypeError("hardy_seminorm expects a ScalarField or MatrixForm")
    if not p > 0:
        raise ValueError("p must be positive")
    live = np.any(vals != 0, axis=tuple(range(grid.n)))
    if not live.any():
        return 0.0
    vals, wts = vals[..., live], wts[live]
    scales = tuple(scales) if scales is not None else default_scales(grid)
    h = grid.spacing
    tmax = max(scales)
    pad = [int(np.ceil(4.0 * tmax / hi)) + 1 for hi in h]
    lengths = [sfft.next_fast_len(c + 2 * p, real=(a == grid.n - 1)) for a, (c, p) in enumerate(zip(grid.counts, pad))]
    mass = np.zeros((vals.shape[-1], *lengths))
    mass[(slice(None),) + tuple(slice(0, c) for c in grid.counts)] = np.moveaxis(vals * grid.weights[..., None], -1, 0)
    axes = tuple(range(1, grid.n + 1))
    spec = sfft.rfftn(mass, axes=axes)
    M = np.zeros(lengths)
    for t in scales:
        tf = np.ones(())
        for a in range(grid.n):
            ka = _transfer_1d(t, h[a], lengths[a], real=(a == grid.n - 1))
            tf = np.multiply.outer(tf, ka)
        sm = sfft.irfftn(spec * tf, s=lengths, axes=axes)
        M = np.maximum(M, np.sqrt(np.tensordot(wts, sm**2, axes=1)))
    return float((np.sum(M**p) * grid.cell_volume) ** (1.0 / p))


def compensated_compactness_ratio(xi: MatrixForm, scales=None, boundary_tol: float = 1e-12) -> float:
    """``|(*d xi) ^ (*d xi)|_{H^1} / |d xi|_{L^2}^2`` for a potential vanishing
    on the boundary."""
    grid = xi.grid
    if xi.degree != grid.n - 2:
        raise ValueError(f"expected an ({grid.n}-2)-form potential")
    bmask = np.ones(grid.shape, dtype=bool)
    bmask[tuple(slice(1, -1) for _ in grid.counts)] = False
    size = float(np.max(np.abs(xi.data)))
    if size and float(np.max(np.abs(xi.data[:, bmask]))) > boundary_tol * size:
        raise ValueError("potential must vanish on the boundary")
    dxi = exterior_derivative(xi)
    denom = lp_norm(dxi, 2) ** 2
    if denom == 0.0:
        raise ZeroDivisionError("d xi vanishes")
    Xi = hodge_star(dxi)
    return hardy_seminorm(wedge_bracket(Xi, Xi), scales) / denom
