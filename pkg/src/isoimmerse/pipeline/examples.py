"""Closed-form immersions used as reconstruction oracles.

Each generator returns the immersion, its first and second coordinate
derivatives and, where the normal bundle is not a line, explicit normals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cartan import GeometryData
from ..chart import ChartGrid
from ..integrate import ImmersionField

SQRT_HALF = np.sqrt(0.5)


class ExampleError(ValueError):
    pass


@dataclass(frozen=True)
class ExampleSpec:
    """``patch`` is the coordinate window; ``None`` uses the example default."""

    name: str
    resolution: tuple[int, ...] | int = 33
    patch: tuple[tuple[float, float], ...] | None = None
    eps: float | None = None
    options: dict = field(default_factory=dict, compare=False)

    def grid(self) -> ChartGrid:
        gen = _lookup(self.name)
        patch = self.patch if self.patch is not None else gen.window
        res = self.resolution
        counts = (res,) * gen.n if np.isscalar(res) else tuple(res)
        if len(counts) != gen.n or len(patch) != gen.n:
            raise ExampleError(f"{self.name} is {gen.n}-dimensional")
        if min(counts) < 9:
            raise ExampleError(f"resolution must be at least 9 per axis, got {counts}")
        return ChartGrid(patch, counts)


def _stack(*comps):
    return np.stack(np.broadcast_arrays(*comps), axis=-1)


@dataclass(frozen=True)
class _Generator:
    n: int
    k: int
    window: tuple
    evaluate: object
    check: object = None


def _plane(x, eps):
    u, v = x
    z, o = np.zeros_like(u), np.ones_like(u)
    f = _stack(u, v, z)
    d = [_stack(o, z, z), _stack(z, o, z)]
    dd = [[_stack(z, z, z)] * 2] * 2
    return f, d, dd, None


def _sphere(x, eps):
    t, p = x
    st, ct, sp_, cp = np.sin(t), np.cos(t), np.sin(p), np.cos(p)
    z = np.zeros_like(t)
    f = _stack(st * cp, st * sp_, ct)
    d = [_stack(ct * cp, ct * sp_, -st), _stack(-st * sp_, st * cp, z)]
    dtp = _stack(-ct * sp_, ct * cp, z)
    dd = [[-f, dtp], [dtp, _stack(-st * cp, -st * sp_, z)]]
    return f, d, dd, None


def _sphere_check(patch, eps):
    lo, hi = patch[0]
    if lo < 0.4 or hi > np.pi - 0.4:
        raise ExampleError(f"polar window {patch[0]} reaches a coordinate singularity (need [0.4, pi - 0.4])")


def _cylinder(x, eps):
    u, v = x
    z, o = np.zeros_like(u), np.ones_like(u)
    f = _stack(np.cos(u), np.sin(u), v)
    d = [_stack(-np.sin(u), np.cos(u), z), _stack(z, z, o)]
    zero = _stack(z, z, z)
    dd = [[_stack(-np.cos(u), -np.sin(u), z), zero], [zero, zero]]
    return f, d, dd, None


def _helicoid(x, eps):
    s, t = x
    z, o = np.zeros_like(s), np.ones_like(s)
    f = _stack(s * np.cos(t), s * np.sin(t), t)
    d = [_stack(np.cos(t), np.sin(t), z), _stack(-s * np.sin(t), s * np.cos(t), o)]
    dst = _stack(-np.sin(t), np.cos(t), z)
    dd = [[_stack(z, z, z), dst], [dst, _stack(-s * np.cos(t), -s * np.sin(t), z)]]
    return f, d, dd, None


def _clifford(x, eps):
    u, v = x
    z = np.zeros_like(u)
    cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
    f = SQRT_HALF * _stack(cu, su, cv, sv)
    d = [SQRT_HALF * _stack(-su, cu, z, z), SQRT_HALF * _stack(z, z, -sv, cv)]
    zero = _stack(z, z, z, z)
    dd = [[SQRT_HALF * _stack(-cu, -su, z, z), zero], [zero, SQRT_HALF * _stack(z, z, -cv, -sv)]]
    normals = np.stack([_stack(cu, su, z, z), _stack(z, z, cv, sv)], axis=-1)
    return f, d, dd, normals


def _hypersphere(x, eps):
    a, b, c = x
    sa, ca, sb, cb, sc, cc = np.sin(a), np.cos(a), np.sin(b), np.cos(b), np.sin(c), np.cos(c)
    z = np.zeros_like(a)
    f = _stack(ca, sa * cb, sa * sb * cc, sa * sb * sc)
    da = _stack(-sa, ca * cb, ca * sb * cc, ca * sb * sc)
    db = _stack(z, -sa * sb, sa * cb * cc, sa * cb * sc)
    dc = _stack(z, z, -sa * sb * sc, sa * sb * cc)
    dab = _stack(z, -ca * sb, ca * cb * cc, ca * cb * sc)
    dac = _stack(z, z, -ca * sb * sc, ca * sb * cc)
    dbb = _stack(z, -sa * cb, -sa * sb * cc, -sa * sb * sc)
    dbc = _stack(z, z, -sa * cb * sc, sa * cb * cc)
    dcc = _stack(z, z, -sa * sb * cc, -sa * sb * sc)
    dd = [[-f, dab, dac], [dab, dbb, dbc], [dac, dbc, dcc]]
    return f, [da, db, dc], dd, None


def _hypersphere_check(patch, eps):
    for lo, hi in patch[:2]:
        if lo < 0.4 or hi > np.pi - 0.4:
            raise ExampleError(f"angular window {(lo, hi)} reaches a coordinate singularity (need [0.4, pi - 0.4])")


def _wrinkle(x, eps):
    u, v = x
    z, o = np.zeros_like(u), np.ones_like(u)
    f = _stack(u, v, eps * np.sin(u / eps))
    d = [_stack(o, z, np.cos(u / eps)), _stack(z, o, z)]
    zero = _stack(z, z, z)
    dd = [[_stack(z, z, -np.sin(u / eps) / eps), zero], [zero, zero]]
    return f, d, dd, None


def _wrinkle_check(patch, eps):
    if eps is None or not eps > 0:
        raise ExampleError("wrinkle_family needs a positive eps")


_QUARTER = np.pi / 4
GENERATORS = {
    "plane": _Generator(2, 1, ((0.0, 1.0), (0.0, 1.0)), _plane),
    "sphere_patch": _Generator(2, 1, ((_QUARTER, 3 * _QUARTER), (-_QUARTER, _QUARTER)), _sphere, _sphere_check),
    "cylinder": _Generator(2, 1, ((0.0, 1.5), (0.0, 1.0)), _cylinder),
    "helicoid": _Generator(2, 1, ((0.5, 1.5), (0.0, 1.5)), _helicoid),
    "clifford_torus": _Generator(2, 2, ((0.0, 1.5), (0.0, 1.5)), _clifford),
    "hypersphere3_patch": _Generator(
        3, 1, ((_QUARTER, 3 * _QUARTER), (_QUARTER, 3 * _QUARTER), (0.0, 2 * _QUARTER)), _hypersphere, _hypersphere_check
    ),
    "wrinkle_family": _Generator(2, 1, ((0.0, 1.0), (0.0, 1.0)), _wrinkle, _wrinkle_check),
}


def _lookup(name: str) -> _Generator:
    try:
        return GENERATORS[name]
    except KeyError:
        raise ExampleError(f"unknown example {name!r}; choose from {sorted(GENERATORS)}") from None


def line_normal(tangents: np.ndarray) -> np.ndarray:
    """Unit normal of a hypersurface with ``det(tangents, nu) > 0``.

    ``nu_b = det(tangents | e_b)`` by cofactor expansion along the last column.
    """
    m, n = tangents.shape[-2:]
    nu = np.empty((*tangents.shape[:-2], m))
    for b in range(m):
        minor = np.delete(tangents, b, axis=-2)
        nu[..., b] = (-1) ** (b + m - 1) * np.linalg.det(minor)
    return nu / np.linalg.norm(nu, axis=-1, keepdims=True)


def evaluate(spec: ExampleSpec):
    """Sampled ``(grid, iota, d iota, d d iota, normals nu)``."""
    gen = _lookup(spec.name)
    grid = spec.grid()
    if gen.check is not None:
        gen.check(grid.extents, spec.eps)
    f, d, dd, normals = gen.evaluate(grid.mesh(), spec.eps)
    tangents = np.stack(d, axis=-1)
    if normals is None:
        normals = line_normal(tangents)[..., None]
    else:
        sign = np.sign(np.linalg.det(np.concatenate([tangents, normals], axis=-1)))
        normals = normals.copy()
        normals[..., -1] *= sign[..., None]
    return grid, f, d, dd, normals


def generate_example(spec: ExampleSpec) -> tuple[GeometryData, ImmersionField]:
    """Closed-form ``(g, II, N)`` and the reference immersion on the grid."""
    gen = _lookup(spec.name)
    grid, f, d, dd, nu = evaluate(spec)
    n, k = gen.n, gen.k
    eta = -nu
    g = np.empty((*grid.shape, n, n))
    II = np.empty((*grid.shape, n, n, k))
    for i in range(n):
        for j in range(n):
            g[..., i, j] = np.sum(d[i] * d[j], axis=-1)
            II[..., i, j, :] = np.einsum("...c,...ca->...a", dd[i][j], eta)
    # Every example has a parallel normal frame, so N vanishes identically.
    N = np.zeros((n, *grid.shape, k, k))
    return GeometryData(grid, g, II, N), ImmersionField(grid, f)
