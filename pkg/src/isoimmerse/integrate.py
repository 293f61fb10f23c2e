"""Pfaff and Poincare integration, rigid alignment and geometry extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.sparse as sp

from .cartan import Coframe, GeometryData, MetricError
from .chart import ChartGrid, MatrixForm, ScalarField, hessian, multi_indices, partial
from .gauge import GaugeField, HolonomyField, edge_transports, holonomy_defect, polar_so

log = logging.getLogger(__name__)


class FlatnessError(ValueError):
    """The connection is not flat enough for the Pfaff system to be solvable."""

    def __init__(self, message: str, holonomy: HolonomyField):
        super().__init__(message)
        self.holonomy = holonomy


class ClosednessError(ValueError):
    """The 1-form ``omega^T P`` is not closed, so it has no primitive."""

    def __init__(self, message: str, field: ScalarField):
        super().__init__(message)
        self.field = field


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class ImmersionField:
    """Points of ``R^m`` per node; ``points`` has shape ``(*grid.shape, m)``."""

    grid: ChartGrid
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape[:-1] != self.grid.shape:
            raise ValueError(f"points shape {pts.shape} incompatible with grid {self.grid.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("immersion has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return self.points.shape[-1]


@dataclass(frozen=True)
class RigidMotion:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        if np.max(np.abs(R.T @ R - np.eye(R.shape[0]))) > 1e-12 or np.linalg.det(R) <= 0:
            raise ValueError("rotation is not in SO(m)")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass
class PfaffOptions:
    """Pfaff solver settings.

    ``flatness_tol`` bounds the plaquette holonomy defect divided by the
    plaquette area, a discrete curvature magnitude.  Flat data sit near
    ``2h`` in these units on the bundled examples.  With ``relaxed_solve``
    the tree solution seeds conjugate gradients for the minimiser of the
    edge misfit without the orthogonality constraint, which is then
    projected onto SO(m);
    at most ``sweeps`` Gauss-Seidel sweeps then polish the constrained
    problem, stopping once the edge misfit changes by less than
    ``sweep_tol`` relative to itself.
    """

    flatness_tol: float = 0.25
    sweeps: int = 5
    sweep_tol: float = 1e-6
    relaxed_solve: bool = True


# ---------------------------------------------------------------------------
# Pfaff system  dP + Omega P = 0


def _axis_index(n: int, axis: int, i, fixed) -> tuple:
    """Index selecting position ``i`` on ``axis``, all of the axes before it
    and the base position on the axes after it."""
    return (slice(None),) * axis + (i,) + tuple(fixed[axis + 1:])


def _tree_propagate(T: list[np.ndarray], grid: ChartGrid, base, P0) -> np.ndarray:
    n = grid.n
    m = P0.shape[0]
    P = np.zeros((*grid.shape, m, m))
    P[tuple(base)] = P0
    for a in range(n):
        for i in range(base[a], grid.counts[a] - 1):
            P[_axis_index(n, a, i + 1, base)] = T[a][_axis_index(n, a, i, base)] @ P[_axis_index(n, a, i, base)]
        for i in range(base[a], 0, -1):
            Tb = np.swapaxes(T[a][_axis_index(n, a, i - 1, base)], -1, -2)
            P[_axis_index(n, a, i - 1, base)] = Tb @ P[_axis_index(n, a, i, base)]
    return P


def _shift(n, axis):
    lo = [slice(None)] * n
    hi = [slice(None)] * n
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return tuple(lo), tuple(hi)


def edge_defect(P: np.ndarray, T: list[np.ndarray]) -> float:
    """Largest ``|P_j - T_e P_i|_F`` over every grid edge."""
    n = len(T)
    worst = 0.0
    for a in range(n):
        lo, hi = _shift(n, a)
        r = P[hi] - T[a] @ P[lo]
        worst = max(worst, float(np.max(np.sqrt(np.sum(r**2, axis=(-2, -1))))))
    return worst


def _neighbour_sum(P: np.ndarray, T: list[np.ndarray]) -> np.ndarray:
    n = len(T)
    M = np.zeros_like(P)
    for a in range(n):
        lo, hi = _shift(n, a)
        M[hi] += T[a] @ P[lo]
        M[lo] += np.swapaxes(T[a], -1, -2) @ P[hi]
    return M


def _normal_solve(A: sp.spmatrix, rhs: np.ndarray, x0: np.ndarray, precond=None, rtol: float = 1e-11) -> np.ndarray:
    """Preconditioned conjugate gradients on an SPD system, all right-hand
    side columns at once."""
    precond = precond or (lambda v: v)
    x = x0.copy()
    r = rhs - A @ x
    z = precond(r)
    p = z.copy()
    rz = np.sum(r * z, axis=0)
    stop = rtol * np.linalg.norm(rhs, axis=0)
    for _ in range(10 * A.shape[0]):
        if np.all(np.linalg.norm(r, axis=0) <= stop):
            break
        Ap = A @ p
        pAp = np.sum(p * Ap, axis=0)
        alpha = np.divide(rz, pAp, out=np.zeros_like(rz), where=pAp > 0)
        x += alpha * p
        r -= alpha * Ap
        z = precond(r)
        rz_new = np.sum(r * z, axis=0)
        beta = np.divide(rz_new, rz, out=np.zeros_like(rz), where=rz > 0)
        p = z + beta * p
        rz = rz_new
    else:
        log.warning("conjugate gradients stopped before reaching rtol=%g", rtol)
    return x


class _GraphLaplacianPreconditioner:
    """Approximate inverse of a node Laplacian with one pinned node.

    Applies ``(L_neumann + c I)^{-1}`` by cosine transforms; with ``frames``
    the vectors are first rotated into the given per-node frames, which
    turns a connection Laplacian of a nearly flat connection into a plain
    graph Laplacian.
    """

    def __init__(self, grid: ChartGrid, keep: np.ndarray, block: int, frames: np.ndarray | None = None):
        lam = np.zeros(grid.shape)
        for a, c in enumerate(grid.counts):
            shape = [1] * grid.n
            shape[a] = c
            lam = lam + (2.0 - 2.0 * np.cos(np.pi * np.arange(c) / c)).reshape(shape)
        shift = float(np.min(lam[lam > 0]))
        self.inv = 1.0 / (lam + shift)
        self.grid, self.keep, self.block, self.frames = grid, keep, block, frames

    def __call__(self, v: np.ndarray) -> np.ndarray:
        grid, m = self.grid, self.block
        full = np.zeros((grid.num_nodes * m, v.shape[1]))
        full[self.keep] = v
        full = full.reshape(*grid.shape, m, v.shape[1])
        if self.frames is not None:
            full = np.swapaxes(self.frames, -1, -2) @ full
        axes = tuple(range(grid.n))
        coef = scipy.fft.dctn(full, type=2, axes=axes, norm="ortho")
        coef *= self.inv[(...,) + (None, None)]
        full = scipy.fft.idctn(coef, type=2, axes=axes, norm="ortho")
        if self.frames is not None:
            full = self.frames @ full
        return full.reshape(grid.num_nodes * m, v.shape[1])[self.keep]


def _relaxed_frame(T: list[np.ndarray], grid: ChartGrid, base, P0: np.ndarray, P_init: np.ndarray) -> np.ndarray:
    """Minimise ``sum_e |P_j - T_e P_i|^2`` over all matrices, ``P(base) = P0``,
    then project every node onto SO(m)."""
    m = P0.shape[0]
    N = grid.num_nodes
    idx = np.arange(N).reshape(grid.shape)
    rows, cols, vals = [], [], []
    e0 = 0
    r_m = np.arange(m)
    for a in range(grid.n):
        lo, hi = _shift(grid.n, a)
        i = idx[lo].ravel()
        j = idx[hi].ravel()
        ne = i.size
        erow = (e0 + np.arange(ne))[:, None] * m
        rows.append((erow + r_m).ravel())
        cols.append((j[:, None] * m + r_m).ravel())
        vals.append(np.ones(ne * m))
        Ta = T[a].reshape(ne, m, m)
        rows.append(np.broadcast_to((erow + r_m)[:, :, None], (ne, m, m)).ravel())
        cols.append(np.broadcast_to((i[:, None] * m + r_m)[:, None, :], (ne, m, m)).ravel())
        vals.append(-Ta.ravel())
        e0 += ne
    B = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(e0 * m, N * m)
    )
    b = int(np.ravel_multi_index(base, grid.shape))
    keep = np.ones(N * m, dtype=bool)
    keep[b * m:(b + 1) * m] = False
    Bk = B[:, keep].tocsc()
    rhs = -(B[:, ~keep] @ P0)
    x0 = P_init.reshape(N * m, m)[keep]
    pre = _GraphLaplacianPreconditioner(grid, keep, m, P_init)
    sol = _normal_solve((Bk.T @ Bk).tocsr(), np.asarray(Bk.T @ rhs), x0, pre)
    full = np.empty((N * m, m))
    full[keep] = sol
    full[~keep] = P0
    P = full.reshape(*grid.shape, m, m)
    return polar_so(P)


def solve_pfaff(
    omega: MatrixForm,
    base=None,
    P0: np.ndarray | None = None,
    opts: PfaffOptions | None = None,
) -> tuple[GaugeField, float]:
    """Integrate ``dP + Omega P = 0`` with ``P(base) = P0``.

    The frame is first propagated along lexicographic tree paths by edge
    transports, then refined on the edge misfit ``sum_e |P_j - T_e P_i|^2``
    (see :class:`PfaffOptions`) with red-black Gauss-Seidel sweeps that
    project each node onto SO(m); the base node is held fixed.  Returns the frame and the largest misfit over
    all edges.
    """
    opts = opts or PfaffOptions()
    grid, m = omega.grid, omega.m
    base = tuple(int(b) for b in (base if base is not None else (0,) * grid.n))
    if len(base) != grid.n or any(not 0 <= b < c for b, c in zip(base, grid.counts)):
        raise ValueError(f"base node {base} outside grid {grid.shape}")
    P0 = np.eye(m) if P0 is None else np.asarray(P0, dtype=float)
    if np.max(np.abs(P0.T @ P0 - np.eye(m))) > 1e-10 or np.linalg.det(P0) <= 0:
        raise ValueError("P0 is not in SO(m)")
    T = edge_transports(omega)
    hol = holonomy_defect(omega, T)
    if hol.max_density > opts.flatness_tol:
        raise FlatnessError(
            f"holonomy defect {hol.max:.6g} (per unit area {hol.max_density:.6g}) exceeds flatness tolerance "
            f"{opts.flatness_tol:g}",
            hol,
        )
    P = _tree_propagate(T, grid, base, P0)
    if opts.relaxed_solve:
        P = _relaxed_frame(T, grid, base, P0, P)
    parity = np.add.reduce(np.indices(grid.shape), axis=0) % 2
    colours = [parity == c for c in (0, 1)]
    for c in colours:
        c[base] = False
    prev = edge_defect(P, T)
    sweep = -1
    for sweep in range(opts.sweeps):
        for c in colours:
            M = _neighbour_sum(P, T)
            P[c] = polar_so(M[c])
        cur = edge_defect(P, T)
        if abs(prev - cur) <= opts.sweep_tol * cur:
            break
        prev = cur
    log.debug("pfaff refinement stopped after %d sweeps", sweep + 1)
    return GaugeField(grid, P), edge_defect(P, T)


# ---------------------------------------------------------------------------
# Poincare system  d iota = omega^T P


def poincare_form(coframe: Coframe, P) -> np.ndarray:
    """``theta[mu] = W[:, mu]^T P[:n, :]``, shape ``(n, *grid.shape, m)``."""
    Pv = P.values if isinstance(P, GaugeField) else np.asarray(P)
    n = coframe.grid.n
    return np.stack([np.einsum("...i,...ij->...j", coframe.W[..., :, mu], Pv[..., :n, :]) for mu in range(n)])


def closedness_field(theta: np.ndarray, grid: ChartGrid) -> ScalarField:
    total = np.zeros(grid.shape)
    for a, b in multi_indices(grid.n, 2):
        r = partial(theta[b], grid, a) - partial(theta[a], grid, b)
        total += np.sum(r**2, axis=-1)
    return ScalarField(grid, np.sqrt(total))


def _edge_incidence(grid: ChartGrid) -> tuple[sp.csr_matrix, list]:
    idx = np.arange(grid.num_nodes).reshape(grid.shape)
    rows, cols, vals = [], [], []
    e = 0
    slices = []
    for a in range(grid.n):
        lo, hi = _shift(grid.n, a)
        i = idx[lo].ravel()
        j = idx[hi].ravel()
        ne = i.size
        r = np.arange(e, e + ne)
        rows += [r, r]
        cols += [i, j]
        vals += [-np.ones(ne), np.ones(ne)]
        slices.append(slice(e, e + ne))
        e += ne
    B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(e, grid.num_nodes))
    return B, slices


def _tree_integrate(incs: list[np.ndarray], grid: ChartGrid, base, x0: np.ndarray) -> np.ndarray:
    n = grid.n
    out = np.zeros((*grid.shape, x0.shape[0]))
    out[tuple(base)] = x0
    for a in range(n):
        for i in range(base[a], grid.counts[a] - 1):
            out[_axis_index(n, a, i + 1, base)] = out[_axis_index(n, a, i, base)] + incs[a][_axis_index(n, a, i, base)]
        for i in range(base[a], 0, -1):
            out[_axis_index(n, a, i - 1, base)] = out[_axis_index(n, a, i, base)] - incs[a][_axis_index(n, a, i - 1, base)]
    return out


def solve_poincare(
    coframe: Coframe,
    P,
    base=None,
    x0=None,
    closed_tol: float = 0.05,
) -> ImmersionField:
    """Integrate ``d iota = omega^T P`` with ``iota(base) = x0``.

    Closedness is checked relative to the form's size:
    ``max |d theta| * diam(U) <= closed_tol * max |theta|``.  Edge increments
    use the trapezoid rule; the tree integral is then replaced by the
    least-squares fit of all edge increments.
    """
    grid = coframe.grid
    theta = poincare_form(coframe, P)
    m = theta.shape[-1]
    base = tuple(int(b) for b in (base if base is not None else (0,) * grid.n))
    x0 = np.zeros(m) if x0 is None else np.asarray(x0, dtype=float)
    closed = closedness_field(theta, grid)
    scale = float(np.max(np.linalg.norm(theta, axis=-1)))
    if closed.max() * grid.diameter > closed_tol * max(scale, 1e-300):
        raise ClosednessError(
            f"integrand not closed: max |d theta| = {closed.max():.6g} (scale {scale:.6g})", closed
        )
    B, slices = _edge_incidence(grid)
    rhs = np.zeros((B.shape[0], m))
    incs = []
    for a in range(grid.n):
        lo, hi = _shift(grid.n, a)
        inc = 0.5 * grid.spacing[a] * (theta[a][lo] + theta[a][hi])
        incs.append(inc)
        rhs[slices[a]] = inc.reshape(-1, m)
    tree = _tree_integrate(incs, grid, base, x0)
    b_flat = int(np.ravel_multi_index(base, grid.shape))
    keep = np.ones(grid.num_nodes, dtype=bool)
    keep[b_flat] = False
    Bk = B[:, keep].tocsc()
    rhs_k = rhs - B[:, [b_flat]].toarray() * x0[None, :]
    pts = np.empty((grid.num_nodes, m))
    pts[b_flat] = x0
    pre = _GraphLaplacianPreconditioner(grid, keep, 1)
    pts[keep] = _normal_solve((Bk.T @ Bk).tocsr(), np.asarray(Bk.T @ rhs_k), tree.reshape(-1, m)[keep], pre)
    return ImmersionField(grid, pts.reshape(*grid.shape, m))


# ---------------------------------------------------------------------------
# Alignment and extraction


@dataclass(frozen=True)
class Alignment:
    motion: RigidMotion
    rms: float
    degenerate: bool


def align_rigid(iota: ImmersionField, ref: ImmersionField) -> Alignment:
    """Kabsch alignment mapping ``iota`` onto ``ref``."""
    if iota.grid != ref.grid or iota.m != ref.m:
        raise ValueError("immersions live on different grids")
    X = iota.points.reshape(-1, iota.m)
    Y = ref.points.reshape(-1, ref.m)
    xc, yc = X.mean(axis=0), Y.mean(axis=0)
    H = (X - xc).T @ (Y - yc)
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    D = np.eye(iota.m)
    D[-1, -1] = d
    R = Vt.T @ D @ U.T
    R = polar_so(R)
    t = yc - R @ xc
    resid = X @ R.T + t - Y
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    degenerate = bool(np.sum(S > 1e-12 * max(S[0], 1e-300)) < iota.m - 1)
    return Alignment(RigidMotion(R, t), rms, degenerate)


def induced_metric(iota: ImmersionField) -> np.ndarray:
    """``g_ij = <d_i iota, d_j iota>`` per node, shape ``(*shape, n, n)``."""
    D = np.stack([partial(iota.points, iota.grid, i) for i in range(iota.grid.n)], axis=-1)
    return np.swapaxes(D, -1, -2) @ D


def _orthonormal_columns(tangents: np.ndarray) -> list[np.ndarray]:
    cols = []
    for i in range(tangents.shape[-1]):
        v = tangents[..., :, i].copy()
        for q in cols:
            v -= np.sum(q * v, axis=-1, keepdims=True) * q
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.min(nv) < 1e-8:
            raise ExtractionError("tangent vectors are degenerate")
        cols.append(v / nv)
    return cols


def _complete(cols: list[np.ndarray], seeds) -> tuple[list[np.ndarray], float]:
    """Gram-Schmidt of standard basis seeds against ``cols``; returns the new
    unit vectors and the smallest pivot norm met.  ``seeds`` holds one basis
    index per normal, either an int or a per-node integer array."""
    shape, m = cols[0].shape[:-1], cols[0].shape[-1]
    basis = list(cols)
    out = []
    worst = np.inf
    for b in seeds:
        v = np.zeros((*shape, m))
        if np.isscalar(b):
            v[..., b] = 1.0
        else:
            np.put_along_axis(v, np.asarray(b)[..., None], 1.0, axis=-1)
        for q in basis:
            v -= np.sum(q * v, axis=-1, keepdims=True) * q
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        worst = min(worst, float(np.min(nv)))
        v = v / np.where(nv > 0, nv, 1.0)
        basis.append(v)
        out.append(v)
    return out, worst


def normal_frame(tangents: np.ndarray, k: int, seeds=None) -> np.ndarray:
    """Orthonormal normals ``(*shape, m, k)`` completing the tangent columns.

    Gram-Schmidt on the tangent columns followed by standard basis seeds.
    For a line bundle the seed is pivoted per node (the oriented unit normal
    does not depend on it); otherwise one seed tuple is used everywhere,
    chosen to maximise the smallest pivot over the grid, ties broken by
    order.  The last normal is flipped where needed so that
    ``(tangents, normals)`` is positively oriented.
    """
    from itertools import permutations

    m = tangents.shape[-2]
    cols = _orthonormal_columns(tangents)
    if seeds is None and k == 1:
        resid = np.eye(m) - sum(q[..., :, None] * q[..., None, :] for q in cols)
        seeds = [np.argmax(np.linalg.norm(resid, axis=-1), axis=-1)]
    elif seeds is None:
        best = None
        for combo in permutations(range(m), k):
            if list(combo[:-1]) != sorted(combo[:-1]):
                continue
            _, pivot = _complete(cols, combo)
            if best is None or pivot > best[1] + 1e-12:
                best = (combo, pivot)
        seeds = list(best[0])
    normals, pivot = _complete(cols, seeds)
    if pivot < 1e-8:
        raise ExtractionError(
            f"normal seeds {seeds} are nearly tangent somewhere (pivot {pivot:.3e}); try another seed permutation"
        )
    nu = np.stack(normals, axis=-1)
    sign = np.sign(np.linalg.det(np.concatenate([tangents, nu], axis=-1)))
    nu[..., -1] *= sign[..., None]
    return nu


def extract_geometry(
    iota: ImmersionField,
    k: int | None = None,
    c_floor: float = 1e-8,
    c_ceil: float = 1e8,
    seeds: list[int] | None = None,
) -> GeometryData:
    """Recover ``(g, II, N)`` from sampled immersion coordinates.

    The data normals are ``eta = -nu`` where ``(d iota, nu)`` is positively
    oriented, matching the frame convention of :mod:`isoimmerse.cartan`.
    """
    grid = iota.grid
    n = grid.n
    k = iota.m - n if k is None else k
    if k < 1 or n + k != iota.m:
        raise ExtractionError(f"cannot split R^{iota.m} into {n} tangent and {k} normal directions")
    g = induced_metric(iota)
    ev = np.linalg.eigvalsh(g)
    if ev[..., 0].min() < c_floor or ev[..., -1].max() > c_ceil:
        raise MetricError(
            f"induced metric eigenvalues [{ev[..., 0].min():.3g}, {ev[..., -1].max():.3g}] outside [{c_floor:g}, {c_ceil:g}]"
        )
    tangents = np.stack([partial(iota.points, grid, i) for i in range(n)], axis=-1)
    eta = -normal_frame(tangents, k, seeds)
    H = hessian(iota.points, grid)
    II = np.zeros((*grid.shape, n, n, k))
    for i in range(n):
        for j in range(n):
            II[..., i, j, :] = np.einsum("...c,...ca->...a", H[i][j], eta)
    N = np.zeros((n, *grid.shape, k, k))
    for j in range(n):
        d_eta = partial(eta, grid, j)
        Nj = np.einsum("...ca,...cb->...ab", d_eta, eta)
        N[j] = 0.5 * (Nj - np.swapaxes(Nj, -1, -2))
    return GeometryData(grid, 0.5 * (g + np.swapaxes(g, -1, -2)), II, N, c_floor)
