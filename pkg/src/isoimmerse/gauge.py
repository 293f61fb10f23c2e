"""Gauge transforms, lattice Coulomb gauge fixing and related probes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cartan import curvature
from .chart import (
    ChartGrid,
    MatrixForm,
    ScalarField,
    codifferential,
    exterior_derivative,
    gradient_form,
    hodge_star,
    interior_mask,
    multi_indices,
    partial,
    partial_operator,
)

log = logging.getLogger(__name__)

SO_TOL = 1e-10


class GaugeError(ValueError):
    pass


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def polar_so(M: np.ndarray) -> np.ndarray:
    """Closest special-orthogonal matrix (batched), via SVD with a det fix."""
    U, _, Vt = np.linalg.svd(M)
    d = np.where(np.linalg.det(U @ Vt) < 0, -1.0, 1.0)
    U = U.copy()
    U[..., :, -1] *= d[..., None]
    return U @ Vt


def so_defect(values: np.ndarray) -> float:
    m = values.shape[-1]
    return float(np.max(np.abs(_swap(values) @ values - np.eye(m))))


@dataclass(frozen=True)
class GaugeField:
    """SO(m)-valued node field; ``values`` has shape ``(*grid.shape, m, m)``."""

    grid: ChartGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[:-2] != self.grid.shape or v.shape[-1] != v.shape[-2]:
            raise GaugeError(f"gauge values shape {v.shape} incompatible with grid {self.grid.shape}")
        defect = so_defect(v)
        if defect > SO_TOL:
            raise GaugeError(f"gauge field leaves SO(m): |P^T P - I| = {defect:.3e}")
        if np.min(np.linalg.det(v)) <= 0:
            raise GaugeError("gauge field has non-positive determinant")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def identity(cls, grid: ChartGrid, m: int) -> "GaugeField":
        return cls(grid, np.broadcast_to(np.eye(m), (*grid.shape, m, m)).copy())

    @classmethod
    def project(cls, grid: ChartGrid, values: np.ndarray) -> "GaugeField":
        return cls(grid, polar_so(values))

    def __matmul__(self, other: "GaugeField") -> "GaugeField":
        return GaugeField.project(self.grid, self.values @ other.values)


def _as_values(P) -> np.ndarray:
    return P.values if isinstance(P, GaugeField) else np.asarray(P, dtype=float)


def gauge_transform(P, omega: MatrixForm) -> MatrixForm:
    """``P^# Omega = P^T dP + P^T Omega P`` with finite-difference ``dP``."""
    Pv = _as_values(P)
    if Pv.shape[:-2] != omega.grid.shape or Pv.shape[-1] != omega.m:
        raise GaugeError("gauge and connection shapes differ")
    if so_defect(Pv) > 1e-6:
        raise GaugeError(f"gauge is not special orthogonal (defect {so_defect(Pv):.3e})")
    Pt = _swap(Pv)
    comps = [Pt @ partial(Pv, omega.grid, mu) + Pt @ omega.data[mu] @ Pv for mu in range(omega.grid.n)]
    return MatrixForm(omega.grid, 1, np.stack(comps)).project_antisymmetric()


def curvature_conjugation_check(P, omega: MatrixForm) -> ScalarField:
    """Node-wise ``|F(P^# Omega) - P^T F(Omega) P|``; zero in the continuum."""
    Pv = _as_values(P)
    lhs = curvature(gauge_transform(Pv, omega))
    F = curvature(omega)
    rhs = _swap(Pv) @ F.data @ Pv
    return ScalarField(omega.grid, np.sqrt(np.sum((lhs.data - rhs) ** 2, axis=(0, -2, -1))))


def edge_transports(omega: MatrixForm) -> list[np.ndarray]:
    """Per axis ``mu``, the transports ``exp(-h_mu * Omega_mu(midpoint))`` from
    node ``x`` to ``x + e_mu``; axis ``mu`` of each array has length ``N_mu - 1``."""
    grid = omega.grid
    out = []
    for mu in range(grid.n):
        comp = omega.data[mu]
        lo = [slice(None)] * grid.n
        hi = [slice(None)] * grid.n
        lo[mu] = slice(0, -1)
        hi[mu] = slice(1, None)
        mid = 0.5 * (comp[tuple(lo)] + comp[tuple(hi)])
        out.append(scipy.linalg.expm(-grid.spacing[mu] * mid))
    return out


@dataclass(frozen=True)
class HolonomyField:
    """Plaquette holonomy defects ``|H - I|_F`` per coordinate plane."""

    grid: ChartGrid
    planes: dict

    @property
    def max(self) -> float:
        return max(float(np.max(v)) for v in self.planes.values())

    @property
    def max_density(self) -> float:
        """Largest defect divided by plaquette area (a discrete curvature size)."""
        h = self.grid.spacing
        return max(float(np.max(v)) / (h[a] * h[b]) for (a, b), v in self.planes.items())

    def node_field(self) -> ScalarField:
        """Largest defect over plaquettes touching each node."""
        out = np.zeros(self.grid.shape)
        for (a, b), v in self.planes.items():
            for da in (0, 1):
                for db in (0, 1):
                    sl = [slice(None)] * self.grid.n
                    sl[a] = slice(da, da + v.shape[a])
                    sl[b] = slice(db, db + v.shape[b])
                    out[tuple(sl)] = np.maximum(out[tuple(sl)], v)
        return ScalarField(self.grid, out)


def holonomy_defect(omega: MatrixForm, transports: list[np.ndarray] | None = None) -> HolonomyField:
    """Ordered transport around every elementary plaquette, minus the identity."""
    grid = omega.grid
    T = transports if transports is not None else edge_transports(omega)
    m = omega.m
    planes = {}
    for a, b in multi_indices(grid.n, 2):

        def sl(arr, off_a, off_b):
            s = [slice(None)] * grid.n
            s[a] = slice(off_a, off_a + grid.counts[a] - 1)
            s[b] = slice(off_b, off_b + grid.counts[b] - 1)
            return arr[tuple(s)]

        Ta_x = sl(T[a], 0, 0)
        Tb_xa = sl(T[b], 1, 0)
        Ta_xb = sl(T[a], 0, 1)
        Tb_x = sl(T[b], 0, 0)
        H = _swap(Tb_x) @ _swap(Ta_xb) @ Tb_xa @ Ta_x
        planes[(a, b)] = np.sqrt(np.sum((H - np.eye(m)) ** 2, axis=(-2, -1)))
    return HolonomyField(grid, planes)


# ---------------------------------------------------------------------------
# Coulomb gauge on the lattice of edge transports


@dataclass
class GaugeOptions:
    tol: float = 1e-8
    max_iter: int = 500
    step: float = 1.0
    reproject_every: int = 50
    max_backtracks: int = 40


@dataclass
class GaugeReport:
    energy: float
    initial_energy: float
    coexact_residual: float
    relative_residual: float
    iterations: int
    converged: bool
    input_norm: float
    energy_history: list = field(default_factory=list)
    uhlenbeck_ratio: float | None = None

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "initial_energy": self.initial_energy,
            "coexact_residual": self.coexact_residual,
            "relative_residual": self.relative_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "input_norm": self.input_norm,
            "uhlenbeck_ratio": self.uhlenbeck_ratio,
        }


def l2_norm_form(form: MatrixForm) -> float:
    return float(np.sqrt(np.sum(form.grid.weights * form.pointwise_norm() ** 2)))


def _shift_slices(n: int, mu: int):
    lo = [slice(None)] * n
    hi = [slice(None)] * n
    lo[mu] = slice(0, -1)
    hi[mu] = slice(1, None)
    return tuple(lo), tuple(hi)


class _LatticeGauge:
    """Energy ``sum_e w |P_j^T U_e P_i - I|^2 / h_e^2`` and its so(m) gradient.

    The stationarity condition is the exact lattice coexactness
    ``sum_mu (A_mu(x - e_mu) - A_mu(x)) / h_mu = 0`` with
    ``A_e = -skew(P_j^T U_e P_i) / h_e`` and no flux through the boundary.
    """

    def __init__(self, omega: MatrixForm):
        self.grid = omega.grid
        self.n = omega.grid.n
        self.h = omega.grid.spacing
        self.w = omega.grid.cell_volume
        self.U = edge_transports(omega)
        lam = np.zeros(self.grid.shape)
        for mu, (c, h) in enumerate(zip(self.grid.counts, self.h)):
            k = np.arange(c)
            shape = [1] * self.n
            shape[mu] = c
            lam = lam + ((2.0 - 2.0 * np.cos(np.pi * k / c)) / h**2).reshape(shape)
        lam.flat[0] = np.inf
        self.inv_lap = 1.0 / lam

    def gauged_links(self, P: np.ndarray) -> list[np.ndarray]:
        out = []
        for mu in range(self.n):
            lo, hi = _shift_slices(self.n, mu)
            out.append(_swap(P[hi]) @ self.U[mu] @ P[lo])
        return out

    def energy(self, links) -> float:
        m = links[0].shape[-1]
        total = 0.0
        for mu, L in enumerate(links):
            total += np.sum(2.0 * m - 2.0 * np.trace(L, axis1=-2, axis2=-1)) / self.h[mu] ** 2
        return float(self.w * total)

    def divergence(self, links) -> np.ndarray:
        """Lattice codifferential of the gauged connection, per node."""
        out = np.zeros((*self.grid.shape, *links[0].shape[-2:]))
        for mu, L in enumerate(links):
            A = -0.5 * (L - _swap(L)) / self.h[mu]
            lo, hi = _shift_slices(self.n, mu)
            out[lo] -= A / self.h[mu]
            out[hi] += A / self.h[mu]
        return out

    def residual(self, div: np.ndarray) -> float:
        return float(np.sqrt(self.w * np.sum(div**2)))

    def precondition(self, div: np.ndarray) -> np.ndarray:
        axes = tuple(range(self.n))
        coef = scipy.fft.dctn(div, type=2, axes=axes, norm="ortho")
        coef *= self.inv_lap[(...,) + (None, None)]
        return scipy.fft.idctn(coef, type=2, axes=axes, norm="ortho")


def _cayley(X: np.ndarray) -> np.ndarray:
    m = X.shape[-1]
    eye = np.eye(m)
    return np.linalg.solve(eye - 0.5 * X, eye + 0.5 * X)


def coulomb_gauge(
    omega: MatrixForm,
    opts: GaugeOptions | None = None,
    initial: GaugeField | None = None,
) -> tuple[GaugeField, GaugeReport]:
    """Minimise the lattice Coulomb energy over SO(m)-valued gauges.

    Riemannian steepest descent with a Neumann-Laplacian (DCT) preconditioner,
    Cayley retraction and Armijo backtracking, so the recorded energies never
    increase.  ``opts.tol`` is relative: the run converges once
    ``coexact_residual <= tol * |Omega|_L2``.
    """
    opts = opts or GaugeOptions()
    grid, m = omega.grid, omega.m
    lat = _LatticeGauge(omega)
    P = (initial.values.copy() if initial is not None else GaugeField.identity(grid, m).values)
    input_norm = l2_norm_form(omega)
    target = opts.tol * input_norm

    links = lat.gauged_links(P)
    E = lat.energy(links)
    if not np.isfinite(E):
        raise GaugeError("non-finite gauge energy")
    E0 = E
    history = [E]
    div = lat.divergence(links)
    res = lat.residual(div)
    it = 0
    converged = res <= target
    while not converged and it < opts.max_iter:
        it += 1
        X = -lat.precondition(div)
        X = 0.5 * (X - _swap(X))
        slope = -2.0 * lat.w * float(np.sum(div * X))
        t = opts.step
        accepted = False
        for _ in range(opts.max_backtracks):
            P_new = P @ _cayley(t * X)
            links_new = lat.gauged_links(P_new)
            E_new = lat.energy(links_new)
            if not np.isfinite(E_new):
                raise GaugeError("non-finite gauge energy")
            if E_new <= E + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            log.debug("line search stalled at iteration %d", it)
            break
        P, links, E = P_new, links_new, E_new
        if it % opts.reproject_every == 0:
            P = polar_so(P)
            links = lat.gauged_links(P)
            E = min(E, lat.energy(links))
        history.append(E)
        div = lat.divergence(links)
        res = lat.residual(div)
        converged = res <= target
    P = polar_so(P)
    report = GaugeReport(
        energy=E,
        initial_energy=E0,
        coexact_residual=res,
        relative_residual=res / input_norm if input_norm > 0 else 0.0,
        iterations=it,
        converged=bool(converged),
        input_norm=input_norm,
        energy_history=history,
    )
    return GaugeField(grid, P), report


def lattice_coexact_residual(P, omega: MatrixForm) -> float:
    lat = _LatticeGauge(omega)
    return lat.residual(lat.divergence(lat.gauged_links(_as_values(P))))


def lattice_energy(P, omega: MatrixForm) -> float:
    lat = _LatticeGauge(omega)
    return lat.energy(lat.gauged_links(_as_values(P)))


# ---------------------------------------------------------------------------
# Potential recovery:  *d xi = Xi,  d(*xi) = 0,  xi = 0 on the boundary


def _exterior_matrix(grid: ChartGrid, r: int) -> sp.csr_matrix:
    n, N = grid.n, grid.num_nodes
    D = [partial_operator(grid, i) for i in range(n)]
    src = {I: k for k, I in enumerate(multi_indices(n, r))}
    tgt = multi_indices(n, r + 1)
    blocks = [[None] * len(src) for _ in tgt]
    for row, J in enumerate(tgt):
        for s, axis in enumerate(J):
            col = src[J[:s] + J[s + 1:]]
            blocks[row][col] = D[axis] if s % 2 == 0 else -D[axis]
    for row in range(len(tgt)):
        for col in range(len(src)):
            if blocks[row][col] is None:
                blocks[row][col] = sp.csr_matrix((N, N))
    return sp.bmat(blocks, format="csr")


def _hodge_matrix(grid: ChartGrid, r: int) -> sp.csr_matrix:
    from .chart import _perm_sign

    n, N = grid.n, grid.num_nodes
    src = {I: k for k, I in enumerate(multi_indices(n, r))}
    tgt = multi_indices(n, n - r)
    eye = sp.identity(N, format="csr")
    blocks = [[sp.csr_matrix((N, N)) for _ in src] for _ in tgt]
    for row, J in enumerate(tgt):
        I = tuple(i for i in range(n) if i not in J)
        blocks[row][src[I]] = _perm_sign(I + J) * eye
    return sp.bmat(blocks, format="csr")


def potential_operator(grid: ChartGrid) -> sp.csr_matrix:
    """Stacked ``[*d ; d*]`` acting on (n-2)-form coefficient vectors."""
    n = grid.n
    ops = [_hodge_matrix(grid, n - 1) @ _exterior_matrix(grid, n - 2)]
    if n >= 3:
        ops.append(_exterior_matrix(grid, 2) @ _hodge_matrix(grid, n - 2))
    return sp.vstack(ops, format="csr")


def recover_potential(
    xi_field: MatrixForm,
    tol: float = 1e-10,
    coexact_tol: float = 1e-2,
    scale: float | None = None,
    max_iter: int | None = None,
) -> MatrixForm:
    """Solve ``*d xi = Xi``, ``d(*xi) = 0``, ``xi|boundary = 0`` by LSQR.

    The input must be coexact: ``|d* Xi|_2 * diam(U) <= 10 * coexact_tol *
    scale`` where ``scale`` defaults to ``|Xi|_2``.  Each independent entry
    of the antisymmetric matrix values is solved separately.
    """
    Xi = xi_field
    grid, n, m = Xi.grid, Xi.grid.n, Xi.m
    if Xi.degree != 1:
        raise ValueError("recover_potential expects a 1-form")
    norm = l2_norm_form(Xi)
    ref = norm if scale is None else scale
    if norm == 0.0:
        return MatrixForm.zeros(grid, n - 2, m, antisymmetric=True)
    codiff = codifferential(Xi).pointwise_norm()
    mask = interior_mask(grid, 1)
    dstar = float(np.sqrt(np.sum((grid.weights * codiff**2)[mask])))
    if dstar * grid.diameter > 10.0 * coexact_tol * ref:
        raise GaugeError(
            f"input not coexact: |d*Xi| * diam = {dstar * grid.diameter:.3e} exceeds {10 * coexact_tol * ref:.3e}"
        )
    A = potential_operator(grid)
    ncomp = len(multi_indices(n, n - 2))
    N = grid.num_nodes
    inner = np.flatnonzero(interior_mask(grid, 1).ravel())
    cols = np.concatenate([c * N + inner for c in range(ncomp)])
    A_in = A[:, cols]
    rows_star = n * N
    out = np.zeros((ncomp, *grid.shape, m, m))
    iters = max_iter or 20 * int(np.sqrt(A_in.shape[1]) + 10) * 10
    for a in range(m):
        for b in range(a + 1, m):
            rhs = np.zeros(A.shape[0])
            rhs[:rows_star] = Xi.data[..., a, b].reshape(n, -1).ravel()
            sol = spla.lsqr(A_in, rhs, atol=tol, btol=tol, iter_lim=iters)[0]
            full = np.zeros(ncomp * N)
            full[cols] = sol
            full = full.reshape(ncomp, *grid.shape)
            out[..., a, b] = full
            out[..., b, a] = -full
    return MatrixForm(grid, n - 2, out, True)


def potential_residual(xi: MatrixForm, Xi: MatrixForm) -> float:
    """Relative ``|*d xi - Xi|_2 / |Xi|_2``."""
    diff = hodge_star(exterior_derivative(xi)) - Xi
    denom = l2_norm_form(Xi)
    return l2_norm_form(diff) / denom if denom > 0 else l2_norm_form(diff)


def uhlenbeck_ratio(omega: MatrixForm, P, xi: MatrixForm, q: float, spec=None) -> float:
    """``(|dP|_{L^{q,n-q}} + |d xi|_{L^{q,n-q}}) / |Omega|_{L^{q,n-q}}``."""
    from .spaces import NormSpec, morrey_norm

    grid = omega.grid
    lam = grid.n - q
    spec = spec or NormSpec(p=q, lam=lam)
    denom = morrey_norm(omega, q, lam, spec)
    if denom == 0.0:
        raise ZeroDivisionError("connection has zero Morrey norm")
    dP = gradient_form(_as_values(P), grid)
    dxi = exterior_derivative(xi) if xi.degree < grid.n else MatrixForm.zeros(grid, 1, xi.m)
    return (morrey_norm(dP, q, lam, spec) + morrey_norm(dxi, q, lam, spec)) / denom
