"""Moving-frame connection assembled from (g, II, normal connection).

Sign conventions
----------------
The connection ``Omega`` is the so(n+k)-valued 1-form for which the frame
matrix ``P`` (rows: orthonormal tangent frame, then normal frame) solves
``dP + Omega P = 0`` and the immersion solves ``d iota = omega^T P``:

* ``Omega[i, j] = g(nabla e_j, e_i)``, so that
  ``d omega^i = sum_j omega^j ^ Omega[i, j]``;
* ``Omega[i, n+a](X) = II(e_i, X)_a`` with ``II_{uv,a} = <d_u d_v iota, eta_a>``;
* ``Omega[n+a, n+b] = -N[a, b]`` with ``N_j[a, b] = <d_j eta_a, eta_b>``.

With these choices the frame rows carrying the normal directions are
``-eta_a``; a data set whose tangent frame followed by ``-eta`` is
positively oriented is reconstructed without a reflection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chart import (
    ChartGrid,
    MatrixForm,
    ScalarField,
    exterior_derivative,
    interior_mask,
    multi_indices,
    partial,
    wedge_bracket,
)


class MetricError(ValueError):
    """The metric is not symmetric positive definite somewhere."""


@dataclass(frozen=True)
class GeometryData:
    """Intrinsic and extrinsic data on a chart.

    ``metric`` has shape ``(*grid.shape, n, n)``, ``second_form`` has shape
    ``(*grid.shape, n, n, k)`` (coordinate frame) and ``normal_connection``
    has shape ``(n, *grid.shape, k, k)``.
    """

    grid: ChartGrid
    metric: np.ndarray
    second_form: np.ndarray
    normal_connection: np.ndarray
    c_floor: float = 1e-8

    def __post_init__(self):
        grid, n = self.grid, self.grid.n
        g = np.asarray(self.metric, dtype=float)
        II = np.asarray(self.second_form, dtype=float)
        N = np.asarray(self.normal_connection, dtype=float)
        if g.shape != (*grid.shape, n, n):
            raise ValueError(f"metric shape {g.shape} != {(*grid.shape, n, n)}")
        if II.ndim != grid.n + 3 or II.shape[:-1] != (*grid.shape, n, n):
            raise ValueError(f"second_form shape {II.shape} incompatible with grid")
        k = II.shape[-1]
        if N.shape != (n, *grid.shape, k, k):
            raise ValueError(f"normal_connection shape {N.shape} != {(n, *grid.shape, k, k)}")
        for name, arr in (("metric", g), ("second_form", II), ("normal_connection", N)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        if np.max(np.abs(g - np.swapaxes(g, -1, -2)), initial=0.0) > 1e-12:
            raise MetricError("metric is not symmetric")
        if np.max(np.abs(II - np.swapaxes(II, -2, -3)), initial=0.0) > 1e-12:
            raise ValueError("second_form is not symmetric in its tangent slots")
        if np.max(np.abs(N + np.swapaxes(N, -1, -2)), initial=0.0) > 1e-12:
            raise ValueError("normal_connection is not antisymmetric")
        g = 0.5 * (g + np.swapaxes(g, -1, -2))
        II = 0.5 * (II + np.swapaxes(II, -2, -3))
        N = 0.5 * (N - np.swapaxes(N, -1, -2))
        evals = np.linalg.eigvalsh(g)[..., 0]
        if np.min(evals) < self.c_floor:
            node = np.unravel_index(np.argmin(evals), grid.shape)
            raise MetricError(
                f"metric not positive definite at node {tuple(int(i) for i in node)}: "
                f"smallest eigenvalue {float(np.min(evals)):.6g} < {self.c_floor:g}"
            )
        object.__setattr__(self, "metric", g)
        object.__setattr__(self, "second_form", II)
        object.__setattr__(self, "normal_connection", N)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def k(self) -> int:
        return self.second_form.shape[-1]

    @property
    def m(self) -> int:
        return self.n + self.k

    def with_second_form(self, II: np.ndarray) -> "GeometryData":
        return GeometryData(self.grid, self.metric, II, self.normal_connection, self.c_floor)


@dataclass(frozen=True)
class Coframe:
    """Rows of ``W`` are the coordinate components of ``omega^1..omega^n``."""

    grid: ChartGrid
    W: np.ndarray

    @property
    def inverse(self) -> np.ndarray:
        """``E = W^{-1}``; its columns are the orthonormal frame ``e_a``."""
        return np.linalg.inv(self.W)

    def as_form(self) -> MatrixForm:
        """The coframe as an n x 1 matrix-valued 1-form (column ``omega``)."""
        comps = [self.W[..., :, mu : mu + 1] for mu in range(self.grid.n)]
        return MatrixForm(self.grid, 1, np.stack(comps))


def coframe_from_metric(geo: GeometryData) -> Coframe:
    """Upper-triangular factor ``W`` with positive diagonal and ``W^T W = g``."""
    g = geo.metric
    evals = np.linalg.eigvalsh(g)[..., 0]
    if np.min(evals) <= 0:
        node = np.unravel_index(np.argmin(evals), geo.grid.shape)
        raise MetricError(f"metric not SPD at node {tuple(int(i) for i in node)}: eigenvalue {float(np.min(evals)):.6g}")
    L = np.linalg.cholesky(g)
    return Coframe(geo.grid, np.swapaxes(L, -1, -2).copy())


def christoffel(geo: GeometryData) -> np.ndarray:
    """``Gamma[..., l, mu, nu]`` from finite differences of the metric."""
    g = geo.metric
    dg = np.stack([partial(g, geo.grid, d) for d in range(geo.n)], axis=-3)  # [..., d, a, b]
    lower = 0.5 * (
        np.einsum("...mkn->...kmn", dg) + np.einsum("...nkm->...kmn", dg) - dg
    )
    return np.einsum("...lk,...kmn->...lmn", np.linalg.inv(g), lower)


def levi_civita_block(geo: GeometryData, coframe: Coframe) -> MatrixForm:
    """so(n)-valued Levi-Civita connection in the orthonormal frame.

    ``Omega_mu = -(d_mu W) E + W Gamma_mu E``.  The result is projected
    onto antisymmetric matrices; the size of the removed symmetric part is
    kept in ``projection_defect``.
    """
    W, E = coframe.W, coframe.inverse
    gam = christoffel(geo)
    comps = []
    for mu in range(geo.n):
        dW = partial(W, geo.grid, mu)
        comps.append(-dW @ E + W @ gam[..., :, mu, :] @ E)
    return MatrixForm(geo.grid, 1, np.stack(comps)).project_antisymmetric()


def assemble_connection(geo: GeometryData) -> MatrixForm:
    """Block so(n+k) connection ``[[LC, II], [-II^T, -N]]`` (see module notes)."""
    n, k = geo.n, geo.k
    coframe = coframe_from_metric(geo)
    lc = levi_civita_block(geo, coframe)
    E = coframe.inverse
    data = np.zeros((n, *geo.grid.shape, n + k, n + k))
    data[..., :n, :n] = lc.data
    for mu in range(n):
        block = np.einsum("...vi,...va->...ia", E, geo.second_form[..., :, mu, :])
        data[mu, ..., :n, n:] = block
        data[mu, ..., n:, :n] = -np.swapaxes(block, -1, -2)
        data[mu, ..., n:, n:] = -geo.normal_connection[mu]
    return MatrixForm(geo.grid, 1, data, True, lc.projection_defect)


def curvature(omega: MatrixForm) -> MatrixForm:
    """``F = d Omega + Omega ^ Omega``."""
    if omega.degree != 1:
        raise ValueError("curvature needs a connection 1-form")
    return exterior_derivative(omega) + wedge_bracket(omega, omega)


def curvature_blocks(F: MatrixForm, n: int) -> dict[str, ScalarField]:
    """Split ``|F|`` into tangent/tangent, tangent/normal (both off-diagonal
    blocks) and normal/normal parts; the three squares sum to ``|F|^2``."""
    d = F.data

    def fro(x):
        return np.sqrt(np.sum(x**2, axis=(0, -2, -1)))

    tn = np.sqrt(fro(d[..., :n, n:]) ** 2 + fro(d[..., n:, :n]) ** 2)
    return {
        "gauss": ScalarField(F.grid, fro(d[..., :n, :n])),
        "codazzi": ScalarField(F.grid, tn),
        "ricci": ScalarField(F.grid, fro(d[..., n:, n:])),
    }


def gcr_residuals(geo: GeometryData) -> dict[str, ScalarField]:
    """Node-wise Gauss, Codazzi and Ricci residuals of the assembled data."""
    return curvature_blocks(curvature(assemble_connection(geo)), geo.n)


def residual_maxes(res: dict[str, ScalarField], margin: int = 2) -> dict[str, float]:
    """Maxima over nodes at least ``margin`` away from the boundary.

    Curvature composes two same-axis derivatives of the metric; that
    composition is first order within two nodes of the boundary.
    """
    return {name: field.max(margin) for name, field in res.items()}


def first_structural_residual(coframe: Coframe, omega: MatrixForm) -> ScalarField:
    """Norm of ``d omega^i - sum_j omega^j ^ Omega[i, j]`` over ``i`` and 2-form slots."""
    grid, n = coframe.grid, coframe.grid.n
    W = coframe.W
    conn = omega.data[..., :n, :n]
    dW = [partial(W, grid, mu) for mu in range(n)]
    total = np.zeros(grid.shape)
    for mu, nu in multi_indices(n, 2):
        d_omega = dW[mu][..., :, nu] - dW[nu][..., :, mu]
        wedge = np.einsum("...j,...ij->...i", W[..., :, mu], conn[nu]) - np.einsum(
            "...j,...ij->...i", W[..., :, nu], conn[mu]
        )
        total += np.sum((d_omega - wedge) ** 2, axis=-1)
    return ScalarField(grid, np.sqrt(total))


def second_form_norm_sq(metric: np.ndarray, II: np.ndarray) -> np.ndarray:
    """Gauge-invariant ``|II|^2 = g^{ik} g^{jl} II_ij.II_kl`` per node."""
    ginv = np.linalg.inv(metric)
    return np.einsum("...ik,...jl,...ija,...kla->...", ginv, ginv, II, II)


def normal_curvature_norm(geo: GeometryData) -> np.ndarray:
    """Node-wise norm of ``dA + A ^ A`` for the normal-block connection ``A = -N``."""
    A = MatrixForm(geo.grid, 1, -geo.normal_connection, True)
    return curvature(A).pointwise_norm()


def interior(field: ScalarField, margin: int = 2) -> np.ndarray:
    return field.values[interior_mask(field.grid, margin)]
