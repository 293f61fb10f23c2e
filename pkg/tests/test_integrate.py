import numpy as np
import pytest

from conftest import pure_gauge
from isoimmerse.cartan import (
    GeometryData,
    MetricError,
    assemble_connection,
    coframe_from_metric,
    second_form_norm_sq,
)
from isoimmerse.chart import ChartGrid, MatrixForm, interior_mask
from isoimmerse.gauge import GaugeField, polar_so
from isoimmerse.integrate import (
    ClosednessError,
    ExtractionError,
    FlatnessError,
    ImmersionField,
    PfaffOptions,
    RigidMotion,
    align_rigid,
    extract_geometry,
    induced_metric,
    solve_pfaff,
    solve_poincare,
)
from isoimmerse.pipeline.examples import ExampleSpec, generate_example


def example(name, count):
    return generate_example(ExampleSpec(name, count))


def reconstruct(geo, base=None):
    P, defect = solve_pfaff(assemble_connection(geo), base)
    return solve_poincare(coframe_from_metric(geo), P, base), P, defect


def random_rotation(rng, m):
    return polar_so(rng.standard_normal((m, m)))


def test_pfaff_zero_connection():
    grid = ChartGrid.square(2, 17)
    P, defect = solve_pfaff(MatrixForm.zeros(grid, 1, 3, True))
    assert np.array_equal(P.values, GaugeField.identity(grid, 3).values)
    assert defect == 0.0


def test_pfaff_respects_base_and_initial_value(rng):
    geo, _ = example("sphere_patch", 33)
    R = random_rotation(rng, 3)
    P, _ = solve_pfaff(assemble_connection(geo), (5, 7), R)
    assert np.allclose(P.values[5, 7], R, atol=1e-12)


def test_pfaff_pure_gauge():
    # Omega = P0^T dP0 solves dP + Omega P = 0 with P = P0^T C, so P0 P is constant
    for count in (33, 65):
        grid = ChartGrid.square(2, count)
        h = grid.spacing[0]
        P0, om = pure_gauge(grid)
        P, _ = solve_pfaff(om)
        C = P0 @ P.values
        assert np.max(np.abs(C - C[0, 0])) <= 50 * h**2


def test_pfaff_sphere_defect_order():
    defects, hs = [], []
    for count in (65, 129):
        geo, _ = example("sphere_patch", count)
        _, defect = solve_pfaff(assemble_connection(geo))
        h = max(geo.grid.spacing)
        assert defect <= 100 * h**2
        defects.append(defect)
        hs.append(h)
    assert np.log(defects[0] / defects[1]) / np.log(hs[0] / hs[1]) >= 1.8


def test_pfaff_refuses_curved_connection():
    geo, _ = example("sphere_patch", 33)
    om = assemble_connection(geo.with_second_form(1.1 * geo.second_form))
    with pytest.raises(FlatnessError) as info:
        solve_pfaff(om)
    assert info.value.holonomy.max_density > PfaffOptions().flatness_tol


def test_poincare_flat_chart():
    grid = ChartGrid(((0.0, 2.0), (1.0, 2.0)), (17, 9))
    g = np.broadcast_to(np.eye(2), (*grid.shape, 2, 2)).copy()
    geo = GeometryData(grid, g, np.zeros((*grid.shape, 2, 2, 1)), np.zeros((2, *grid.shape, 1, 1)))
    P = GaugeField.identity(grid, 3)
    x0 = np.array([1.0, -2.0, 0.5])
    iota = solve_poincare(coframe_from_metric(geo), P, (3, 4), x0)
    expected = x0 + np.concatenate([grid.points() - grid.points()[3, 4], np.zeros((*grid.shape, 1))], axis=-1)
    assert np.allclose(iota.points, expected, atol=1e-12)


def test_poincare_rejects_non_closed_form():
    geo, _ = example("sphere_patch", 33)
    P = GaugeField.identity(geo.grid, 3)
    with pytest.raises(ClosednessError):
        solve_poincare(coframe_from_metric(geo), P)


@pytest.mark.parametrize("name", ["sphere_patch", "helicoid"])
def test_poincare_matches_analytic(name):
    rms, hs = [], []
    for count in (65, 129):
        geo, ref = example(name, count)
        iota, _, _ = reconstruct(geo)
        h = max(geo.grid.spacing)
        al = align_rigid(iota, ref)
        assert al.rms <= 100 * h**2
        rms.append(al.rms)
        hs.append(h)
    assert np.log(rms[0] / rms[1]) / np.log(hs[0] / hs[1]) >= 1.8


def test_align_exact_copy(rng):
    _, ref = example("sphere_patch", 17)
    R, t = random_rotation(rng, 3), rng.standard_normal(3)
    moved = ImmersionField(ref.grid, ref.points @ R.T + t)
    al = align_rigid(ref, moved)
    assert np.allclose(al.motion.rotation, R, atol=1e-10)
    assert np.allclose(al.motion.translation, t, atol=1e-10)
    assert al.rms <= 1e-10 and not al.degenerate
    same = align_rigid(ref, ref)
    assert np.allclose(same.motion.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(same.motion.translation, 0.0, atol=1e-12)


def test_align_degenerate_planar_set():
    grid = ChartGrid.square(2, 9)
    flat = ImmersionField(grid, np.concatenate([grid.points(), np.zeros((*grid.shape, 2))], axis=-1))
    assert align_rigid(flat, flat).degenerate


def test_rigid_motion_validation():
    with pytest.raises(ValueError):
        RigidMotion(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_uniqueness_across_base_points():
    geo, _ = example("sphere_patch", 65)
    h = max(geo.grid.spacing)
    a, Pa, _ = reconstruct(geo)
    b, Pb, _ = reconstruct(geo, (64, 20))
    assert align_rigid(a, b).rms <= 100 * h**2
    M = np.swapaxes(Pb.values, -1, -2) @ Pa.values
    assert np.max(np.abs(M - M.mean(axis=(0, 1)))) <= 100 * h**2


def test_induced_metric_linear_and_scaling():
    grid = ChartGrid.square(2, 9)
    iota = ImmersionField(grid, np.concatenate([grid.points(), np.zeros((*grid.shape, 1))], axis=-1))
    g = induced_metric(iota)
    assert np.allclose(g, np.eye(2), atol=1e-13)
    _, ref = example("sphere_patch", 17)
    g1 = induced_metric(ref)
    g2 = induced_metric(ImmersionField(ref.grid, 2.0 * ref.points))
    assert np.array_equal(g2, 4.0 * g1)


def test_induced_metric_sphere():
    for count in (33, 65):
        geo, ref = example("sphere_patch", count)
        h = max(geo.grid.spacing)
        th, _ = geo.grid.mesh()
        exact = np.zeros((*geo.grid.shape, 2, 2))
        exact[..., 0, 0] = 1.0
        exact[..., 1, 1] = np.sin(th) ** 2
        err = np.max(np.abs(induced_metric(ref) - exact), axis=(-2, -1))
        assert np.max(err[interior_mask(geo.grid, 1)]) <= 20 * h**2


def test_extract_flat():
    grid = ChartGrid.square(2, 9)
    iota = ImmersionField(grid, np.concatenate([grid.points(), np.zeros((*grid.shape, 1))], axis=-1))
    geo = extract_geometry(iota)
    assert np.max(np.abs(geo.second_form)) <= 1e-12
    assert np.max(np.abs(geo.normal_connection)) <= 1e-12


def test_extract_sphere_is_umbilic():
    geo, ref = example("sphere_patch", 65)
    h = max(geo.grid.spacing)
    rec = extract_geometry(ref)
    diff = np.abs(rec.second_form[..., 0] - rec.metric)
    assert np.max(diff[interior_mask(geo.grid, 1)]) <= 50 * h**2


def test_extract_clifford():
    # circles of radius 1/sqrt(2): principal curvatures sqrt(2) and 0 per normal
    geo, ref = example("clifford_torus", 65)
    h = max(geo.grid.spacing)
    rec = extract_geometry(ref)
    mask = interior_mask(geo.grid, 1)
    assert np.max(np.abs(rec.normal_connection)[:, mask]) <= 50 * h**2
    ginv = np.linalg.inv(rec.metric)
    for a in range(2):
        shape_op = ginv @ rec.second_form[..., a]
        ev = np.sort(np.abs(np.linalg.eigvals(shape_op).real), axis=-1)
        assert np.max(np.abs(ev[..., 0])[mask]) <= 50 * h**2
        assert np.max(np.abs(ev[..., 1] - np.sqrt(2))[mask]) <= 50 * h**2
    II2 = second_form_norm_sq(rec.metric, rec.second_form)
    assert np.max(np.abs(II2 - 4.0)[mask]) <= 50 * h**2


def test_extract_rejects_bad_codimension():
    grid = ChartGrid.square(2, 9)
    iota = ImmersionField(grid, grid.points())
    with pytest.raises(ExtractionError):
        extract_geometry(iota)


def test_extract_rejects_degenerate_immersion():
    grid = ChartGrid.square(2, 9)
    x, _ = grid.mesh()
    z = np.zeros_like(x)
    with pytest.raises(MetricError, match="eigenvalues"):
        extract_geometry(ImmersionField(grid, np.stack([x, z, z], axis=-1)))
