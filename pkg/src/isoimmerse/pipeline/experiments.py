"""Round-trip reconstruction and weak-compactness experiments."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..cartan import (
    assemble_connection,
    coframe_from_metric,
    curvature,
    gcr_residuals,
    residual_maxes,
    second_form_norm_sq,
)
from ..chart import MatrixForm, ScalarField, hessian
from ..gauge import holonomy_defect
from ..integrate import (
    PfaffOptions,
    align_rigid,
    extract_geometry,
    induced_metric,
    solve_pfaff,
    solve_poincare,
)
from ..spaces import NormSpec, lp_norm, weak_morrey_norm
from .examples import ExampleSpec, generate_example

ROUNDTRIP_QUANTITIES = (
    "gauss",
    "codazzi",
    "ricci",
    "holonomy",
    "pfaff_defect",
    "metric_error",
    "second_form_error",
    "normal_curvature_error",
    "position_rms",
)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _normal_curvature(N: np.ndarray, grid) -> np.ndarray:
    return curvature(MatrixForm(grid, 1, -N, True)).pointwise_norm()


@dataclass
class RoundTripReport:
    example: str
    resolutions: list
    spacings: list
    errors: list  # one dict per resolution, keys ROUNDTRIP_QUANTITIES
    orders: dict | None = None
    seconds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": "roundtrip",
            "example": self.example,
            "resolutions": [list(r) for r in self.resolutions],
            "spacings": self.spacings,
            "errors": self.errors,
            "orders": self.orders,
            "seconds": self.seconds,
        }

    def rows(self) -> list[dict]:
        out = []
        for res, h, errs in zip(self.resolutions, self.spacings, self.errors):
            for q in ROUNDTRIP_QUANTITIES:
                out.append({"quantity": q, "resolution": "x".join(map(str, res)), "h": h, "value": errs[q],
                            "order": (self.orders or {}).get(q)})
        return out


def roundtrip_single(spec: ExampleSpec, pfaff: PfaffOptions | None = None) -> tuple[dict, float]:
    """All round-trip error measures at one resolution."""
    geo, ref = _stage("generate", generate_example, spec)
    omega = _stage("assemble", assemble_connection, geo)
    res = residual_maxes(_stage("gcr", gcr_residuals, geo))
    hol = _stage("holonomy", holonomy_defect, omega)
    P, defect = _stage("pfaff", solve_pfaff, omega, None, None, pfaff)
    coframe = coframe_from_metric(geo)
    iota = _stage("poincare", solve_poincare, coframe, P)
    al = _stage("align", align_rigid, iota, ref)
    g_rec = induced_metric(iota)
    rec = _stage("extract", extract_geometry, iota, geo.k)
    II2 = second_form_norm_sq(geo.metric, geo.second_form)
    II2_rec = second_form_norm_sq(rec.metric, rec.second_form)
    nc = _normal_curvature(geo.normal_connection, geo.grid)
    nc_rec = _normal_curvature(rec.normal_connection, geo.grid)
    errors = {
        "gauss": res["gauss"],
        "codazzi": res["codazzi"],
        "ricci": res["ricci"],
        "holonomy": hol.max,
        "pfaff_defect": defect,
        "metric_error": float(np.max(np.abs(g_rec - geo.metric))),
        "second_form_error": float(np.max(np.abs(II2_rec - II2))),
        "normal_curvature_error": float(np.max(np.abs(nc_rec - nc))),
        "position_rms": al.rms,
    }
    return errors, max(geo.grid.spacing)


def observed_order(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float | None:
    """``log(e_h / e_h') / log(h / h')``; ``None`` when either error is at
    rounding level (no meaningful rate)."""
    floor = 1e-10
    if e_coarse <= floor or e_fine <= floor:
        return None
    return float(np.log(e_coarse / e_fine) / np.log(h_coarse / h_fine))


def roundtrip(spec: ExampleSpec, resolutions, pfaff: PfaffOptions | None = None) -> RoundTripReport:
    """Generate, assemble, integrate, align and compare at one or two resolutions."""
    resolutions = list(resolutions)
    if not 1 <= len(resolutions) <= 2:
        raise ValueError("roundtrip takes one or two resolutions")
    errors, spacings, secs, counts = [], [], [], []
    for r in resolutions:
        s = ExampleSpec(spec.name, r, spec.patch, spec.eps)
        t0 = time.perf_counter()
        e, h = roundtrip_single(s, pfaff)
        secs.append(time.perf_counter() - t0)
        errors.append(e)
        spacings.append(h)
        counts.append(s.grid().counts)
    orders = None
    if len(resolutions) == 2:
        orders = {q: observed_order(errors[0][q], errors[1][q], spacings[0], spacings[1]) for q in ROUNDTRIP_QUANTITIES}
    return RoundTripReport(spec.name, counts, spacings, errors, orders, secs)


# ---------------------------------------------------------------------------
# Weak compactness of the wrinkle family


def _test_fields(grid) -> list[np.ndarray]:
    """Smooth R^3-valued test fields on the chart, shape ``(*shape, 3)``."""
    u, v = grid.mesh()
    z, o = np.zeros_like(u), np.ones_like(u)
    b = np.sin(np.pi * u) * np.sin(np.pi * v)
    return [
        np.stack([z, z, o], -1),
        np.stack([z, z, b], -1),
        np.stack([u, v, u * v], -1),
        np.stack([o, z, np.cos(2 * np.pi * u)], -1),
        np.stack([v, u**2, np.exp(-u - v)], -1),
        np.stack([b, b, u * (1 - u)], -1),
    ]


def _integrate(grid, values: np.ndarray) -> float:
    return float(np.sum(grid.weights * values))


def compactness_experiment(
    eps_ladder=(0.2, 0.1, 0.05, 0.025),
    resolution: int = 129,
    window=None,
    eig_window=(0.5, 4.0),
    spec: NormSpec | None = None,
) -> dict:
    """Pairings, strong distances and second-derivative norms of the wrinkle
    family ``(u, v, eps sin(u/eps))`` against its flat limit ``(u, v, 0)``."""
    eps_ladder = [float(e) for e in eps_ladder]
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])) or min(eps_ladder) <= 0:
        raise ValueError("eps ladder must be positive and strictly decreasing")
    rows = []
    base_spec = spec
    limit = None
    for eps in eps_ladder:
        geo, iota = generate_example(ExampleSpec("wrinkle_family", resolution, window, eps))
        grid = geo.grid
        if limit is None:
            u, v = grid.mesh()
            limit = np.stack([u, v, np.zeros_like(u)], -1)
            fields = _test_fields(grid)
            phi_l1 = [_integrate(grid, np.linalg.norm(phi, axis=-1)) for phi in fields]
            H_lim = hessian(limit, grid)
        g = induced_metric(iota)
        ev = np.linalg.eigvalsh(g)
        lo, hi = float(ev[..., 0].min()), float(ev[..., -1].max())
        diff = iota.points - limit
        gaps = [abs(_integrate(grid, np.sum(diff * phi, axis=-1))) for phi in fields]
        H = hessian(iota.points, grid)
        d2 = np.sqrt(sum(np.sum(H[i][j] ** 2, axis=-1) for i in range(2) for j in range(2)))
        d2_gap = np.sqrt(sum(np.sum((H[i][j] - H_lim[i][j]) ** 2, axis=-1) for i in range(2) for j in range(2)))
        ns = base_spec or NormSpec(p=2.0, lam=0.0, center_stride=max(1, (resolution - 1) // 16))
        rows.append(
            {
                "eps": eps,
                "eig_min": lo,
                "eig_max": hi,
                "nondegenerate": bool(eig_window[0] <= lo and hi <= eig_window[1]),
                "pairing_gaps": gaps,
                "max_relative_gap": max(gap / l1 for gap, l1 in zip(gaps, phi_l1)),
                "strong_l2_distance": lp_norm(ScalarField(grid, np.linalg.norm(diff, axis=-1)), 2),
                "second_derivative_l2_gap": lp_norm(ScalarField(grid, d2_gap), 2),
                "second_derivative_weak_morrey": weak_morrey_norm(ScalarField(grid, d2), ns.p, ns.lam, ns),
            }
        )
    rel = [r["max_relative_gap"] for r in rows]
    d2g = [r["second_derivative_l2_gap"] for r in rows]
    return {
        "kind": "compactness",
        "resolution": resolution,
        "eps": eps_ladder,
        "test_field_l1": phi_l1,
        "rows": rows,
        "all_nondegenerate": all(r["nondegenerate"] for r in rows),
        "pairings_decreasing": all(b <= a for a, b in zip(rel, rel[1:])),
        "final_relative_gap": rel[-1],
        "second_derivative_gap_ratio": min(d2g) / d2g[0],
    }
