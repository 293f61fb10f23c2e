"""Command line interface.

Exit codes: 0 success, 1 invalid input or arguments, 2 a solver did not
converge or a flatness/closedness precondition failed.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ..cartan import MetricError, assemble_connection, coframe_from_metric, gcr_residuals, residual_maxes
from ..gauge import (
    GaugeError,
    GaugeOptions,
    coulomb_gauge,
    gauge_transform,
    holonomy_defect,
    l2_norm_form,
    potential_residual,
    recover_potential,
    uhlenbeck_ratio,
)
from ..integrate import ClosednessError, FlatnessError, PfaffOptions, induced_metric, solve_pfaff, solve_poincare
from ..spaces import (
    NormSpec,
    campanato_seminorm,
    hardy_seminorm,
    lp_norm,
    morrey_norm,
    weak_lp_norm,
    weak_morrey_norm,
)
from .examples import GENERATORS, ExampleError, ExampleSpec, generate_example
from .experiments import StageError, compactness_experiment, roundtrip
from .io import FormatError, csv_text, dumps, read_chart, read_field, write_chart, write_field, write_text

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("isoimmerse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _emit(report: dict, args, rows=None, columns=None) -> None:
    text = dumps(report)
    if getattr(args, "output", None):
        write_text(text, args.output)
    else:
        sys.stdout.write(text)
    if getattr(args, "csv", None) and rows is not None:
        write_text(csv_text(rows, columns), args.csv)


def _gauge_opts(args) -> GaugeOptions:
    return GaugeOptions(tol=args.gauge_tol, max_iter=args.gauge_max_iter, step=args.gauge_step)


def cmd_check(args) -> int:
    geo = read_chart(args.chart)
    omega = assemble_connection(geo)
    res = gcr_residuals(geo)
    maxes = residual_maxes(res, args.margin)
    hol = holonomy_defect(omega)
    report = {
        "kind": "check",
        "chart": {"n": geo.n, "k": geo.k, "counts": list(geo.grid.counts)},
        "margin": args.margin,
        "gcr_max": maxes,
        "holonomy_max": hol.max,
        "holonomy_density_max": hol.max_density,
    }
    rows = [{"quantity": k, "value": v} for k, v in maxes.items()]
    rows += [{"quantity": "holonomy", "value": hol.max}, {"quantity": "holonomy_density", "value": hol.max_density}]
    _emit(report, args, rows, ["quantity", "value"])
    return EXIT_OK


def cmd_gauge(args) -> int:
    geo = read_chart(args.chart)
    omega = assemble_connection(geo)
    P, rep = coulomb_gauge(omega, _gauge_opts(args))
    Xi = gauge_transform(P, omega)
    report = {"kind": "gauge", **rep.to_dict()}
    if rep.converged:
        xi = recover_potential(Xi, scale=l2_norm_form(omega))
        q = args.q if args.q is not None else float(geo.n)
        rep.uhlenbeck_ratio = uhlenbeck_ratio(omega, P, xi, q)
        report.update(rep.to_dict())
        report["q"] = q
        report["potential_residual"] = potential_residual(xi, Xi)
        report["gauged_norm"] = l2_norm_form(Xi)
    _emit(report, args, [{"quantity": k, "value": v} for k, v in sorted(rep.to_dict().items())], ["quantity", "value"])
    return EXIT_OK if rep.converged else EXIT_SOLVER


def _node(text, grid):
    if text is None:
        return None
    idx = _int_list(text)
    if len(idx) != grid.n or any(not 0 <= i < c for i, c in zip(idx, grid.counts)):
        raise ValueError(f"--base {text} is not a node of a grid with counts {grid.counts}")
    return tuple(idx)


def cmd_immerse(args) -> int:
    geo = read_chart(args.chart)
    omega = assemble_connection(geo)
    base = _node(args.base, geo.grid)
    try:
        P, defect = solve_pfaff(omega, base, None, PfaffOptions(flatness_tol=args.flatness_tol))
    except FlatnessError as exc:
        report = {
            "kind": "immerse",
            "status": "not_flat",
            "holonomy_max": exc.holonomy.max,
            "holonomy_density_max": exc.holonomy.max_density,
            "flatness_tol": args.flatness_tol,
        }
        sys.stdout.write(dumps(report))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    try:
        iota = solve_poincare(coframe_from_metric(geo), P, base)
    except ClosednessError as exc:
        sys.stdout.write(dumps({"kind": "immerse", "status": "not_closed", "closedness_max": exc.field.max()}))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_field(iota, args.output)
    metric_err = float(np.max(np.abs(induced_metric(iota) - geo.metric)))
    report = {"kind": "immerse", "status": "ok", "pfaff_defect": defect, "metric_error": metric_err,
              "output": str(args.output)}
    sys.stdout.write(dumps(report))
    return EXIT_OK


def _spec_from_args(args) -> NormSpec:
    radii = None
    if args.radii not in (None, "dyadic"):
        radii = tuple(_float_list(args.radii))
    return NormSpec(p=args.p, lam=args.lam, variant=args.variant, radii=radii, center_stride=args.center_stride)


def cmd_norms(args) -> int:
    f = read_field(args.field)
    if not hasattr(f, "grid") or f.__class__.__name__ == "ImmersionField":
        raise ValueError("norms needs a scalar or matrix_form field")
    spec = _spec_from_args(args)
    spec.ladder(f.grid)
    p, lam = spec.p, spec.lam
    values = {}
    if spec.variant == "strong":
        values = {"lp": lp_norm(f, p), "morrey": morrey_norm(f, p, lam, spec)}
    elif spec.variant == "weak":
        values = {"weak_lp": weak_lp_norm(f, p), "weak_morrey": weak_morrey_norm(f, p, lam, spec)}
    elif spec.variant == "campanato":
        values = {"campanato": campanato_seminorm(f, p, lam, spec)}
    elif spec.variant == "bmo":
        values = {"bmo": campanato_seminorm(f, p, float(f.grid.n), spec)}
    elif spec.variant == "hardy":
        values = {"hardy": hardy_seminorm(f, p=p)}
    report = {"kind": "norms", "variant": spec.variant, "p": p, "lambda": lam,
              "radii": list(spec.ladder(f.grid)), "center_stride": spec.center_stride, "values": values}
    _emit(report, args, [{"quantity": k, "value": v} for k, v in values.items()], ["quantity", "value"])
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    spec = ExampleSpec(args.example, 33, eps=args.eps)
    rep = roundtrip(spec, args.res, PfaffOptions(flatness_tol=args.flatness_tol))
    _emit(rep.to_dict(), args, rep.rows(), ["quantity", "resolution", "h", "value", "order"])
    return EXIT_OK


def cmd_compactness(args) -> int:
    rep = compactness_experiment(args.eps, args.res)
    cols = ["eps", "eig_min", "eig_max", "max_relative_gap", "strong_l2_distance", "second_derivative_l2_gap",
            "second_derivative_weak_morrey"]
    _emit(rep, args, rep["rows"], cols)
    return EXIT_OK


def cmd_make_chart(args) -> int:
    geo, ref = generate_example(ExampleSpec(args.example, args.res[0] if len(args.res) == 1 else tuple(args.res),
                                            eps=args.eps))
    if args.scale_second_form != 1.0:
        geo = geo.with_second_form(args.scale_second_form * geo.second_form)
    write_chart(geo, args.output)
    if args.reference:
        write_field(ref, args.reference)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="isoimmerse", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, output_help="write the JSON report here instead of stdout"):
        p.add_argument("-o", "--output", help=output_help)
        p.add_argument("--csv", help="also write a CSV table to this path")

    p = sub.add_parser("check", help="Gauss-Codazzi-Ricci residuals and holonomy of a chart")
    p.add_argument("chart")
    p.add_argument("--margin", type=int, default=2, help="boundary layers excluded from residual maxima")
    common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gauge", help="Coulomb gauge, potential and Uhlenbeck ratio")
    p.add_argument("chart")
    p.add_argument("--gauge-tol", type=float, default=1e-8, help="relative coexactness tolerance")
    p.add_argument("--gauge-max-iter", type=int, default=500)
    p.add_argument("--gauge-step", type=float, default=1.0, help="initial line-search step")
    p.add_argument("--q", type=float, default=None, help="Morrey exponent (default n)")
    common(p)
    p.set_defaults(func=cmd_gauge)

    p = sub.add_parser("immerse", help="reconstruct the immersion of a chart")
    p.add_argument("chart")
    p.add_argument("-o", "--output", required=True, help="immersion field file to write")
    p.add_argument("--base", help="base node as comma-separated indices (default origin)")
    p.add_argument("--flatness-tol", type=float, default=PfaffOptions.flatness_tol,
                   help="largest plaquette holonomy defect per unit area")
    p.set_defaults(func=cmd_immerse)

    p = sub.add_parser("norms", help="function-space norms of a field file")
    p.add_argument("field")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--variant", choices=["strong", "weak", "campanato", "bmo", "hardy"], default="strong")
    p.add_argument("--radii", default="dyadic", help="'dyadic' or comma-separated radii")
    p.add_argument("--center-stride", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_norms)

    p = sub.add_parser("roundtrip", help="generate, reconstruct and compare an analytic example")
    p.add_argument("--example", required=True, choices=sorted(GENERATORS))
    p.add_argument("--res", type=_int_list, required=True, help="R1 or R1,R2 nodes per axis")
    p.add_argument("--eps", type=float, default=None, help="wrinkle_family parameter")
    p.add_argument("--flatness-tol", type=float, default=PfaffOptions.flatness_tol)
    common(p)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("compactness", help="weak-compactness experiment on the wrinkle family")
    p.add_argument("--eps", type=_float_list, default=[0.2, 0.1, 0.05, 0.025])
    p.add_argument("--res", type=int, default=129)
    common(p)
    p.set_defaults(func=cmd_compactness)

    p = sub.add_parser("make-chart", help="write the chart file of an analytic example")
    p.add_argument("--example", required=True, choices=sorted(GENERATORS))
    p.add_argument("--res", type=_int_list, required=True, help="nodes per axis (one value or one per axis)")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--scale-second-form", type=float, default=1.0, help="multiply II (breaks compatibility)")
    p.add_argument("--reference", help="also write the analytic immersion to this field file")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_make_chart)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        solver = isinstance(exc.cause, (FlatnessError, ClosednessError))
        return EXIT_SOLVER if solver else EXIT_INVALID
    except (FormatError, MetricError, ExampleError, GaugeError, ValueError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
