"""Command-line front end.  Every subcommand prints a structured report and exits 0 iff it passes."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .germ import germ_residuals, particle_degeneracy, solve_modified_gauss
from .harmonic import find_middle, format_map
from .liouville import UniformizationProblem, curvature_residual, expected_area, hyperbolic_area, uniformize
from .maxgraph import (
    GraphProblem,
    format_solution,
    gradient_decay_profile,
    induced_cone_angle,
    max_principle_gap,
    parse_boundary,
    solve_maximal_graph,
)
from .mesh import DiscreteMetric, gauss_bonnet_residual, load_mesh
from .mess import format_pair
from .models import cap_integrated_curvature, eval_g_theta, eval_h_theta, smoothed_h, smoothing_profile
from .pipeline import (
    DEFAULT_THRESHOLDS,
    POLE_EXCLUDE,
    ConfigError,
    PipelineConfig,
    PipelineError,
    VerificationReport,
    _provenance,
    emit_plots,
    format_germ,
    format_lengths,
    format_metric,
    load_germ,
    load_metric,
    mess_report,
    run_forward,
    run_roundtrip,
)
from .quaddiff import format_quaddiff, holomorphicity_residual, load_quaddiff


def _finish(report: VerificationReport, path: str | None) -> int:
    text = report.format()
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text.split("[table ")[0] if not path else f"pass = {str(report.passed).lower()}\n")
    return 0 if report.passed else 1


def _new_report(**thr) -> VerificationReport:
    rep = VerificationReport(thresholds={**DEFAULT_THRESHOLDS, **thr})
    rep.provenance = _provenance(None)
    return rep


def cmd_uniformize(a) -> int:
    mesh = load_mesh(a.mesh)
    ref = load_metric(a.reference, mesh) if a.reference else DiscreteMetric.from_positions(mesh)
    c, sr = uniformize(UniformizationProblem(mesh, ref.flattened(mesh)), a.tol, a.max_iter)
    c = DiscreteMetric(ref.ref_lengths, ref.u + c.u)
    rep = _new_report()
    rep.add("uniformize.curvature", curvature_residual(mesh, c))
    rep.add("uniformize.gauss_bonnet", abs(gauss_bonnet_residual(mesh, c)))
    exp = expected_area(mesh)
    rep.add("uniformize.area", abs(hyperbolic_area(mesh, c) - exp) / exp)
    rep.provenance["iterations"] = str(sr.iterations)
    if a.out:
        Path(a.out).write_text(format_metric(c))
    return _finish(rep, a.report)


def cmd_solve_germ(a) -> int:
    mesh = load_mesh(a.mesh)
    ref = load_metric(a.metric, mesh) if a.metric else DiscreteMetric.from_positions(mesh)
    ref = ref.flattened(mesh)
    q = load_quaddiff(a.qdiff, mesh, ref)
    germ, sr = solve_modified_gauss(mesh, ref, q, a.tol, a.max_iter)
    rep = _new_report()
    gr = germ_residuals(germ)
    rep.add("germ.trace", gr.trace)
    rep.add("germ.divergence", gr.divergence)
    rep.add("germ.gauss", gr.gauss)
    rep.add("germ.holomorphicity", holomorphicity_residual(germ.q0, mesh, germ.g0, POLE_EXCLUDE))
    rep.add("germ.particle_degeneracy", particle_degeneracy(germ))
    rep.provenance["iterations"] = str(sr.iterations)
    if a.out:
        Path(a.out).write_text(format_germ(germ))
    return _finish(rep, a.report)


def cmd_mess(a) -> int:
    mesh = load_mesh(a.mesh)
    germ = load_germ(a.germ, mesh)
    rep = _new_report()
    field_, pair, m1, m2 = mess_report(rep, germ)
    if a.out:
        Path(a.out).write_text(format_pair(field_, pair))
    if a.g1_out:
        Path(a.g1_out).write_text(format_lengths(mesh, m1))
    if a.g2_out:
        Path(a.g2_out).write_text(format_lengths(mesh, m2))
    return _finish(rep, a.report)


def cmd_middle(a) -> int:
    mesh = load_mesh(a.mesh)
    g1 = load_metric(a.g1, mesh).flattened(mesh)
    g2 = load_metric(a.g2, mesh).flattened(mesh)
    res = find_middle(mesh, g1, g2, a.tol, a.max_outer)
    rep = _new_report(**{"middle.hopf_sum": a.tol})
    rep.add("middle.hopf_sum", res.ratio)
    rep.flags["find_middle_converged"] = res.converged
    rep.provenance["outer_iterations"] = str(res.outer)
    rep.tables["middle_history"] = (["outer", "hopf_sum"], [[i + 1, r] for i, r in enumerate(res.history)])
    if a.out:
        out = Path(a.out)
        out.write_text(format_metric(res.conformal) + format_quaddiff(res.q))
        out.with_suffix(".map1.txt").write_text(format_map(res.map1))
        out.with_suffix(".map2.txt").write_text(format_map(res.map2))
    return _finish(rep, a.report)


def cmd_verify(a) -> int:
    if a.config:
        rep = run_forward(PipelineConfig.load(a.config))
    else:
        if not (a.mesh and a.germ):
            raise ConfigError("verify needs --config or both --mesh and --germ")
        mesh = load_mesh(a.mesh)
        germ = load_germ(a.germ, mesh)
        rep = _new_report()
        gr = germ_residuals(germ)
        rep.add("germ.trace", gr.trace)
        rep.add("germ.divergence", gr.divergence)
        rep.add("germ.gauss", gr.gauss)
        mess_report(rep, germ)
    return _finish(rep, a.report)


def cmd_roundtrip(a) -> int:
    return _finish(run_roundtrip(PipelineConfig.load(a.config)), a.report)


def cmd_maxgraph(a) -> int:
    prob = GraphProblem(a.theta, a.radius, parse_boundary(a.boundary), a.n_rho, a.n_phi, a.ratio)
    sol, sr = solve_maximal_graph(prob, a.tol)
    rep = _new_report(**{"maxgraph.residual": a.tol, "maxgraph.cone_angle": a.angle_tol, "maxgraph.max_principle": 1e-12})
    rep.add("maxgraph.residual", sol.residual)
    rep.add("maxgraph.cone_angle", abs(induced_cone_angle(sol) - a.theta) / a.theta)
    rep.add("maxgraph.max_principle", max(max_principle_gap(sol), 0.0))
    prof, slope = gradient_decay_profile(sol)
    rep.add("maxgraph.inner_gradient", prof[0, 1])
    rep.add("maxgraph.spacelike_margin", 1.0 - float(sol.grad_norm.max()))
    rep.provenance["decay_slope"] = f"{slope:.6g}"
    rep.provenance["iterations"] = str(sr.iterations)
    rep.tables["decay"] = (["rho", "gradNorm"], prof.tolist())
    if a.out:
        Path(a.out).write_text(format_solution(sol))
    return _finish(rep, a.report)


def cmd_eval_model(a) -> int:
    g = eval_g_theta(a.theta, a.t, a.rho, a.phi, a.form)
    h = eval_h_theta(a.theta, a.rho, a.phi)
    lines = [f"g.{i}{j} = {g[i, j]:.17g}" for i in range(3) for j in range(i, 3)]
    lines += [f"h.{i}{j} = {h[i, j]:.17g}" for i in range(2) for j in range(i, 2)]
    if a.epsilon is not None:
        p = smoothing_profile(a.theta, a.epsilon)
        hs = smoothed_h(p, a.rho)
        lines += [f"h_eps.{i}{j} = {hs[i, j]:.17g}" for i in range(2) for j in range(i, 2)]
        err = abs(cap_integrated_curvature(p) - (2 * math.pi - a.theta))
        lines.append(f"residual.model.cap_curvature = {err:.6e}")
        ok = err <= 1e-6
    else:
        ok = True
    lines.append(f"pass = {str(ok).lower()}")
    print("\n".join(lines))
    return 0 if ok else 1


def cmd_emit_plots(a) -> int:
    rep = VerificationReport.parse(Path(a.report).read_text())
    for p in emit_plots(rep, a.dir):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adscone", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("uniformize", help="hyperbolic cone metric in the class of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--reference", help="metric file for the reference class (default: vertex positions)")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_uniformize)

    p = sub.add_parser("solve-germ", help="maximal germ from a conformal class and a differential")
    p.add_argument("--mesh", required=True)
    p.add_argument("--metric", help="reference metric file")
    p.add_argument("--qdiff", required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_solve_germ)

    p = sub.add_parser("mess", help="metric pair and morphism of a germ")
    p.add_argument("--mesh", required=True)
    p.add_argument("--germ", required=True)
    p.add_argument("--out")
    p.add_argument("--g1-out")
    p.add_argument("--g2-out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_mess)

    p = sub.add_parser("middle", help="middle class of two hyperbolic metrics")
    p.add_argument("--mesh", required=True)
    p.add_argument("--g1", required=True)
    p.add_argument("--g2", required=True)
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--max-outer", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_middle)

    p = sub.add_parser("verify", help="forward pipeline from a config, or identity checks of a germ")
    p.add_argument("--config")
    p.add_argument("--mesh")
    p.add_argument("--germ")
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("roundtrip", help="forward then back through find_middle")
    p.add_argument("--config", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("maxgraph", help="maximal graph over a cone disk")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--boundary", default="const:0")
    p.add_argument("--n-rho", type=int, default=24)
    p.add_argument("--n-phi", type=int, default=48)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--angle-tol", type=float, default=0.02)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_maxgraph)

    p = sub.add_parser("eval-model", help="metric components of the local models")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--phi", type=float, default=0.0)
    p.add_argument("--form", choices=["slab", "warped"], default="slab")
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_eval_model)

    p = sub.add_parser("emit-plots", help="CSV tables from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_emit_plots)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PipelineError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
