"""``jacobi-entropy`` command line.

Exit status: 0 success, 1 configuration or parse error, 2 mathematical
domain error (turning point, degenerate critical point, validity breach,
resonance), 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from . import geometry as geo
from . import perturbation as pt
from . import solver as sv
from . import volume as vm
from .errors import ConfigError, ConvergenceError, DegenerateCriticalPointError, JacobiError
from .potential import axis_grid, classify, parse_potential, search_critical_points
from .records import atomic_write_text, kv_text, write_csv, write_kv

log = logging.getLogger("jacobi_entropy")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="Monte-Carlo seed (overrides ball.seed)")
    common.add_argument("--samples", type=int, help="Monte-Carlo sample count (overrides ball/verify samples)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    common.add_argument("--normalization", choices=geo.NORMALIZATIONS,
                        help="curvature normalization (overrides curvature.normalization)")
    parser = _Parser(prog="jacobi-entropy", description="Jacobi-metric curvature and geodesic-ball entropy.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("curvature", parents=[common], help="curvature tensors at points")
    sub.add_parser("entropy", parents=[common], help="ball volume and entropy at a critical point")
    sub.add_parser("perturb", parents=[common], help="first-order perturbation report")
    sub.add_parser("solve", parents=[common], help="solve the invariance equation on the ball")
    sub.add_parser("verify", parents=[common], help="twin Monte-Carlo entropy shifts versus lambda")
    return parser


def apply_overrides(cfg: cfgmod.RunConfig, args) -> cfgmod.RunConfig:
    ball, verify, curv, out = cfg.ball, cfg.verify, cfg.curvature, cfg.output
    if args.seed is not None:
        ball = replace(ball, seed=args.seed)
    if args.samples is not None:
        ball = replace(ball, samples=args.samples)
        verify = replace(verify, samples=args.samples)
    if args.normalization is not None:
        curv = replace(curv, normalization=args.normalization)
    if args.out is not None:
        out = replace(out, dir=args.out)
    return replace(cfg, ball=ball, verify=verify, curvature=curv, output=out)


# -- pipeline pieces ----------------------------------------------------------


def build_spec(cfg: cfgmod.RunConfig) -> geo.SystemSpec:
    s = cfg.system
    Vc = parse_potential(s.Vc, s.n)
    Vt = parse_potential(s.Vtilde, s.n) if s.Vtilde is not None else None
    return geo.SystemSpec(s.n, s.E, Vc, s.lam, Vt, s.turning_margin)


def select_point(cfg: cfgmod.RunConfig, spec: geo.SystemSpec) -> np.ndarray:
    """The critical point of ``Vc`` the ball is centred on."""
    c = cfg.critical
    Vc = spec.Vc
    if c.point is not None:
        cp = classify(Vc, c.point, grad_tol=c.grad_tol)
        if cp.gradient_norm > max(c.grad_tol, 1e-8):
            raise DegenerateCriticalPointError(
                f"critical.point {list(c.point)} is not critical (|grad Vc| = {cp.gradient_norm:.3e})"
            )
        if cp.degenerate and not Vc.is_constant:
            raise DegenerateCriticalPointError(
                f"critical point {list(c.point)} is degenerate: Hessian eigenvalue {cp.near_zero_eigenvalue():.3e}"
            )
        return cp.location
    if Vc.is_constant:
        # every point is critical; the origin is as good as any
        return np.zeros(spec.n)
    seeds = c.seeds if c.seeds is not None else axis_grid(np.zeros(spec.n), c.half_width)
    search = search_critical_points(Vc, seeds, c.grad_tol, c.max_iter)
    if not search.points:
        raise ConvergenceError(f"no critical point of Vc found from {len(search.seeds)} seeds")
    best = min(search.points, key=lambda p: (float(Vc(p.location)), tuple(np.round(p.location, 12))))
    if best.degenerate:
        raise DegenerateCriticalPointError(
            f"critical point {best.location.tolist()} is degenerate: "
            f"near-zero Hessian eigenvalue {best.near_zero_eigenvalue():.3e}"
        )
    log.info("critical point %s (index %d)", best.location.tolist(), best.index)
    return best.location


def _path(cfg, name):
    return os.path.join(cfg.output.dir, name)


def _point_fields(P):
    return {f"P{i + 1}": float(c) for i, c in enumerate(P)}


# -- commands -----------------------------------------------------------------


def cmd_curvature(cfg: cfgmod.RunConfig):
    spec = build_spec(cfg)
    points = cfg.curvature.points
    points = [np.asarray(p, dtype=float) for p in points] if points is not None else [select_point(cfg, spec)]
    norm = cfg.curvature.normalization
    n = spec.n
    cols = ["point"] + [f"x{i + 1}" for i in range(n)] + [
        "E_minus_V", "scalar_eq7", "scalar_eq9", "scalar_oracle", "R_p", "normalization",
        "christoffel_discrepancy", "riemann_discrepancy"]
    rows, text = [], []
    for k, x in enumerate(points):
        b = geo.curvature(spec, x)
        w = spec.local(x)[0]
        rows.append([k, *map(float, x), w, b.scalar_eq7, b.scalar_eq9, b.scalar_oracle,
                     geo.scalar_curvature(spec, x, norm), norm,
                     b.christoffel_discrepancy, b.riemann_discrepancy])
        text.append(f"[point {k}] x = {[float(c) for c in x]}")
        text.append(f"E - V = {w!r}")
        text.append(f"scalar_eq7 = {b.scalar_eq7!r}  scalar_eq9 = {b.scalar_eq9!r}  scalar_oracle = {b.scalar_oracle!r}")
        text.append("ricci =")
        text.extend("  " + " ".join(f"{v: .12e}" for v in row) for row in b.ricci)
        text.append("")
    write_csv(_path(cfg, "curvature.csv"), cols, rows)
    summary = "\n".join(text)
    atomic_write_text(_path(cfg, "curvature.txt"), summary)
    return summary


def cmd_entropy(cfg: cfgmod.RunConfig):
    spec = build_spec(cfg).unperturbed()
    P = select_point(cfg, spec)
    ball = vm.BallSpec(P, cfg.ball.r, cfg.ball.cap)
    report = vm.ball_report(spec, ball, cfg.ball.samples, cfg.ball.seed, cfg.curvature.normalization,
                            k_B=cfg.system.k_B, rtol=cfg.ball.rtol, workers=cfg.ball.workers)
    write_csv(_path(cfg, "entropy.csv"), vm.BallReport.COLUMNS, [report.row()])
    kv = {**_point_fields(P), **report.key_values()}
    write_kv(_path(cfg, "entropy.txt"), kv)
    return kv_text(kv)


def cmd_perturb(cfg: cfgmod.RunConfig):
    spec = build_spec(cfg)
    if spec.Vtilde is None:
        raise ConfigError("perturb needs system.Vtilde")
    P = select_point(cfg, spec)
    report = pt.perturbation_report(spec, P, cfg.ball.r, cfg.curvature.normalization, k_B=cfg.system.k_B)
    write_csv(_path(cfg, "perturb.csv"), pt.PerturbationReport.COLUMNS, [report.row()])
    kv = {**_point_fields(P), **report.key_values()}
    write_kv(_path(cfg, "perturb.txt"), kv)
    return kv_text(kv)


def _solve(cfg, spec, P):
    radius = cfg.solver.radius if cfg.solver.radius is not None else cfg.ball.r
    ball = vm.BallSpec(P, radius, cfg.ball.cap)
    boundary = parse_potential(cfg.solver.boundary, spec.n)
    sol = sv.solve_invariance(spec, ball, boundary, h=cfg.solver.h, solver_tol=cfg.solver.tol)
    return ball, sol


def _solution_summary(spec, P, sol):
    return {
        **_point_fields(P), "n": spec.n, "E": spec.E, "r": sol.r, "rho": sol.rho, "h": sol.h,
        "nodes": int(sol.values.size), "boundary_points": int(sol.boundary_values.size),
        "M": sol.mass_used, "coefficient": sol.coefficient, "smallest_eigenvalue": sol.smallest_eigenvalue,
        "residual_norm": sol.residual_norm, "iterations": sol.iterations, "max_abs": sol.max_abs(),
    }


def cmd_solve(cfg: cfgmod.RunConfig):
    spec = build_spec(cfg).unperturbed()
    P = select_point(cfg, spec)
    _, sol = _solve(cfg, spec, P)
    sol.to_csv(_path(cfg, "solution.csv"))
    sol.to_binary(_path(cfg, "solution.bin"))
    kv = _solution_summary(spec, P, sol)
    write_kv(_path(cfg, "solve.txt"), kv)
    return kv_text(kv)


def cmd_verify(cfg: cfgmod.RunConfig):
    spec = build_spec(cfg).unperturbed()
    P = select_point(cfg, spec)
    v = cfg.verify
    if v.source == "solution":
        ball, sol = _solve(cfg, spec, P)
        table = sv.verify_entropy_invariance(spec, ball, sol, v.lambdas, v.samples, cfg.ball.seed,
                                             degree=cfg.solver.degree, rtol=v.rtol, workers=cfg.ball.workers)
    else:
        if cfg.system.Vtilde is None:
            raise ConfigError("verify.source = perturbation needs system.Vtilde")
        ball = vm.BallSpec(P, cfg.ball.r, cfg.ball.cap)
        Vt = parse_potential(cfg.system.Vtilde, spec.n)
        table = sv.entropy_shift_twin(spec, ball, Vt, v.lambdas, v.samples, cfg.ball.seed, rtol=v.rtol,
                                      workers=cfg.ball.workers)
    write_csv(_path(cfg, "verify.csv"), sv.InvarianceTable.COLUMNS, table.rows())
    kv = {**_point_fields(P), "source": v.source, "r": ball.radius, "samples": table.samples,
          "seed": table.seed, "aborted": table.aborted, "vol0": table.base_volume, "slope": table.slope}
    write_kv(_path(cfg, "verify.txt"), kv)
    return kv_text(kv)


COMMANDS = {
    "curvature": cmd_curvature,
    "entropy": cmd_entropy,
    "perturb": cmd_perturb,
    "solve": cmd_solve,
    "verify": cmd_verify,
}


def _setup_logging():
    level = os.environ.get("JACOBI_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def run(argv=None) -> int:
    """Parse ``argv`` and run one command; returns the exit status."""
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = apply_overrides(cfgmod.load(args.config), args).validate()
        os.makedirs(cfg.output.dir, exist_ok=True)
        text = COMMANDS[args.command](cfg)
    except JacobiError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
