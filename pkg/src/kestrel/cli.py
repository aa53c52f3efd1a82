"""Command-line front end.

Every subcommand writes one artifact (JSON, JSON lines, CSV or SVG) to
``--out`` or to standard output.  Exit status is 0 on success, 2 on
invalid input and 3 when a numerical method fails; diagnostics go to
standard error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys

import numpy as np

from . import __version__
from . import constants as C
from . import continuum_flow as CF
from . import criteria as CR
from . import densities as DN
from . import discrete_flow as DF
from . import kernels as K
from .output import OutputError, csv_text, emit, json_text, jsonl_text, portrait_svg

__all__ = ["main", "run", "build_parser"]

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

_NUMERIC_ERRORS = (C.GroundStateError, K.QuadratureError, K.MaximizerError, DF.NewtonError,
                   CF.ProxError, CF.GapCollapseError, ArithmeticError, np.linalg.LinAlgError)


def _positive_float(text: str) -> float:
    x = float(text)
    if not (x > 0 and math.isfinite(x)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return x


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text}")


def _kernel(text: str) -> tuple[str, float]:
    if text == "log":
        return CF.LOG, 0.5
    if text.startswith("power:"):
        return CF.POWER, float(text.split(":", 1)[1])
    raise argparse.ArgumentTypeError("kernel must be 'log' or 'power:G'")


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------

def _cmd_constants(args) -> None:
    consts = C.compute_constants(args.dim)
    if args.ground_state:
        consts = C.with_ground_state(consts, C.solve_ground_state(args.dim))
    emit(json_text(consts.to_dict()), args.out)


def _cmd_criteria(args) -> None:
    d, M, I0 = args.dim, args.mass, args.i0
    reports = [CR.check_first_blowup(d, M, I0, args.alpha)]
    if args.e0 is not None:
        if args.alpha == 0:
            reports.append(CR.check_second_blowup(d, M, I0, args.e0))
        else:
            print("note: second blow-up criterion needs alpha = 0; skipped", file=sys.stderr)
    if args.lhalf is not None:
        reports.extend(r for r in CR.check_smallness(d, args.lhalf) if r.verdict is not None)
        reports.append(CR.check_general_blowup_necessary(d, args.lhalf))
    conc = (args.eps, args.gamma_exp, args.cd)
    if any(x is not None for x in conc):
        if any(x is None for x in conc) or args.e0 is None:
            raise ValueError("--eps, --gamma-exp and --cd go together and need --e0")
        reports.append(CR.check_parabolic_concentration(d, M, I0, args.e0, *conc,
                                                        l_half_norm=args.lhalf))
    emit(jsonl_text(r.to_dict() for r in reports), args.out)


def _cmd_density(args) -> None:
    prof = DN.load_profile(args.file)
    rep = DN.report(prof, args.alpha, method=args.method, samples=args.samples, seed=args.seed)
    if args.criteria:
        emit(jsonl_text(r.to_dict() for r in CR.evaluate_report(rep, alpha=args.alpha)), args.out)
    else:
        emit(json_text(rep.to_dict()), args.out)


def _cmd_kernels(args) -> None:
    params = K.BesselParams(args.dim, args.alpha)
    r = np.linspace(args.r_min, args.r_max, args.n)
    emit(csv_text(["r", "E", "B", "g"], K.kernel_table(params, r)), args.out)


def _discrete_state(args, config) -> DF.DiscreteState:
    if args.x is not None:
        X = np.asarray(args.x, dtype=float)
        return DF.DiscreteState(X - X.mean())
    if args.u is None or args.v is None:
        raise ValueError("give --x or both --u and --v")
    if config.n_points != 3:
        raise ValueError("--u/--v describe three points; use --x for other N")
    return DF.DiscreteState.from_gaps([args.u, args.v])


def _cmd_discrete(args) -> None:
    config = DF.DiscreteConfig(args.gamma, args.mass, args.points)
    if args.action == "simulate":
        state = _discrete_state(args, config)
        out = DF.integrate(config, state, args.t_max, gap_tol=args.gap_tol, R_max=args.r_max)
        tr = out.trajectory
        header = ["t"] + [f"X{i + 1}" for i in range(config.n_points)] + ["G", "norm2"]
        rows = (np.concatenate([[t], x, [g, n]]).tolist()
                for t, x, g, n in zip(tr.t, tr.X, tr.G, tr.norm2))
        emit(csv_text(header, rows), args.out)
        msg = f"{out.classification} at t = {out.time!r}"
        if out.gap_index is not None:
            msg += f" (gap {out.gap_index + 1})"
        if out.reason:
            msg += f" ({out.reason})"
        print(msg, file=sys.stderr)
    elif args.action == "portrait":
        grid = DF.GridSpec(args.u_min, args.u_max, args.v_min, args.v_max, args.grid, args.grid)
        por = DF.phase_portrait(config, grid, args.t_max, gap_tol=args.gap_tol, R_max=args.r_max,
                                with_manifold=not args.no_separatrix)
        if args.format == "svg":
            emit(portrait_svg(por), args.out)
        else:
            emit(csv_text(["u", "v", "class", "crit1", "crit2", "global"], por.rows()), args.out)
        if args.svg:
            emit(portrait_svg(por), args.svg)
    elif args.action == "manifold":
        man = DF.separatrix(config, args.arc_length)
        emit(json_text({
            "gamma": config.gamma, "mass": config.mass,
            "critical_gaps": man.critical_gaps, "kind": man.kind,
            "eigenvalues": man.eigenvalues, "eigenvectors": man.eigenvectors.T,
            "branches": [{"index": k, "sign": s, "gaps": pts}
                         for (k, s), pts in sorted(man.branches.items())],
            "separatrix": list(man.separatrix),
        }), args.out)
    else:  # gauge
        state = _discrete_state(args, config)
        U = DF.entropy_part(config, state)
        W = DF.interaction_part(config, state)
        q = config.n_points - 1
        emit(json_text({
            "gamma": config.gamma, "mass": config.mass, "X": state.X,
            "U": U, "W": W, "G": U - W, "H": DF.gauge(config, state),
            "lambda_star": (config.gamma * W / q) ** (1.0 / config.gamma),
        }), args.out)


def _cmd_continuum(args) -> None:
    if args.config is not None:
        with open(args.config) as fh:
            config = CF.ContinuumConfig(**json.load(fh))
    else:
        # the rate table picks its own particle counts from --ns
        points = args.points if args.points is not None or args.action != "rate" \
            else args.ns[0]
        if args.mass is None or points is None:
            raise ValueError("give --config or both --mass and --points")
        kernel, gamma = args.kernel
        config = CF.ContinuumConfig(args.mass, points, kernel=kernel, gamma=gamma)
    if args.config_out:
        emit(json_text(dataclasses.asdict(config)), args.config_out)
    if args.action == "rate":
        emit(json_text(CF.richardson_moment_rate(config.mass, args.ns, kernel=config.kernel,
                                                 gamma=config.gamma, width=args.width)),
             args.out)
        return
    state = CF.initial_state(config, args.width, args.profile)
    rec = CF.simulate(config, state, args.t_max, method=args.method, tau=args.tau,
                      snapshots=args.snapshots is not None)
    emit(csv_text(["t", "I", "G"], rec.rows()), args.out)
    if args.snapshots is not None:
        header = ["t"] + [f"X{i + 1}" for i in range(config.n_particles)]
        emit(csv_text(header, (np.concatenate([[t], x]).tolist() for t, x in zip(rec.t, rec.X))),
             args.snapshots)
    print(f"{rec.status} at t = {float(rec.t[-1])!r} after {rec.n_steps} explicit and "
          f"{rec.n_prox} implicit steps", file=sys.stderr)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kestrel", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def out_opt(sp):
        sp.add_argument("--out", default=None, help="output file (default: standard output)")

    sp = sub.add_parser("constants", help="sharp constants for one dimension (JSON)")
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--ground-state", action="store_true",
                    help="also solve for the ground state and fill smallness_gn")
    out_opt(sp)
    sp.set_defaults(func=_cmd_constants)

    sp = sub.add_parser("criteria", help="initial-data criteria (JSON lines)")
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--mass", type=_positive_float, required=True)
    sp.add_argument("--i0", type=_positive_float, required=True, help="second moment")
    sp.add_argument("--e0", type=float, default=None, help="free energy")
    sp.add_argument("--alpha", type=float, default=0.0)
    sp.add_argument("--lhalf", type=_positive_float, default=None, help="L^(d/2) norm")
    sp.add_argument("--eps", type=_positive_float, default=None)
    sp.add_argument("--gamma-exp", type=float, default=None)
    sp.add_argument("--cd", type=_positive_float, default=None)
    out_opt(sp)
    sp.set_defaults(func=_cmd_criteria)

    sp = sub.add_parser("density", help="moment report of a profile file (JSON)")
    sp.add_argument("--file", required=True)
    sp.add_argument("--report", action="store_true", help="emit the moment report (default)")
    sp.add_argument("--criteria", action="store_true", help="emit criterion verdicts instead")
    sp.add_argument("--alpha", type=float, default=0.0)
    sp.add_argument("--method", choices=["auto", "quadrature", "monte-carlo"], default="auto")
    sp.add_argument("--samples", type=int, default=1_000_000)
    sp.add_argument("--seed", type=int, default=0)
    out_opt(sp)
    sp.set_defaults(func=_cmd_density)

    sp = sub.add_parser("kernels", help="tabulate the Bessel kernel (CSV r,E,B,g)")
    sp.add_argument("action", choices=["table"])
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--r-min", type=_positive_float, default=0.1)
    sp.add_argument("--r-max", type=_positive_float, default=5.0)
    sp.add_argument("--n", type=int, default=50)
    out_opt(sp)
    sp.set_defaults(func=_cmd_kernels)

    sp = sub.add_parser("discrete", help="finite-dimensional gradient flow")
    sp.add_argument("action", choices=["simulate", "portrait", "manifold", "gauge"])
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--mass", type=_positive_float, required=True)
    sp.add_argument("--points", type=int, default=3)
    sp.add_argument("--u", type=_positive_float, default=None, help="first gap (N = 3)")
    sp.add_argument("--v", type=_positive_float, default=None, help="second gap (N = 3)")
    sp.add_argument("--x", type=_floats, default=None, help="positions X1,...,XN")
    sp.add_argument("--t-max", type=_positive_float, default=None)
    sp.add_argument("--gap-tol", type=_positive_float, default=1e-8)
    sp.add_argument("--r-max", type=_positive_float, default=1e3)
    sp.add_argument("--grid", type=int, default=100, help="cells per axis")
    sp.add_argument("--u-min", type=float, default=0.02)
    sp.add_argument("--u-max", type=_positive_float, default=3.0)
    sp.add_argument("--v-min", type=float, default=0.02)
    sp.add_argument("--v-max", type=_positive_float, default=3.0)
    sp.add_argument("--format", choices=["csv", "svg"], default="csv")
    sp.add_argument("--svg", default=None, help="also write the SVG portrait here")
    sp.add_argument("--no-separatrix", action="store_true")
    sp.add_argument("--arc-length", type=_positive_float, default=50.0)
    out_opt(sp)
    sp.set_defaults(func=_cmd_discrete)

    sp = sub.add_parser("continuum", help="particle scheme for the 1D equation")
    sp.add_argument("action", choices=["simulate", "rate"])
    sp.add_argument("--kernel", type=_kernel, default=(CF.LOG, 0.5))
    sp.add_argument("--mass", type=_positive_float, default=None)
    sp.add_argument("--points", type=int, default=None)
    sp.add_argument("--config", default=None, help="ContinuumConfig as JSON")
    sp.add_argument("--config-out", default=None, help="write the effective config as JSON")
    sp.add_argument("--t-max", type=_positive_float, default=1.0)
    sp.add_argument("--width", type=_positive_float, default=1.0)
    sp.add_argument("--profile", choices=["gaussian", "uniform"], default="gaussian")
    sp.add_argument("--method", choices=["explicit", "prox"], default="explicit")
    sp.add_argument("--tau", type=_positive_float, default=None)
    sp.add_argument("--snapshots", default=None, help="write t,X1..XN here")
    sp.add_argument("--ns", type=lambda s: [int(x) for x in s.split(",")], default=[64, 128, 256])
    out_opt(sp)
    sp.set_defaults(func=_cmd_continuum)
    return p


def run(argv=None) -> int:
    """Parse ``argv`` and execute; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    if args.command == "discrete" and args.t_max is None:
        args.t_max = 1e3 if args.action == "simulate" else 1e7
    try:
        args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"kestrel: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError, OSError, OutputError) as exc:
        print(f"kestrel: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
