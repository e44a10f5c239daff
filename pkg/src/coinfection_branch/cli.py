"""Command-line interface: ``coinfection-branch <command> --params FILE ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import output
from .branch import StepPolicy, classify_scenario, hopf_scan, trace
from .equilibria import all_equilibria, coexistence_polynomial, thresholds
from .errors import (
    AssumptionViolation,
    InvariantViolation,
    NoCrossing,
    NumericalError,
    ParameterError,
)
from .model import (
    derive,
    identity_residuals,
    inequality_checks,
    load_params,
    validate_standing_assumptions,
)
from .simulate import integrate, perturbations, r_limit
from .stability import classify
from .verify import default_K_range, run_checks

EXIT_OK, EXIT_VERIFY, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

COMMANDS = ("derive", "equilibria", "scenario", "branch", "hopf", "simulate", "verify")


def parse_K_range(text):
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError("expected min:max or min:max:steps")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        steps = int(parts[2]) if len(parts) == 3 else None
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse K range {text!r}") from None
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError("K range needs 0 < min < max")
    if steps is not None and steps < 1:
        raise argparse.ArgumentTypeError("steps must be positive")
    return lo, hi, steps


def parse_state(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) not in (4, 5):
        raise argparse.ArgumentTypeError("initial state needs 4 or 5 comma-separated values")
    return vals


def build_parser():
    ap = argparse.ArgumentParser(prog="coinfection-branch", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {output.__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--params", required=True, help="parameter JSON file")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--K", type=float, help="carrying capacity (overrides the file)")
        g.add_argument("--K-range", type=parse_K_range, help="min:max[:steps]")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--rel-tol", type=float, default=1e-8)
        p.add_argument("--abs-tol", type=float, default=1e-12)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--include-R", action="store_true",
                       help="report the limit of the removed class")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            p.add_argument("--t-end", type=float, default=1e4)
            p.add_argument("--samples", type=int, default=1001)
            p.add_argument("--initial", type=parse_state,
                           help="S,I1,I2,I12[,R]; default: seeded 1%% perturbation of the stable point")
    return ap


def _config(args, params):
    cfg = {
        "command": args.command,
        "params": params.to_dict(),
        "K": args.K,
        "K_range": list(args.K_range) if args.K_range else None,
        "rel_tol": args.rel_tol,
        "abs_tol": args.abs_tol,
        "seed": args.seed,
        "include_R": args.include_R,
    }
    if args.command == "simulate":
        cfg.update(t_end=args.t_end, samples=args.samples, initial=args.initial)
    return cfg


def _equilibrium_record(eq, params, include_R):
    rep = classify(eq, params)
    rec = eq.to_dict()
    rec.update(
        classification=rep.classification.value,
        eigenvalues=[[float(v.real), float(v.imag)] for v in rep.eigenvalues],
        charPolyCoeffs=rep.charPolyCoeffs,
        maxRealPart=rep.maxRealPart,
    )
    if include_R:
        rec["R_limit"] = r_limit(params, eq)
    return rec


def _stable_point(params):
    eqs = all_equilibria(params)
    for eq in eqs:
        if classify(eq, params).stable:
            return eq
    return min(eqs, key=lambda e: classify(e, params).maxRealPart)


def run(args):
    params = load_params(args.params)
    if args.K is not None:
        params = params.with_K(args.K)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = output.meta(args.command, _config(args, params), params, args.seed)
    cmd = args.command

    if cmd == "derive":
        d = derive(params, strict=False)
        output.write_json(out / "derive.json", m, {
            "derived": d.to_dict(),
            "standing_assumptions": dict(validate_standing_assumptions(d)),
            "identity_residuals": identity_residuals(params, d),
            "inequalities": inequality_checks(params, d),
        })
        return EXIT_OK

    if cmd == "equilibria":
        eqs = all_equilibria(params)
        output.write_json(out / "equilibria.json", m, {
            "K": params.K,
            "coexistence_polynomial": coexistence_polynomial(params),
            "equilibria": [_equilibrium_record(e, params, args.include_R) for e in eqs],
        })
        return EXIT_OK

    if cmd == "scenario":
        output.write_json(out / "scenario.json", m, {
            "scenario": classify_scenario(params),
            "thresholds": thresholds(params, strict=False),
        })
        return EXIT_OK

    if cmd == "branch":
        lo, hi, steps = args.K_range or (*default_K_range(params), None)
        policy = StepPolicy(n_steps=steps or 2000)
        br = trace(params, lo, hi, policy)
        output.write_csv(out / "branch.csv", m, output.BRANCH_COLUMNS, output.branch_rows(br))
        output.write_json(out / "branch_events.json", m, {"events": br.events})
        return EXIT_OK

    if cmd == "hopf":
        if args.K_range is None:
            raise ParameterError("hopf needs --K-range")
        lo, hi, steps = args.K_range
        try:
            res = hopf_scan(params, (lo, hi), n_grid=steps or 400)
            payload = {"K_c": res.K_c, "eigenvalue": res.eigenvalue,
                       "relRe": res.relRe, "dRedK": res.dRedK, "marginal": False}
        except NoCrossing as exc:
            payload = {"K_c": None, "marginal": exc.marginal, "detail": str(exc)}
        output.write_json(out / "hopf.json", m, payload)
        return EXIT_OK

    if cmd == "simulate":
        if args.initial is not None:
            y0 = np.asarray(args.initial, dtype=float)
        else:
            eq = _stable_point(params)
            y0 = perturbations(eq.point, 1, 0.01, np.random.default_rng(args.seed))[0]
        traj = integrate(params, y0, args.t_end, args.rel_tol, args.abs_tol,
                         n_samples=args.samples)
        output.write_csv(out / "trajectory.csv", m, output.TRAJECTORY_COLUMNS,
                         output.trajectory_rows(traj))
        return EXIT_OK

    if cmd == "verify":
        K_range = args.K_range[:2] if args.K_range else None
        steps = args.K_range[2] if args.K_range and args.K_range[2] else 2000
        checks = run_checks(params, K_range, steps)
        output.write_json(out / "verify.json", m, {"checks": checks})
        for c in checks:
            print(f"{'PASS' if c.ok else 'FAIL'} {c.name} {c.detail}".rstrip())
        return EXIT_OK if all(c.ok for c in checks) else EXIT_VERIFY

    raise AssertionError(cmd)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ParameterError, AssumptionViolation, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvariantViolation as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
