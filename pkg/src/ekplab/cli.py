"""Command-line driver.

Exit status: 0 clean, 1 failure (bad input, aborted run, failed check),
3 completed but a runtime monitor recorded a violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .grid import Grid
from .models import Params, verify_h_lower_bounds

EXIT_OK, EXIT_FAIL, EXIT_MONITOR = 0, 1, 3


def _sweep_config(args) -> harness.SweepConfig:
    if args.config:
        cfg = harness.load_config(args.config)
    else:
        cfg = harness.SweepConfig(
            params=Params(a=1.0, b=-1.0, c=0.0, gamma=2.0), epsilon_list=(0.2, 0.1, 0.05)
        )
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.threads:
        cfg = replace(cfg, workers=args.threads)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _print_rows(report):
    print(",".join(harness.CSV_COLUMNS))
    for row in report.rows:
        print(",".join(f"{v:.6g}" for v in row.csv_values()) + (f"  FAILED: {row.error}" if row.failed else ""))
    for name, fit in report.slopes.items():
        print(f"slope[{name}] = {fit.slope:.4f} (residual {fit.residual:.2e})")


def _finish_sweep(report, out) -> int:
    paths = harness.emit_report(report, out)
    _print_rows(report)
    print(f"wrote {paths['sweep']}")
    if any(r.failed for r in report.rows):
        return EXIT_FAIL
    if any(r.violations for r in report.rows):
        for r in report.rows:
            for v in r.violations:
                print(f"monitor (epsilon={r.epsilon:g}): {v}", file=sys.stderr)
        return EXIT_MONITOR
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _sweep_config(args)
    return _finish_sweep(harness.run_sweep(cfg), cfg.output_dir)


def cmd_single(args) -> int:
    cfg = replace(_sweep_config(args), epsilon_list=(args.epsilon,))
    return _finish_sweep(harness.run_sweep(cfg), cfg.output_dir)


def cmd_check_identities(args) -> int:
    from .ekp import IDENTITY_TOL, identity_residuals
    from .suites import identity_suite

    worst = 0.0
    for name, rho_fn in identity_suite():
        grid = Grid(1, args.n)
        res = identity_residuals(grid, rho_fn(grid.coords()[0]))
        worst = max(worst, *res)
        print(f"{name}: poisson={res[0]:.3e} korteweg={res[1]:.3e}")
    ok = worst <= IDENTITY_TOL
    print(f"max residual {worst:.3e} ({'ok' if ok else 'above'} {IDENTITY_TOL:g})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify_bounds(args) -> int:
    params = Params(a=args.a, gamma=args.gamma)
    rep = verify_h_lower_bounds(
        params, scan_resolution=args.resolution, rho_range=(0.0, args.rho_max), r_range=(args.r_min, args.r_max)
    )
    if rep.c3 is not None:
        print(f"C3 = {rep.c3!r}")
    print(f"C1 = {rep.c1!r} (rho > {rep.split_R0:g})")
    print(f"C2 = {rep.c2!r} (rho <= {rep.split_R0:g})")
    for d, c in rep.c_delta.items():
        print(f"C(delta={d:g}) = {c!r}")
    for v in rep.violations:
        print(f"violation at rho={v[0]:.6g} r={v[1]:.6g}: h={v[2]:.3e}")
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_galerkin(args) -> int:
    from . import galerkin

    grid = Grid(1, args.n)
    x = grid.coords()[0]
    params = Params(a=1.0, b=args.b, c=args.c, gamma=2.0, epsilon=args.epsilon)
    rho0 = 1.0 + 0.2 * np.cos(2 * np.pi * x)
    u0 = np.array([0.3 * np.sin(2 * np.pi * x)])
    cfg = galerkin.GalerkinConfig(
        params, mu=args.mu, n_modes=args.modes, t_end=args.t_end, sample_interval=args.t_end / 10
    )
    traj = galerkin.run_galerkin(grid, rho0, u0, cfg)
    if traj.error:
        print(f"run failed: {traj.error}")
        return EXIT_FAIL
    rep = galerkin.galerkin_energy_report(traj)
    print(f"energy balance error {rep.balance_error:.3e} (tol {rep.tolerance:.3e})")
    print(f"mu-dissipation {rep.dissipation_mu[-1]:.6e}, friction dissipation {rep.dissipation_friction[-1]:.6e}")
    print(f"sup rho {rep.sup_rho:.6g}; int |d_t rho|^2 {rep.dt_rho_l2_sq:.6g}")
    print(f"sup |u|_W62 {rep.sup_u_w62:.6g}; sup |grad phi|_L2 {rep.sup_grad_phi_l2:.6g}")
    return EXIT_OK if rep.balanced else EXIT_MONITOR


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ekplab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="INI file with [params] [grid] [sweep] [output]")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--threads", type=int, help="worker processes for the sweep")
        p.add_argument("--seed", type=int, help="seed for random initial profiles")

    p = sub.add_parser("sweep", help="run an epsilon sweep and write the report")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("single", help="run one epsilon")
    common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.set_defaults(func=cmd_single)

    p = sub.add_parser("check-identities", help="stress-identity residuals on the fixed density suite")
    p.add_argument("--n", type=int, default=128)
    p.set_defaults(func=cmd_check_identities)

    p = sub.add_parser("verify-bounds", help="scan lower bounds of the relative entropy density")
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--resolution", type=int, default=1000)
    p.add_argument("--rho-max", type=float, default=10.0)
    p.add_argument("--r-min", type=float, default=0.5)
    p.add_argument("--r-max", type=float, default=2.0)
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("galerkin", help="regularized Galerkin demo with energy report")
    p.add_argument("--n", type=int, default=64, help="collocation points")
    p.add_argument("--modes", type=int, default=9)
    p.add_argument("--mu", type=float, default=1e-3)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--b", type=float, default=-1.0)
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--t-end", type=float, default=0.1)
    p.set_defaults(func=cmd_galerkin)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
