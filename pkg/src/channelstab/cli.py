"""Command-line pipeline: steady | spectrum | gains | simulate | verify.

Every subcommand reads one JSON config (flags win over file values) and
writes deterministic artifacts into the output directory, which the
CHANNELSTAB_OUT environment variable overrides.  Exit codes: 0 pass,
2 numerical-criterion failure, 3 configuration error, 4 internal numeric
failure.
"""

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .feedback import (
    GammaSelectionError,
    InvertibilityError,
    build_gains,
    gain_report,
    lifting_identity_residual,
)
from .grid import build_grid
from .operators import assemble_pencil
from .pipeline import UncontrollableModeError, build_design
from .sim import (
    closed_loop_abscissa,
    report_payload,
    run_simulation,
    write_energies_csv,
)
from .spectra import (
    DefectiveModeError,
    EigenSolveError,
    LemmaViolationError,
    ScanExhaustedError,
    scan_modes,
    select_actuator_coefficient,
    solve_pencil_eigen,
    spectrum_rows,
)
from .steady import ConvergenceError, build_steady_state, check_H0

EXIT_PASS = 0
EXIT_CRITERION = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


def _write_json(payload, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def cmd_steady(config: RunConfig) -> int:
    grid = build_grid(config.n)
    steady = build_steady_state(config.params, grid)
    out = config.resolve_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "steady.json").write_text(steady.to_json(grid))
    with (out / "profiles.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "U", "phi_tg", "phi_inf"])
        for i in range(grid.n):
            writer.writerow(
                [f"{grid.nodes[i]:.17e}", f"{steady.U[i]:.17e}",
                 f"{steady.phi_tg[i]:.17e}", f"{steady.phi_inf[i]:.17e}"]
            )
    ok = check_H0(steady.phi_tg, grid)
    print(f"gamma = {steady.gamma:.12g}")
    print(f"admissibility (H0): {'satisfied' if ok else 'VIOLATED'}")
    print(f"wrote {out / 'steady.json'} and {out / 'profiles.csv'}")
    return EXIT_PASS if ok else EXIT_CRITERION


def cmd_spectrum(config: RunConfig, refine=False) -> int:
    grid = build_grid(config.n)
    steady = build_steady_state(config.params, grid)
    threads = config.resolve_threads()
    scan = scan_modes(steady, grid, config.scan_limit, threads=threads)
    from .spectra import determine_cutoff

    M = determine_cutoff(steady, grid, config.eta_target, config.scan_limit, scan=scan)
    out = config.resolve_output_dir()
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for mode in sorted(m for m in scan if m.k != 0 or m.l >= 0):
        if mode.k == 0 and mode.l == 0:
            continue
        if mode.k < 0:
            continue
        pencil_mode = mode
        from .operators import _assemble

        pencil = (
            assemble_pencil(pencil_mode, grid, steady)
            if mode.k != 0
            else _assemble(pencil_mode, grid, steady, adjoint=False)
        )
        es = solve_pencil_eigen(pencil, grid)
        for row in spectrum_rows(es):
            rows.append(row)
            k, l, re, im, flag, t0r, t0i, t1r, t1i = row
            rows.append((-k, -l, re, -im, flag, t0r, -t0i, t1r, -t1i))
    with (out / "spectrum.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["mode_k", "mode_l", "re_lambda", "im_lambda", "unstable_flag",
             "trace0_re", "trace0_im", "trace1_re", "trace1_im"]
        )
        for row in sorted(rows):
            writer.writerow([row[0], row[1]] + [f"{x:.17e}" for x in row[2:4]]
                            + [int(row[4])] + [f"{x:.17e}" for x in row[5:]])

    print(f"cutoff M = {M}")
    inventory = [(m, v) for m, v in sorted(scan.items()) if v[1] > 0]
    if inventory:
        print("unstable inventory (mode, N, worst Re):")
        for m, (absc, n_unst) in inventory:
            print(f"  ({m.k:+d},{m.l:+d})   N = {n_unst}   worst Re = {absc:+.6f}")
    else:
        print("no unstable modes")
    if refine:
        n2 = (3 * config.n // 2 + 1) // 2 * 2
        grid2 = build_grid(n2)
        steady2 = build_steady_state(config.params, grid2)
        scan2 = scan_modes(steady2, grid2, config.scan_limit, threads=threads)
        diff = [m for m in scan if scan[m][1] != scan2[m][1]]
        if diff:
            print(f"refinement mismatch at n={n2}: {[tuple(m) for m in diff]}")
            return EXIT_CRITERION
        print(f"refinement check at n={n2}: unstable counts agree")
    print(f"wrote {out / 'spectrum.csv'}")
    return EXIT_PASS


def cmd_gains(config: RunConfig, force_a=None) -> int:
    design = build_design(config)
    out = config.resolve_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    if not design.controlled:
        print("no unstable actuated modes: no gains needed")
        return EXIT_PASS

    pairs_a, pairs_b = [], []
    for mode in design.controlled:
        es = design.eigensets[mode]
        (pairs_b if mode.l == 0 else pairs_a).extend(es.traces[: es.N_unstable])
    margin_a = select_actuator_coefficient(pairs_a)[1] if pairs_a else float("inf")
    margin_b = select_actuator_coefficient(pairs_b)[1] if pairs_b else float("inf")

    if force_a is not None:
        forced = complex(*force_a)
        margins = [
            abs(t0 + forced * t1) / (abs(t0) + abs(t1)) for t0, t1 in pairs_a + pairs_b
        ]
        if margins and min(margins) <= 1e-3:
            print(f"forced coefficient {forced} rejected: margin {min(margins):.3g}")
            return EXIT_CRITERION

    worst_res = 0.0
    worst_cond = 0.0
    for mode in design.controlled:
        gains = design.gains[mode]
        es = design.eigensets[mode]
        payload = gain_report(gains, es, design.actuator)
        res = lifting_identity_residual(
            design.pencils[mode], es, gains, design.actuator, design.grid
        )
        payload["lifting_identity_rel_err"] = res
        worst_res = max(worst_res, res)
        worst_cond = max(worst_cond, gains.cond_sum)
        _write_json(payload, out / f"gains_{mode.k}_{mode.l}.json")
        print(f"mode ({mode.k:+d},{mode.l:+d}): N = {es.N_unstable}, "
              f"gamma_1 = {gains.gammas[0]:.6g}, lifting self-test {res:.3e}")
    print(f"a-branch margin = {margin_a:.6g}, b-branch margin = {margin_b:.6g}")
    print(f"worst condition of gain sums = {worst_cond:.6g}")
    print(f"worst lifting self-test residual = {worst_res:.3e}")
    return EXIT_PASS if worst_res <= 1e-6 else EXIT_CRITERION


def cmd_simulate(config: RunConfig) -> int:
    design = build_design(config)
    report = run_simulation(config, design=design)
    out = config.resolve_output_dir()
    write_energies_csv(report, out / "energies.csv")
    _write_json(report_payload(report), out / "decay.json")
    fit = report.global_fit
    print(f"M = {report.M}, controlled modes: {[tuple(m) for m in report.controlled]}")
    print(f"global fit: eta = {fit.eta:.6g}, C = {fit.C:.6g}")
    print(f"energy {report.total[0]:.6e} -> {report.total[-1]:.6e}")
    print(f"wrote {out / 'energies.csv'} and {out / 'decay.json'}")
    if not config.feedback:
        grew = [m for m, f in report.fits.items() if f.eta < 0 and not f.degenerate]
        print(f"open-loop growth in modes: {[tuple(m) for m in grew]}")
        return EXIT_PASS
    return EXIT_PASS if fit.eta > 0 and not fit.degenerate else EXIT_CRITERION


def cmd_verify(config: RunConfig) -> int:
    failures = []

    def check(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}"
        if detail:
            line += f"  ({detail})"
        print(line)
        if not ok:
            failures.append(name)

    grid = build_grid(config.n)
    ones = np.ones(grid.n)
    check("grid: weights sum to one", abs(grid.weights.sum() - 1.0) < 1e-12)
    check("grid: D1 annihilates constants", np.abs(grid.D1 @ ones).max() < 1e-12)
    steady = build_steady_state(config.params, grid)
    res = np.abs(-config.params.eps * (grid.D2 @ steady.phi_tg)
                 + config.params.alpha * (steady.phi_tg**3 - steady.phi_tg))[2:-2].max()
    check("steady: concentration residual", res < 1e-9, f"{res:.2e}")
    check("steady: admissibility H0", check_H0(steady.phi_tg, grid))
    check("steady: gamma sign matches H0", steady.gamma >= -1e-12)

    design = build_design(config, grid=grid, steady=steady)
    check("spectra: cutoff found", design.M <= config.scan_limit, f"M={design.M}")
    beyond = [m for m, (absc, n_unst) in design.scan.items()
              if m.radius > design.M and (absc > -config.eta_target or n_unst)]
    check("spectra: every mode beyond cutoff is eta-stable", not beyond)

    for mode in design.controlled:
        es = design.eigensets[mode]
        gains = design.gains[mode]
        res75 = lifting_identity_residual(design.pencils[mode], es, gains,
                                          design.actuator, grid)
        check(f"feedback: lifting identity ({mode.k},{mode.l})", res75 <= 1e-6,
              f"{res75:.2e}")
        absc = closed_loop_abscissa(design.pencils[mode], gains, grid)
        check(f"sim: closed-loop abscissa ({mode.k},{mode.l})",
              absc <= -config.eta_target, f"{absc:.4g}")
    if design.controlled:
        check("spectra: actuator margin positive", design.actuator.margin > 0.01,
              f"{design.actuator.margin:.3g}")
    print(f"{'all checks passed' if not failures else f'{len(failures)} check(s) failed'}")
    return EXIT_PASS if not failures else EXIT_CRITERION


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="channelstab",
        description="Boundary feedback synthesis and verification for a "
                    "linearized two-phase channel flow.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--n", type=int, help="collocation nodes")
    common.add_argument("--C-U", dest="C_U", type=float, help="base-flow amplitude")
    common.add_argument("--nu", type=float)
    common.add_argument("--kappa", type=float)
    common.add_argument("--eps", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--rho0", type=float)
    common.add_argument("--eta-target", dest="eta_target", type=float)
    common.add_argument("--scan-limit", dest="scan_limit", type=int)
    common.add_argument("--K-max", dest="K_max", type=int)
    common.add_argument("--T", type=float)
    common.add_argument("--dt", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--ic", dest="ic_recipe",
                        choices=["random-smooth", "single-mode", "unstable-eigenvector"])
    common.add_argument("--threads", type=int)
    common.add_argument("--save-every", dest="save_every", type=int)
    common.add_argument("--no-feedback", action="store_true")

    sub.add_parser("steady", parents=[common])
    sp = sub.add_parser("spectrum", parents=[common])
    sp.add_argument("--refine", action="store_true",
                    help="re-run at 3n/2 nodes and compare unstable counts")
    gp = sub.add_parser("gains", parents=[common])
    gp.add_argument("--force-a", help="override actuator coefficient as 're,im'")
    sub.add_parser("simulate", parents=[common])
    sub.add_parser("verify", parents=[common])
    return parser


def _config_from_args(args) -> RunConfig:
    param_keys = ("nu", "kappa", "eps", "alpha", "rho0", "C_U")
    overrides = {}
    for key in ("n", "eta_target", "scan_limit", "K_max", "T", "dt", "seed",
                "ic_recipe", "threads", "save_every"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if getattr(args, "no_feedback", False):
        overrides["feedback"] = False

    config = load_config(args.config, overrides)
    pvals = asdict(config.params)
    changed = False
    for key in param_keys:
        val = getattr(args, key, None)
        if val is not None:
            pvals[key] = val
            changed = True
    if changed:
        from .steady import PhysParams

        config = load_config(args.config, {**overrides, "params": pvals})
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "steady":
            return cmd_steady(config)
        if args.command == "spectrum":
            return cmd_spectrum(config, refine=args.refine)
        if args.command == "gains":
            force = None
            if args.force_a:
                re_str, im_str = args.force_a.split(",")
                force = (float(re_str), float(im_str))
            return cmd_gains(config, force_a=force)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "verify":
            return cmd_verify(config)
    except ScanExhaustedError as exc:
        print(f"scan exhausted: {exc}", file=sys.stderr)
        return EXIT_CRITERION
    except (LemmaViolationError, InvertibilityError, DefectiveModeError,
            UncontrollableModeError) as exc:
        print(f"design failure: {exc}", file=sys.stderr)
        return EXIT_CRITERION
    except ConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EigenSolveError, GammaSelectionError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
