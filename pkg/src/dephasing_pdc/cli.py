"""Command line entry point: ``dephasing-pdc {run,sweep,report,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dressed import EMISSION_MODELS
from .model import ConfigError
from .scenarios import (EXIT_CONFIG, EXIT_OK, EXIT_POINT_FAILED, PRESETS, _kv, dumps_config, resolve_preset,
                        run_point, run_sweep, write_report)

log = logging.getLogger("dephasing_pdc")


def _preset_from_args(args):
    preset = resolve_preset(args.config)
    ts = preset.trajectories
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trajectories is not None:
        changes["n_traj"] = args.trajectories
    if args.emission_model is not None:
        changes["emission_model"] = args.emission_model
    if args.workers is not None:
        changes["workers"] = args.workers
    if changes:
        preset = replace(preset, trajectories=replace(ts, **changes))
    if getattr(args, "gamma_phi", None) is not None and args.command == "run":
        preset = preset.with_gamma_phi(args.gamma_phi)
    if getattr(args, "no_spectrum", False):
        preset = replace(preset, spectrum=replace(preset.spectrum, enabled=False))
    return preset


def cmd_run(args) -> int:
    preset = _preset_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dumps_config(preset))
    try:
        res = run_point(preset, out, emission_variants=args.variants or ())
    except (ConfigError, RuntimeError) as exc:
        log.error("run failed: %s", exc)
        (out / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        return EXIT_POINT_FAILED
    for key in ("y_pair", "n_signal", "n_idler", "c_idler_given_signal", "c_signal_given_idler", "n_in"):
        if key in res.report:
            print(f"{key} = {res.report[key]:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    preset = _preset_from_args(args)
    values = None
    if args.gamma_phi_list:
        values = [float(x) for x in args.gamma_phi_list.split(",")]
    res = run_sweep(preset, args.out, gamma_phi=values, emission_variants=args.variants or (),
                    workers=args.sweep_workers)
    sys.stdout.write(res.table)
    if res.fit.get("status") == "ok":
        print(f"sigmoid fit R^2 = {res.fit['r_squared']:.4f}")
    return res.exit_code


def cmd_report(args) -> int:
    path = write_report(args.out)
    sys.stdout.write(path.read_text())
    return EXIT_OK


def cmd_validate(args) -> int:
    """Cross-check the fast propagator and correlator against the oracle at n_max <= 4."""
    from .dynamics import SimGrid, propagate
    from .oracle import OracleConfig, build_oracle, exact_correlator, exact_propagate
    from .scenarios import build_pipeline
    from .spectra import default_tau_step, two_time_correlator

    preset = resolve_preset(args.config)
    preset = replace(preset, system=replace(preset.system, n_max=args.n_max))
    pipe = build_pipeline(preset)
    grid = SimGrid(t_start=0.0, t_end=args.t_end, dt_out=1.0, auto_extend=False)
    fast = propagate(None, pipe.gen, pipe.drive, pipe.X, grid)
    oc = OracleConfig(preset.system, preset.drive, diagonal_mode=preset.channels.diagonal_mode)
    model = build_oracle(oc)
    ref = exact_propagate(None, oc, grid, times=fast.times, model=model)
    state_err = float(np.max(np.abs(ref.eigen_states() - fast.states)))
    tau = default_tau_step(pipe.basis)
    t0 = pipe.drive.t_center - 2.0 * pipe.drive.field_sigma
    tg = np.array([t0, t0 + 40 * tau, t0 + 80 * tau])
    fast2 = propagate(None, pipe.gen, pipe.drive, pipe.X, grid, sample_times=tg)
    corr = two_time_correlator(fast2, pipe.gen, pipe.X, tg, tau, tau_max=200 * tau)
    ref_corr = exact_correlator(oc, tg, corr.taus, model=model)
    corr_err = float(np.max(np.abs(ref_corr - corr.values)))
    ok = state_err < 1e-6 and corr_err < 1e-6
    doc = {"scenario": preset.name, "n_max": args.n_max, "state_max_error": state_err,
           "correlator_max_error": corr_err, "tolerance": 1e-6, "status": "pass" if ok else "fail"}
    text = _kv(doc)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "validate.kv").write_text(text)
    return EXIT_OK if ok else EXIT_POINT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dephasing-pdc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", default="degenerate",
                        help=f"preset name ({', '.join(PRESETS)}) or path to a TOML file")
        sp.add_argument("--seed", type=int, help="master seed of the trajectory ensemble")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--trajectories", type=int, metavar="N", help="trajectories per point")
        sp.add_argument("--emission-model", choices=sorted(EMISSION_MODELS))
        sp.add_argument("--workers", type=int, help="processes for trajectory blocks")
        sp.add_argument("--variants", nargs="*", choices=sorted(EMISSION_MODELS),
                        help="extra emission models evaluated on the same ensemble seeds")
        sp.add_argument("--no-spectrum", action="store_true", help="skip the two-time correlator")

    run = sub.add_parser("run", help="single parameter point")
    common(run)
    run.add_argument("--gamma-phi", dest="gamma_phi", type=float, help="pure dephasing rate (eV)")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="Gamma_phi sweep with sigmoid fit")
    common(sweep)
    sweep.add_argument("--gamma-phi", dest="gamma_phi_list", help="comma separated values in eV")
    sweep.add_argument("--sweep-workers", type=int, help="sweep points run concurrently")
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="compare a finished sweep with the reference targets")
    report.add_argument("--out", required=True, help="sweep output directory")
    report.set_defaults(func=cmd_report)

    val = sub.add_parser("validate", help="oracle cross-check at a small truncation")
    val.add_argument("--config", default="degenerate")
    val.add_argument("--out", help="optional directory for validate.kv")
    val.add_argument("--n-max", type=int, default=4)
    val.add_argument("--t-end", type=float, default=300.0)
    val.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
