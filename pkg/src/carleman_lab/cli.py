"""Command line: carleman-lab <subcommand> --config scenario.toml --out results/

Exit status 0 on success, 2 when a mathematical hypothesis of the run fails,
1 on configuration or runtime errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, ValidationError, default_config, parse_config
from .geometry import GeometryError
from .io import ensure_dir, snapshot_writer, verify_provenance, write_csv, write_metadata
from .medium import MediumError
from .scenario import build_scenario
from .solver import SolverError
from .stability import StabilityError
from .verifier import GROUPS, SweepReport, VerifierError
from .weights import WeightError

log = logging.getLogger("carleman_lab")

EXIT_OK, EXIT_ERROR, EXIT_HYPOTHESIS = 0, 1, 2


class HypothesisFailure(Exception):
    def __init__(self, message, scenario=None):
        super().__init__(message)
        self.scenario = scenario


def load_config(args) -> ScenarioConfig:
    cfg = parse_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.verifier.seed = cfg.stability.seed = cfg.reconstruct.seed = int(args.seed)
    if args.snapshot_stride is not None:
        cfg.output.snapshot_stride = int(args.snapshot_stride)
    if args.out:
        cfg.output.dir = args.out
    return cfg


def _admissible(sc):
    if not sc.admissibility.passed:
        raise HypothesisFailure("; ".join(sc.admissibility.notes) or "admissibility failed", sc)


# ---------------------------------------------------------------------------

def cmd_admissibility(cfg, out, h, args):
    sc = build_scenario(cfg)
    rep = sc.admissibility
    th = np.linspace(0, 2 * np.pi, cfg.medium.n_interface, endpoint=False)
    pts = sc.body.boundary(th)[0]
    lam = sc.medium.a1.value(pts) / sc.medium.a2.value(pts)
    write_csv(out / "lambda.csv", ["theta", "lambda"], zip(th, lam), h)
    write_csv(out / "multiplier.csv", ["center", "a4_margin"], enumerate(rep.a4_margins), h)
    return sc, {"admissibility": rep.to_dict()}, (EXIT_OK if rep.passed else EXIT_HYPOTHESIS)


def cmd_weights(cfg, out, h, args):
    sc = build_scenario(cfg)
    _admissible(sc)
    rows = []
    for i, c in enumerate(sc.budget.centers):
        for k, v in c.to_dict().items():
            rows.append([i, k, v])
    for k in ("L", "r", "grad_a_inf", "sup_mu", "beta0", "T0"):
        rows.append(["all", k, getattr(sc.budget, k)])
    rows += [["all", "T", sc.T], ["all", "beta", sc.beta], ["all", "eps_tilde", sc.eps_tilde]]
    write_csv(out / "beta_budget.csv", ["center", "quantity", "value"], rows, h)
    arcs = [[i, a, b] for i, g in enumerate(sc.gamma_plus) for a, b in g.to_list()]
    arcs += [["gamma0", a, b] for a, b in sc.gamma0.to_list()]
    write_csv(out / "gamma_plus.csv", ["center", "theta_lo", "theta_hi"], arcs, h)
    tr = [[i, t.continuity, t.flux, t.min_dnu1, t.bound, t.passed] for i, t in enumerate(sc.transmission)]
    write_csv(out / "transmission.csv", ["center", "continuity", "flux", "min_dnu1", "two_over_diam", "pass"],
              tr, h)
    ok = all(t.passed for t in sc.transmission)
    return sc, {}, EXIT_OK if ok else EXIT_HYPOTHESIS


def cmd_solve(cfg, out, h, args):
    from .experiments import forward_run

    sc = build_scenario(cfg)
    _admissible(sc)
    disc = sc.discretization()
    observers = []
    snap = None
    if cfg.output.snapshot_stride > 0:
        from .stability import constant_data
        snap = snapshot_writer(out / "snapshots.bin", disc, cfg.output.snapshot_stride,
                               constant_data(cfg.solve.u0))
        observers.append(snap)
    try:
        st, op, _ = forward_run(sc, observers)
    finally:
        if snap is not None:
            snap.close()
    tr = st.traces["gamma0"]
    rows = []
    for k, n in enumerate(st.steps):
        u = st.u[k]
        trace_l2 = float(np.sqrt(np.sum(op.weights * tr[n] ** 2)))
        rows.append([int(n), float(n * st.tgrid.dt), float(np.max(np.abs(u - cfg.solve.u0))),
                     float(np.mean(u)), trace_l2])
    write_csv(out / "solve.csv", ["step", "t", "max_abs_u_minus_u0", "mean_u", "trace_l2_gamma0"], rows, h)
    extra = {"grid": {"nx": disc.grid.nx, "ny": disc.grid.ny, "h": disc.h, "x0": disc.grid.x0,
                      "y0": disc.grid.y0, "n_active": disc.n_active},
             "time": {"dt": st.tgrid.dt, "nt": st.tgrid.nt}}
    if snap is not None:
        extra["snapshots"] = {"file": "snapshots.bin", "stride": cfg.output.snapshot_stride,
                              "layout": "per record: int64 nx, int64 ny, float64 h, float64 t, then "
                                        "(ny+1)*(nx+1) float64 row-major (y slow), all little-endian; "
                                        "0 outside Omega"}
    return sc, extra, EXIT_OK


def _sweep_summary(rep: SweepReport):
    return {"s0_est": rep.s0_est, "C_est": rep.C_est, "flags": rep.flags,
            "killed_over_lhs_theta": rep.killed_fraction("theta"), "envelope": rep.envelope,
            "log_shift": rep.log_shift, "s_values": rep.s_values,
            "n_degenerate": int(sum(rep.degenerate))}


def cmd_carleman(cfg, out, h, args):
    from .experiments import carleman_sweep, negative_control

    sc = build_scenario(cfg)
    if args.negative_control:
        ref = sc.gamma if sc.gamma is not None else 1.0 + 0.5 * abs(
            sc.admissibility.lambda_max - 1.0) + 0.1
        nsc, rep = negative_control(cfg, ref, threads=args.threads)
        write_csv(out / "carleman_negative.csv", SweepReport.header(), rep.rows(), h)
        return nsc, {"negative_control": True, "forced_gamma": ref, "sweep": _sweep_summary(rep)}, EXIT_OK
    _admissible(sc)
    rep = carleman_sweep(sc, threads=args.threads)
    write_csv(out / "carleman.csv", SweepReport.header(), rep.rows(), h)
    extra = {"sweep": _sweep_summary(rep)}
    if cfg.verifier.refine_check:
        ref = carleman_sweep(sc, n_cells=2 * cfg.solver.n_cells, threads=args.threads)
        write_csv(out / "carleman_refined.csv", SweepReport.header(), ref.rows(), h)
        extra["refined"] = _sweep_summary(ref)
        extra["C_est_ratio_refined"] = ref.C_est / rep.C_est
    code = EXIT_OK if (rep.s0_index is not None and np.isfinite(rep.C_est)) else EXIT_HYPOTHESIS
    return sc, extra, code


def cmd_stability(cfg, out, h, args):
    from .experiments import stability_run
    from .stability import SweepTable

    sc = build_scenario(cfg, require_eps=True)
    _admissible(sc)
    exp, hyp, tab = stability_run(sc, threads=args.threads)
    write_csv(out / "stability.csv", SweepTable.header(), tab.rows(), h)
    extra = {"hypotheses": hyp, "C_emp": tab.C_emp, "C_emp_small_arc": tab.C_emp_small,
             "small_arc": exp.small_arc.to_list(), "T": exp.T, "T0": exp.T0}
    if cfg.stability.n_cells_refined:
        _, _, tab2 = stability_run(sc, n_cells=cfg.stability.n_cells_refined, threads=args.threads)
        write_csv(out / "stability_refined.csv", SweepTable.header(), tab2.rows(), h)
        extra["C_emp_refined"] = tab2.C_emp
    return sc, extra, EXIT_OK if hyp["pass"] else EXIT_HYPOTHESIS


def cmd_reconstruct(cfg, out, h, args):
    from .experiments import reconstruction_run

    sc = build_scenario(cfg)
    _admissible(sc)
    run = reconstruction_run(sc)
    res = run.result
    rows = [[k, J, e] for k, (J, e) in enumerate(zip(res.misfits, res.errors))]
    write_csv(out / "reconstruct.csv", ["iteration", "misfit", "l2_error"], rows, h)
    write_csv(out / "gradient_check.csv", ["pixel", "adjoint", "finite_difference", "relative_error"],
              run.gradient_check, h)
    reduction = 1.0 - res.errors[-1] / res.errors[0] if res.errors and res.errors[0] > 0 else None
    extra = {"step": res.step, "iterations": res.iterations, "error_reduction": reduction,
             "max_gradient_relative_error": max(g[3] for g in run.gradient_check)}
    return sc, extra, EXIT_OK


def cmd_provenance(cfg, out, h, args):
    problems = verify_provenance(out, h)
    for f, msg in problems:
        print(f"{f}: {msg}", file=sys.stderr)
    return None, None, EXIT_OK if not problems else EXIT_HYPOTHESIS


COMMANDS = {
    "admissibility": cmd_admissibility,
    "weights": cmd_weights,
    "solve": cmd_solve,
    "carleman": cmd_carleman,
    "stability": cmd_stability,
    "reconstruct": cmd_reconstruct,
    "provenance": cmd_provenance,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="carleman-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="scenario TOML file (defaults built in when omitted)")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--seed", type=int, help="seed for every random family")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for independent jobs")
    ap.add_argument("--snapshot-stride", type=int, help="write a field snapshot every k steps (solve)")
    ap.add_argument("--negative-control", action="store_true",
                    help="carleman: exchange a1 and a2 and run with a forced gamma")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    name = args.command + ("_negative" if args.negative_control else "")
    try:
        cfg = load_config(args)
        h = cfg.hash()
        out = ensure_dir(cfg.output.dir)
        if args.seed is not None and args.seed < 0:
            raise ValidationError("--seed", "must be nonnegative")
        t0 = time.time()
        try:
            sc, extra, code = COMMANDS[args.command](cfg, out, h, args)
        except HypothesisFailure as exc:
            write_metadata(out / f"{name}.meta.json", h, args.command, exc.scenario.metadata(), time.time() - t0,
                           {"exit_status": EXIT_HYPOTHESIS, "failure": str(exc), "config": cfg.to_dict()})
            print(f"{args.command}: hypothesis violated: {exc}", file=sys.stderr)
            return EXIT_HYPOTHESIS
        if sc is not None:
            write_metadata(out / f"{name}.meta.json", h, args.command, sc.metadata(), time.time() - t0,
                           dict(extra or {}, exit_status=code, config=cfg.to_dict()))
        print(f"{args.command}: exit {code} (config {h[:12]})")
        return code
    except (ConfigError, GeometryError, MediumError, WeightError, SolverError, VerifierError, StabilityError,
            OSError) as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
