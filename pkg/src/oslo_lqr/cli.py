"""Command-line entry point: ``oslo-lqr <subcommand> [options]``.

Exit codes: 0 success, 1 one or more benchmark cells failed (or a run
halted), 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .bench import (
    ConfigError,
    ExperimentConfig,
    THREADS_ENV,
    checkpoints,
    csv_text,
    fit_regret_exponent,
    json_text,
    make_prior,
    oslo_config_for,
    read_csv_points,
    run_experiment,
)
from .core import ContractViolation, LqrEnvironment, Policy, Rng, linear_rollout
from .oslo import evaluate_run, run_oslo
from .riccati import solve_dare, strong_stability_certificate
from .sdp import build_exact_sdp, build_relaxed_sdp, extract_policy, solve_sdp
from .serialize import dumps, instance_to_json, trajectory_to_json
from .warmup import WarmupConfig, run_warmup, warmup_theorem_check

log = logging.getLogger("oslo_lqr")


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = ExperimentConfig.from_toml(args.config)
    if args.constants:
        cfg = replace(cfg, constants_mode=args.constants)
    return cfg


def _emit(text: str, out: str | None) -> None:
    if out:
        try:
            with open(out, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write {out}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _seed(args, cfg: ExperimentConfig) -> int:
    return args.seed if args.seed is not None else cfg.seeds[0]


def cmd_solve_dare(args) -> int:
    cfg = _load(args)
    inst = cfg.instance.build()
    sol = solve_dare(inst)
    payload = {"p_star": sol.p_star, "k_star": sol.k_star, "j_star": sol.j_star, "residual": sol.residual, "iterations": sol.iterations}
    if args.format == "csv":
        _emit(_rows_csv(["quantity", "value"], [["j_star", repr(sol.j_star)], ["residual", repr(sol.residual)]]), args.out)
    else:
        _emit(dumps(payload), args.out)
    return 0


def cmd_solve_sdp(args) -> int:
    cfg = _load(args)
    inst = cfg.instance.build()
    if cfg.mu is not None:
        # relaxed program at the true parameters with V = lambda I
        lam = cfg.lam if cfg.lam is not None else 1e6
        problem = build_relaxed_sdp(inst.a_star, inst.b_star, lam * np.eye(inst.dims.n), cfg.mu, inst.w, inst.cost_block)
    else:
        problem = build_exact_sdp(inst)
    sol = solve_sdp(problem, tol=cfg.sdp_tol, max_iters=cfg.sdp_max_iters)
    payload = {
        "kind": problem.kind,
        "status": sol.status,
        "value": sol.value,
        "sigma": sol.sigma,
        "p_dual": sol.p_dual,
        "kkt_residuals": sol.kkt_residuals,
        "iterations": sol.iterations,
    }
    if sol.status == "optimal":
        payload["k_mat"] = extract_policy(sol, cfg.pinv_threshold).k_mat
    if args.format == "csv":
        _emit(_rows_csv(["quantity", "value"], [["status", sol.status], ["value", repr(float(sol.value))]]), args.out)
    else:
        _emit(dumps(payload), args.out)
    return 0 if sol.status == "optimal" else 1


def cmd_simulate(args) -> int:
    cfg = _load(args)
    inst = cfg.instance.build()
    ric = solve_dare(inst)
    raw = _simulate_section(args.config)
    horizon = int(raw.get("horizon", cfg.horizons[-1]))
    policy = raw.get("policy", "optimal")
    if "k" in raw:
        k = np.atleast_2d(np.asarray(raw["k"], dtype=float))
    elif policy == "optimal":
        k = ric.k_star
    elif policy == "fixed_k0":
        k = cfg.k0_scale * ric.k_star if cfg.k0 is None else np.array(cfg.k0)
    else:
        raise ConfigError(f"unknown simulate policy {policy!r}")
    x1 = np.zeros(inst.dims.d) if cfg.x1 is None else np.array(cfg.x1)
    traj = linear_rollout(inst, k, horizon, x1, Rng(_seed(args, cfg)).child("env"))
    regret = np.cumsum(traj.costs - ric.j_star)
    if args.format == "csv":
        rows = [[t, repr(float(traj.costs[t - 1])), repr(float(regret[t - 1]))] for t in range(1, horizon + 1)]
        _emit(_rows_csv(["t", "cost", "cum_regret"], rows), args.out)
    else:
        _emit(dumps({"instance": instance_to_json(inst), "k_mat": k, "j_star": ric.j_star, "trajectory": trajectory_to_json(traj)}), args.out)
    return 0


def _simulate_section(path) -> dict:
    from .bench import load_toml

    return load_toml(path).get("simulate", {})


def cmd_warmup(args) -> int:
    cfg = _load(args)
    inst = cfg.instance.build()
    ric = solve_dare(inst)
    k0 = cfg.k0_scale * ric.k_star if cfg.k0 is None else np.array(cfg.k0)
    cert = strong_stability_certificate(inst, Policy(k0))
    t0 = cfg.warmup_t0 if cfg.warmup_t0 is not None else 1000
    wcfg = WarmupConfig(
        Policy(k0),
        cfg.kappa0 if cfg.kappa0 is not None else cert.kappa,
        cfg.gamma0 if cfg.gamma0 is not None else cert.gamma,
        t0,
        inst.bounds.sigma,
        inst.bounds.vartheta,
    )
    seed = _seed(args, cfg)
    env = LqrEnvironment(inst, Rng(seed).child("env"))
    res = run_warmup(env, wcfg, Rng(seed).child("warmup"), truth=inst, delta=cfg.delta)
    report = warmup_theorem_check(res, inst, wcfg, cfg.delta)
    checks = {name: {"value": c.value, "limit": c.limit, "ok": c.ok} for name, c in report.checks.items()}
    if args.format == "csv":
        rows = [[name, repr(c["value"]), repr(c["limit"]), str(c["ok"]).lower()] for name, c in checks.items()]
        _emit(_rows_csv(["bound", "value", "limit", "ok"], rows), args.out)
    else:
        payload = {
            "t0": t0,
            "kappa0": wcfg.kappa0,
            "gamma0": wcfg.gamma0,
            "v0": res.v0,
            "a0_b0": res.a0_b0,
            "x_final": res.x_final,
            "trace_v0": res.trace_v0,
            "min_eig_v0": res.min_eig_v0,
            "est_error_weighted": res.est_error_weighted,
            "checks": checks,
            "precondition_met": report.precondition_met,
            "notes": list(report.notes),
        }
        _emit(dumps(payload), args.out)
    return 0


def cmd_run_oslo(args) -> int:
    cfg = _load(args)
    inst = cfg.instance.build()
    ric = solve_dare(inst)
    horizon = cfg.horizons[-1]
    seed = _seed(args, cfg)
    root = Rng(seed)
    budget = oslo_config_for(cfg, inst, horizon, np.zeros_like(inst.theta)).prior_error_budget
    prior = make_prior(cfg, inst, budget, root.child("prior"))
    ocfg = oslo_config_for(cfg, inst, horizon, prior)
    env = LqrEnvironment(inst, root.child("env"), None if cfg.x1 is None else np.array(cfg.x1))
    rec = evaluate_run(run_oslo(env, ocfg, seed=seed), inst, ric)
    pts = [t for t in checkpoints(horizon) if t <= rec.steps]
    if args.format == "csv":
        rows = [[t, repr(float(rec.regret[t - 1]))] for t in pts]
        _emit(_rows_csv(["checkpoint_t", "cum_regret"], rows), args.out)
    else:
        payload = {
            "config": ocfg.echo(),
            "seed": seed,
            "steps": rec.steps,
            "halted": rec.halted,
            "halt_reason": rec.halt_reason,
            "epochs": [
                {"start": e.start, "k_mat": e.k_mat, "value": e.value, "status": e.status, "admissible": e.admissible, "p_dual": e.p_dual}
                for e in rec.epochs
            ],
            "checkpoints": pts,
            "cum_regret": [float(rec.regret[t - 1]) for t in pts],
            "good_event_ok": rec.flags.all_good,
            "survival_step": rec.flags.survival_step,
            "decomposition": rec.decomposition.totals(),
            "warnings": list(rec.warnings),
        }
        _emit(dumps(payload), args.out)
    return 1 if rec.halted else 0


def cmd_bench(args) -> int:
    cfg = _load(args)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    result = run_experiment(cfg)
    for cell in result.failed_cells:
        log.error("cell %s failed: %s", cell.key, cell.error)
    fmt = args.format
    if args.out:
        _emit(csv_text(result) if fmt == "csv" else json_text(result), args.out)
    else:
        written = False
        if cfg.csv_path:
            _emit(csv_text(result), cfg.csv_path)
            written = True
        if cfg.json_path:
            _emit(json_text(result), cfg.json_path)
            written = True
        if not written:
            _emit(csv_text(result) if fmt == "csv" else json_text(result), None)
    for fit in result.fits:
        log.info("%s exponent %.3f [%.3f, %.3f]", fit.algorithm, fit.slope, fit.band_low, fit.band_high)
    return 1 if result.failed_cells else 0


def cmd_fit(args) -> int:
    points = read_csv_points(args.input)
    rows = []
    for alg, pts in points.items():
        try:
            fit = fit_regret_exponent(pts)
            rows.append([alg, repr(fit.slope), repr(fit.intercept), repr(fit.r2), fit.dropped])
        except ValueError as exc:
            log.warning("%s: %s", alg, exc)
    if args.format == "json":
        _emit(dumps([dict(zip(("algorithm", "slope", "intercept", "r2", "dropped"), r)) for r in rows]), args.out)
    else:
        _emit(_rows_csv(["algorithm", "slope", "intercept", "r2", "dropped"], rows), args.out)
    return 0


COMMANDS = {
    "solve-dare": cmd_solve_dare,
    "solve-sdp": cmd_solve_sdp,
    "simulate": cmd_simulate,
    "warmup": cmd_warmup,
    "run-oslo": cmd_run_oslo,
    "bench": cmd_bench,
    "fit": cmd_fit,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment TOML file")
    common.add_argument("--seed", type=int, help="override the seed")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), help="output format (bench: csv, others: json)")
    common.add_argument("--constants", choices=("theory", "practical"), help="constants mode override")
    common.add_argument("--verbose", "-v", action="store_true")
    parser = argparse.ArgumentParser(
        prog="oslo-lqr",
        description=f"Optimistic SDP control of unknown LQR systems. Worker processes for bench: ${THREADS_ENV}.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "fit":
            p.add_argument("input", help="results CSV written by bench")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if args.format is None:
        args.format = "csv" if args.command in ("bench", "fit") else "json"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
