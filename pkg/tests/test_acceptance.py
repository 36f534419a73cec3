"""Acceptance criteria, one test each.

Every test records a single ``criterion N: PASS|FAIL ...`` line; the lines
are printed together in the terminal summary (see ``conftest.py``) and also
echoed to stdout when the test runs with ``-s``.
"""

import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from oslo_lqr import lemmas
from oslo_lqr.bench import ExperimentConfig, run_experiment
from oslo_lqr.core import (
    BoundParams,
    Dims,
    LqrEnvironment,
    Policy,
    Rng,
    linear_rollout,
    make_instance,
    max_eig,
    min_eig,
    nuclear_norm,
    opnorm,
    psd_sqrt,
    random_instance,
    spectral_radius,
)
from oslo_lqr.estimator import absorb, epoch_limit, estimator_init, estimator_update, least_squares, weighted_error
from oslo_lqr.oslo import OsloConfig, evaluate_run, good_event_monitor, run_oslo
from oslo_lqr.riccati import (
    calibrated_bounds,
    policy_cost,
    solve_dare,
    strong_stability_certificate,
    switch_norm,
    theory_stability_constants,
)
from oslo_lqr.sdp import (
    build_exact_sdp,
    build_relaxed_sdp,
    extract_policy,
    fixed_point_residual,
    relaxation_admissible,
    solve_sdp,
)
from oslo_lqr.warmup import WarmupConfig, run_warmup, warmup_theorem_check

pytestmark = pytest.mark.slow

SDP_TOL = 1e-8
GEN_BOUNDS = BoundParams(0.5, 2.0, 1.0, 1.5, 1.0)


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def golden_instance():
    return make_instance(1.0, 1.0, bounds=BoundParams(1.0, 1.0, 1.0, math.sqrt(2.0), (1 + math.sqrt(5)) / 2))


def random_two_state():
    """The (d=2, k=1) benchmark instance with bounds calibrated to it."""
    inst = random_instance(Dims(2, 1), GEN_BOUNDS, Rng(5))
    return make_instance(inst.a_star, inst.b_star, inst.q, inst.r, inst.w, bounds=calibrated_bounds(inst))


def perturbed_prior(instance, budget, seed):
    err = Rng(seed).child("prior").standard_normal(instance.theta.shape)
    return instance.theta + err * math.sqrt(budget) / np.linalg.norm(err)


# --------------------------------------------------------------------------
# 1. exact program against the Riccati solution


def test_criterion_01_sdp_matches_riccati():
    rng = Rng(2024)
    start = time.perf_counter()
    worst_value, worst_gain, failures = 0.0, 0.0, 0
    for i in range(50):
        child = rng.child(i)
        d, k = int(child.integers(1, 5)), int(child.integers(1, 5))
        inst = random_instance(Dims(d, k), GEN_BOUNDS, child, stable=i % 2 == 0)
        ric = solve_dare(inst)
        sol = solve_sdp(build_exact_sdp(inst), tol=SDP_TOL)
        gain_err = opnorm(extract_policy(sol).k_mat - ric.k_star)
        value_err = abs(sol.value - ric.j_star) / max(1.0, ric.j_star)
        worst_value, worst_gain = max(worst_value, value_err), max(worst_gain, gain_err)
        failures += sol.status != "optimal" or value_err > 1e-5 or gain_err > 1e-3
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 60
    record(1, ok, f"50 instances, worst rel value err {worst_value:.2e}, worst gain err {worst_gain:.2e}, {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------------------------
# 2. golden scalar instance


def scalar_value_iteration(a, b, q, r, iters=10_000):
    p = q
    for _ in range(iters):
        p = q + a * a * p - (a * b * p) ** 2 / (r + b * b * p)
    return p


def test_criterion_02_golden_scalar():
    inst = golden_instance()
    oracle = scalar_value_iteration(1.0, 1.0, 1.0, 1.0)
    golden_ratio = (1 + math.sqrt(5)) / 2
    dare = solve_dare(inst).p_star[0, 0]
    sol = solve_sdp(build_exact_sdp(inst), tol=1e-10)
    sdp = sol.p_dual[0, 0]
    errs = [abs(oracle - golden_ratio), abs(dare - oracle), abs(sdp - oracle)]
    ok = max(errs) <= 1e-8 and sol.status == "optimal"
    record(2, ok, f"|iter-phi| {errs[0]:.1e}, |DARE-iter| {errs[1]:.1e}, |SDP-iter| {errs[2]:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 3 and 4. relaxed program on admissible tuples


def admissible_tuple(rng, index):
    """Instance, estimates inside the confidence set, V and mu.

    ``V`` is scaled up until ``lambda_min(V) >= nu mu / (alpha0 sigma^2)``,
    where ``mu = slack (1 + 2 vartheta ||V||^{1/2})``; the estimates satisfy
    ``trace(Delta V Delta') <= 1``.
    """
    d, k = 1 + index % 3, 1 + (index // 3) % 2
    n = d + k
    inst = random_instance(Dims(d, k), BoundParams(0.5, 2.0, 1.0, 1.0, 1.0), rng)
    bounds = calibrated_bounds(inst, nu_factor=1.0, vartheta=1.0)
    g = rng.standard_normal((n, n))
    shape = np.eye(n) + 0.5 * g @ g.T / n
    slack = rng.uniform(1.0, 2.0)

    def admissible(c):
        mu = (1 + 2 * bounds.vartheta * math.sqrt(c * opnorm(shape))) * slack
        return min_eig(c * shape) >= bounds.nu * mu / (bounds.alpha0 * bounds.sigma**2)

    scale = 1.0
    while not admissible(scale):
        scale *= 2
    v = scale * rng.uniform(1.0, 10.0) * shape
    mu = (1 + 2 * bounds.vartheta * math.sqrt(opnorm(v))) * slack
    delta = rng.standard_normal((d, n)) @ np.linalg.inv(psd_sqrt(v))
    delta *= math.sqrt(rng.uniform()) / math.sqrt(np.trace(delta @ v @ delta.T))
    return inst, bounds, inst.theta + delta, v, mu


@pytest.fixture(scope="module")
def relaxed_solves():
    rng = Rng(7)
    out = []
    start = time.perf_counter()
    for i in range(200):
        inst, bounds, theta, v, mu = admissible_tuple(rng.child(i), i)
        d = inst.dims.d
        assert relaxation_admissible(mu, bounds.vartheta, v)
        assert np.trace((theta - inst.theta) @ v @ (theta - inst.theta).T) <= 1 + 1e-12
        sol = solve_sdp(build_relaxed_sdp(theta[:, :d], theta[:, d:], v, mu, inst.w, inst.cost_block), tol=SDP_TOL)
        out.append((inst, bounds, theta, v, mu, sol))
    return out, time.perf_counter() - start


def test_criterion_03_relaxation_undervalues(relaxed_solves):
    solves, elapsed = relaxed_solves
    bad = 0
    worst = -np.inf
    for inst, bounds, _, _, _, sol in solves:
        j_star = solve_dare(inst).j_star
        worst = max(worst, sol.value - j_star)
        bad += (
            sol.status != "optimal"
            or sol.value > j_star + 10 * SDP_TOL
            or nuclear_norm(sol.sigma) > j_star / bounds.alpha0 + SDP_TOL
            or nuclear_norm(sol.p_dual) > j_star / bounds.sigma**2 + SDP_TOL
        )
    ok = bad == 0
    record(3, ok, f"200 tuples, {bad} violations, max(value - J*) {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_04_fixed_point_identity(relaxed_solves):
    solves, _ = relaxed_solves
    worst = 0.0
    for inst, _, theta, v, mu, sol in solves:
        d = inst.dims.d
        pol = extract_policy(sol)
        res = fixed_point_residual(sol.p_dual, pol.k_mat, theta[:, :d], theta[:, d:], v, mu, inst.cost_block)
        worst = max(worst, res)
    ok = worst <= 10 * SDP_TOL
    record(4, ok, f"worst fixed-point residual {worst:.2e} (limit {10 * SDP_TOL:.0e})")
    assert ok


# --------------------------------------------------------------------------
# 5. stability chain


def chain_constants(instance, horizon, delta=0.1):
    """``(lambda, mu)`` with ``mu >= 1 + 2 vartheta ||V_T||^{1/2}`` and
    ``lambda >= 16 kappa^10 mu``, solved as a fixed point.  ``||V_T||`` is
    over-estimated by three times the expected growth under ``K*``."""
    b = instance.bounds
    ric = solve_dare(instance)
    kappa, _ = theory_stability_constants(b)
    _, x_cov, _ = policy_cost(instance, ric.k_star)
    ik = np.vstack([np.eye(instance.dims.d), ric.k_star])
    beta = instance.dims.n * math.log(horizon / delta)
    growth = 3 * horizon * np.trace(ik @ x_cov @ ik.T) / beta
    mu = 1.0
    for _ in range(500):
        lam = 16 * kappa**10 * mu * 1.01
        mu = (1 + 2 * b.vartheta * math.sqrt(lam + growth)) * 1.01
    return lam, mu


def test_criterion_05_stability_chain():
    horizon = 1024
    rounds = {2**j for j in range(11)}
    summary = []
    ok = True
    for name, inst in (("golden", golden_instance()), ("decoupled", make_instance(0.0, 1.0, bounds=BoundParams(1, 1, 1, 1, 1))), ("random", random_two_state())):
        b = inst.bounds
        ric = solve_dare(inst)
        kappa, gamma = theory_stability_constants(b)
        lam, mu = chain_constants(inst, horizon)
        good = checked = switches = 0
        worst = dict(rho=0.0, gain=0.0, switch=0.0, upper=-np.inf, lower=np.inf)
        for seed in range(10):
            base = OsloConfig.practical(b, inst.dims, horizon, lam=lam, mu=mu)
            cfg = OsloConfig.practical(b, inst.dims, horizon, lam=lam, mu=mu, prior=perturbed_prior(inst, base.prior_error_budget, seed))
            rec = run_oslo(inst, cfg, rng=Rng(seed).child("env"))
            if not good_event_monitor(rec, inst).all_good:
                continue
            good += 1
            # the epochs the loop solved, plus re-solves from the same run's
            # statistics at dyadic rounds (all satisfy the same hypotheses)
            duals = [(e.p_dual, e.k_mat, e.v) for e in rec.epochs]
            est = estimator_init(cfg.lam, cfg.beta, cfg.prior, inst.dims)
            traj = rec.trajectory
            for t in range(1, horizon + 1):
                if t in rounds:
                    a_hat, b_hat = least_squares(est)
                    sol = solve_sdp(build_relaxed_sdp(a_hat, b_hat, est.v.copy(), mu, inst.w, inst.cost_block), tol=SDP_TOL)
                    assert sol.status == "optimal"
                    duals.append((sol.p_dual, extract_policy(sol).k_mat, est.v.copy()))
                if t < horizon:
                    est = estimator_update(est, traj.joint[t - 1], traj.states[t])
            eye = np.eye(inst.dims.d)
            for p, k, v in duals:
                assert relaxation_admissible(mu, b.vartheta, v) and min_eig(v) >= 16 * kappa**10 * mu
                checked += 1
                worst["rho"] = max(worst["rho"], spectral_radius(inst.closed_loop(k)))
                worst["gain"] = max(worst["gain"], opnorm(k))
                worst["upper"] = max(worst["upper"], max_eig(p - ric.p_star))
                worst["lower"] = min(worst["lower"], min_eig(p + (b.alpha0 * gamma / 2 + 1e-6) * eye - ric.p_star))
            seq = duals[len(rec.epochs) :]
            for (p0, _, _), (p1, _, _) in zip(seq, seq[1:]):
                switches += 1
                worst["switch"] = max(worst["switch"], switch_norm(p0, p1), switch_norm(p0, p1, "sqrt"))
            for e0, e1 in zip(rec.epochs, rec.epochs[1:]):
                switches += 1
                worst["switch"] = max(worst["switch"], switch_norm(e0.p_dual, e1.p_dual), switch_norm(e0.p_dual, e1.p_dual, "sqrt"))
        inst_ok = (
            good > 0
            and worst["rho"] < 1
            and worst["gain"] <= kappa
            and worst["switch"] <= 1 + gamma / 2 + 1e-6
            and worst["upper"] <= 1e-6
            and worst["lower"] >= 0
        )
        ok &= inst_ok
        summary.append(f"{name}: {good}/10 good runs, {checked} policies, {switches} switches, max switch {worst['switch']:.6f} <= {1 + gamma / 2:.4f}")
    record(5, ok, "; ".join(summary))
    assert ok


# --------------------------------------------------------------------------
# 6. concentration of the least-squares estimate


def test_criterion_06_concentration():
    delta = 0.1
    seeds = 200
    allowed = 20 + 2 * math.sqrt(20)
    summary = []
    ok = True
    for name, inst, horizon in (("golden", golden_instance(), 2048), ("random", random_two_state(), 1024)):
        ric = solve_dare(inst)
        gain = 0.5 * ric.k_star
        assert spectral_radius(inst.closed_loop(gain)) < 1
        cfg = OsloConfig.practical(inst.bounds, inst.dims, horizon, delta)
        points = [2**j for j in range(1, int(math.log2(horizon)) + 1)]
        exceed = np.zeros(len(points), dtype=int)
        for seed in range(seeds):
            traj = linear_rollout(inst, gain, horizon, np.zeros(inst.dims.d), Rng(seed))
            est = estimator_init(cfg.lam, cfg.beta, perturbed_prior(inst, cfg.prior_error_budget, seed), inst.dims)
            z = traj.joint
            done = 0
            for i, t in enumerate(points):
                # V_t holds z_1 .. z_{t-1}
                for s in range(done, t - 1):
                    absorb(est, z[s], traj.states[s + 1])
                done = t - 1
                diag = weighted_error(est, inst, delta)
                exceed[i] += diag.weighted_error > diag.bound
        inst_ok = bool(np.all(exceed <= allowed))
        ok &= inst_ok
        summary.append(f"{name}: worst checkpoint {exceed.max()}/{seeds} above bound (allowed {allowed:.1f})")
    record(6, ok, "; ".join(summary))
    assert ok


# --------------------------------------------------------------------------
# 7. epoch count


def test_criterion_07_epoch_count():
    cases = [("golden", golden_instance(), (2**10, 2**13, 2**16), 3), ("d2k1", random_two_state(), (2**10, 2**13, 2**16), 3)]
    for dims in (Dims(3, 2), Dims(4, 2)):
        raw = random_instance(dims, GEN_BOUNDS, Rng(11))
        inst = make_instance(raw.a_star, raw.b_star, raw.q, raw.r, raw.w, bounds=calibrated_bounds(raw))
        cases.append((f"d{dims.d}k{dims.k}", inst, (2**10, 2**13), 3))
    ok = True
    summary = []
    for name, inst, horizons, seeds in cases:
        worst_good, worst_all, good, runs = 0.0, 0.0, 0, 0
        for horizon in horizons:
            limit = epoch_limit(inst.dims.n, horizon)
            for c_beta in (1.0, 20.0):
                for seed in range(seeds):
                    base = OsloConfig.practical(inst.bounds, inst.dims, horizon, c_beta=c_beta)
                    prior = perturbed_prior(inst, base.prior_error_budget, seed)
                    cfg = OsloConfig.practical(inst.bounds, inst.dims, horizon, c_beta=c_beta, prior=prior)
                    rec = run_oslo(inst, cfg, rng=Rng(seed).child("env"))
                    runs += 1
                    worst_all = max(worst_all, rec.epoch_count / limit)
                    if rec.halted or not good_event_monitor(rec, inst).all_good:
                        continue
                    good += 1
                    worst_good = max(worst_good, rec.epoch_count / limit)
        ok &= good > 0 and worst_good <= 1
        summary.append(f"{name}: {good}/{runs} good runs, max epochs/limit {worst_good:.3f} (all runs {worst_all:.3f})")
    record(7, ok, "; ".join(summary))
    assert ok


# --------------------------------------------------------------------------
# 8. warm-up statistics


def test_criterion_08_warmup_bounds():
    delta = 0.1
    seeds = 100
    allowed = delta * seeds + 3 * math.sqrt(seeds * delta * (1 - delta))
    ok = True
    summary = []
    for name, inst in (("scalar", golden_instance()), ("d=2", random_two_state())):
        k0 = solve_dare(inst).k_star
        cert = strong_stability_certificate(inst, k0)
        cfg = WarmupConfig(Policy(k0), max(1.0, cert.kappa), cert.gamma, 10_000, inst.bounds.sigma)
        fails = {"trace": 0, "final_state": 0, "min_eig": 0, "estimation": 0}
        for seed in range(seeds):
            res = run_warmup(LqrEnvironment(inst, Rng(seed)), cfg, Rng(seed).child("explore"))
            rep = warmup_theorem_check(res, inst, cfg, delta)
            for key, check in rep.checks.items():
                fails[key] += not check.ok
        ok &= max(fails.values()) <= allowed
        summary.append(f"{name}: failures {fails}")
    record(8, ok, "; ".join(summary) + f" (allowed {allowed:.1f})")
    assert ok


# --------------------------------------------------------------------------
# 9. regret exponent proxy


BENCH_BOUNDS = {"alpha0": 1.0, "alpha1": 1.0, "sigma": 1.0, "vartheta": math.sqrt(2.0), "nu": (1 + math.sqrt(5)) / 2}


def bench_config(instance: dict) -> ExperimentConfig:
    return ExperimentConfig.from_dict(
        {
            "instance": instance,
            "experiment": {
                "algorithms": ["oslo", "fixed_k0"],
                "horizons": [2**j for j in range(10, 17)],
                "seeds": list(range(20)),
                "regret": "paired",
            },
        }
    )


def test_criterion_09_regret_exponent():
    start = time.perf_counter()
    ok = True
    summary = []
    for name, spec in (
        ("golden", {"a": [[1.0]], "b": [[1.0]], "bounds": BENCH_BOUNDS}),
        ("d2k1", {"generator_seed": 5, "d": 2, "k": 1}),
    ):
        result = run_experiment(bench_config(spec))
        fits = {f.algorithm: f for f in result.fits}
        oslo, fixed = fits.get("oslo"), fits.get("fixed_k0")
        inst_ok = not result.failed_cells and oslo is not None and fixed is not None and oslo.slope <= 0.75 and fixed.slope >= 0.95
        ok &= inst_ok
        summary.append(
            f"{name}: oslo {oslo.slope if oslo else float('nan'):.3f} [{oslo.band_low if oslo else float('nan'):.2f}, {oslo.band_high if oslo else float('nan'):.2f}], "
            f"fixed_k0 {fixed.slope if fixed else float('nan'):.3f}"
        )
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    record(9, ok, "; ".join(summary) + f"; {elapsed:.0f}s")
    assert ok


# --------------------------------------------------------------------------
# 10. regret decomposition


def test_criterion_10_regret_decomposition():
    horizon, seeds, c_beta = 4096, 30, 20.0
    ok = True
    summary = []
    for name, inst in (("golden", golden_instance()), ("d2k1", random_two_state())):
        b = inst.bounds
        ric = solve_dare(inst)
        base = OsloConfig.practical(b, inst.dims, horizon, c_beta=c_beta)
        # V_1 = lambda I large enough for the fixed-point identity to hold
        lam = 1.2 * b.nu * base.mu / (b.alpha0 * b.sigma**2)
        cross, noise = [], []
        good = dominated = quad_ok = exact_mask = 0
        for seed in range(seeds):
            budget = OsloConfig.practical(b, inst.dims, horizon, c_beta=c_beta, lam=lam).prior_error_budget
            cfg = OsloConfig.practical(b, inst.dims, horizon, c_beta=c_beta, lam=lam, prior=perturbed_prior(inst, budget, seed))
            rec = evaluate_run(run_oslo(inst, cfg, rng=Rng(seed).child("env")), inst, ric)
            if not rec.flags.all_good:
                continue
            dec = rec.decomposition
            good += 1
            dominated += dec.dominated
            quad_ok += dec.quad_ok
            exact_mask += bool(np.array_equal(dec.mask, rec.flags.e_t[:horizon]))
            cross.append(dec.cross.sum() / horizon)
            noise.append(dec.noise.sum() / horizon)
        z = {}
        for label, vals in (("cross", cross), ("noise", noise)):
            vals = np.asarray(vals)
            se = vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else np.inf
            z[label] = abs(vals.mean()) / se if len(vals) > 1 else np.inf
        inst_ok = good >= 2 and dominated == good and quad_ok == good and exact_mask == good and max(z.values()) <= 3
        ok &= inst_ok
        summary.append(f"{name}: {good}/{seeds} good, dominated {dominated}, quad ok {quad_ok}, |mean|/SE cross {z['cross']:.2f} noise {z['noise']:.2f}")
    record(10, ok, "; ".join(summary))
    assert ok


# --------------------------------------------------------------------------
# 11. matrix lemmas


def test_criterion_11_matrix_lemmas():
    gen = np.random.default_rng(11)
    trials = 1000
    tol = 1e-9
    worst = {"sigmabound": np.inf, "semidefinitebound": np.inf, "lyapunov": np.inf, "det_ratio": np.inf, "det_comparison": np.inf}
    violations = dict.fromkeys(worst, 0)
    start = time.perf_counter()

    def note(key, margin, scale=1.0):
        worst[key] = min(worst[key], margin / scale)
        violations[key] += margin < -tol * scale

    for _ in range(trials):
        d = int(gen.integers(1, 5))
        n = d + int(gen.integers(1, 4))
        x = gen.standard_normal((d, n))
        g = gen.standard_normal((n, n))
        v = g @ g.T + 0.1 * np.eye(n)
        mu = 1 + 2 * opnorm(x) * math.sqrt(opnorm(v))
        raw = gen.standard_normal((d, n))
        delta = (raw / opnorm(raw) * gen.uniform()) @ psd_sqrt(np.linalg.inv(v))
        s = gen.standard_normal((n, n))
        sigma = s @ s.T
        note("sigmabound", lemmas.sigmabound_margin(x, delta, sigma, v, mu), max(1.0, opnorm(sigma)))
        p = gen.standard_normal((d, d))
        p = p @ p.T
        note("semidefinitebound", min(lemmas.semidefinitebound_margins(x, delta, p, v, mu)), max(1.0, opnorm(p)))

    for _ in range(trials):
        d = int(gen.integers(1, 5))
        kappa, gamma = gen.uniform(1.0, 5.0), gen.uniform(0.05, 0.9)
        y, _, _ = lemmas.strongly_stable_matrix(gen, d, kappa, gamma)
        zr = gen.standard_normal((d, d))
        z = zr @ zr.T
        sr = gen.standard_normal((d, d))
        note("lyapunov", lemmas.lyapunov_bound_margin(y, z, kappa, gamma, slack=gen.uniform() * sr @ sr.T), max(1.0, opnorm(z)))

    for _ in range(trials):
        n = int(gen.integers(1, 7))
        g = gen.standard_normal((n, n))
        m = g @ g.T + 0.1 * np.eye(n)
        z = gen.standard_normal(n)
        z *= gen.uniform() / math.sqrt(z @ np.linalg.solve(m, z))
        note("det_ratio", lemmas.det_ratio_margin(m, z))
        e = gen.standard_normal((n, n))
        bigger = m + e @ e.T
        vec = gen.standard_normal(n)
        note("det_comparison", lemmas.det_comparison_margin(bigger, m, vec), max(1.0, vec @ bigger @ vec))

    elapsed = time.perf_counter() - start
    ok = sum(violations.values()) == 0 and elapsed < 30
    detail = ", ".join(f"{k} {violations[k]} viol (min margin {worst[k]:.1e})" for k in worst)
    record(11, ok, f"{trials} trials each: {detail}; {elapsed:.1f}s")
    assert ok
