import math

import numpy as np
import pytest

from oslo_lqr.core import BoundParams, ContractViolation, Dims, LqrEnvironment, Rng, Trajectory, linear_rollout, make_instance
from oslo_lqr.oslo import (
    OsloConfig,
    evaluate_run,
    good_event_frequency,
    good_event_monitor,
    regret_decomposition,
    run_certainty_equivalence,
    run_oslo,
    theory_advisories,
    theory_params,
)
from oslo_lqr.riccati import solve_dare


def test_theory_params_mu():
    mu, _, _, _ = theory_params(BoundParams(1, 1, 1, 2.0, 1), Dims(1, 1), 10_000, 0.1)
    assert mu == pytest.approx(1000.0)


def test_theory_params_lambda_and_budget():
    _, lam, _, eps = theory_params(BoundParams(1, 1, 1, 1, 1), Dims(1, 1), 4, 0.1)
    assert lam == pytest.approx(4096.0)
    assert eps == pytest.approx(1 / 16384)


def test_theory_params_beta():
    delta = 0.9
    _, _, beta, _ = theory_params(BoundParams(1, 1, 1, 1, 1), Dims(1, 1), delta * math.e, delta)
    assert beta == pytest.approx(2**18 * 4)


def test_theory_params_refuse_non_spherical_noise():
    with pytest.raises(ContractViolation):
        theory_params(BoundParams(1, 1, 1, 1, 1), Dims(2, 1), 100, 0.1, w=np.diag([1.0, 2.0]))


def test_practical_overrides_flagged():
    cfg = OsloConfig.practical(BoundParams(1, 1, 1, 1, 2), Dims(1, 1), 100, lam=5.0)
    assert cfg.overrides == ("lam",)
    assert cfg.lam == 5.0 and cfg.constants_mode == "practical"
    assert cfg.echo()["constants_mode"] == "practical"


def test_theory_advisories_report_small_horizon(golden):
    cfg = OsloConfig.theory(golden.bounds, golden.dims, 100)
    assert any("lambda" in note for note in theory_advisories(cfg))


def paired_regret(instance, record, seed):
    ric = solve_dare(instance)
    ref = linear_rollout(instance, ric.k_star, record.steps, np.zeros(instance.dims.d), Rng(seed).child("env"))
    return np.cumsum(record.trajectory.costs - ref.costs)


@pytest.mark.slow
def test_practical_run_sublinear(golden):
    horizon = 2**14
    points = [2**j for j in range(10, 15)]
    per_step = []
    for s in range(20):
        cfg = OsloConfig.practical(golden.bounds, golden.dims, horizon, prior=golden.theta, c_lambda=0.1)
        rec = run_oslo(golden, cfg, rng=Rng(s).child("env"))
        reg = paired_regret(golden, rec, s)
        per_step.append([reg[t - 1] / t for t in points])
    med = np.median(per_step, axis=0)
    assert np.all(med > 0)
    assert np.all(np.diff(med) < 0)


def test_large_confidence_starts_optimal(golden):
    ric = solve_dare(golden)
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 2048, prior=golden.theta, lam=1e8)
    rec = run_oslo(golden, cfg, rng=Rng(0).child("env"))
    assert abs(rec.epochs[0].k_mat[0, 0] - ric.k_star[0, 0]) <= 1e-3
    reg = paired_regret(golden, rec, 0)
    assert np.max(np.abs(np.diff(reg, prepend=0.0))) <= 1e-6


def test_run_deterministic(golden):
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 1000, prior=golden.theta + 0.01)
    a = run_oslo(golden, cfg, rng=Rng(3).child("env"))
    b = run_oslo(golden, cfg, rng=Rng(3).child("env"))
    np.testing.assert_array_equal(a.trajectory.states, b.trajectory.states)
    assert a.epoch_starts == b.epoch_starts
    for ea, eb in zip(a.epochs, b.epochs):
        np.testing.assert_array_equal(ea.k_mat, eb.k_mat)
        np.testing.assert_array_equal(ea.p_dual, eb.p_dual)


def test_epochs_partition_and_constant_gain(golden):
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 3000, prior=golden.theta + 0.05)
    rec = run_oslo(golden, cfg, rng=Rng(1).child("env"))
    assert rec.epoch_starts[0] == 1
    assert rec.epoch_starts == sorted(set(rec.epoch_starts))
    assert np.all(np.diff(rec.epoch_of_step) >= 0)
    assert rec.epoch_of_step[-1] == rec.epoch_count - 1
    traj = rec.trajectory
    for i, ep in enumerate(rec.epochs):
        idx = np.flatnonzero(rec.epoch_of_step == i)
        np.testing.assert_allclose(traj.actions[idx], traj.states[idx] @ ep.k_mat.T, rtol=0, atol=1e-12)


def test_halt_on_infeasible_relaxed_program():
    # prior claims B = 0 with an unstable A: no stabilizing covariance exists
    inst = make_instance(1.5, 1.0, bounds=BoundParams(1, 1, 1, 2.0, 5.0))
    cfg = OsloConfig.practical(inst.bounds, inst.dims, 50, prior=np.array([[1.5, 0.0]]), mu=1e-6, lam=1e6)
    rec = run_oslo(inst, cfg, rng=Rng(0))
    assert rec.halted and "status" in rec.halt_reason


def test_fallback_keeps_previous_policy(golden):
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 400, prior=golden.theta, sdp_fallback=True, sdp_max_iters=200)
    rec = run_oslo(golden, cfg, rng=Rng(0).child("env"))
    assert not rec.halted


class AuditedEnvironment:
    """Forwards the learner interface and records every attribute read."""

    def __init__(self, env):
        object.__setattr__(self, "_env", env)
        object.__setattr__(self, "reads", [])

    def __getattr__(self, name):
        self.reads.append(name)
        return getattr(self._env, name)


def test_learner_reads_only_public_interface(golden):
    env = AuditedEnvironment(LqrEnvironment(golden, Rng(0)))
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 200, prior=golden.theta)
    run_oslo(env, cfg)
    assert set(env.reads) <= {"dims", "q", "r", "w", "state", "t", "play", "trajectory", "x1_flagged"}


class ReplayEnvironment:
    """Replays recorded observations; the hidden matrices are never consulted."""

    def __init__(self, traj: Trajectory, q, r, w):
        self._traj = traj
        self.q, self.r, self.w = q, r, w
        self.dims = Dims(traj.states.shape[1], traj.actions.shape[1])
        self._i = 0
        self.x1_flagged = False

    @property
    def state(self):
        return self._traj.states[self._i].copy()

    @property
    def t(self):
        return self._i + 1

    def play(self, u, check=True):
        np.testing.assert_allclose(u, self._traj.actions[self._i], rtol=0, atol=0)
        self._i += 1
        return self._traj.states[self._i]

    def trajectory(self, start=0):
        t = self._i
        tr = self._traj
        return Trajectory(tr.states[start : t + 1], tr.actions[start:t], tr.noises[start:t], tr.costs[start:t])


def test_tampered_truth_is_indistinguishable(golden):
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 1500, prior=golden.theta + 0.02)
    real = run_oslo(golden, cfg, rng=Rng(8).child("env"))
    replay = run_oslo(ReplayEnvironment(real.trajectory, golden.q, golden.r, golden.w), cfg)
    assert replay.epoch_starts == real.epoch_starts
    for a, b in zip(real.epochs, replay.epochs):
        np.testing.assert_array_equal(a.k_mat, b.k_mat)


def test_good_event_with_exact_estimates(golden):
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 500, prior=golden.theta, lam=1e8)
    rec = run_oslo(golden, cfg, rng=Rng(2).child("env"))
    flags = good_event_monitor(rec, golden)
    assert flags.conf_ok.all()


def test_norm_limit_reduces_to_beta_from_zero_start(golden):
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 300, prior=golden.theta)
    rec = run_oslo(golden, cfg, rng=Rng(2).child("env"))
    flags = good_event_monitor(rec, golden)
    np.testing.assert_array_equal(flags.norm_limits, cfg.beta)
    assert np.all(flags.e_t[1:] <= flags.e_t[:-1])


def test_theory_mode_good_event_frequency(golden):
    delta = 0.1
    flags = []
    for s in range(200):
        cfg = OsloConfig.theory(golden.bounds, golden.dims, 128, delta, prior=golden.theta)
        flags.append(good_event_monitor(run_oslo(golden, cfg, rng=Rng(s).child("env")), golden))
    fail_rate, _ = good_event_frequency(flags)
    p = delta / 2
    assert fail_rate <= p + 2 * math.sqrt(p * (1 - p) / 200)


def test_telescoping_sums_within_single_epoch(golden):
    ric = solve_dare(golden)
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 300, prior=golden.theta, lam=1e8, mu=1e5)
    rec = run_oslo(golden, cfg, rng=Rng(5).child("env"))
    assert rec.epoch_count == 1
    dec = regret_decomposition(rec, golden, ric, identity_tol=np.inf)
    p = rec.epochs[0].p_dual
    x = rec.trajectory.states
    assert dec.mask.all()
    assert dec.telescoping.sum() == pytest.approx(x[0] @ p @ x[0] - x[-1] @ p @ x[-1], abs=1e-8)


def test_noise_term_is_centred(golden):
    ric = solve_dare(golden)
    p = ric.p_star
    means = []
    for s in range(20):
        traj = linear_rollout(golden, ric.k_star, 100_000 // 20, np.zeros(1), Rng(s))
        w = traj.noises
        means.append(np.mean(np.einsum("ti,ij,tj->t", w, p, w) - np.trace(p @ golden.w)))
    means = np.array(means)
    se = means.std(ddof=1) / np.sqrt(len(means))
    assert abs(means.mean()) <= 3 * se


def test_exploration_term_limit_on_good_run(golden):
    ric = solve_dare(golden)
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 2000, prior=golden.theta, c_beta=20.0)
    rec = evaluate_run(run_oslo(golden, cfg, rng=Rng(4).child("env")), golden, ric)
    assert rec.flags.all_good
    dec = rec.decomposition
    assert dec.exploration.sum() <= 4 * golden.bounds.nu * cfg.mu / golden.bounds.sigma**2 * dec.quad_limit
    assert dec.quad_ok
    assert dec.dominated


def test_certainty_equivalence_matches_oslo_prefix(golden):
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 500, prior=golden.theta + 0.03)
    a = run_oslo(golden, cfg, rng=Rng(6).child("env"))
    b = run_certainty_equivalence(golden, cfg, rng=Rng(6).child("env"))
    first = a.epochs[0]
    n_first = int(np.sum(a.epoch_of_step == 0))
    if np.array_equal(first.k_mat, b.epochs[0].k_mat):
        np.testing.assert_array_equal(a.trajectory.states[: n_first + 1], b.trajectory.states[: n_first + 1])
    # the first step always coincides: x_1 and the noise stream are shared
    np.testing.assert_array_equal(a.trajectory.states[0], b.trajectory.states[0])
    np.testing.assert_array_equal(a.trajectory.noises, b.trajectory.noises)


def test_certainty_equivalence_with_true_prior_is_optimal(golden):
    ric = solve_dare(golden)
    cfg = OsloConfig.practical(golden.bounds, golden.dims, 500, prior=golden.theta, lam=1e8)
    rec = run_certainty_equivalence(golden, cfg, rng=Rng(0).child("env"))
    for ep in rec.epochs:
        assert abs(ep.k_mat[0, 0] - ric.k_star[0, 0]) <= 1e-6
