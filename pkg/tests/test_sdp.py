import numpy as np
import pytest

from oslo_lqr.core import BoundParams, ContractViolation, Dims, Rng, frob_inner, make_instance, min_eig, random_instance, spectral_radius
from oslo_lqr.riccati import policy_cost, solve_dare, solve_lyapunov
from oslo_lqr.sdp import (
    ExtractionError,
    _adjoint,
    _forward,
    build_exact_sdp,
    build_relaxed_sdp,
    covariance_of_policy,
    dual_slack,
    extract_policy,
    fixed_point_residual,
    primal_residual,
    relaxation_admissible,
    solve_sdp,
)

from conftest import GOLDEN_P


def relaxed_at_truth(inst, v_scale, mu):
    return build_relaxed_sdp(inst.a_star, inst.b_star, v_scale * np.eye(inst.dims.n), mu, inst.w, inst.cost_block)


def test_exact_golden_value_and_rank(golden):
    sol = solve_sdp(build_exact_sdp(golden))
    assert sol.status == "optimal"
    assert sol.value == pytest.approx(GOLDEN_P, abs=1e-6)
    ev = np.linalg.eigvalsh(sol.sigma)
    assert ev[0] <= 1e-6 * ev[-1]  # rank d = 1 of n = 2


def test_exact_decoupled(decoupled):
    sol = solve_sdp(build_exact_sdp(decoupled))
    assert sol.value == pytest.approx(1.0, abs=1e-7)
    np.testing.assert_allclose(sol.sigma, np.diag([1.0, 0.0]), atol=1e-6)
    assert extract_policy(sol).k_mat[0, 0] == pytest.approx(0.0, abs=1e-6)


def test_riccati_covariance_is_feasible():
    rng = Rng(2)
    for i in range(10):
        inst = random_instance(Dims(3, 2), BoundParams(0.5, 2.0, 1.0, 1.5, 1.0), rng.child(i))
        sol = solve_dare(inst)
        j, x_cov, _ = policy_cost(inst, sol.policy)
        sigma = covariance_of_policy(x_cov, sol.k_star)
        prob = build_exact_sdp(inst)
        assert np.linalg.norm(primal_residual(prob, sigma), 2) <= 1e-8
        assert frob_inner(inst.cost_block, sigma) == pytest.approx(sol.j_star, rel=1e-8)


def test_exact_sdp_dual_certificate(golden):
    prob = build_exact_sdp(golden)
    sol = solve_sdp(prob)
    assert sol.p_dual[0, 0] == pytest.approx(GOLDEN_P, abs=1e-6)
    assert min_eig(dual_slack(prob, sol.p_dual)) >= -1e-7
    assert abs(frob_inner(prob.cost_block, sol.sigma) - frob_inner(sol.p_dual, prob.w)) <= 1e-6
    assert max(sol.kkt_residuals.values()) <= 1e-8


def test_infeasible_detected():
    sol = solve_sdp(build_exact_sdp(make_instance(1.1, 0.0)))
    assert sol.status == "infeasible"
    with pytest.raises(ContractViolation):
        extract_policy(sol)


def test_max_iter_reported(golden):
    sol = solve_sdp(build_exact_sdp(golden), max_iters=2)
    assert sol.status == "max-iter"


def test_relaxed_limit_matches_exact(golden):
    exact = solve_sdp(build_exact_sdp(golden)).value
    relaxed = solve_sdp(relaxed_at_truth(golden, 1e8, 5.0)).value
    assert abs(relaxed - exact) <= 1e-4
    assert relaxed <= exact + 1e-7


def test_relaxed_mu_zero_is_inequality_exact(golden):
    prob = relaxed_at_truth(golden, 1.0, 0.0)
    assert prob.constraint_sense == "inequality" and prob.kind == "exact"
    assert solve_sdp(prob).value == pytest.approx(GOLDEN_P, abs=1e-6)


def test_relaxed_value_below_optimal_cost(golden):
    v = 4.0 * np.eye(2)
    mu = 1 + 2 * golden.bounds.vartheta * 2.0
    assert relaxation_admissible(mu, golden.bounds.vartheta, v)
    sol = solve_sdp(build_relaxed_sdp(golden.a_star, golden.b_star, v, mu, golden.w, golden.cost_block))
    assert sol.value <= GOLDEN_P


def test_relaxed_dual_close_at_large_v(golden):
    sol = solve_sdp(relaxed_at_truth(golden, 1e6, 5.0), tol=1e-10)
    assert abs(sol.p_dual[0, 0] - GOLDEN_P) <= 1e-3


def test_relaxed_rejects_non_pd_v(golden):
    with pytest.raises(ContractViolation):
        build_relaxed_sdp(golden.a_star, golden.b_star, np.diag([1.0, 0.0]), 1.0, golden.w, golden.cost_block)


def test_extract_policy_examples():
    assert extract_policy(np.array([[2.0, 1.0], [1.0, 0.5]]), d=1).k_mat[0, 0] == pytest.approx(0.5)
    pol = extract_policy(np.diag([1.0, 0.0]), d=1)
    assert pol.k_mat[0, 0] == 0.0 and not pol.degenerate


def test_extract_policy_degenerate_and_indefinite():
    sigma = np.diag([1.0, 0.0, 1.0])
    sigma[2, 0] = sigma[0, 2] = 0.5
    pol = extract_policy(sigma, d=2)
    assert pol.degenerate
    np.testing.assert_allclose(pol.k_mat, [[0.5, 0.0]])
    with pytest.raises(ExtractionError):
        extract_policy(np.diag([1.0, -1.0, 1.0]), d=2)


def test_exact_policy_golden(golden):
    k = extract_policy(solve_sdp(build_exact_sdp(golden))).k_mat[0, 0]
    assert abs(k - solve_dare(golden).k_star[0, 0]) <= 1e-4


def test_fixed_point_true_estimates(golden):
    tol = 1e-8
    prob = relaxed_at_truth(golden, 1e6, 5.0)
    sol = solve_sdp(prob, tol=tol)
    res = fixed_point_residual(sol.p_dual, extract_policy(sol), golden.a_star, golden.b_star, 1e6 * np.eye(2), 5.0, golden.cost_block)
    assert res <= 10 * tol


def test_fixed_point_hand_built():
    k, a, b, q, r, mu, v = -0.4, 0.9, 1.0, 1.0, 2.0, 3.0, 50.0
    m = a + b * k
    p = (q + k * k * r) / (1 - m * m + mu * (1 + k * k) / v)
    args = (np.array([[k]]), [[a]], [[b]], v * np.eye(2), mu, np.diag([q, r]))
    assert fixed_point_residual(np.array([[p]]), *args) <= 1e-14
    assert fixed_point_residual(np.array([[p + 0.1]]), *args) >= 0.05


def test_relaxation_admissible_examples():
    v = 4.0 * np.eye(2)
    assert relaxation_admissible(5.0, 1.0, v)
    assert not relaxation_admissible(4.9, 1.0, v)
    t, th = 10_000, 1.0
    assert relaxation_admissible(5 * th * np.sqrt(t), th, 4 * t * np.eye(2))


def test_adjoint_identity():
    g = np.random.default_rng(1)
    inst = random_instance(Dims(2, 2), BoundParams(0.5, 2.0, 1.0, 1.5, 1.0), Rng(5))
    for prob in (build_exact_sdp(inst), relaxed_at_truth(inst, 3.0, 2.0)):
        for _ in range(5):
            s = g.standard_normal((4, 4))
            s = s + s.T
            x = [s] + ([] if prob.constraint_sense == "equality" else [np.eye(2) + 0.1])
            p = g.standard_normal((2, 2))
            p = p + p.T
            lhs = frob_inner(_forward(prob, x), p)
            rhs = sum(frob_inner(a, b) for a, b in zip(x, _adjoint(prob, p)))
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_feasible_covariance_dominates_policy_covariance():
    """Any feasible Sigma gives a stabilizing K with E(K) <= Sigma."""
    rng = Rng(9)
    for i in range(20):
        inst = random_instance(Dims(2, 2), BoundParams(0.5, 2.0, 1.0, 1.5, 1.0), rng.child(i))
        sol = solve_dare(inst)
        g = np.random.default_rng(i)
        k = sol.k_star + 0.05 * g.standard_normal(sol.k_star.shape)
        m = inst.closed_loop(k)
        if spectral_radius(m) >= 1:
            continue
        u = g.standard_normal((2, 2))
        u = u @ u.T
        x = solve_lyapunov(m, inst.b_star @ u @ inst.b_star.T + inst.w)
        ik = np.vstack([np.eye(2), k])
        sigma = ik @ x @ ik.T
        sigma[2:, 2:] += u
        prob = build_exact_sdp(inst)
        assert np.linalg.norm(primal_residual(prob, sigma), 2) <= 1e-8
        k_ex = extract_policy(sigma, d=2).k_mat
        assert spectral_radius(inst.closed_loop(k_ex)) < 1
        _, x_k, _ = policy_cost(inst, k_ex)
        assert min_eig(sigma - covariance_of_policy(x_k, k_ex)) >= -1e-7
