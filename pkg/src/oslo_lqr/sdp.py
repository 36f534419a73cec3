"""Steady-state covariance SDPs for LQR and a small dense interior-point solver.

Both programs are posed over the joint state-action covariance ``Sigma``
(``n x n``, ``n = d + k``):

* exact:   minimize ``diag(Q,R) . Sigma`` subject to
  ``Sigma_xx = Theta Sigma Theta' + W``, ``Sigma >= 0``;
* relaxed: the equality is replaced by
  ``Sigma_xx >= Theta Sigma Theta' + W - mu (Sigma . V^{-1}) I``.

In the relaxed case a slack ``S`` (``d x d``) turns the matrix inequality
into an equality, so both programs share the standard form
``min C.X  s.t.  A(X) = W, X >= 0`` with ``X = (Sigma, S)``.  The dual
variable of the ``d x d`` equality is the cost-to-go matrix ``P``:

    max W . P  s.t.  diag(Q - P, R) + Theta' P Theta - mu tr(P) V^{-1} >= 0,
                     P >= 0  (relaxed only; P is free in the exact program).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg as sla

from .core import (
    ContractViolation,
    LqrInstance,
    Policy,
    block_diag2,
    frob_inner,
    min_eig,
    nuclear_norm,
    opnorm,
    sym,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 200
# ||y|| beyond which a dual ray is tested as an infeasibility certificate
_RAY_NORM = 1e9


class ExtractionError(ArithmeticError):
    """Sigma_xx is numerically indefinite; no policy can be read off."""


@dataclass(frozen=True, eq=False)
class SdpProblem:
    kind: Literal["exact", "relaxed"]
    cost_block: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    w: np.ndarray
    mu: float = 0.0
    v_inv: np.ndarray | None = None
    constraint_sense: Literal["equality", "inequality"] = "equality"

    @property
    def d(self) -> int:
        return self.a_hat.shape[0]

    @property
    def k(self) -> int:
        return self.b_hat.shape[1]

    @property
    def n(self) -> int:
        return self.d + self.k

    @property
    def theta(self) -> np.ndarray:
        return np.hstack([self.a_hat, self.b_hat])


@dataclass(frozen=True, eq=False)
class SdpSolution:
    sigma: np.ndarray
    p_dual: np.ndarray
    value: float
    status: Literal["optimal", "infeasible", "max-iter"]
    kkt_residuals: dict = field(default_factory=dict)
    iterations: int = 0
    dual_value: float = float("nan")
    slack_dual: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.p_dual.shape[0]

    @property
    def sigma_xx(self) -> np.ndarray:
        return self.sigma[: self.d, : self.d]

    @property
    def sigma_ux(self) -> np.ndarray:
        return self.sigma[self.d :, : self.d]

    @property
    def sigma_uu(self) -> np.ndarray:
        return self.sigma[self.d :, self.d :]


# --------------------------------------------------------------------------
# construction


def _check_cost_block(cost_block, n):
    c = np.atleast_2d(np.asarray(cost_block, dtype=float))
    if c.shape != (n, n):
        raise ContractViolation(f"cost_block must be {n}x{n}, got {c.shape}")
    if min_eig(c) <= 0:
        raise ContractViolation("cost_block must be positive definite")
    return sym(c)


def build_exact_sdp(instance: LqrInstance) -> SdpProblem:
    """Equality-constrained covariance program at the true parameters."""
    return SdpProblem(
        kind="exact",
        cost_block=instance.cost_block,
        a_hat=np.array(instance.a_star),
        b_hat=np.array(instance.b_star),
        w=np.array(instance.w),
        constraint_sense="equality",
    )


def build_relaxed_sdp(a_hat, b_hat, v, mu: float, w, cost_block) -> SdpProblem:
    """Optimistic program around estimates ``(a_hat, b_hat)`` with confidence ``v``.

    ``mu = 0`` is accepted for testing and yields the inequality form of
    the exact program.
    """
    a_hat = np.atleast_2d(np.asarray(a_hat, dtype=float))
    b_hat = np.atleast_2d(np.asarray(b_hat, dtype=float))
    d, k = b_hat.shape
    n = d + k
    if a_hat.shape != (d, d):
        raise ContractViolation("a_hat must be d x d")
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape != (d, d):
        raise ContractViolation("w must be d x d")
    c = _check_cost_block(cost_block, n)
    if mu < 0 or not np.isfinite(mu):
        raise ContractViolation(f"mu must be a nonnegative finite number, got {mu}")
    if mu == 0:
        return SdpProblem("exact", c, a_hat, b_hat, sym(w), 0.0, None, "inequality")
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape != (n, n):
        raise ContractViolation(f"v must be {n}x{n}")
    try:
        factor = sla.cho_factor(sym(v), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation("v must be positive definite") from exc
    v_inv = sym(sla.cho_solve(factor, np.eye(n)))
    return SdpProblem("relaxed", c, a_hat, b_hat, sym(w), float(mu), v_inv, "inequality")


# --------------------------------------------------------------------------
# standard-form data


def _svec_basis(d: int) -> np.ndarray:
    """Orthonormal basis of symmetric d x d matrices, shape (d(d+1)/2, d, d)."""
    out = []
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d))
            if i == j:
                e[i, i] = 1.0
            else:
                e[i, j] = e[j, i] = 1.0 / np.sqrt(2.0)
            out.append(e)
    return np.array(out)


def _adjoint(prob: SdpProblem, p: np.ndarray) -> list[np.ndarray]:
    """Adjoint of the constraint map applied to a symmetric ``d x d`` matrix."""
    d, n = prob.d, prob.n
    th = prob.theta
    g = -th.T @ p @ th
    g[:d, :d] += p
    if prob.kind == "relaxed":
        g = g + prob.mu * np.trace(p) * prob.v_inv
    blocks = [sym(g)]
    if prob.constraint_sense == "inequality":
        blocks.append(-p)
    return blocks


def _forward(prob: SdpProblem, x: list[np.ndarray]) -> np.ndarray:
    """Constraint map applied to ``(Sigma, S)``; returns a ``d x d`` matrix."""
    d = prob.d
    sig = x[0]
    th = prob.theta
    out = sig[:d, :d] - th @ sig @ th.T
    if prob.kind == "relaxed":
        out = out + prob.mu * frob_inner(prob.v_inv, sig) * np.eye(d)
    if prob.constraint_sense == "inequality":
        out = out - x[1]
    return sym(out)


def _dual_matrix(basis, y):
    return np.tensordot(y, basis, axes=1)


def _max_step(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha with ``x + alpha dx >= 0`` (``x`` positive definite)."""
    try:
        lower = np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        return 0.0
    li = sla.solve_triangular(lower, np.eye(len(x)), lower=True)
    lam = np.linalg.eigvalsh(sym(li @ dx @ li.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _inner(xs, zs) -> float:
    return sum(frob_inner(a, b) for a, b in zip(xs, zs))


# --------------------------------------------------------------------------
# interior-point solver


def solve_sdp(problem: SdpProblem, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> SdpSolution:
    """Infeasible-start primal-dual path following (Mehrotra predictor-corrector,
    HKM search direction).

    Convergence: relative primal residual ``||A(X) - W|| / (1 + ||W||)``,
    relative dual residual ``||C - A*(P) - Z|| / (1 + ||C||)`` and relative
    gap ``|C.X - W.P| / (1 + |C.X| + |W.P|)`` all at most ``tol``.

    Primal infeasibility is declared when the dual iterate runs off along a
    ray ``P`` with ``W.P > 0`` and ``A*(P) <= 0`` (up to ``tol``), which is a
    Farkas certificate.  The dual is always feasible (``P = 0`` works) so
    dual infeasibility cannot occur.
    """
    if tol <= 0 or max_iters < 1:
        raise ContractViolation("tol must be positive and max_iters >= 1")
    d, n = problem.d, problem.n
    basis = _svec_basis(d)
    m = len(basis)
    c_blocks = [problem.cost_block]
    if problem.constraint_sense == "inequality":
        c_blocks.append(np.zeros((d, d)))
    nblocks = len(c_blocks)
    sizes = [x.shape[0] for x in c_blocks]
    dim_total = sum(sizes)
    # G[b][l] = block b of A*(E_l)
    g_all = [np.empty((m, s, s)) for s in sizes]
    for l in range(m):
        for b, blk in enumerate(_adjoint(problem, basis[l])):
            g_all[b][l] = blk
    b_vec = np.einsum("lij,ij->l", basis, problem.w)
    norm_b = np.linalg.norm(b_vec)
    norm_c = np.sqrt(sum(np.sum(c * c) for c in c_blocks))

    def a_op(xs):
        return sum(np.einsum("lij,ij->l", g, x) for g, x in zip(g_all, xs))

    def at_op(y):
        return [np.tensordot(y, g, axes=1) for g in g_all]

    # starting point scaled to the data
    g_norms = np.array([np.sqrt(sum(np.sum(g[l] ** 2) for g in g_all)) for l in range(m)])
    xi = max(10.0, np.sqrt(dim_total), np.max((1 + np.abs(b_vec)) / (1 + g_norms)))
    eta = max(10.0, np.sqrt(dim_total), 1 + norm_c, 1 + np.max(g_norms))
    xs = [xi * np.eye(s) for s in sizes]
    zs = [eta * np.eye(s) for s in sizes]
    y = np.zeros(m)

    status = "max-iter"
    info = {}
    it = 0
    for it in range(1, max_iters + 1):
        aty = at_op(y)
        rp = b_vec - a_op(xs)
        rd = [c - a - z for c, a, z in zip(c_blocks, aty, zs)]
        pobj = _inner(c_blocks, xs)
        dobj = float(b_vec @ y)
        gap = _inner(xs, zs)
        mu_c = gap / dim_total
        pinf = np.linalg.norm(rp) / (1 + norm_b)
        dinf = np.sqrt(sum(np.sum(r * r) for r in rd)) / (1 + norm_c)
        rgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        info = {"primal": float(pinf), "dual": float(dinf), "gap": float(rgap), "complementarity": float(mu_c)}
        if pinf <= tol and dinf <= tol and rgap <= tol:
            status = "optimal"
            break
        # Farkas ray test on the dual iterate
        ny = np.linalg.norm(y)
        if ny > _RAY_NORM * (1 + norm_c) and dobj > 0:
            ray = [a / ny for a in aty]
            worst = max(np.linalg.eigvalsh(sym(r))[-1] for r in ray)
            if worst <= 1e-6 and dobj / ny > 1e-9:
                status = "infeasible"
                info["certificate"] = float(dobj / ny)
                break

        zinv = [np.linalg.inv(z) for z in zs]
        # Schur complement: M_kl = sum_b tr(G_k X G_l Z^{-1})
        schur = np.zeros((m, m))
        for g, x, zi in zip(g_all, xs, zinv):
            t = x @ g @ zi
            schur += np.einsum("kij,lji->kl", g, t)
        schur = sym(schur)
        try:
            chol = sla.cho_factor(schur, lower=True)
            solve_schur = lambda rhs: sla.cho_solve(chol, rhs)  # noqa: E731
        except np.linalg.LinAlgError:
            solve_schur = lambda rhs: np.linalg.lstsq(schur, rhs, rcond=None)[0]  # noqa: E731

        def direction(rc):
            h = [(r - x @ rdd) @ zi for r, x, rdd, zi in zip(rc, xs, rd, zinv)]
            dy = solve_schur(rp - a_op(h))
            atdy = at_op(dy)
            dz = [rdd - a for rdd, a in zip(rd, atdy)]
            dx = [sym((r - x @ z_) @ zi) for r, x, z_, zi in zip(rc, xs, dz, zinv)]
            return dx, dy, dz

        def steps(dx, dz, frac):
            ap = min(1.0, frac * min(_max_step(x, v) for x, v in zip(xs, dx)))
            ad = min(1.0, frac * min(_max_step(z, v) for z, v in zip(zs, dz)))
            return ap, ad

        # predictor
        rc_aff = [-x @ z for x, z in zip(xs, zs)]
        dx_a, dy_a, dz_a = direction(rc_aff)
        ap, ad = steps(dx_a, dz_a, 1.0)
        mu_aff = _inner([x + ap * v for x, v in zip(xs, dx_a)], [z + ad * v for z, v in zip(zs, dz_a)]) / dim_total
        sigma_c = min(1.0, max(0.0, mu_aff / mu_c)) ** 3 if mu_c > 0 else 0.0
        # corrector
        rc = [
            sigma_c * mu_c * np.eye(s) - x @ z - dxa @ dza
            for s, x, z, dxa, dza in zip(sizes, xs, zs, dx_a, dz_a)
        ]
        dx, dy, dz = direction(rc)
        frac = 0.98 if it > 1 else 0.9
        ap, ad = steps(dx, dz, frac)
        xs = [sym(x + ap * v) for x, v in zip(xs, dx)]
        y = y + ad * dy
        zs = [sym(z + ad * v) for z, v in zip(zs, dz)]
        if not all(np.all(np.isfinite(x)) for x in xs) or not np.all(np.isfinite(y)):
            status = "max-iter"
            info["error"] = "non-finite iterate"
            break

    p = _dual_matrix(basis, y)
    return SdpSolution(
        sigma=xs[0],
        p_dual=sym(p),
        value=_inner(c_blocks, xs),
        status=status,
        kkt_residuals=info,
        iterations=it,
        dual_value=float(b_vec @ y),
        slack_dual=zs[0],
    )


def dual_slack(problem: SdpProblem, p: np.ndarray) -> np.ndarray:
    """``diag(Q - P, R) + Theta' P Theta - mu tr(P) V^{-1}``."""
    return sym(problem.cost_block - _adjoint(problem, p)[0])


def primal_residual(problem: SdpProblem, sigma: np.ndarray) -> np.ndarray:
    """``Sigma_xx - Theta Sigma Theta' - W + mu (Sigma . V^{-1}) I``.

    Zero for exact feasibility, PSD for feasibility of the inequality form.
    """
    d = problem.d
    th = problem.theta
    out = sigma[:d, :d] - th @ sigma @ th.T - problem.w
    if problem.kind == "relaxed":
        out = out + problem.mu * frob_inner(problem.v_inv, sigma) * np.eye(d)
    return sym(out)


# --------------------------------------------------------------------------
# policy extraction and certificates


def policy_from_sigma(sigma: np.ndarray, d: int, pinv_threshold: float | None = None) -> Policy:
    """``K = Sigma_ux Sigma_xx^{-1}`` via a Cholesky solve.

    ``pinv_threshold`` defaults to ``1e-8 * ||Sigma_xx||``.  Below it the
    pseudo-inverse (eigenvalues under the threshold dropped) is used and the
    returned policy is flagged degenerate.  An eigenvalue below
    ``-pinv_threshold`` raises ExtractionError.
    """
    sigma = sym(np.atleast_2d(np.asarray(sigma, dtype=float)))
    sxx = sigma[:d, :d]
    sxu = sigma[:d, d:]
    thr = 1e-8 * opnorm(sxx) if pinv_threshold is None else float(pinv_threshold)
    vals, vecs = np.linalg.eigh(sxx)
    if vals[0] < -thr or not np.all(np.isfinite(vals)):
        raise ExtractionError(f"Sigma_xx is indefinite (min eigenvalue {vals[0]:.3e})")
    if vals[0] >= thr and vals[0] > 0:
        k = sla.cho_solve(sla.cho_factor(sxx, lower=True), sxu).T
        return Policy(k, degenerate=False)
    keep = vals > thr
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return Policy(sxu.T @ inv, degenerate=True)


def extract_policy(solution: SdpSolution | np.ndarray, pinv_threshold: float | None = None, d: int | None = None) -> Policy:
    """Policy read off the primal covariance of a solved program.

    A raw ``n x n`` array is accepted as well (then ``d`` is required).
    """
    if isinstance(solution, SdpSolution):
        if solution.status != "optimal":
            raise ContractViolation(f"cannot extract a policy from status {solution.status!r}")
        return policy_from_sigma(solution.sigma, solution.d, pinv_threshold)
    if d is None:
        raise ContractViolation("d is required when passing a raw covariance")
    return policy_from_sigma(solution, d, pinv_threshold)


def stacked_gain(k_mat: np.ndarray) -> np.ndarray:
    """``(I; K)``, shape n x d."""
    k_mat = np.atleast_2d(k_mat)
    return np.vstack([np.eye(k_mat.shape[1]), k_mat])


def fixed_point_residual(p, policy: Policy | np.ndarray, a_hat, b_hat, v, mu: float, cost_block) -> float:
    """Operator norm of ``RHS - P`` where

    ``RHS = Q + K'RK + (A+BK)' P (A+BK) - mu ||P||_* (I;K)' V^{-1} (I;K)``.

    Zero at an optimum of the relaxed program whose covariance has rank d.
    """
    k = policy.k_mat if isinstance(policy, Policy) else np.atleast_2d(policy)
    p = np.atleast_2d(p)
    a_hat = np.atleast_2d(a_hat)
    b_hat = np.atleast_2d(b_hat)
    d = p.shape[0]
    c = np.atleast_2d(cost_block)
    q, r = c[:d, :d], c[d:, d:]
    m = a_hat + b_hat @ k
    ik = stacked_gain(k)
    v = np.atleast_2d(v)
    v_inv_term = ik.T @ np.linalg.solve(v, ik)
    rhs = q + k.T @ r @ k + m.T @ p @ m - mu * nuclear_norm(p) * v_inv_term
    return opnorm(sym(rhs) - p)


def relaxation_admissible(mu: float, vartheta: float, v) -> bool:
    """``mu >= 1 + 2 vartheta ||V||^{1/2}``."""
    return bool(mu >= 1.0 + 2.0 * vartheta * np.sqrt(opnorm(np.atleast_2d(v))))


def covariance_of_policy(x_cov: np.ndarray, k_mat: np.ndarray) -> np.ndarray:
    """``E(K) = (I;K) X (I;K)'``."""
    ik = stacked_gain(k_mat)
    return sym(ik @ x_cov @ ik.T)


__all__ = [
    "SdpProblem",
    "SdpSolution",
    "ExtractionError",
    "build_exact_sdp",
    "build_relaxed_sdp",
    "solve_sdp",
    "dual_slack",
    "primal_residual",
    "policy_from_sigma",
    "extract_policy",
    "stacked_gain",
    "fixed_point_residual",
    "relaxation_admissible",
    "covariance_of_policy",
]
