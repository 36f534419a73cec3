"""Ground-truth oracle: DARE, Lyapunov equations, policy costs and
strong-stability certificates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .core import (
    BoundParams,
    ContractViolation,
    LqrInstance,
    Policy,
    frob_inner,
    min_eig,
    opnorm,
    psd_inv_sqrt,
    psd_sqrt,
    spectral_radius,
    sym,
)

SQRT_FLOOR = 1e-12


class NoSolutionError(ArithmeticError):
    """The Riccati equation has no stabilizing solution."""


class ConvergenceError(ArithmeticError):
    """Iteration budget exhausted before reaching the tolerance."""


class DivergenceError(ArithmeticError):
    """A Lyapunov equation was posed with a non-contracting matrix."""


class CertificateError(ArithmeticError):
    """The constructed similarity does not give a contraction."""


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    p_star: np.ndarray
    k_star: np.ndarray
    j_star: float
    residual: float
    iterations: int

    @property
    def policy(self) -> Policy:
        return Policy(self.k_star)


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    """``M = H L H^{-1}`` with ``||L|| <= 1 - gamma`` and ``cond(H) <= kappa``.

    ``h_source`` records where ``H`` came from: ``"cost-to-go"`` when it was
    built from the policy's own Lyapunov cost-to-go, ``"given"`` when the
    caller supplied the matrix.
    """

    kappa: float
    gamma: float
    h: np.ndarray
    l: np.ndarray
    b0_upper: float
    b0_lower: float
    closed_loop: np.ndarray
    h_source: str = "cost-to-go"

    def reconstruction_error(self) -> float:
        return opnorm(self.h @ self.l @ np.linalg.inv(self.h) - self.closed_loop)


# --------------------------------------------------------------------------
# Riccati


def riccati_map(p, a, b, q, r):
    """One Bellman backup ``Q + A'PA - A'PB (R + B'PB)^{-1} B'PA``."""
    bp = b.T @ p
    g = r + bp @ b
    gain = np.linalg.solve(g, bp @ a)
    return sym(q + a.T @ p @ a - (a.T @ p @ b) @ gain)


def optimal_gain(p, a, b, r):
    """``-(R + B'PB)^{-1} B'PA`` (closed loop is ``A + B K``)."""
    bp = b.T @ p
    return -np.linalg.solve(r + bp @ b, bp @ a)


def is_stabilizable(a: np.ndarray, b: np.ndarray, rtol: float = 1e-9) -> bool:
    """Hautus test on the eigenvalues of ``a`` with modulus >= 1."""
    d = a.shape[0]
    for lam in np.linalg.eigvals(a):
        if abs(lam) < 1.0:
            continue
        m = np.hstack([lam * np.eye(d) - a, b.astype(complex)])
        sv = np.linalg.svd(m, compute_uv=False)
        scale = max(sv[0], 1.0)
        if np.sum(sv > rtol * scale) < d:
            return False
    return True


def solve_dare_matrices(a, b, q, r, tol: float = 1e-10, max_iter: int = 200_000):
    """Value iteration ``P <- F(P)`` from ``P = Q``; returns ``(P, residual, iters)``.

    Stops as soon as ``||F(P) - P||_2 <= tol`` and returns the last iterate
    ``F(P)``.  Raises NoSolutionError if ``(a, b)`` is not stabilizable or
    the iterates blow up, ConvergenceError if ``max_iter`` is exhausted.
    """
    if tol <= 0:
        raise ContractViolation("tol must be positive")
    if not is_stabilizable(a, b):
        raise NoSolutionError("(A, B) is not stabilizable: no stabilizing DARE solution")
    p = np.array(q, dtype=float)
    blowup = 1e14 * max(1.0, opnorm(q))
    res = np.inf
    for it in range(1, max_iter + 1):
        p_next = riccati_map(p, a, b, q, r)
        if not np.all(np.isfinite(p_next)) or opnorm(p_next) > blowup:
            raise NoSolutionError("Riccati iterates diverged")
        res = opnorm(p_next - p)
        p = p_next
        if res <= tol:
            return p, res, it
    raise ConvergenceError(f"DARE iteration did not reach tol={tol} in {max_iter} steps (residual {res:.3e})")


def solve_dare(instance: LqrInstance, tol: float = 1e-10, max_iter: int = 200_000) -> RiccatiSolution:
    """Stabilizing DARE solution, optimal gain and optimal average cost."""
    a, b, q, r = instance.a_star, instance.b_star, instance.q, instance.r
    p, _, iters = solve_dare_matrices(a, b, q, r, tol, max_iter)
    res = opnorm(riccati_map(p, a, b, q, r) - p)
    k = optimal_gain(p, a, b, r)
    return RiccatiSolution(p, k, frob_inner(p, instance.w), res, iters)


# --------------------------------------------------------------------------
# Lyapunov


def solve_lyapunov(closed_loop, rhs, transpose: bool = False) -> np.ndarray:
    """Solve ``X = M X M' + rhs`` (or ``X = M' X M + rhs`` with ``transpose``).

    Uses scipy's Bartels-Stewart discrete Lyapunov solver.  Raises
    DivergenceError when ``rho(M) >= 1`` since the series does not converge.
    """
    m = np.atleast_2d(np.asarray(closed_loop, dtype=float))
    rhs = np.atleast_2d(np.asarray(rhs, dtype=float))
    if m.shape[0] != m.shape[1] or rhs.shape != m.shape:
        raise ContractViolation(f"shape mismatch: M {m.shape}, rhs {rhs.shape}")
    rho = spectral_radius(m)
    if rho >= 1.0:
        raise DivergenceError(f"spectral radius {rho:.6g} >= 1: Lyapunov series diverges")
    return sym(sla.solve_discrete_lyapunov(m.T if transpose else m, rhs))


def lyapunov_residual(closed_loop, rhs, x, transpose: bool = False) -> float:
    m = closed_loop.T if transpose else closed_loop
    return opnorm(m @ x @ m.T + rhs - x)


def policy_cost(instance: LqrInstance, policy: Policy | np.ndarray):
    """Average cost ``J(K)``, stationary state covariance and cost-to-go.

    Returns ``(j, x_cov, p)``; ``j = (Q + K'RK) . x_cov = p . W`` up to
    solver precision.  Raises DivergenceError for a destabilizing gain.
    """
    k = policy.k_mat if isinstance(policy, Policy) else np.atleast_2d(policy)
    m = instance.closed_loop(k)
    stage = sym(instance.q + k.T @ instance.r @ k)
    x_cov = solve_lyapunov(m, instance.w)
    p = solve_lyapunov(m, stage, transpose=True)
    return frob_inner(stage, x_cov), x_cov, p


# --------------------------------------------------------------------------
# strong stability


def certify_matrix(closed_loop: np.ndarray, h: np.ndarray, k_norm: float = 0.0, source: str = "given") -> StabilityCertificate:
    """Certificate from an explicit similarity ``H`` (``L = H^{-1} M H``)."""
    m = np.atleast_2d(closed_loop)
    h = np.atleast_2d(h)
    h_inv = np.linalg.inv(h)
    l = h_inv @ m @ h
    l_norm = opnorm(l)
    if l_norm >= 1.0:
        raise CertificateError(f"||L|| = {l_norm:.6g} >= 1: similarity does not contract")
    h_norm, h_inv_norm = opnorm(h), opnorm(h_inv)
    kappa = max(1.0, k_norm, h_norm * h_inv_norm)
    b0_lower = 1.0 / h_inv_norm
    return StabilityCertificate(
        kappa=kappa,
        gamma=1.0 - l_norm,
        h=h,
        l=l,
        b0_upper=kappa * b0_lower,
        b0_lower=b0_lower,
        closed_loop=m,
        h_source=source,
    )


def similarity_from_cost(p: np.ndarray) -> np.ndarray:
    """``H = P^{-1/2}``.

    From ``P = Q' + M'PM`` with ``Q' > 0`` one gets
    ``||P^{1/2} M P^{-1/2}||^2 <= 1 - lambda_min(P^{-1/2} Q' P^{-1/2})``,
    so ``M = H L H^{-1}`` with this ``H`` has ``||L|| < 1`` for any
    (possibly non-normal) ``M``.
    """
    return psd_inv_sqrt(p, floor=SQRT_FLOOR)


def strong_stability_certificate(instance: LqrInstance, policy: Policy | np.ndarray, p_opt=None) -> StabilityCertificate:
    """(kappa, gamma) certificate for the closed loop ``A + B K``.

    ``H`` is derived from ``p_opt`` when given (typically ``P*`` or an SDP
    dual), otherwise from the policy's own cost-to-go; see
    :func:`similarity_from_cost`.  Passing ``p_opt = I`` gives ``H = I``.
    """
    k = policy.k_mat if isinstance(policy, Policy) else np.atleast_2d(policy)
    m = instance.closed_loop(k)
    rho = spectral_radius(m)
    if rho >= 1.0:
        raise DivergenceError(f"closed loop has spectral radius {rho:.6g} >= 1")
    if p_opt is None:
        _, _, p = policy_cost(instance, k)
        source = "cost-to-go"
    else:
        p = np.atleast_2d(np.asarray(p_opt, dtype=float))
        if min_eig(p) <= 0:
            raise ContractViolation("p_opt must be positive definite")
        source = "given"
    return certify_matrix(m, similarity_from_cost(p), opnorm(k), source)


def switch_norm(p_prev: np.ndarray, p_next: np.ndarray, convention: str = "inverse") -> float:
    """``||H_{next}^{-1} H_prev||`` for consecutive duals.

    ``convention="inverse"`` uses ``H = P^{-1/2}`` (the similarity that
    certifies contraction); ``"sqrt"`` uses ``H = P^{1/2}``.
    """
    if convention == "inverse":
        return opnorm(psd_sqrt(p_next, SQRT_FLOOR) @ psd_inv_sqrt(p_prev, SQRT_FLOOR))
    if convention == "sqrt":
        return opnorm(psd_inv_sqrt(p_next, SQRT_FLOOR) @ psd_sqrt(p_prev, SQRT_FLOOR))
    raise ValueError(f"unknown convention {convention!r}")


def theory_stability_constants(bounds: BoundParams):
    """``kappa = sqrt(2 nu / (alpha0 sigma^2))`` and ``gamma = 1 / (2 kappa^2)``."""
    kappa = float(np.sqrt(2 * bounds.nu / (bounds.alpha0 * bounds.sigma**2)))
    return kappa, 1.0 / (2 * kappa**2)


def calibrated_bounds(instance: LqrInstance, nu_factor: float = 1.0, vartheta: float | None = None) -> BoundParams:
    """Tightest bound parameters for ``instance`` (``nu = nu_factor * J*``).

    ``sigma`` is taken from the smallest eigenvalue of ``W``.
    """
    sol = solve_dare(instance)
    eigs = np.concatenate([np.linalg.eigvalsh(instance.q), np.linalg.eigvalsh(instance.r)])
    sigma = float(np.sqrt(min_eig(instance.w)))
    alpha0 = float(eigs.min())
    nu = max(nu_factor * sol.j_star, alpha0 * sigma**2)
    return BoundParams(
        alpha0=alpha0,
        alpha1=float(eigs.max()),
        sigma=sigma,
        vartheta=float(vartheta if vartheta is not None else max(opnorm(instance.theta), 1e-12)),
        nu=float(nu),
    )


def bellman_gap(instance: LqrInstance, p: np.ndarray, k: np.ndarray) -> float:
    """``lambda_min(Q + K'RK + M'PM - P)``; nonnegative when ``P = P*``."""
    m = instance.closed_loop(k)
    return min_eig(instance.q + k.T @ instance.r @ k + m.T @ p @ m - p)


__all__ = [
    "RiccatiSolution",
    "StabilityCertificate",
    "NoSolutionError",
    "ConvergenceError",
    "DivergenceError",
    "CertificateError",
    "solve_dare",
    "solve_dare_matrices",
    "riccati_map",
    "optimal_gain",
    "is_stabilizable",
    "solve_lyapunov",
    "lyapunov_residual",
    "policy_cost",
    "certify_matrix",
    "similarity_from_cost",
    "strong_stability_certificate",
    "switch_norm",
    "theory_stability_constants",
    "calibrated_bounds",
    "bellman_gap",
]
