"""Numerical checks for the matrix inequalities the analysis relies on.

Each ``*_margin`` function returns ``rhs - lhs`` (or a minimum eigenvalue)
so that a nonnegative value means the inequality held.
"""

from __future__ import annotations

import numpy as np

from .core import frob_inner, max_eig, min_eig, nuclear_norm, opnorm
from .riccati import solve_lyapunov


def perturbation_admissible(x, delta, v, mu) -> bool:
    """``Delta' Delta <= V^{-1}`` and ``mu >= 1 + 2 ||X|| ||V||^{1/2}``."""
    v_inv = np.linalg.inv(v)
    return min_eig(v_inv - delta.T @ delta) >= -1e-12 and mu >= 1 + 2 * opnorm(x) * np.sqrt(opnorm(v))


def sigmabound_margin(x, delta, sigma, v, mu) -> float:
    """``mu (Sigma . V^{-1}) - ||(X+D) Sigma (X+D)' - X Sigma X'||``."""
    xd = x + delta
    lhs = opnorm(xd @ sigma @ xd.T - x @ sigma @ x.T)
    return mu * frob_inner(sigma, np.linalg.inv(v)) - lhs


def semidefinitebound_margins(x, delta, p, v, mu):
    """Minimum eigenvalues of ``mu ||P||_* V^{-1} -+ D`` with
    ``D = (X+Delta)' P (X+Delta) - X' P X``; both must be nonnegative."""
    xd = x + delta
    diff = xd.T @ p @ xd - x.T @ p @ x
    bound = mu * nuclear_norm(p) * np.linalg.inv(v)
    return min_eig(bound - diff), min_eig(bound + diff)


def lyapunov_bound_margin(y, z, kappa, gamma, slack=None) -> float:
    """For ``X = Y' X Y + Z - S`` (``S >= 0``, default 0) check
    ``X <= (kappa^2 / gamma) ||Z|| I``; returns the minimum eigenvalue of the gap."""
    rhs = z if slack is None else z - slack
    x = solve_lyapunov(y, rhs, transpose=True)
    return (kappa**2 / gamma) * opnorm(z) - max_eig(x)


def det_ratio_margin(m, z) -> float:
    """``2 log(det(M + zz') / det M) - z' M^{-1} z`` (for ``z' M^{-1} z <= 1``)."""
    quad = float(z @ np.linalg.solve(m, z))
    _, ld1 = np.linalg.slogdet(m + np.outer(z, z))
    _, ld0 = np.linalg.slogdet(m)
    return 2 * (ld1 - ld0) - quad


def det_comparison_margin(n_mat, m_mat, v) -> float:
    """``(det N / det M) v'Mv - v'Nv`` for ``N >= M > 0``."""
    _, ldn = np.linalg.slogdet(n_mat)
    _, ldm = np.linalg.slogdet(m_mat)
    return float(np.exp(ldn - ldm) * (v @ m_mat @ v) - v @ n_mat @ v)


def strongly_stable_matrix(rng, dim: int, kappa: float, gamma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random ``Y = H L H^{-1}`` with ``||L|| = 1 - gamma`` and ``cond(H) <= kappa``.

    Returns ``(Y, H, L)``.
    """
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    h_eigs = np.exp(rng.uniform(0, np.log(kappa), size=dim))
    h_eigs[0], h_eigs[-1] = 1.0, kappa
    h = (q * h_eigs) @ q.T
    l_raw = rng.standard_normal((dim, dim))
    l = (1 - gamma) * l_raw / opnorm(l_raw)
    return h @ l @ np.linalg.inv(h), h, l


def state_norm_bound(x1, noises, kappa: float, gamma: float) -> np.ndarray:
    """``kappa exp(-gamma (t-1)/2) ||x_1|| + (2 kappa / gamma) max_{s<t} ||w_s||``
    for ``t = 1..len(noises)+1``."""
    w_norm = np.linalg.norm(np.atleast_2d(noises), axis=1)
    running = np.concatenate([[0.0], np.maximum.accumulate(w_norm)])
    t = np.arange(len(running))
    return kappa * np.exp(-gamma * t / 2) * np.linalg.norm(x1) + (2 * kappa / gamma) * running


__all__ = [
    "perturbation_admissible",
    "sigmabound_margin",
    "semidefinitebound_margins",
    "lyapunov_bound_margin",
    "det_ratio_margin",
    "det_comparison_margin",
    "strongly_stable_matrix",
    "state_norm_bound",
]
