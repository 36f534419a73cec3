"""Regularized least squares for ``(A B)`` with a determinant-doubling epoch rule.

The confidence matrix is ``V_t = lambda I + beta^{-1} sum_{s<t} z_s z_s'``
and the estimate is ``(lambda Theta_0 + beta^{-1} sum x_{s+1} z_s') V_t^{-1}``,
the minimizer of
``beta^{-1} sum ||x_{s+1} - Theta z_s||^2 + lambda ||Theta - Theta_0||_F^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .core import ContractViolation, Dims, LqrInstance, max_eig, sym

LOG2 = float(np.log(2.0))
# full recomputation of V^{-1} and log det V every this many updates
REFRESH_EVERY = 1024


class BoundViolation(AssertionError):
    """A proven inequality failed under its stated preconditions."""


class EstimatorState:
    """Mutable estimator owned by a single run.

    ``step`` is the 1-based index of the next sample to be absorbed, so a
    fresh state has ``step == 1`` (this is when the first policy is
    computed).  :func:`estimator_update` mutates and returns the state.
    """

    def __init__(self, lam: float, beta: float, prior: np.ndarray, dims: Dims):
        n = dims.n
        self.dims = dims
        self.lam = float(lam)
        self.beta = float(beta)
        self.prior = np.array(prior, dtype=float).reshape(dims.d, n)
        self._v = self.lam * np.eye(n)
        self._cross = np.zeros((dims.d, n))
        # samples absorbed into v_inv/logdet but not yet folded into v/cross_term
        self._pending_z: list[np.ndarray] = []
        self._pending_x: list[np.ndarray] = []
        self.v_inv = np.eye(n) / self.lam
        self.logdet = n * np.log(self.lam)
        self.logdet_init = self.logdet
        self.anchor_logdet = self.logdet
        self.step = 1
        self.epoch_start = 1
        self.v_anchor = self._v.copy()
        self.a_hat = self.prior[:, : dims.d].copy()
        self.b_hat = self.prior[:, dims.d :].copy()
        self._since_refresh = 0
        self.samples = 0

    def _fold(self) -> None:
        if self._pending_z:
            zs = np.array(self._pending_z)
            xs = np.array(self._pending_x)
            self._v += zs.T @ zs / self.beta
            self._cross += xs.T @ zs
            self._pending_z.clear()
            self._pending_x.clear()

    @property
    def v(self) -> np.ndarray:
        """``V_t`` (n x n)."""
        self._fold()
        return self._v

    @v.setter
    def v(self, value) -> None:
        self._fold()
        self._v = value

    @property
    def cross_term(self) -> np.ndarray:
        """``sum_s x_{s+1} z_s'`` (d x n)."""
        self._fold()
        return self._cross

    # convenience views
    @property
    def lambda_(self) -> float:
        return self.lam

    @property
    def theta_hat(self) -> np.ndarray:
        return np.hstack([self.a_hat, self.b_hat])

    @property
    def v_det(self) -> float:
        return float(np.exp(self.logdet))

    @property
    def v_det_anchor(self) -> float:
        return float(np.exp(self.anchor_logdet))

    def refresh(self) -> None:
        """Recompute ``V^{-1}`` and ``log det V`` from ``V`` by Cholesky."""
        self.v = sym(self.v)
        c = sla.cho_factor(self.v, lower=True)
        self.v_inv = sym(sla.cho_solve(c, np.eye(self.dims.n)))
        self.logdet = float(2.0 * np.sum(np.log(np.diag(c[0]))))
        self._since_refresh = 0

    def copy(self) -> "EstimatorState":
        self._fold()
        out = EstimatorState.__new__(EstimatorState)
        for key, val in self.__dict__.items():
            if isinstance(val, list):
                val = list(val)
            out.__dict__[key] = val.copy() if isinstance(val, np.ndarray) else val
        return out


@dataclass(frozen=True)
class ErrorDiagnostic:
    delta: np.ndarray
    weighted_error: float
    bound: float = float("nan")
    bound_scaled_det: float = float("nan")


def estimator_init(lam: float, beta: float, prior, dims: Dims, theory: bool = False) -> EstimatorState:
    """``V_1 = lambda I``, estimate = prior.  ``theory`` enforces ``lambda, beta >= 1``."""
    for name, val in (("lambda", lam), ("beta", beta)):
        if not (np.isfinite(val) and val > 0):
            raise ContractViolation(f"{name} must be positive, got {val}")
        if theory and val < 1:
            raise ContractViolation(f"{name} must be >= 1 with theory constants, got {val}")
    prior = np.atleast_2d(np.asarray(prior, dtype=float))
    if prior.shape != (dims.d, dims.n):
        raise ContractViolation(f"prior must be {dims.d}x{dims.n}, got {prior.shape}")
    return EstimatorState(lam, beta, prior, dims)


def estimator_update(state: EstimatorState, z, x_next) -> EstimatorState:
    """Absorb ``(z_t, x_{t+1})``: ``V += z z' / beta`` with a rank-one update of
    ``V^{-1}`` and ``log det V`` (``det(V + zz'/beta) = det V (1 + z'V^{-1}z / beta)``)."""
    z = np.asarray(z, dtype=float).reshape(state.dims.n)
    x_next = np.asarray(x_next, dtype=float).reshape(state.dims.d)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x_next))):
        raise ContractViolation("non-finite sample")
    if not np.any(z):
        state.step += 1
        return state
    absorb(state, z, x_next)
    return state


def absorb(state: EstimatorState, z: np.ndarray, x_next: np.ndarray) -> float:
    """Unchecked update used by the control loop; returns ``z' V_t^{-1} z``
    for the matrix before the update.  ``V`` and the cross term are folded
    in lazily (on access)."""
    vz = state.v_inv @ z
    quad = float(z @ vz)
    beta = state.beta
    state.v_inv -= vz[:, None] * (vz / (beta + quad))
    state.logdet += math.log1p(quad / beta)
    state._pending_z.append(z)
    state._pending_x.append(x_next)
    state.step += 1
    state.samples += 1
    state._since_refresh += 1
    if state._since_refresh >= REFRESH_EVERY:
        state.refresh()
    return quad


def least_squares(state: EstimatorState):
    """Closed-form ridge estimate ``(A_t, B_t)`` via a Cholesky solve of ``V_t``.

    Without data the prior is returned unchanged (no rounding)."""
    d = state.dims.d
    if state.samples == 0:
        return state.prior[:, :d].copy(), state.prior[:, d:].copy()
    rhs = state.lam * state.prior + state.cross_term / state.beta
    c = sla.cho_factor(sym(state.v), lower=True)
    theta = sla.cho_solve(c, rhs.T).T
    return theta[:, :d], theta[:, d:]


def epoch_trigger(state: EstimatorState) -> bool:
    """First step, or ``det V_t > 2 det V_tau`` (strict)."""
    return state.step == 1 or (state.logdet - state.anchor_logdet) > LOG2


def start_epoch(state: EstimatorState) -> EstimatorState:
    """Re-estimate and move the anchor to the current ``V_t``."""
    state.refresh()
    state.anchor_logdet = state.logdet
    state.v_anchor = state.v.copy()
    state.epoch_start = state.step
    state.a_hat, state.b_hat = least_squares(state)
    return state


def concentration_bound(state: EstimatorState, sigma2: float, delta: float, prior_error_sq: float):
    """High-probability bound on ``trace(Delta V Delta')``.

    Returns ``(with det V_1, with det(beta V_1))`` where the first is
    ``(4 sigma^2 d / beta) log((d/delta) det V_t / det V_1) + 2 lambda ||Delta_0||_F^2``
    and the second replaces ``det V_1`` by ``det(beta V_1)``.
    """
    d, n = state.dims.d, state.dims.n
    log_ratio = state.logdet - state.logdet_init
    reg = 2.0 * state.lam * prior_error_sq
    scale = 4.0 * sigma2 * d / state.beta
    main = scale * (np.log(d / delta) + log_ratio) + reg
    scaled = scale * max(0.0, np.log(d / delta) + log_ratio - n * np.log(state.beta)) + reg
    return float(main), float(scaled)


def weighted_error(state: EstimatorState, truth: LqrInstance, delta: float = 0.1) -> ErrorDiagnostic:
    """``Delta = (A_t B_t) - (A* B*)`` and ``trace(Delta V_t Delta')`` against the
    concentration bound (noise scale from the largest eigenvalue of ``W``)."""
    a_hat, b_hat = least_squares(state)
    delta_mat = np.hstack([a_hat, b_hat]) - truth.theta
    err = float(np.trace(delta_mat @ state.v @ delta_mat.T))
    prior_err = float(np.sum((state.prior - truth.theta) ** 2))
    main, scaled = concentration_bound(state, max_eig(truth.w), delta, prior_err)
    return ErrorDiagnostic(delta_mat, max(err, 0.0), main, scaled)


def epoch_limit(n: int, t_horizon: int) -> float:
    """``2 n log T / log 2``."""
    return 2.0 * n * np.log(t_horizon) / LOG2


def epoch_count_bound(state: EstimatorState, t_horizon: int, norm_condition: bool = True) -> int:
    """``floor(log2(det V_t / det V_1))``, the most doublings seen so far.

    When ``norm_condition`` (``sum ||z_s||^2 <= 2 beta T``) held and
    ``lambda >= 1``, the value must not exceed :func:`epoch_limit`;
    BoundViolation is raised otherwise.
    """
    count = int(np.floor((state.logdet - state.logdet_init) / LOG2 + 1e-12))
    count = max(count, 0)
    if norm_condition and state.lam >= 1 and count > epoch_limit(state.dims.n, t_horizon):
        raise BoundViolation(f"{count} doublings exceed 2n log T / log 2 = {epoch_limit(state.dims.n, t_horizon):.3f}")
    return count


__all__ = [
    "EstimatorState",
    "ErrorDiagnostic",
    "BoundViolation",
    "estimator_init",
    "estimator_update",
    "absorb",
    "least_squares",
    "epoch_trigger",
    "start_epoch",
    "concentration_bound",
    "weighted_error",
    "epoch_limit",
    "epoch_count_bound",
]
