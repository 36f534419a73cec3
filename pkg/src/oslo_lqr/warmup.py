"""Exploration phase with a known stabilizing gain.

For ``T0`` steps from ``x_1 = 0`` the learner plays
``u_t ~ N(K0 x_t, 2 sigma^2 kappa0^2 I)``.  The collected ``z_t = (x_t; u_t)``
give ``V0 = sum_{t <= T0} z_t z_t'`` and the ridge estimate
``(A0 B0) = sum_{t < T0} x_{t+1} z_t' (V0 + sigma^2 vartheta^{-2} I)^{-1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .core import (
    BoundParams,
    ContractViolation,
    Dims,
    LqrEnvironment,
    LqrInstance,
    Policy,
    Rng,
    RolloutAborted,
    Trajectory,
    min_eig,
    sym,
)

# abort when ||x_t||^2 exceeds this multiple of the final-state bound
ABORT_FACTOR = 1e6


@dataclass(frozen=True, eq=False)
class WarmupConfig:
    k0: Policy
    kappa0: float
    gamma0: float
    t0: int
    sigma: float
    vartheta: float | None = None

    def __post_init__(self):
        if not isinstance(self.k0, Policy):
            object.__setattr__(self, "k0", Policy(self.k0))
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ContractViolation("sigma must be positive")
        if self.kappa0 < 1:
            raise ContractViolation("kappa0 must be at least 1")
        if not 0 < self.gamma0 <= 1:
            raise ContractViolation("gamma0 must lie in (0, 1]")
        if int(self.t0) < 1:
            raise ContractViolation("t0 must be at least 1")
        if self.vartheta is not None and not self.vartheta > 0:
            raise ContractViolation("vartheta must be positive")


@dataclass(frozen=True, eq=False)
class WarmupResult:
    v0: np.ndarray
    a0_b0: np.ndarray
    x_final: np.ndarray
    x_next: np.ndarray
    trace_v0: float
    min_eig_v0: float
    v_ridge: np.ndarray
    trajectory: Trajectory
    action_noise: np.ndarray
    est_error_weighted: float = float("nan")

    @property
    def max_state_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.trajectory.states, axis=1)))


def _log_ratio(t0: int, delta: float) -> float:
    return math.log(t0 / delta)


def final_state_bound(cfg: WarmupConfig, dims: Dims, vartheta: float, delta: float) -> float:
    """``150 sigma^2 kappa0^2 / gamma0 (n + k vartheta^2 kappa0^2) log(T0/delta)``."""
    s2, k0, g0 = cfg.sigma**2, cfg.kappa0, cfg.gamma0
    return 150 * s2 * k0**2 / g0 * (dims.n + dims.k * vartheta**2 * k0**2) * _log_ratio(cfg.t0, delta)


def run_warmup(env: LqrEnvironment, config: WarmupConfig, rng: Rng, truth: LqrInstance | None = None, delta: float = 0.1) -> WarmupResult:
    """Play the perturbed policy for ``config.t0`` steps.

    ``rng`` drives the action perturbations (the environment owns the
    process noise).  Raises RolloutAborted if ``||x_t||^2`` exceeds
    ``1e6`` times the final-state bound, which signals an unstable ``K0``.
    When ``truth`` is supplied the weighted estimation error is filled in.
    """
    dims = env.dims
    d, k = dims.d, dims.k
    if np.any(env.state != 0) or env.t != 1:
        raise ContractViolation("warm-up must start from x_1 = 0 on a fresh environment")
    vartheta = config.vartheta
    if vartheta is None:
        if env.bounds is None:
            raise ContractViolation("vartheta missing: set it in the config or the instance bounds")
        vartheta = env.bounds.vartheta
    t0 = int(config.t0)
    k_mat = config.k0.k_mat
    if k_mat.shape != (k, d):
        raise ContractViolation(f"K0 must be {k}x{d}")
    scale = math.sqrt(2.0) * config.sigma * config.kappa0
    eta = scale * rng.standard_normal((t0, k))
    limit = ABORT_FACTOR * final_state_bound(config, dims, vartheta, 0.1)
    x = env.state
    for t in range(t0):
        u = k_mat @ x + eta[t]
        x = env.play(u)
        if float(x @ x) > limit:
            raise RolloutAborted("state norm far beyond the warm-up bound; K0 looks unstable", t + 1)
    traj = env.trajectory()
    zs = traj.joint
    v0 = sym(zs.T @ zs)
    v_ridge = v0 + (config.sigma**2 / vartheta**2) * np.eye(dims.n)
    cross = traj.states[1:t0].T @ zs[: t0 - 1]
    a0_b0 = sla.cho_solve(sla.cho_factor(v_ridge, lower=True), cross.T).T
    err = float("nan")
    if truth is not None:
        delta0 = a0_b0 - truth.theta
        err = float(np.trace(delta0 @ v_ridge @ delta0.T))
    return WarmupResult(
        v0=v0,
        a0_b0=a0_b0,
        x_final=traj.states[t0 - 1].copy(),
        x_next=traj.states[t0].copy(),
        trace_v0=float(np.trace(v0)),
        min_eig_v0=min_eig(v0),
        v_ridge=v_ridge,
        trajectory=traj,
        action_noise=eta,
        est_error_weighted=err,
    )


def warmup_length(bounds: BoundParams, dims: Dims, t_horizon: int, delta: float, constant: float = 1.0) -> int:
    """``c n^2 nu^5 vartheta / (alpha0^5 sigma^10) sqrt(T log^2(T/delta))`` rounded up."""
    if not 0 < delta < 1:
        raise ContractViolation("delta must lie in (0, 1)")
    b = bounds
    val = constant * dims.n**2 * b.nu**5 * b.vartheta / (b.alpha0**5 * b.sigma**10)
    val *= math.sqrt(t_horizon) * math.log(t_horizon / delta)
    # absorb float noise so an exact integer does not round up
    return max(1, int(math.ceil(val * (1 - 1e-12))))


def min_warmup_length(n: int, delta: float) -> int:
    """``400 (n + log(1/delta))``, the sample size the lower bound on ``V0`` uses."""
    return int(math.ceil(400 * (n + math.log(1 / delta))))


@dataclass(frozen=True)
class BoundCheck:
    value: float
    limit: float
    ok: bool


@dataclass(frozen=True)
class WarmupReport:
    checks: dict = field(default_factory=dict)
    precondition_met: bool = True
    notes: tuple = ()

    @property
    def all_ok(self) -> bool:
        return all(c.ok for c in self.checks.values())


def warmup_theorem_check(result: WarmupResult, truth: LqrInstance, config: WarmupConfig, delta: float = 0.1) -> WarmupReport:
    """Evaluate the four high-probability bounds of the warm-up phase.

    ``trace``: ``tr V0 <= T0 (300 sigma^2 kappa0^4 / gamma0^2)(n + k vartheta^2 kappa0^2) log(T0/delta)``;
    ``final_state``: ``||x_{T0}||^2 <= (150 sigma^2 kappa0^2 / gamma0)(n + k vartheta^2 kappa0^2) log(T0/delta)``;
    ``min_eig``: ``V0 >= (T0 sigma^2 / 80) I``;
    ``estimation``: ``tr(Delta0 V Delta0') <= 20 n^2 sigma^2 log(T0/delta)``.
    The sample-size precondition ``T0 >= 400 (n + log(1/delta))`` is
    reported, not enforced.
    """
    dims = truth.dims
    vartheta = config.vartheta if config.vartheta is not None else (truth.bounds.vartheta if truth.bounds else None)
    if vartheta is None:
        raise ContractViolation("vartheta unknown")
    t0 = int(config.t0)
    s2, k0, g0 = config.sigma**2, config.kappa0, config.gamma0
    lg = _log_ratio(t0, delta)
    mix = dims.n + dims.k * vartheta**2 * k0**2
    delta0 = result.a0_b0 - truth.theta
    est = float(np.trace(delta0 @ result.v_ridge @ delta0.T))
    checks = {
        "trace": BoundCheck(result.trace_v0, t0 * 300 * s2 * k0**4 / g0**2 * mix * lg, False),
        "final_state": BoundCheck(float(result.x_final @ result.x_final), final_state_bound(config, dims, vartheta, delta), False),
        "min_eig": BoundCheck(result.min_eig_v0, t0 * s2 / 80, False),
        "estimation": BoundCheck(est, 20 * dims.n**2 * s2 * lg, False),
    }
    checks = {
        name: BoundCheck(c.value, c.limit, c.value >= c.limit if name == "min_eig" else c.value <= c.limit)
        for name, c in checks.items()
    }
    need = min_warmup_length(dims.n, delta)
    notes = () if t0 >= need else (f"precondition unmet: T0={t0} < {need}",)
    return WarmupReport(checks, t0 >= need, notes)


def state_norm_limit(config: WarmupConfig, dims: Dims, vartheta: float, delta: float) -> float:
    """``(4 sigma kappa0 / gamma0) sqrt((d + k vartheta^2 kappa0^2) log(T0/delta))``."""
    k0 = config.kappa0
    return 4 * config.sigma * k0 / config.gamma0 * math.sqrt((dims.d + dims.k * vartheta**2 * k0**2) * _log_ratio(config.t0, delta))


__all__ = [
    "WarmupConfig",
    "WarmupResult",
    "WarmupReport",
    "BoundCheck",
    "run_warmup",
    "warmup_length",
    "min_warmup_length",
    "warmup_theorem_check",
    "final_state_bound",
    "state_norm_limit",
]
