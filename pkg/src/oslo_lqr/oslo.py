"""Optimistic adaptive LQR control loop and its evaluation-time instrumentation.

Per step ``t``: if ``t == 1`` or ``det V_t > 2 det V_tau`` a new epoch starts,
``(A_t B_t)`` is re-estimated, the relaxed SDP is solved with ``V_tau = V_t``
and ``K_t = Sigma_ux Sigma_xx^{-1}``; otherwise ``K_t = K_{t-1}``.  The
learner plays ``u_t = K_t x_t`` and absorbs ``(z_t, x_{t+1})``.

Learners only touch the environment through ``state``, ``play`` and the
known quantities (``q``, ``r``, ``w``, ``bounds``, ``dims``).  Functions
taking ``truth`` are evaluation code.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from .core import (
    BoundParams,
    ContractViolation,
    Dims,
    LqrEnvironment,
    LqrInstance,
    Rng,
    RolloutAborted,
    Trajectory,
    block_diag2,
    frob_inner,
    nuclear_norm,
    opnorm,
)
from .estimator import (
    EstimatorState,
    epoch_limit,
    absorb,
    epoch_trigger,
    estimator_init,
    start_epoch,
)
from .riccati import (
    ConvergenceError,
    NoSolutionError,
    RiccatiSolution,
    optimal_gain,
    solve_dare_matrices,
    theory_stability_constants,
)
from .sdp import (
    ExtractionError,
    build_relaxed_sdp,
    extract_policy,
    fixed_point_residual,
    relaxation_admissible,
    solve_sdp,
)

log = logging.getLogger(__name__)

ConstantsMode = Literal["theory", "practical"]


# --------------------------------------------------------------------------
# parameters


def _require_spherical(w) -> None:
    w = np.atleast_2d(w)
    if not np.allclose(w, w[0, 0] * np.eye(w.shape[0]), rtol=1e-12, atol=1e-14):
        raise ContractViolation("theory constants require a spherical noise covariance W = sigma^2 I")


def theory_params(bounds: BoundParams, dims: Dims, t_horizon: int, delta: float, w=None):
    """``(mu, lambda, beta, epsilon_budget)`` from the analysis formulas.

    ``mu = 5 vartheta sqrt(T)``,
    ``lambda = 2^11 nu^5 vartheta sqrt(T) / (alpha0^5 sigma^10)``,
    ``beta = 2^18 nu^4 n^2 log(T/delta) / (alpha0^4 sigma^6)`` and
    ``epsilon = 1 / (4 lambda)``.  Passing a non-spherical ``w`` is refused.
    """
    if not 0 < delta < 1:
        raise ContractViolation("delta must lie in (0, 1)")
    if t_horizon < 2:
        raise ContractViolation("T must be at least 2")
    if w is not None:
        _require_spherical(w)
    a0, s, th, nu = bounds.alpha0, bounds.sigma, bounds.vartheta, bounds.nu
    root_t = math.sqrt(t_horizon)
    mu = 5.0 * th * root_t
    lam = 2.0**11 * nu**5 * th * root_t / (a0**5 * s**10)
    beta = 2.0**18 * nu**4 * dims.n**2 * math.log(t_horizon / delta) / (a0**4 * s**6)
    return mu, lam, beta, 1.0 / (4.0 * lam)


def practical_params(
    bounds: BoundParams,
    dims: Dims,
    t_horizon: int,
    delta: float,
    c_mu: float = 1.0,
    c_lambda: float = 1.0,
    c_beta: float = 1.0,
):
    """``(mu, lambda, beta, epsilon_budget)`` with ``mu = c_mu vartheta sqrt(T)``,
    ``lambda = c_lambda sqrt(T)``, ``beta = c_beta n log(T/delta)``."""
    if not 0 < delta < 1:
        raise ContractViolation("delta must lie in (0, 1)")
    if t_horizon < 2:
        raise ContractViolation("T must be at least 2")
    root_t = math.sqrt(t_horizon)
    mu = c_mu * bounds.vartheta * root_t
    lam = c_lambda * root_t
    beta = c_beta * dims.n * math.log(t_horizon / delta)
    return mu, lam, beta, 1.0 / (4.0 * lam)


@dataclass(frozen=True, eq=False)
class OsloConfig:
    horizon: int
    delta: float
    mu: float
    lam: float
    beta: float
    constants_mode: ConstantsMode
    prior: np.ndarray
    prior_error_budget: float
    bounds: BoundParams
    sdp_tol: float = 1e-8
    sdp_max_iters: int = 200
    pinv_threshold: float | None = None
    sdp_fallback: bool = False
    overrides: tuple = ()

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")
        if not 0 < self.delta < 1:
            raise ContractViolation("delta must lie in (0, 1)")
        for name in ("mu", "lam", "beta"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ContractViolation(f"{name} must be positive, got {val}")
        if self.constants_mode not in ("theory", "practical"):
            raise ContractViolation(f"unknown constants mode {self.constants_mode!r}")
        prior = np.atleast_2d(np.asarray(self.prior, dtype=float))
        prior.setflags(write=False)
        object.__setattr__(self, "prior", prior)

    @classmethod
    def theory(cls, bounds: BoundParams, dims: Dims, horizon: int, delta: float = 0.1, prior=None, w=None, **solver):
        mu, lam, beta, eps = theory_params(bounds, dims, horizon, delta, w)
        prior = np.zeros((dims.d, dims.n)) if prior is None else prior
        return cls(horizon, delta, mu, lam, beta, "theory", prior, eps, bounds, **solver)

    @classmethod
    def practical(
        cls,
        bounds: BoundParams,
        dims: Dims,
        horizon: int,
        delta: float = 0.1,
        prior=None,
        c_mu: float = 1.0,
        c_lambda: float = 1.0,
        c_beta: float = 1.0,
        mu: float | None = None,
        lam: float | None = None,
        beta: float | None = None,
        **solver,
    ):
        """Scaled-down constants; explicit ``mu``/``lam``/``beta`` override the
        multiplier formulas and are listed in ``overrides``."""
        p_mu, p_lam, p_beta, _ = practical_params(bounds, dims, horizon, delta, c_mu, c_lambda, c_beta)
        overrides = tuple(name for name, val in (("mu", mu), ("lam", lam), ("beta", beta)) if val is not None)
        lam_v = p_lam if lam is None else lam
        prior = np.zeros((dims.d, dims.n)) if prior is None else prior
        return cls(
            horizon,
            delta,
            p_mu if mu is None else mu,
            lam_v,
            p_beta if beta is None else beta,
            "practical",
            prior,
            1.0 / (4.0 * lam_v),
            bounds,
            overrides=overrides,
            **solver,
        )

    def echo(self) -> dict:
        return {
            "constants_mode": self.constants_mode,
            "horizon": int(self.horizon),
            "delta": float(self.delta),
            "mu": float(self.mu),
            "lambda": float(self.lam),
            "beta": float(self.beta),
            "prior_error_budget": float(self.prior_error_budget),
            "overrides": list(self.overrides),
            "sdp_tol": float(self.sdp_tol),
            "sdp_fallback": bool(self.sdp_fallback),
            "bounds": self.bounds.to_dict(),
        }


def theory_advisories(config: OsloConfig) -> list[str]:
    """Horizon conditions used in the analysis (advisory only)."""
    notes = []
    t = config.horizon
    if t < config.lam:
        notes.append(f"T={t} is below lambda={config.lam:.4g}")
    if t < config.bounds.vartheta**-2:
        notes.append("T is below vartheta^-2")
    if config.lam < 1 or config.beta < 1:
        notes.append("lambda and beta should both be at least 1")
    return notes


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True, eq=False)
class EpochRecord:
    start: int
    a_hat: np.ndarray
    b_hat: np.ndarray
    v: np.ndarray
    k_mat: np.ndarray
    sigma: np.ndarray | None = None
    p_dual: np.ndarray | None = None
    value: float = float("nan")
    status: str = "optimal"
    admissible: bool = True
    fixed_point_residual: float = float("nan")
    degenerate: bool = False
    fallback: bool = False


@dataclass(frozen=True, eq=False)
class GoodEventFlags:
    conf_ok: np.ndarray
    norm_ok: np.ndarray
    e_t: np.ndarray
    conf_values: np.ndarray
    norm_limits: np.ndarray

    @property
    def all_good(self) -> bool:
        return bool(self.e_t.size == 0 or self.e_t[-1])

    @property
    def survival_step(self) -> int:
        """Last step ``t`` with ``E_t`` true (0 if it fails at once)."""
        bad = np.flatnonzero(~self.e_t)
        return int(bad[0]) if bad.size else int(self.e_t.size)


@dataclass(frozen=True, eq=False)
class RegretDecomposition:
    """Per-step instrumented terms (each already multiplied by the validity mask).

    ``cross`` is ``w' P (A* + B* K) x`` with unit weight as displayed in the
    analysis; the dominance check uses ``2 * cross``, which is what the
    algebra produces from ``x_{t+1}' P x_{t+1}``.
    """

    telescoping: np.ndarray
    cross: np.ndarray
    noise: np.ndarray
    exploration: np.ndarray
    regret: np.ndarray
    mask: np.ndarray
    quad_sum: float
    quad_limit: float
    telescoping_limit: float
    dominance_gap: float
    slack: float

    @property
    def dominated(self) -> bool:
        return self.dominance_gap <= self.slack

    @property
    def quad_ok(self) -> bool:
        return self.quad_sum <= self.quad_limit

    def totals(self) -> dict:
        return {
            "telescoping": float(self.telescoping.sum()),
            "cross": float(self.cross.sum()),
            "noise": float(self.noise.sum()),
            "exploration": float(self.exploration.sum()),
            "regret": float(self.regret.sum()),
        }


@dataclass(frozen=True, eq=False)
class RunRecord:
    trajectory: Trajectory
    epochs: tuple
    epoch_of_step: np.ndarray
    quad_current: np.ndarray
    quad_anchor: np.ndarray
    config: OsloConfig
    algorithm: str = "oslo"
    seed: int | None = None
    halted: bool = False
    halt_reason: str = ""
    warnings: tuple = ()
    x1_flagged: bool = False
    # filled by evaluate_run
    j_star: float | None = None
    regret: np.ndarray | None = None
    flags: GoodEventFlags | None = None
    decomposition: RegretDecomposition | None = None
    prior_within_budget: bool | None = None

    @property
    def constants_mode(self) -> str:
        return self.config.constants_mode

    @property
    def steps(self) -> int:
        return self.trajectory.horizon

    @property
    def epoch_starts(self) -> list[int]:
        return [e.start for e in self.epochs]

    @property
    def epoch_count(self) -> int:
        return len(self.epochs)


# --------------------------------------------------------------------------
# planners


class PlanningFailure(RuntimeError):
    pass


Planner = Callable[[EstimatorState, OsloConfig, np.ndarray, np.ndarray, np.ndarray], EpochRecord]


def optimistic_planner(state: EstimatorState, config: OsloConfig, q, r, w) -> EpochRecord:
    """Relaxed SDP at the current estimates and ``V_tau``."""
    cost = block_diag2(q, r)
    a_hat, b_hat = state.a_hat.copy(), state.b_hat.copy()
    v = state.v.copy()
    problem = build_relaxed_sdp(a_hat, b_hat, v, config.mu, w, cost)
    sol = solve_sdp(problem, tol=config.sdp_tol, max_iters=config.sdp_max_iters)
    if sol.status != "optimal":
        raise PlanningFailure(f"relaxed SDP returned status {sol.status!r} ({sol.kkt_residuals})")
    try:
        policy = extract_policy(sol, config.pinv_threshold)
    except ExtractionError as exc:
        raise PlanningFailure(str(exc)) from exc
    fp = fixed_point_residual(sol.p_dual, policy, a_hat, b_hat, v, config.mu, cost)
    return EpochRecord(
        start=state.step,
        a_hat=a_hat,
        b_hat=b_hat,
        v=v,
        k_mat=policy.k_mat,
        sigma=sol.sigma,
        p_dual=sol.p_dual,
        value=sol.value,
        status=sol.status,
        admissible=relaxation_admissible(config.mu, config.bounds.vartheta, v),
        fixed_point_residual=fp,
        degenerate=policy.degenerate,
    )


def certainty_equivalent_planner(state: EstimatorState, config: OsloConfig, q, r, w) -> EpochRecord:
    """Riccati solution for the point estimates, no optimism."""
    a_hat, b_hat = state.a_hat.copy(), state.b_hat.copy()
    try:
        p, _, _ = solve_dare_matrices(a_hat, b_hat, q, r, tol=1e-10, max_iter=20_000)
    except (NoSolutionError, ConvergenceError, np.linalg.LinAlgError) as exc:
        raise PlanningFailure(f"Riccati solve on estimates failed: {exc}") from exc
    k = optimal_gain(p, a_hat, b_hat, r)
    return EpochRecord(
        start=state.step,
        a_hat=a_hat,
        b_hat=b_hat,
        v=state.v.copy(),
        k_mat=k,
        p_dual=p,
        value=frob_inner(p, w),
        admissible=relaxation_admissible(config.mu, config.bounds.vartheta, state.v),
    )


# --------------------------------------------------------------------------
# main loop


def _adaptive_loop(env: LqrEnvironment, config: OsloConfig, planner: Planner, algorithm: str, fallback: bool, seed=None) -> RunRecord:
    dims = env.dims
    d, k, n = dims.d, dims.k, dims.n
    if config.prior.shape != (d, n):
        raise ContractViolation(f"prior must be {d}x{n}")
    horizon = config.horizon
    state = estimator_init(config.lam, config.beta, config.prior, dims, theory=config.constants_mode == "theory")
    q, r, w = np.array(env.q), np.array(env.r), np.array(env.w)

    epochs: list[EpochRecord] = []
    epoch_of_step = np.zeros(horizon, dtype=np.int64)
    quad_cur = np.zeros(horizon)
    warnings: list[str] = []
    halted, reason = False, ""
    k_mat = np.zeros((k, d))
    x = env.state
    # steps already played on this environment (e.g. by a warm-up phase)
    offset = env.t - 1

    for t in range(horizon):
        if epoch_trigger(state):
            start_epoch(state)
            try:
                rec = planner(state, config, q, r, w)
            except PlanningFailure as exc:
                if not (fallback and epochs):
                    halted, reason = True, f"step {state.step}: {exc}"
                    log.error("run halted at %s", reason)
                    break
                msg = f"step {state.step}: {exc}; keeping previous policy"
                log.warning(msg)
                warnings.append(msg)
                prev = epochs[-1]
                rec = replace(
                    prev,
                    start=state.step,
                    a_hat=state.a_hat.copy(),
                    b_hat=state.b_hat.copy(),
                    v=state.v.copy(),
                    status="fallback",
                    admissible=False,
                    fallback=True,
                )
            epochs.append(rec)
            k_mat = rec.k_mat
        u = k_mat @ x
        z = np.concatenate((x, u))
        epoch_of_step[t] = len(epochs) - 1
        x_next = env.play(u, check=False)
        quad = absorb(state, z, x_next)
        quad_cur[t] = quad
        if not math.isfinite(quad):
            halted, reason = True, f"non-finite state or action at step {t + 1}"
            break
        x = x_next
    else:
        if horizon and not np.all(np.isfinite(x)):
            halted, reason = True, f"non-finite state after step {horizon}"

    traj = env.trajectory(offset)
    steps = traj.horizon
    epoch_of_step = epoch_of_step[:steps]
    # z' V_tau^{-1} z with the anchor of each step's epoch
    quad_anc = np.zeros(steps)
    zs = traj.joint
    for i, ep in enumerate(epochs):
        idx = np.flatnonzero(epoch_of_step == i)
        if idx.size:
            quad_anc[idx] = np.einsum("ti,ti->t", zs[idx], np.linalg.solve(ep.v, zs[idx].T).T)
    return RunRecord(
        trajectory=traj,
        epochs=tuple(epochs),
        epoch_of_step=epoch_of_step,
        quad_current=quad_cur[:steps],
        quad_anchor=quad_anc,
        config=config,
        algorithm=algorithm,
        seed=seed,
        halted=halted,
        halt_reason=reason,
        warnings=tuple(warnings),
        x1_flagged=env.x1_flagged,
    )


def _as_env(env, x1, rng) -> LqrEnvironment:
    if isinstance(env, LqrInstance):
        return LqrEnvironment(env, rng if rng is not None else Rng(0), x1)
    if x1 is not None:
        raise ContractViolation("x1 is fixed by the environment")
    return env


def run_oslo(env, config: OsloConfig, x1=None, rng: Rng | None = None, seed: int | None = None) -> RunRecord:
    """Run the optimistic algorithm for ``config.horizon`` steps.

    ``env`` is an :class:`LqrEnvironment`; an :class:`LqrInstance` is wrapped
    in one using ``x1`` and ``rng``.  A failed SDP solve halts the run (the
    record carries ``halted`` and ``halt_reason``) unless
    ``config.sdp_fallback`` is set, in which case the previous gain is kept
    and a warning logged.
    """
    env = _as_env(env, x1, rng)
    return _adaptive_loop(env, config, optimistic_planner, "oslo", config.sdp_fallback, seed)


def run_certainty_equivalence(env, config: OsloConfig, x1=None, rng: Rng | None = None, seed: int | None = None) -> RunRecord:
    """Same loop and epochs, but plans with the Riccati solution of the estimates.

    A failed Riccati solve keeps the previous gain (``K = 0`` before the
    first success) and logs a warning.
    """
    env = _as_env(env, x1, rng)
    planner = _with_zero_start(certainty_equivalent_planner)
    return _adaptive_loop(env, config, planner, "certainty_equivalence", True, seed)


def _with_zero_start(planner):
    """Wrap a planner so a failure with no previous epoch falls back to ``K = 0``."""
    seen = {"any": False}

    def wrapped(state, cfg, q, r, w):
        try:
            rec = planner(state, cfg, q, r, w)
            seen["any"] = True
            return rec
        except PlanningFailure:
            if seen["any"]:
                raise
            seen["any"] = True
            d, k = state.dims.d, state.dims.k
            return EpochRecord(
                start=state.step,
                a_hat=state.a_hat.copy(),
                b_hat=state.b_hat.copy(),
                v=state.v.copy(),
                k_mat=np.zeros((k, d)),
                status="fallback",
                admissible=False,
                fallback=True,
            )

    return wrapped


# --------------------------------------------------------------------------
# evaluation


def _step_arrays(record: RunRecord):
    traj = record.trajectory
    t = traj.horizon
    xs = traj.states[:t]
    xn = traj.states[1 : t + 1]
    return xs, xn, traj.actions, traj.noises


def good_event_monitor(record: RunRecord, truth: LqrInstance, bounds: BoundParams | None = None) -> GoodEventFlags:
    """Per-step flags of the good event.

    ``conf_ok[s]``: ``trace(Delta V_s Delta') <= 1`` where ``Delta`` is the
    error of the estimate in use at step ``s`` (fixed within an epoch) and
    ``V_s`` the confidence matrix before absorbing ``z_s``.
    ``norm_ok[s]``: ``||z_s||^2 <= 4 kappa^4 exp(-gamma (s-1)) ||x_1||^2 + beta``
    with ``kappa = sqrt(2 nu / (alpha0 sigma^2))``, ``gamma = 1 / (2 kappa^2)``.
    """
    bounds = bounds or record.config.bounds
    cfg = record.config
    xs, _, us, _ = _step_arrays(record)
    zs = np.hstack([xs, us])
    t = len(zs)
    conf = np.empty(t)
    for i, ep in enumerate(record.epochs):
        idx = np.flatnonzero(record.epoch_of_step == i)
        if idx.size == 0:
            continue
        delta = np.hstack([ep.a_hat, ep.b_hat]) - truth.theta
        base = float(np.trace(delta @ ep.v @ delta.T))
        # V_s = V_tau + beta^{-1} sum_{tau <= r < s} z_r z_r'
        incr = np.sum((zs[idx] @ delta.T) ** 2, axis=1) / cfg.beta
        conf[idx] = base + np.concatenate([[0.0], np.cumsum(incr)[:-1]])
    kappa, gamma = theory_stability_constants(bounds)
    x1sq = float(np.sum(record.trajectory.states[0] ** 2))
    s_idx = np.arange(t)
    limits = 4 * kappa**4 * np.exp(-gamma * s_idx) * x1sq + cfg.beta
    conf_ok = conf <= 1.0
    norm_ok = np.sum(zs**2, axis=1) <= limits
    e_t = np.logical_and.accumulate(conf_ok & norm_ok) if t else np.zeros(0, dtype=bool)
    return GoodEventFlags(conf_ok, norm_ok, e_t, conf, limits)


def good_event_frequency(flag_list) -> tuple[float, float]:
    """Fraction of runs whose good event failed by the end, and its standard error."""
    fails = np.array([not f.all_good for f in flag_list], dtype=float)
    p = float(fails.mean())
    return p, float(np.sqrt(max(p * (1 - p), 0.0) / max(len(fails), 1)))


def regret_decomposition(
    record: RunRecord,
    truth: LqrInstance,
    riccati: RiccatiSolution,
    flags: GoodEventFlags | None = None,
    identity_tol: float | None = None,
) -> RegretDecomposition:
    """Instrument the four-term upper bound on the good-event regret.

    Terms per step ``t`` (``P_t`` the dual of the epoch in force, ``M_t =
    A* + B* K_t``):

    * telescoping ``x_t' P_t x_t - x_{t+1}' P_t x_{t+1}``
    * cross ``w_t' P_t M_t x_t``
    * noise ``w_t' P_t w_t - P_t . W``
    * exploration ``(4 nu mu / sigma^2) z_t' V_t^{-1} z_t``

    The mask keeps steps where the good event holds, the epoch's ``mu`` is
    admissible for its ``V_tau`` and the epoch's fixed-point residual is
    below ``identity_tol`` (default ``10 * sdp_tol * max(1, ||P||)``).  On
    those steps ``r_t <= tel + 2 cross + noise + exploration`` holds
    deterministically; ``dominance_gap`` is the excess of the masked regret
    over the masked bound.
    """
    cfg = record.config
    bounds = cfg.bounds
    flags = flags or good_event_monitor(record, truth, bounds)
    xs, xn, us, ws = _step_arrays(record)
    t = len(xs)
    ep_idx = record.epoch_of_step
    p_stack = np.array([ep.p_dual if ep.p_dual is not None else np.full((truth.dims.d,) * 2, np.nan) for ep in record.epochs])
    k_stack = np.array([ep.k_mat for ep in record.epochs])
    ok_epoch = np.array(
        [
            ep.admissible
            and not ep.fallback
            and np.isfinite(ep.fixed_point_residual)
            and ep.fixed_point_residual
            <= (identity_tol if identity_tol is not None else 10 * cfg.sdp_tol * max(1.0, opnorm(ep.p_dual)))
            for ep in record.epochs
        ],
        dtype=bool,
    )
    if t == 0:
        empty = np.zeros(0)
        return RegretDecomposition(empty, empty, empty, empty, empty, np.zeros(0, bool), 0.0, 0.0, 0.0, 0.0, 0.0)
    ps = p_stack[ep_idx]
    ks = k_stack[ep_idx]
    closed = truth.a_star[None] + np.einsum("ij,tjk->tik", truth.b_star, ks)
    mx = np.einsum("tij,tj->ti", closed, xs)
    tel = np.einsum("ti,tij,tj->t", xs, ps, xs) - np.einsum("ti,tij,tj->t", xn, ps, xn)
    cross = np.einsum("ti,tij,tj->t", ws, ps, mx)
    noise = np.einsum("ti,tij,tj->t", ws, ps, ws) - np.einsum("tij,ij->t", ps, truth.w)
    sigma2 = bounds.sigma**2
    explo = 4 * bounds.nu * cfg.mu / sigma2 * record.quad_current
    costs = record.trajectory.costs
    regret = costs - riccati.j_star
    mask = flags.e_t[:t] & ok_epoch[ep_idx]
    m = mask.astype(float)
    tel, cross, noise, explo, regret = tel * m, cross * m, noise * m, explo * m, regret * m
    bound_sum = float(np.sum(tel + 2 * cross + noise + explo))
    gap = float(np.sum(regret)) - bound_sum
    scale = max(1.0, riccati.j_star, float(np.max(np.abs(costs))) if t else 1.0)
    slack = 1e-6 * t * scale
    n = truth.dims.n
    kappa, _ = theory_stability_constants(bounds)
    x1sq = float(np.sum(record.trajectory.states[0] ** 2))
    horizon = max(cfg.horizon, 2)
    quad_sum = float(np.sum(record.quad_current * m))
    return RegretDecomposition(
        telescoping=tel,
        cross=cross,
        noise=noise,
        exploration=explo,
        regret=regret,
        mask=mask,
        quad_sum=quad_sum,
        quad_limit=4 * cfg.beta * n * math.log(horizon),
        telescoping_limit=4 * bounds.nu / sigma2 * (4 * kappa**4 * x1sq + cfg.beta) * n * math.log(horizon),
        dominance_gap=gap,
        slack=slack,
    )


def evaluate_run(record: RunRecord, truth: LqrInstance, riccati: RiccatiSolution) -> RunRecord:
    """Attach regret, good-event flags and the decomposition to a record."""
    from .core import regret_series

    flags = good_event_monitor(record, truth)
    decomp = regret_decomposition(record, truth, riccati, flags)
    prior_err = float(np.sum((record.config.prior - truth.theta) ** 2))
    return replace(
        record,
        j_star=riccati.j_star,
        regret=regret_series(record.trajectory, riccati.j_star),
        flags=flags,
        decomposition=decomp,
        prior_within_budget=prior_err <= record.config.prior_error_budget * (1 + 1e-12),
    )


def epoch_count_ok(record: RunRecord) -> bool:
    """Epoch count against ``2 n log T / log 2``."""
    n = record.config.prior.shape[1]
    return record.epoch_count <= epoch_limit(n, max(record.config.horizon, 2))


__all__ = [
    "OsloConfig",
    "EpochRecord",
    "GoodEventFlags",
    "RegretDecomposition",
    "RunRecord",
    "PlanningFailure",
    "theory_params",
    "practical_params",
    "theory_advisories",
    "optimistic_planner",
    "certainty_equivalent_planner",
    "run_oslo",
    "run_certainty_equivalence",
    "good_event_monitor",
    "good_event_frequency",
    "regret_decomposition",
    "evaluate_run",
    "epoch_count_ok",
]
