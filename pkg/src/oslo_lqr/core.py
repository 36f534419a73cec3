"""Domain types, LQR simulation, regret accounting and shared linear algebra.

Sign convention used across the package: a policy is a gain ``K`` with
``u = K x`` and the closed loop is ``A + B K``.  Optimal gains therefore
carry the minus sign (``K* = -(R + B'PB)^{-1} B'PA``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

# Numerical rank threshold relative to the largest singular value.
RANK_RTOL = 1e-9
# Relative slack when validating bound parameters against an instance.
BOUND_RTOL = 1e-9


class ContractViolation(ValueError):
    """Raised when an argument breaks a documented precondition."""


class RolloutAborted(RuntimeError):
    """A simulation produced a non-finite action or state."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


# --------------------------------------------------------------------------
# linear algebra helpers


def sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def opnorm(m: np.ndarray) -> float:
    """Spectral norm (largest singular value); 0 for empty matrices."""
    m = np.atleast_2d(m)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def nuclear_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(np.atleast_2d(m), "nuc"))


def min_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sym(np.atleast_2d(m)))[0])


def max_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sym(np.atleast_2d(m)))[-1])


def psd_sqrt(m: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetric square root via eigendecomposition, eigenvalues floored."""
    vals, vecs = np.linalg.eigh(sym(m))
    vals = np.maximum(vals, floor)
    return (vecs * np.sqrt(vals)) @ vecs.T


def psd_inv_sqrt(m: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sym(m))
    vals = np.maximum(vals, floor)
    return (vecs / np.sqrt(vals)) @ vecs.T


def frob_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Entry-wise dot product ``A . B = trace(A'B)``."""
    return float(np.sum(a * b))


def spectral_radius(m: np.ndarray) -> float:
    """Largest absolute eigenvalue, from a full (LAPACK) eigendecomposition.

    Accurate to roughly machine precision times the departure from
    normality of ``m``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolation(f"spectral_radius needs a square matrix, got shape {m.shape}")
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be a matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} has non-finite entries")
    return arr


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Dims:
    d: int
    k: int

    def __post_init__(self):
        if int(self.d) < 1 or int(self.k) < 1:
            raise ContractViolation(f"dimensions must be positive, got d={self.d}, k={self.k}")

    @property
    def n(self) -> int:
        return self.d + self.k


@dataclass(frozen=True)
class BoundParams:
    """Known constants (alpha0, alpha1, sigma, vartheta, nu) bounding the system."""

    alpha0: float
    alpha1: float
    sigma: float
    vartheta: float
    nu: float

    def __post_init__(self):
        for name in ("alpha0", "alpha1", "sigma", "vartheta", "nu"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ContractViolation(f"{name} must be positive and finite, got {val}")
        if self.alpha0 > self.alpha1:
            raise ContractViolation("alpha0 must not exceed alpha1")
        # J* >= alpha0 sigma^2 for every admissible system, so nu below that is vacuous.
        if self.nu < self.alpha0 * self.sigma**2 * (1 - BOUND_RTOL):
            raise ContractViolation(
                f"nu={self.nu} is below alpha0*sigma^2={self.alpha0 * self.sigma**2}"
            )

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("alpha0", "alpha1", "sigma", "vartheta", "nu")}


@dataclass(frozen=True)
class Policy:
    """Linear state feedback ``u = K x``."""

    k_mat: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        k = _as_matrix(self.k_mat, "k_mat")
        object.__setattr__(self, "k_mat", k)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.k_mat @ x


@dataclass(frozen=True, eq=False)
class LqrInstance:
    """Hidden linear system ``x' = A x + B u + w`` with quadratic costs.

    Shapes and symmetry/definiteness of ``q``, ``r``, ``w`` are enforced on
    construction.  Controllability and the bound assumptions are *not*
    enforced here (uncontrollable systems are legitimate inputs for the
    Riccati error paths); use :meth:`assumption_violations`.
    """

    a_star: np.ndarray
    b_star: np.ndarray
    q: np.ndarray
    r: np.ndarray
    w: np.ndarray
    bounds: BoundParams | None = None

    def __post_init__(self):
        a = _as_matrix(self.a_star, "a_star")
        b = _as_matrix(self.b_star, "b_star")
        q = _as_matrix(self.q, "q")
        r = _as_matrix(self.r, "r")
        w = _as_matrix(self.w, "w")
        d, k = b.shape
        if a.shape != (d, d):
            raise ContractViolation(f"a_star must be {d}x{d}, got {a.shape}")
        if q.shape != (d, d) or w.shape != (d, d):
            raise ContractViolation("q and w must be d x d")
        if r.shape != (k, k):
            raise ContractViolation(f"r must be {k}x{k}, got {r.shape}")
        for name, m in (("q", q), ("r", r), ("w", w)):
            if not np.allclose(m, m.T, atol=1e-12, rtol=0):
                raise ContractViolation(f"{name} must be symmetric")
            if min_eig(m) <= 0:
                raise ContractViolation(f"{name} must be positive definite")
        for name, m in (("a_star", a), ("b_star", b), ("q", sym(q)), ("r", sym(r)), ("w", sym(w))):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def dims(self) -> Dims:
        return Dims(*self.b_star.shape)

    @cached_property
    def theta(self) -> np.ndarray:
        """Augmented ``(A B)``, shape d x n."""
        th = np.hstack([self.a_star, self.b_star])
        th.setflags(write=False)
        return th

    @cached_property
    def cost_block(self) -> np.ndarray:
        return block_diag2(self.q, self.r)

    @cached_property
    def noise_factor(self) -> np.ndarray:
        """Symmetric square root of ``w`` (computed once)."""
        f = psd_sqrt(self.w, floor=0.0)
        f.setflags(write=False)
        return f

    @property
    def is_spherical(self) -> bool:
        s2 = self.w[0, 0]
        return bool(np.allclose(self.w, s2 * np.eye(self.dims.d), rtol=1e-12, atol=1e-14))

    def closed_loop(self, k_mat: np.ndarray) -> np.ndarray:
        return self.a_star + self.b_star @ np.atleast_2d(k_mat)

    def assumption_violations(self) -> list[str]:
        """List every violated standing assumption (empty when all hold)."""
        out = []
        if not check_controllable(self):
            out.append("(A, B) is not controllable")
        bp = self.bounds
        if bp is None:
            return out
        slack = 1 + BOUND_RTOL
        for name, m in (("q", self.q), ("r", self.r)):
            lo, hi = min_eig(m), max_eig(m)
            if lo * slack < bp.alpha0:
                out.append(f"min eig of {name} ({lo:.6g}) below alpha0={bp.alpha0}")
            if hi > bp.alpha1 * slack:
                out.append(f"max eig of {name} ({hi:.6g}) above alpha1={bp.alpha1}")
        norm = opnorm(self.theta)
        if norm > bp.vartheta * slack:
            out.append(f"||(A B)|| = {norm:.6g} exceeds vartheta={bp.vartheta}")
        if not self.is_spherical:
            out.append("W is not spherical (theory constants assume W = sigma^2 I)")
        elif not np.isclose(self.w[0, 0], bp.sigma**2, rtol=1e-9):
            out.append(f"W = {self.w[0, 0]:.6g} I differs from sigma^2 = {bp.sigma**2:.6g}")
        return out


def block_diag2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d, k = a.shape[0], b.shape[0]
    out = np.zeros((d + k, d + k))
    out[:d, :d] = a
    out[d:, d:] = b
    return out


def make_instance(a, b, q=None, r=None, w=None, bounds: BoundParams | None = None) -> LqrInstance:
    """Build an instance from scalars or arrays; ``q``, ``r``, ``w`` default to identity."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    d, k = b.shape
    q = np.eye(d) if q is None else q
    r = np.eye(k) if r is None else r
    w = np.eye(d) if w is None else w
    return LqrInstance(a, b, q, r, w, bounds)


@dataclass(eq=False)
class Trajectory:
    """States ``x_1..x_{T+1}``, actions and noises ``t=1..T`` and step costs."""

    states: np.ndarray
    actions: np.ndarray
    noises: np.ndarray
    costs: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.costs)

    @property
    def joint(self) -> np.ndarray:
        """``z_t = (x_t; u_t)`` stacked row-wise, shape (T, n)."""
        return np.hstack([self.states[:-1], self.actions])

    def replay_states(self, instance: LqrInstance) -> np.ndarray:
        """Re-apply the dynamics to the stored actions and noises."""
        xs = np.empty_like(self.states)
        xs[0] = self.states[0]
        a, b = instance.a_star, instance.b_star
        for t in range(self.horizon):
            xs[t + 1] = a @ xs[t] + b @ self.actions[t] + self.noises[t]
        return xs


# --------------------------------------------------------------------------
# randomness


class Rng:
    """Seeded counter-based generator (Philox) with named child streams.

    Gaussian draws use numpy's ziggurat transform of the Philox stream, so a
    given seed yields the same sequence on every platform numpy supports.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed) % 2**64
        self._key = _key
        ss = np.random.SeedSequence([self.seed, *_key])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, label: int | str) -> "Rng":
        """Independent stream derived from ``(seed, label)``."""
        if isinstance(label, str):
            label = int.from_bytes(label.encode()[:8].ljust(8, b"\0"), "little")
        return Rng(self.seed, self._key + (int(label),))

    @property
    def counter(self) -> int:
        return int(self._gen.bit_generator.state["state"]["counter"][0])

    def standard_normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def gaussian(self, factor: np.ndarray, size: int | None = None) -> np.ndarray:
        """Zero-mean Gaussian with covariance ``factor @ factor.T``."""
        dim = factor.shape[1]
        if size is None:
            return factor @ self._gen.standard_normal(dim)
        return self._gen.standard_normal((size, dim)) @ factor.T


# --------------------------------------------------------------------------
# simulation


def _check_vec(v, dim: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (dim,):
        raise ContractViolation(f"{name} must have length {dim}, got {v.shape[0]}")
    return v


def step(instance: LqrInstance, x, u, rng: Rng):
    """One transition; returns ``(x_next, cost, w)``."""
    d, k = instance.dims.d, instance.dims.k
    x = _check_vec(x, d, "x")
    u = _check_vec(u, k, "u")
    w = rng.gaussian(instance.noise_factor)
    cost = float(x @ instance.q @ x + u @ instance.r @ u)
    x_next = instance.a_star @ x + instance.b_star @ u + w
    return x_next, cost, w


def stage_costs(instance: LqrInstance, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
    return np.einsum("ti,ij,tj->t", xs, instance.q, xs) + np.einsum("ti,ij,tj->t", us, instance.r, us)


Controller = Callable[[int, np.ndarray], np.ndarray]


def rollout(instance: LqrInstance, controller: Controller, horizon: int, x1, rng: Rng) -> Trajectory:
    """Simulate ``horizon`` steps; ``controller(t, x_t)`` returns ``u_t`` (t is 1-based).

    All noise vectors are drawn up front from ``rng``.
    """
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    d, k = instance.dims.d, instance.dims.k
    x = _check_vec(x1, d, "x1")
    noises = rng.gaussian(instance.noise_factor, size=horizon)
    states = np.empty((horizon + 1, d))
    actions = np.empty((horizon, k))
    states[0] = x
    a, b = instance.a_star, instance.b_star
    for t in range(horizon):
        u = np.asarray(controller(t + 1, x), dtype=float).reshape(k)
        if not np.all(np.isfinite(u)):
            raise RolloutAborted("controller returned a non-finite action", t + 1)
        actions[t] = u
        x = a @ x + b @ u + noises[t]
        if not np.all(np.isfinite(x)):
            raise RolloutAborted("state became non-finite", t + 1)
        states[t + 1] = x
    costs = stage_costs(instance, states[:-1], actions)
    return Trajectory(states, actions, noises, costs)


def linear_rollout(instance: LqrInstance, k_mat: np.ndarray, horizon: int, x1, rng: Rng) -> Trajectory:
    """Fast path for a fixed gain; consumes the rng exactly like :func:`rollout`."""
    k_mat = np.atleast_2d(k_mat)
    return rollout(instance, lambda t, x: k_mat @ x, horizon, x1, rng)


def regret_series(traj: Trajectory, j_star: float) -> np.ndarray:
    """Running sum of ``c_t - J*``."""
    if j_star < 0:
        raise ContractViolation("j_star must be nonnegative")
    return np.cumsum(np.asarray(traj.costs) - j_star)


# --------------------------------------------------------------------------
# environment with hidden dynamics


class LqrEnvironment:
    """Interactive wrapper that hides ``A*``, ``B*`` from learners.

    Learners see the current state, the known cost matrices, the noise
    covariance and the bound parameters.  The hidden instance is reachable
    only through :meth:`reveal` (evaluation code) and the recorded
    trajectory.
    """

    _BLOCK = 4096

    def __init__(self, instance: LqrInstance, rng: Rng, x1=None):
        d = instance.dims.d
        self.__instance = instance
        self._rng = rng
        self.x1 = np.zeros(d) if x1 is None else _check_vec(x1, d, "x1").copy()
        self.x1_flagged = bool(np.any(self.x1 != 0))
        self.dims = instance.dims
        self.q = instance.q
        self.r = instance.r
        self.w = instance.w
        self.bounds = instance.bounds
        self._x = self.x1.copy()
        self._noise_buf = np.empty((0, d))
        self._noise_pos = 0
        self._states = [self._x.copy()]
        self._actions: list[np.ndarray] = []
        self._noises: list[np.ndarray] = []

    @property
    def state(self) -> np.ndarray:
        return self._x.copy()

    @property
    def t(self) -> int:
        """1-based index of the current state."""
        return len(self._actions) + 1

    def _next_noise(self) -> np.ndarray:
        if self._noise_pos == len(self._noise_buf):
            self._noise_buf = self._rng.gaussian(self.__instance.noise_factor, size=self._BLOCK)
            self._noise_pos = 0
        w = self._noise_buf[self._noise_pos]
        self._noise_pos += 1
        return w

    def play(self, u, check: bool = True) -> np.ndarray:
        """Apply ``u``, return the next state (a read-only array).

        With ``check`` off the caller takes over detecting non-finite values.
        """
        inst = self.__instance
        u = np.array(u, dtype=float).reshape(self.dims.k)
        w = self._next_noise()
        x_next = inst.a_star @ self._x + inst.b_star @ u + w
        if check and not math.isfinite(float(x_next.sum() + u.sum())):
            raise RolloutAborted("non-finite action or state", self.t)
        x_next.setflags(write=False)
        self._actions.append(u)
        self._noises.append(w)
        self._states.append(x_next)
        self._x = x_next
        return x_next

    def trajectory(self, start: int = 0) -> Trajectory:
        """Steps played so far, skipping the first ``start`` of them."""
        states = np.array(self._states[start:])
        actions = np.array(self._actions[start:]).reshape(-1, self.dims.k)
        noises = np.array(self._noises[start:]).reshape(-1, self.dims.d)
        costs = stage_costs(self.__instance, states[:-1], actions)
        return Trajectory(states, actions, noises, costs)

    def reveal(self) -> LqrInstance:
        """Ground truth, for evaluation code only."""
        return self.__instance


# --------------------------------------------------------------------------
# structural checks and instance generation


def controllability_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a.shape[0]
    blocks = [b]
    for _ in range(d - 1):
        blocks.append(a @ blocks[-1])
    return np.hstack(blocks)


def check_controllable(instance: LqrInstance) -> bool:
    """Rank test on ``(B AB ... A^{d-1}B)``; singular values below
    ``RANK_RTOL`` times the largest one count as zero."""
    sv = np.linalg.svd(controllability_matrix(instance.a_star, instance.b_star), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return False
    return int(np.sum(sv > RANK_RTOL * sv[0])) == instance.dims.d


def _random_spd(dim: int, lo: float, hi: float, rng: Rng) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = rng.uniform(lo, hi, size=dim)
    return sym((q * eig) @ q.T)


def random_instance(
    dims: Dims,
    bounds: BoundParams,
    rng: Rng,
    stable: bool = True,
    max_tries: int = 100,
) -> LqrInstance:
    """Random instance satisfying every structural invariant.

    ``Q`` and ``R`` have eigenvalues uniform in ``[alpha0, alpha1]``,
    ``W = sigma^2 I`` and ``(A B)`` is rescaled to operator norm at most
    ``0.95 * vartheta``.  With ``stable`` set, ``A`` is first rescaled to a
    spectral radius uniform in ``[0.2, 0.9]``.  Draws are rejected until the
    pair is controllable; after ``max_tries`` a RuntimeError is raised.
    The ``nu`` in ``bounds`` is copied as given; callers that need
    ``J* <= nu`` should recalibrate it (see ``riccati.calibrated_bounds``).
    """
    d, k = dims.d, dims.k
    for _ in range(max_tries):
        a = rng.standard_normal((d, d))
        b = rng.standard_normal((d, k))
        if stable:
            rho = spectral_radius(a)
            if rho > 0:
                a = a * (rng.uniform(0.2, 0.9) / rho)
        norm = opnorm(np.hstack([a, b]))
        cap = 0.95 * bounds.vartheta
        if norm > cap:
            a, b = a * (cap / norm), b * (cap / norm)
        q = _random_spd(d, bounds.alpha0, bounds.alpha1, rng)
        r = _random_spd(k, bounds.alpha0, bounds.alpha1, rng)
        inst = LqrInstance(a, b, q, r, bounds.sigma**2 * np.eye(d), bounds)
        if check_controllable(inst):
            return inst
    raise RuntimeError(f"no controllable instance after {max_tries} draws")
