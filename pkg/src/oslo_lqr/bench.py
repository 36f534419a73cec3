"""Multi-seed regret experiments, exponent fitting and CSV/JSON outputs.

An experiment is described by a TOML file::

    [instance]            # explicit matrices ...
    a = [[1.0]]
    b = [[1.0]]
    # q, r, w default to identity
    # ... or a generated instance
    # generator_seed = 5
    # d = 2
    # k = 1
    # stable = true

    [instance.bounds]     # optional; calibrated from the instance when absent
    alpha0 = 0.5
    alpha1 = 2.0
    sigma = 1.0
    vartheta = 1.5
    nu = 1.0

    [experiment]
    algorithms = ["oslo", "fixed_k0"]
    horizons = [1024, 2048, 4096]
    seeds = [0, 1, 2]
    delta = 0.1
    regret = "paired"     # or "expected"
    prior = "perturbed"   # "truth", "zero" or "perturbed"
    prior_scale = 1.0     # squared prior error as a fraction of the budget
    k0_scale = 0.5        # K0 = k0_scale * K*, unless k0 is given
    record_timing = false
    workers = 1

    [constants]
    mode = "practical"    # or "theory"
    c_mu = 1.0
    c_lambda = 1.0
    c_beta = 1.0
    # mu, lambda, beta: explicit overrides

    [solver]
    tol = 1e-8
    max_iters = 200
    fallback = false

    [warmup]
    # t0 = 500            # or t0_constant for the length formula
    # kappa0, gamma0 default to the certificate of K0

    [output]
    csv = "results.csv"
    json = "results.json"

Unknown sections or keys are rejected.  ``regret = "paired"`` reports
cumulative cost minus the cost of the optimal gain driven by the same
noise sequence (common random numbers), an unbiased estimate of the
expected regret with far lower variance than ``cost - T J*``.
"""

from __future__ import annotations

import csv
import io
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .core import (
    BoundParams,
    ContractViolation,
    Dims,
    LqrEnvironment,
    LqrInstance,
    Policy,
    Rng,
    linear_rollout,
    make_instance,
    random_instance,
)
from .oslo import (
    OsloConfig,
    RunRecord,
    evaluate_run,
    good_event_monitor,
    run_certainty_equivalence,
    run_oslo,
)
from .riccati import calibrated_bounds, solve_dare, strong_stability_certificate
from .serialize import instance_to_json, to_jsonable
from .warmup import WarmupConfig, run_warmup, warmup_length

ALGORITHMS = ("oslo", "oslo_with_warmup", "optimal", "fixed_k0", "certainty_equivalence")
CSV_COLUMNS = ("algorithm", "T", "seed", "checkpoint_t", "cum_regret", "epoch_count", "good_event_ok", "wall_ms")
THREADS_ENV = "OSLO_LQR_THREADS"


class ConfigError(ValueError):
    """Malformed experiment configuration."""


# --------------------------------------------------------------------------
# configuration

_SCHEMA = {
    "instance": {"a", "b", "q", "r", "w", "generator_seed", "d", "k", "stable", "bounds"},
    "experiment": {
        "algorithms",
        "algorithm",
        "horizons",
        "seeds",
        "delta",
        "regret",
        "prior",
        "prior_scale",
        "k0",
        "k0_scale",
        "x1",
        "record_timing",
        "workers",
    },
    "constants": {"mode", "c_mu", "c_lambda", "c_beta", "mu", "lambda", "beta"},
    "solver": {"tol", "max_iters", "pinv_threshold", "fallback"},
    "warmup": {"t0", "t0_constant", "kappa0", "gamma0"},
    "output": {"csv", "json"},
    "simulate": {"horizon", "policy", "k"},
}
_BOUND_KEYS = {"alpha0", "alpha1", "sigma", "vartheta", "nu"}
_GEN_BOUNDS = BoundParams(alpha0=0.5, alpha1=2.0, sigma=1.0, vartheta=1.5, nu=1.0)


def _check_keys(section: str, table: dict, allowed: set) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(extra)}")


def _matrix(value, name) -> np.ndarray:
    try:
        m = np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is not a numeric matrix") from exc
    if m.ndim != 2:
        raise ConfigError(f"{name} must be two-dimensional")
    return m


@dataclass(frozen=True)
class InstanceSpec:
    """Explicit matrices or a generator recipe; ``bounds`` None means calibrate."""

    a: tuple | None = None
    b: tuple | None = None
    q: tuple | None = None
    r: tuple | None = None
    w: tuple | None = None
    generator_seed: int | None = None
    d: int | None = None
    k: int | None = None
    stable: bool = True
    bounds: dict | None = None

    def build(self) -> LqrInstance:
        try:
            if self.generator_seed is not None:
                if self.d is None or self.k is None:
                    raise ConfigError("generated instances need d and k")
                gen = BoundParams(**self.bounds) if self.bounds else _GEN_BOUNDS
                inst = random_instance(Dims(int(self.d), int(self.k)), gen, Rng(int(self.generator_seed)), stable=self.stable)
            else:
                if self.a is None or self.b is None:
                    raise ConfigError("[instance] needs a and b, or generator_seed")
                mats = [None if m is None else _matrix(m, name) for m, name in zip((self.a, self.b, self.q, self.r, self.w), "abqrw")]
                inst = make_instance(*mats)
            bounds = BoundParams(**self.bounds) if self.bounds else calibrated_bounds(inst)
            return make_instance(inst.a_star, inst.b_star, inst.q, inst.r, inst.w, bounds=bounds)
        except ContractViolation as exc:
            raise ConfigError(f"invalid instance: {exc}") from exc


def _tupled(m):
    return None if m is None else tuple(tuple(float(v) for v in row) for row in np.atleast_2d(np.asarray(m, dtype=float)))


@dataclass(frozen=True)
class ExperimentConfig:
    instance: InstanceSpec
    algorithms: tuple = ("oslo",)
    horizons: tuple = (1024,)
    seeds: tuple = (0,)
    delta: float = 0.1
    regret: str = "paired"
    prior: str = "perturbed"
    prior_scale: float = 1.0
    k0: tuple | None = None
    k0_scale: float = 0.5
    x1: tuple | None = None
    record_timing: bool = False
    workers: int = 1
    constants_mode: str = "practical"
    c_mu: float = 1.0
    c_lambda: float = 1.0
    c_beta: float = 1.0
    mu: float | None = None
    lam: float | None = None
    beta: float | None = None
    sdp_tol: float = 1e-8
    sdp_max_iters: int = 200
    pinv_threshold: float | None = None
    sdp_fallback: bool = False
    warmup_t0: int | None = None
    warmup_constant: float = 1.0
    kappa0: float | None = None
    gamma0: float | None = None
    csv_path: str | None = None
    json_path: str | None = None

    def __post_init__(self):
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r}; choose from {', '.join(ALGORITHMS)}")
        hs = [int(h) for h in self.horizons]
        if not hs or any(h < 2 for h in hs) or any(b <= a for a, b in zip(hs, hs[1:])):
            raise ConfigError("horizons must be strictly increasing integers >= 2")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.regret not in ("paired", "expected"):
            raise ConfigError("regret must be 'paired' or 'expected'")
        if self.prior not in ("truth", "zero", "perturbed"):
            raise ConfigError("prior must be 'truth', 'zero' or 'perturbed'")
        if self.constants_mode not in ("theory", "practical"):
            raise ConfigError("constants mode must be 'theory' or 'practical'")
        if self.prior_scale < 0:
            raise ConfigError("prior_scale must be nonnegative")
        if int(self.workers) < 1:
            raise ConfigError("workers must be positive")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _check_keys("top level", raw, set(_SCHEMA))
        inst = dict(raw.get("instance", {}))
        _check_keys("instance", inst, _SCHEMA["instance"])
        bounds = inst.pop("bounds", None)
        if bounds is not None:
            _check_keys("instance.bounds", bounds, _BOUND_KEYS)
            if set(bounds) != _BOUND_KEYS:
                raise ConfigError("[instance.bounds] needs all of " + ", ".join(sorted(_BOUND_KEYS)))
            bounds = {k: float(v) for k, v in bounds.items()}
        for name in "abqrw":
            if name in inst:
                inst[name] = _tupled(_matrix(inst[name], name))
        spec = InstanceSpec(bounds=bounds, **inst)

        kw: dict = {}
        exp = raw.get("experiment", {})
        _check_keys("experiment", exp, _SCHEMA["experiment"])
        if "algorithm" in exp and "algorithms" in exp:
            raise ConfigError("give either algorithm or algorithms")
        if "algorithm" in exp:
            kw["algorithms"] = (exp["algorithm"],)
        if "algorithms" in exp:
            kw["algorithms"] = tuple(exp["algorithms"])
        if "horizons" in exp:
            kw["horizons"] = tuple(int(h) for h in exp["horizons"])
        if "seeds" in exp:
            kw["seeds"] = tuple(int(s) for s in exp["seeds"])
        for key in ("delta", "prior_scale", "k0_scale"):
            if key in exp:
                kw[key] = float(exp[key])
        for key in ("regret", "prior"):
            if key in exp:
                kw[key] = str(exp[key])
        if "k0" in exp:
            kw["k0"] = _tupled(_matrix(exp["k0"], "k0"))
        if "x1" in exp:
            kw["x1"] = tuple(float(v) for v in exp["x1"])
        if "record_timing" in exp:
            kw["record_timing"] = bool(exp["record_timing"])
        if "workers" in exp:
            kw["workers"] = int(exp["workers"])

        const = raw.get("constants", {})
        _check_keys("constants", const, _SCHEMA["constants"])
        if "mode" in const:
            kw["constants_mode"] = str(const["mode"])
        for key, dest in (("c_mu", "c_mu"), ("c_lambda", "c_lambda"), ("c_beta", "c_beta"), ("mu", "mu"), ("lambda", "lam"), ("beta", "beta")):
            if key in const:
                kw[dest] = float(const[key])

        solver = raw.get("solver", {})
        _check_keys("solver", solver, _SCHEMA["solver"])
        if "tol" in solver:
            kw["sdp_tol"] = float(solver["tol"])
        if "max_iters" in solver:
            kw["sdp_max_iters"] = int(solver["max_iters"])
        if "pinv_threshold" in solver:
            kw["pinv_threshold"] = float(solver["pinv_threshold"])
        if "fallback" in solver:
            kw["sdp_fallback"] = bool(solver["fallback"])

        warm = raw.get("warmup", {})
        _check_keys("warmup", warm, _SCHEMA["warmup"])
        if "t0" in warm:
            kw["warmup_t0"] = int(warm["t0"])
        if "t0_constant" in warm:
            kw["warmup_constant"] = float(warm["t0_constant"])
        for key in ("kappa0", "gamma0"):
            if key in warm:
                kw[key] = float(warm[key])

        out = raw.get("output", {})
        _check_keys("output", out, _SCHEMA["output"])
        if "csv" in out:
            kw["csv_path"] = str(out["csv"])
        if "json" in out:
            kw["json_path"] = str(out["json"])
        _check_keys("simulate", raw.get("simulate", {}), _SCHEMA["simulate"])
        try:
            return cls(instance=spec, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw)

    def echo(self) -> dict:
        return to_jsonable(asdict(self))


def load_toml(path) -> dict:
    """Parse a TOML file, mapping failures to ConfigError."""
    path = Path(path)
    try:
        return tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# cells


def checkpoints(horizon: int) -> list[int]:
    """Dyadic ``t = 1, 2, 4, ...`` up to ``horizon``, plus ``horizon`` itself."""
    pts = [1 << j for j in range(int(math.log2(horizon)) + 1) if (1 << j) <= horizon]
    if pts[-1] != horizon:
        pts.append(horizon)
    return pts


@dataclass(frozen=True)
class CellResult:
    algorithm: str
    horizon: int
    seed: int
    checkpoint_t: tuple = ()
    cum_regret: tuple = ()
    epoch_count: int = 0
    good_event_ok: bool | None = None
    survival_step: int | None = None
    wall_ms: float = 0.0
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def final_regret(self) -> float:
        return self.cum_regret[-1] if self.cum_regret else float("nan")

    @property
    def key(self) -> tuple:
        return (self.algorithm, self.horizon, self.seed)


def oslo_config_for(cfg: ExperimentConfig, instance: LqrInstance, horizon: int, prior) -> OsloConfig:
    solver = dict(
        sdp_tol=cfg.sdp_tol,
        sdp_max_iters=cfg.sdp_max_iters,
        pinv_threshold=cfg.pinv_threshold,
        sdp_fallback=cfg.sdp_fallback,
    )
    if cfg.constants_mode == "theory":
        return OsloConfig.theory(instance.bounds, instance.dims, horizon, cfg.delta, prior=prior, w=instance.w, **solver)
    return OsloConfig.practical(
        instance.bounds,
        instance.dims,
        horizon,
        cfg.delta,
        prior=prior,
        c_mu=cfg.c_mu,
        c_lambda=cfg.c_lambda,
        c_beta=cfg.c_beta,
        mu=cfg.mu,
        lam=cfg.lam,
        beta=cfg.beta,
        **solver,
    )


def make_prior(cfg: ExperimentConfig, instance: LqrInstance, budget: float, rng: Rng) -> np.ndarray:
    """``(A0 B0)``: zero, the truth, or the truth plus a random error with
    ``||Delta_0||_F^2 = prior_scale * budget``."""
    theta = instance.theta
    if cfg.prior == "zero":
        return np.zeros_like(theta)
    if cfg.prior == "truth":
        return theta.copy()
    err = rng.standard_normal(theta.shape)
    err *= math.sqrt(cfg.prior_scale * budget) / np.linalg.norm(err)
    return theta + err


def _k0(cfg: ExperimentConfig, instance: LqrInstance, k_star: np.ndarray) -> np.ndarray:
    if cfg.k0 is not None:
        k0 = np.array(cfg.k0, dtype=float)
        if k0.shape != k_star.shape:
            raise ContractViolation(f"k0 must be {k_star.shape[0]}x{k_star.shape[1]}")
        return k0
    return cfg.k0_scale * k_star


def _regret_curve(costs: np.ndarray, reference: np.ndarray | float, points: list[int]) -> tuple:
    cum = np.cumsum(costs - reference)
    return tuple(float(cum[t - 1]) for t in points)


def run_cell(cfg: ExperimentConfig, algorithm: str, horizon: int, seed: int) -> CellResult:
    """Execute one (algorithm, T, seed) cell; exceptions become ``error``."""
    t_start = time.perf_counter()
    try:
        out = _run_cell(cfg, algorithm, horizon, seed)
    except Exception as exc:  # noqa: BLE001 - isolation boundary
        return CellResult(algorithm, horizon, seed, error=f"{type(exc).__name__}: {exc}")
    wall = (time.perf_counter() - t_start) * 1e3 if cfg.record_timing else 0.0
    return CellResult(algorithm, horizon, seed, wall_ms=wall, **out)


def _run_cell(cfg: ExperimentConfig, algorithm: str, horizon: int, seed: int) -> dict:
    instance = cfg.instance.build()
    ric = solve_dare(instance)
    d = instance.dims.d
    x1 = np.zeros(d) if cfg.x1 is None else np.array(cfg.x1, dtype=float)
    root = Rng(seed)
    env_rng = root.child("env")
    points = checkpoints(horizon)
    if cfg.regret == "paired":
        ref = linear_rollout(instance, ric.k_star, horizon, x1, root.child("env")).costs
    else:
        ref = ric.j_star

    if algorithm in ("optimal", "fixed_k0"):
        k = ric.k_star if algorithm == "optimal" else _k0(cfg, instance, ric.k_star)
        traj = linear_rollout(instance, k, horizon, x1, env_rng)
        return dict(checkpoint_t=tuple(points), cum_regret=_regret_curve(traj.costs, ref, points), epoch_count=1)

    env = LqrEnvironment(instance, env_rng, x1)
    if algorithm == "oslo_with_warmup":
        k0 = _k0(cfg, instance, ric.k_star)
        t0 = cfg.warmup_t0
        if t0 is None:
            t0 = warmup_length(instance.bounds, instance.dims, horizon, cfg.delta, cfg.warmup_constant)
        if t0 >= horizon:
            raise ContractViolation(f"warm-up length {t0} leaves no steps of the horizon {horizon}")
        kappa0, gamma0 = cfg.kappa0, cfg.gamma0
        if kappa0 is None or gamma0 is None:
            cert = strong_stability_certificate(instance, Policy(k0))
            kappa0 = cert.kappa if kappa0 is None else kappa0
            gamma0 = cert.gamma if gamma0 is None else gamma0
        wcfg = WarmupConfig(Policy(k0), kappa0, gamma0, t0, instance.bounds.sigma, instance.bounds.vartheta)
        warm = run_warmup(env, wcfg, root.child("warmup"))
        ocfg = oslo_config_for(cfg, instance, horizon - t0, warm.a0_b0)
        rec = run_oslo(env, ocfg, seed=seed)
        costs = np.concatenate([warm.trajectory.costs, rec.trajectory.costs])
    else:
        budget = oslo_config_for(cfg, instance, horizon, np.zeros_like(instance.theta)).prior_error_budget
        prior = make_prior(cfg, instance, budget, root.child("prior"))
        ocfg = oslo_config_for(cfg, instance, horizon, prior)
        runner = run_oslo if algorithm == "oslo" else run_certainty_equivalence
        rec = runner(env, ocfg, seed=seed)
        costs = rec.trajectory.costs
    if rec.halted:
        raise RuntimeError(f"run halted: {rec.halt_reason}")
    flags = good_event_monitor(rec, instance)
    return dict(
        checkpoint_t=tuple(points),
        cum_regret=_regret_curve(costs, ref, points),
        epoch_count=rec.epoch_count,
        good_event_ok=flags.all_good,
        survival_step=flags.survival_step,
    )


def _cell_task(args):
    return run_cell(*args)


# --------------------------------------------------------------------------
# results


class FitResult:
    """Log-log least-squares fit; unpacks as ``(slope, intercept, r2)``."""

    def __init__(self, slope, intercept, r2, stderr, used, dropped):
        self.slope = float(slope)
        self.intercept = float(intercept)
        self.r2 = float(r2)
        self.stderr = float(stderr)
        self.used = int(used)
        self.dropped = int(dropped)

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r2))

    def __repr__(self):
        return f"FitResult(slope={self.slope!r}, intercept={self.intercept!r}, r2={self.r2!r}, dropped={self.dropped})"

    def to_dict(self) -> dict:
        return dict(vars(self))


def fit_regret_exponent(points) -> FitResult:
    """Ordinary least squares of ``log regret`` on ``log T``.

    Points with nonpositive regret are dropped (counted in ``dropped``);
    fewer than three usable points raise ValueError.
    """
    pts = [(float(t), float(r)) for t, r in points]
    good = [(t, r) for t, r in pts if t > 0 and r > 0 and math.isfinite(r)]
    if len(good) < 3:
        raise ValueError(f"need at least 3 positive points, got {len(good)}")
    x = np.log([t for t, _ in good])
    y = np.log([r for _, r in good])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise ValueError("all horizons are equal")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_res = float(resid @ resid)
    yc = y - y.mean()
    ss_tot = float(yc @ yc)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(good) - 2
    stderr = math.sqrt(ss_res / dof / sxx) if dof > 0 else float("nan")
    return FitResult(slope, intercept, r2, stderr, len(good), len(pts) - len(good))


@dataclass(frozen=True)
class Aggregate:
    algorithm: str
    horizon: int
    median: float
    q25: float
    q75: float
    count: int
    failures: int
    good_event_rate: float | None


@dataclass(frozen=True)
class ExponentFit:
    algorithm: str
    slope: float
    intercept: float
    r2: float
    band_low: float
    band_high: float
    dropped: int


@dataclass
class ExperimentResult:
    config: dict
    cells: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    version: str = __version__

    @property
    def failed_cells(self) -> list:
        return [c for c in self.cells if c.failed]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "cells": [to_jsonable(asdict(c)) for c in self.cells],
            "aggregates": [to_jsonable(asdict(a)) for a in self.aggregates],
            "fits": [to_jsonable(asdict(f)) for f in self.fits],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentResult":
        def cell(c):
            c = dict(c)
            c["checkpoint_t"] = tuple(int(t) for t in c["checkpoint_t"])
            c["cum_regret"] = tuple(float(v) for v in c["cum_regret"])
            return CellResult(**c)

        def num(d):
            return {k: (float(v) if v in ("nan", "inf", "-inf") else v) for k, v in d.items()}

        return cls(
            config=obj["config"],
            cells=[cell(c) for c in obj["cells"]],
            aggregates=[Aggregate(**num(a)) for a in obj["aggregates"]],
            fits=[ExponentFit(**num(f)) for f in obj["fits"]],
            version=obj["version"],
        )


def aggregate(cells) -> list[Aggregate]:
    groups: dict = {}
    for c in cells:
        groups.setdefault((c.algorithm, c.horizon), []).append(c)
    out = []
    for (alg, t), group in sorted(groups.items()):
        ok = [c for c in group if not c.failed]
        vals = np.array([c.final_regret for c in ok])
        ge = [c.good_event_ok for c in ok if c.good_event_ok is not None]
        if vals.size:
            q25, med, q75 = (float(v) for v in np.percentile(vals, [25, 50, 75]))
        else:
            q25 = med = q75 = float("nan")
        out.append(Aggregate(alg, t, med, q25, q75, len(ok), len(group) - len(ok), float(np.mean(ge)) if ge else None))
    return out


def fit_medians(cells, resamples: int = 200, seed: int = 0) -> list[ExponentFit]:
    """Exponent of the median final regret per algorithm, with a bootstrap
    (over seeds) 95% band.  Algorithms with too few positive medians are skipped."""
    fits = []
    by_alg: dict = {}
    for c in cells:
        if not c.failed:
            by_alg.setdefault(c.algorithm, {}).setdefault(c.horizon, []).append(c.final_regret)
    rng = Rng(seed).child("bootstrap")
    for alg in sorted(by_alg):
        table = by_alg[alg]
        horizons = sorted(table)
        try:
            fit = fit_regret_exponent([(t, np.median(table[t])) for t in horizons])
        except ValueError:
            continue
        slopes = []
        for _ in range(resamples):
            pts = []
            for t in horizons:
                vals = np.asarray(table[t])
                pts.append((t, np.median(vals[rng.integers(0, len(vals), len(vals))])))
            try:
                slopes.append(fit_regret_exponent(pts).slope)
            except ValueError:
                pass
        lo, hi = (float(v) for v in np.percentile(slopes, [2.5, 97.5])) if slopes else (float("nan"),) * 2
        fits.append(ExponentFit(alg, fit.slope, fit.intercept, fit.r2, lo, hi, fit.dropped))
    return fits


def default_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Run every (algorithm, T, seed) cell.

    Cells run in separate processes when ``workers > 1`` (default from the
    config, overridden by the ``OSLO_LQR_THREADS`` environment variable);
    results are sorted by key, so the output does not depend on scheduling.
    """
    cfg.instance.build()  # surface configuration errors before any cell runs
    if workers is None:
        workers = default_workers() if os.environ.get(THREADS_ENV) else cfg.workers
    tasks = [(cfg, alg, int(t), int(s)) for alg in cfg.algorithms for t in cfg.horizons for s in cfg.seeds]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_cell_task, tasks))
    else:
        cells = [_cell_task(t) for t in tasks]
    cells.sort(key=lambda c: c.key)
    return ExperimentResult(config=cfg.echo(), cells=cells, aggregates=aggregate(cells), fits=fit_medians(cells))


def certainty_equivalence_baseline(env, config: OsloConfig, rng: Rng | None = None, x1=None) -> RunRecord:
    """Same epochs as the optimistic loop, planning with the Riccati solution
    of the point estimates; failed solves keep the previous gain."""
    return run_certainty_equivalence(env, config, x1=x1, rng=rng)


def evaluate(record: RunRecord, instance: LqrInstance) -> RunRecord:
    """Attach regret, good-event flags and the decomposition."""
    return evaluate_run(record, instance, solve_dare(instance))


# --------------------------------------------------------------------------
# outputs


def csv_text(result: ExperimentResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for c in result.cells:
        if c.failed:
            continue
        ge = "" if c.good_event_ok is None else ("true" if c.good_event_ok else "false")
        for t, reg in zip(c.checkpoint_t, c.cum_regret):
            writer.writerow([c.algorithm, c.horizon, c.seed, t, repr(float(reg)), c.epoch_count, ge, repr(float(c.wall_ms))])
    return buf.getvalue()


def json_text(result: ExperimentResult) -> str:
    from .serialize import dumps

    return dumps(result.to_dict())


def emit_outputs(result: ExperimentResult, fmt: str = "csv", path=None) -> Path:
    """Write the CSV rows or the full JSON document to ``path``."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    text = csv_text(result) if fmt == "csv" else json_text(result)
    if path is None:
        raise ValueError("an output path is required")
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv_points(path) -> dict:
    """``{algorithm: [(T, median final regret), ...]}`` from a results CSV."""
    finals: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing columns {', '.join(sorted(missing))}")
        for row in reader:
            t = int(row["T"])
            if int(row["checkpoint_t"]) == t:
                finals.setdefault(row["algorithm"], {}).setdefault(t, []).append(float(row["cum_regret"]))
    return {alg: [(t, float(np.median(v))) for t, v in sorted(tab.items())] for alg, tab in sorted(finals.items())}


__all__ = [
    "ALGORITHMS",
    "CSV_COLUMNS",
    "ConfigError",
    "InstanceSpec",
    "ExperimentConfig",
    "CellResult",
    "Aggregate",
    "ExponentFit",
    "ExperimentResult",
    "FitResult",
    "checkpoints",
    "run_cell",
    "run_experiment",
    "fit_regret_exponent",
    "fit_medians",
    "aggregate",
    "certainty_equivalence_baseline",
    "evaluate",
    "emit_outputs",
    "csv_text",
    "json_text",
    "read_csv_points",
    "instance_to_json",
    "load_toml",
]
