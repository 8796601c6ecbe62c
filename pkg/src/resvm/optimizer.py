"""Regularized stochastic BFGS (RES) and SGD for linear SVM training."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .curvature import CurvatureFault, CurvaturePair, HessianApprox, UpdateResult
from .dataset import STREAM_PROBE, STREAM_SAMPLING, TrainingSet, make_rng, sample_minibatch
from .losses import LossKind, Objective, average_objective, instantaneous_gradient

log = logging.getLogger(__name__)


class OptimizationFault(RuntimeError):
    """A step produced a non-finite iterate or broke the curvature matrix."""

    def __init__(self, iteration: int, reason: str):
        super().__init__(f"iteration {iteration}: {reason}")
        self.iteration = iteration
        self.reason = reason


class Method(str, enum.Enum):
    RES = "res"
    SGD = "sgd"
    RES_UNREGULARIZED = "res_unregularized"


# ---------------------------------------------------------------------------
# step sizes


@dataclass(frozen=True)
class Decaying:
    """``eps_t = eps0 * tau / (tau + t)``."""

    eps0: float = 3e-2
    tau: float = 100.0

    def __post_init__(self):
        if not (self.eps0 > 0 and self.tau > 0):
            raise ValueError("decaying schedule needs eps0 > 0 and tau > 0")

    def __call__(self, t: int) -> float:
        return self.eps0 * self.tau / (self.tau + t)

    def to_dict(self) -> dict:
        return {"kind": "decaying", "eps0": self.eps0, "tau": self.tau}


@dataclass(frozen=True)
class Constant:
    eps: float = 1e-1

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("constant step size must be > 0")

    def __call__(self, t: int) -> float:
        return self.eps

    def to_dict(self) -> dict:
        return {"kind": "constant", "eps": self.eps}


StepSchedule = Decaying | Constant


def schedule_from_dict(d: dict) -> StepSchedule:
    kind = d.get("kind", "decaying")
    if kind == "decaying":
        return Decaying(float(d.get("eps0", 3e-2)), float(d.get("tau", 100.0)))
    if kind == "constant":
        return Constant(float(d["eps"]))
    raise ValueError(f"unknown schedule kind {kind!r}")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ResConfig:
    """All scalars of a run.  Defaults are the reference experiment settings.

    ``delta == gamma == 0`` selects unregularized stochastic BFGS.
    """

    lam: float = 1e-3
    delta: float = 1e-3
    gamma: float = 1e-4
    batch_size: int = 5
    schedule: StepSchedule = field(default_factory=Decaying)
    max_iters: int = 500
    seed: int = 0
    loss: LossKind = LossKind.SQUARED_HINGE

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        if isinstance(self.schedule, dict):
            object.__setattr__(self, "schedule", schedule_from_dict(self.schedule))
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.delta == 0:
            if self.gamma != 0:
                raise ValueError("delta = 0 is only allowed together with gamma = 0 (unregularized mode)")
        elif not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    @property
    def unregularized(self) -> bool:
        return self.delta == 0 and self.gamma == 0

    @property
    def objective(self) -> Objective:
        return Objective(self.loss, self.lam)

    def replace(self, **changes) -> "ResConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "delta": self.delta,
            "gamma": self.gamma,
            "batch_size": self.batch_size,
            "schedule": self.schedule.to_dict(),
            "max_iters": self.max_iters,
            "seed": self.seed,
            "loss": self.loss.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResConfig":
        kwargs = {}
        for key, attr in (("lambda", "lam"), ("delta", "delta"), ("gamma", "gamma")):
            if key in d:
                kwargs[attr] = float(d[key])
        for key in ("batch_size", "max_iters", "seed"):
            if key in d:
                kwargs[key] = int(d[key])
        if "schedule" in d:
            kwargs["schedule"] = schedule_from_dict(d["schedule"])
        if "loss" in d:
            kwargs["loss"] = LossKind.parse(d["loss"])
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ResConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "ResConfig":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# state and steps


@dataclass
class OptimizerState:
    w: np.ndarray
    H: Optional[HessianApprox]
    rng: np.random.Generator
    t: int = 0
    skip_count: int = 0
    last_pair: Optional[CurvaturePair] = None
    last_update: Optional[UpdateResult] = None

    @classmethod
    def initial(cls, cfg: ResConfig, n: int, method: Method | str = Method.RES) -> "OptimizerState":
        method = Method(method)
        H = None
        if method is not Method.SGD:
            H = HessianApprox.init(n, cfg.delta, unregularized=cfg.unregularized)
        return cls(w=np.zeros(n), H=H, rng=make_rng(cfg.seed, STREAM_SAMPLING))


def _check_finite(w: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(w)):
        raise OptimizationFault(t, "non-finite iterate")


def _batch(state: OptimizerState, cfg: ResConfig, data: TrainingSet, batch):
    if batch is not None:
        return batch
    return sample_minibatch(data, cfg.batch_size, state.rng)


def res_step(state: OptimizerState, cfg: ResConfig, data: TrainingSet, batch=None) -> OptimizerState:
    """One RES iteration, in place.

    Both stochastic gradients use the same minibatch.  ``batch`` overrides
    sampling with an explicit ``(X, y)`` pair.
    """
    if state.H is None:
        raise ValueError("RES step requires a curvature matrix")
    if state.w.shape != (data.n,):
        raise ValueError("iterate dimension does not match the data")
    obj = cfg.objective
    Xb, yb = _batch(state, cfg, data, batch)
    t = state.t
    s = instantaneous_gradient(obj, Xb, yb, state.w)
    try:
        d = state.H.descent_direction(cfg.gamma, s)
    except CurvatureFault as exc:
        raise OptimizationFault(t, str(exc)) from exc
    w_next = state.w - cfg.schedule(t) * d
    _check_finite(w_next, t)
    s_next = instantaneous_gradient(obj, Xb, yb, w_next)
    v = w_next - state.w
    r_hat = s_next - s
    try:
        result = state.H.update(v, r_hat)
    except CurvatureFault as exc:
        raise OptimizationFault(t, str(exc)) from exc
    state.last_pair = state.H.corrected_pair(v, r_hat)
    state.last_update = result
    if result is UpdateResult.SKIPPED:
        state.skip_count += 1
    state.w = w_next
    state.t = t + 1
    return state


def sgd_step(state: OptimizerState, cfg: ResConfig, data: TrainingSet, batch=None) -> OptimizerState:
    if state.w.shape != (data.n,):
        raise ValueError("iterate dimension does not match the data")
    Xb, yb = _batch(state, cfg, data, batch)
    t = state.t
    s = instantaneous_gradient(cfg.objective, Xb, yb, state.w)
    w_next = state.w - cfg.schedule(t) * s
    _check_finite(w_next, t)
    state.w = w_next
    state.t = t + 1
    return state


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class TrajectoryLog:
    """Objective values recorded along one run.

    ``entries`` holds ``(t, samples_processed, objective)`` triples sorted by
    ``t`` with ``samples_processed == batch_size * t``.
    """

    method: Method
    entries: list[tuple[int, int, float]]
    config: ResConfig
    seed: int
    fault: Optional[tuple[int, str]] = None
    final_w: Optional[np.ndarray] = None
    skip_count: int = 0
    final_curvature: Optional[np.ndarray] = None

    @property
    def samples(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=int)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=float)

    @property
    def final_objective(self) -> float:
        return self.entries[-1][2]

    def samples_to_reach(self, level: float) -> Optional[int]:
        """First recorded sample count at which the objective is ``<= level``."""
        for _, processed, value in self.entries:
            if value <= level:
                return processed
        return None


def method_label(method: Method | str, cfg: ResConfig) -> Method:
    method = Method(method)
    if method is Method.RES and cfg.unregularized:
        return Method.RES_UNREGULARIZED
    if method is Method.RES_UNREGULARIZED and not cfg.unregularized:
        raise ValueError("res_unregularized requires delta = gamma = 0")
    return method


def run(cfg: ResConfig, data: TrainingSet, method: Method | str = Method.RES, record_every: int = 10) -> TrajectoryLog:
    """Run ``cfg.max_iters`` steps from ``w = 0``, recording the exact objective.

    A fault stops the run; the partial log keeps every record taken before it
    and ``fault`` holds ``(iteration, reason)``.
    """
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    if len(data) == 0:
        raise ValueError("empty training set")
    label = method_label(method, cfg)
    step = sgd_step if label is Method.SGD else res_step
    obj = cfg.objective
    L = cfg.batch_size
    state = OptimizerState.initial(cfg, data.n, label)
    entries = [(0, 0, average_objective(obj, data.X, data.y, state.w))]
    fault = None
    # overflow on diverging runs surfaces as a recorded fault, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        while state.t < cfg.max_iters:
            try:
                step(state, cfg, data)
            except OptimizationFault as exc:
                log.warning("%s run (seed %d) faulted: %s", label.value, cfg.seed, exc)
                fault = (exc.iteration, exc.reason)
                break
            if state.t % record_every == 0 or state.t == cfg.max_iters:
                entries.append((state.t, L * state.t, average_objective(obj, data.X, data.y, state.w)))
    return TrajectoryLog(
        method=label,
        entries=entries,
        config=cfg,
        seed=cfg.seed,
        fault=fault,
        final_w=state.w.copy(),
        skip_count=state.skip_count,
        final_curvature=None if state.H is None else state.H.B.copy(),
    )


# ---------------------------------------------------------------------------
# convergence-rate diagnostics


def check_rate_condition(eps0: float, tau: float, gamma: float) -> bool:
    """Whether ``2 eps0 tau gamma > 1`` (the expected-rate hypothesis)."""
    return 2.0 * eps0 * tau * gamma > 1.0


def rate_bound(eps0: float, tau: float, gamma: float, K: float, f0_gap: float, t) -> float | np.ndarray:
    """Upper bound ``xi / (tau + t)`` on the expected objective gap.

    ``K`` is a problem constant supplied by the caller; it is not derived here.
    """
    if not check_rate_condition(eps0, tau, gamma):
        raise ValueError(f"rate condition 2*eps0*tau*gamma > 1 fails ({2 * eps0 * tau * gamma:g})")
    if K < 0 or f0_gap < 0:
        raise ValueError("K and f0_gap must be non-negative")
    xi = max(eps0**2 * tau**2 * K / (2 * eps0 * tau * gamma - 1), (1 + tau) * f0_gap)
    return xi / (tau + np.asarray(t, dtype=float)) if np.ndim(t) else xi / (tau + t)


@dataclass(frozen=True)
class ConvergenceDiagnostics:
    m_tilde: float
    M_tilde: float
    s_sq_estimate: float
    rate_condition_ok: bool

    def to_dict(self) -> dict:
        return {
            "m_tilde": self.m_tilde,
            "M_tilde": self.M_tilde,
            "s_sq_estimate": self.s_sq_estimate,
            "rate_condition_ok": self.rate_condition_ok,
        }


def _batch_curvature_weights(loss: LossKind, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    margins = y * (X @ w)
    if loss is LossKind.SQUARED_HINGE:
        return 2.0 * (margins < 1.0)
    p = 1.0 / (1.0 + np.exp(-np.clip(margins, -500, 500)))
    return p * (1.0 - p)


def estimate_diagnostics(
    cfg: ResConfig,
    data: TrainingSet,
    probe_points: int = 100,
    rng: Optional[np.random.Generator] = None,
    scale: float = 1.0,
    points=None,
) -> ConvergenceDiagnostics:
    """Empirical Hessian-eigenvalue bounds and gradient second moment.

    Probes ``w = 0`` and ``probe_points - 1`` random points with components
    uniform on ``[-scale, scale]``, each with a fresh minibatch.  ``points``
    replaces the random probes with explicit iterates.  Advisory only.
    """
    if rng is None:
        rng = make_rng(cfg.seed, STREAM_PROBE)
    if points is None:
        if probe_points < 1:
            raise ValueError("probe_points must be >= 1")
        points = [np.zeros(data.n)]
        points += [rng.uniform(-scale, scale, size=data.n) for _ in range(probe_points - 1)]
    points = [np.asarray(p, dtype=float) for p in points]
    if not points:
        raise ValueError("no probe points")
    obj = cfg.objective
    top = 0.0
    s_sq = 0.0
    for w in points:
        Xb, yb = sample_minibatch(data, cfg.batch_size, rng)
        weights = _batch_curvature_weights(obj.loss, Xb, yb, w)
        if np.any(weights):
            curv = (Xb.T * weights) @ Xb / len(yb)
            top = max(top, float(np.linalg.eigvalsh(curv)[-1]))
        s = instantaneous_gradient(obj, Xb, yb, w)
        s_sq = max(s_sq, float(s @ s))
    schedule = cfg.schedule
    ok = isinstance(schedule, Decaying) and check_rate_condition(schedule.eps0, schedule.tau, cfg.gamma)
    return ConvergenceDiagnostics(
        m_tilde=cfg.lam,
        M_tilde=cfg.lam + top,
        s_sq_estimate=s_sq,
        rate_condition_ok=ok,
    )
