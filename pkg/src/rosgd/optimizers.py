"""Projected SGD variants for the random-order setting.

Three runners share one kernel and differ only in which datapoint feeds the
gradient of each round and in what is played:

* ``reservoir``: gradient on a reservoir re-sample of the observed prefix,
  played loss on the observed point;
* ``wor``: single pass over the first ``tau`` observed points, then the
  average of those iterates is played until round ``T``;
* ``ogd``: gradient on the observed point for all ``T`` rounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .domain import Domain, as_point
from .families import QuadraticFamily
from .rng import derive_rng
from .sampling import OrderStream, reservoir_positions, sampler_uniforms

ALGORITHMS = ("reservoir", "wor", "ogd")


@dataclass(frozen=True)
class StepSchedule:
    """``reservoir``: ``min(mu/beta^2, 2/(mu t))`` with ``mu = lam - beta/T``.
    ``wor``: ``min(lam/(2 beta^2), 4/(lam t))``.
    """

    kind: str
    lam: float
    beta: float
    mu_tilde: float | None = None

    def __post_init__(self):
        if self.kind not in ("reservoir", "wor"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (self.lam > 0 and self.beta > 0):
            raise ValueError("schedule needs positive lambda and beta")
        if self.kind == "reservoir" and not (self.mu_tilde is not None and self.mu_tilde > 0):
            raise ValueError(
                f"mu_tilde = lambda - beta/T = {self.mu_tilde} must be positive; "
                "the ReservoirSGD guarantee needs T >= 2*beta/lambda"
            )

    def steps(self, n: int) -> np.ndarray:
        t = np.arange(1, n + 1, dtype=np.float64)
        if self.kind == "reservoir":
            mu = self.mu_tilde
            return np.minimum(mu / self.beta**2, 2.0 / (mu * t))
        return np.minimum(self.lam / (2.0 * self.beta**2), 4.0 / (self.lam * t))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "beta": self.beta, "mu_tilde": self.mu_tilde}


def reservoir_schedule(lam: float, beta: float, T: int) -> StepSchedule:
    return StepSchedule("reservoir", lam, beta, mu_tilde=lam - beta / T)


def wor_schedule(lam: float, beta: float) -> StepSchedule:
    return StepSchedule("wor", lam, beta)


def step_size(schedule: StepSchedule, t: int) -> float:
    if t < 1:
        raise ValueError("rounds are 1-based")
    if schedule.kind == "reservoir":
        mu = schedule.mu_tilde
        return min(mu / schedule.beta**2, 2.0 / (mu * t))
    return min(schedule.lam / (2.0 * schedule.beta**2), 4.0 / (schedule.lam * t))


def sgd_step(w, g, eta: float, domain: Domain) -> np.ndarray:
    """``project(w - eta * g)``."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient; aborting run")
    if not eta > 0:
        raise ValueError("step size must be positive")
    return domain.project(as_point(w, domain.dimension) - eta * g)


def default_tau(family: QuadraticFamily) -> int:
    """``floor(T / (2 kappa))`` clamped to ``[1, T]``."""
    return int(min(family.T, max(1, math.floor(family.T / (2.0 * family.kappa)))))


def default_schedule(algorithm: str, family: QuadraticFamily) -> StepSchedule:
    k = family.constants
    if algorithm == "wor":
        return wor_schedule(k.lam, k.beta)
    return reservoir_schedule(k.lam, k.beta, family.T)


def regime_flags(algorithm: str, family: QuadraticFamily) -> list[str]:
    flags = []
    if algorithm == "reservoir" and family.T < 2.0 * family.beta / family.strong_convexity:
        flags.append("T_below_2beta_over_lambda")
    return flags


@dataclass
class Trajectory:
    """Record of one run.

    ``observed`` are the random-order datapoints ``z_t`` (used for played
    losses and regret); ``gradient_sources`` are the datapoints whose
    gradients drove the updates.  For ``wor`` only ``tau`` SGD steps exist
    and ``w_bar`` is played in rounds ``tau+1..T``.
    """

    algorithm: str
    iterates: np.ndarray
    observed: np.ndarray
    gradient_sources: np.ndarray
    played_losses: np.ndarray
    gradient_norms: np.ndarray
    step_sizes: np.ndarray
    schedule: StepSchedule
    seeds: dict = field(default_factory=dict)
    tau: int | None = None
    w_bar: np.ndarray | None = None
    flags: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.observed.shape[0]

    @property
    def played_points(self) -> np.ndarray:
        if self.w_bar is None:
            return self.iterates[: self.T]
        tail = np.tile(self.w_bar, (self.T - self.tau, 1))
        return np.vstack([self.iterates[: self.tau], tail])


def _check_inputs(family: QuadraticFamily, order: OrderStream, w1):
    if order.T != family.T:
        raise ValueError(f"order has T={order.T}, family has T={family.T}")
    w1 = family.domain.midpoint if w1 is None else as_point(w1, family.dimension)
    if not family.domain.contains(w1):
        raise ValueError("w1 must lie in the feasible set")
    return w1


def run_paths(family: QuadraticFamily, src: np.ndarray, eta: np.ndarray, w1: np.ndarray):
    """Kernel call for ``(n, s)`` gradient sources; asserts feasibility."""
    kind, p0, p1 = family.domain.kernel_params()
    B, lam, c, A = family.kernel_args()
    W, gn = kernels.sgd_paths(B, lam, c, A, src, eta, w1, kind, p0, p1)
    _assert_feasible(family, W.reshape(-1, family.dimension))
    return W, gn


def run_final(family: QuadraticFamily, src: np.ndarray, eta: np.ndarray, w1: np.ndarray):
    kind, p0, p1 = family.domain.kernel_params()
    B, lam, c, A = family.kernel_args()
    W = kernels.sgd_final(B, lam, c, A, src, eta, w1, kind, p0, p1)
    _assert_feasible(family, W)
    return W


def _assert_feasible(family: QuadraticFamily, W: np.ndarray) -> None:
    dom = family.domain
    if hasattr(dom, "radius"):
        ok = np.all(np.linalg.norm(W - dom.center, axis=1) <= dom.radius * (1 + 1e-12) + 1e-12)
    else:
        ok = np.all(W >= dom.lower - 1e-12) and np.all(W <= dom.upper + 1e-12)
    if not ok:
        raise AssertionError("iterate left the feasible set")


def _sampler_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed, None
    return derive_rng(int(seed), "sampler"), int(seed)


def run_reservoir_sgd(
    family: QuadraticFamily,
    order: OrderStream,
    w1=None,
    seed=0,
    schedule: StepSchedule | None = None,
) -> Trajectory:
    """ReservoirSGD: play ``w_t`` on ``z_t``, step on a reservoir re-sample."""
    w1 = _check_inputs(family, order, w1)
    T = family.T
    schedule = schedule or default_schedule("reservoir", family)
    rng, seed_value = _sampler_rng(seed)
    pos = reservoir_positions(sampler_uniforms(rng, T), T)
    obs = order.permutation
    src = obs[pos]
    eta = schedule.steps(T)
    W, gn = run_paths(family, src[None, :], eta, w1)
    iterates = W[0]
    return Trajectory(
        algorithm="reservoir",
        iterates=iterates,
        observed=obs.copy(),
        gradient_sources=src,
        played_losses=family.values_rows(iterates[:T], obs),
        gradient_norms=gn[0],
        step_sizes=eta,
        schedule=schedule,
        seeds={"sampler": seed_value},
        flags=regime_flags("reservoir", family),
    )


def run_sgd_wor(
    family: QuadraticFamily,
    order: OrderStream,
    w1=None,
    tau: int | None = None,
    schedule: StepSchedule | None = None,
) -> Trajectory:
    """SGD without replacement for ``tau`` rounds, then play the average."""
    w1 = _check_inputs(family, order, w1)
    T = family.T
    tau = default_tau(family) if tau is None else int(tau)
    if not 1 <= tau <= T:
        raise ValueError(f"tau={tau} must lie in [1, T={T}]")
    schedule = schedule or default_schedule("wor", family)
    obs = order.permutation
    src = obs[:tau]
    eta = schedule.steps(tau)
    W, gn = run_paths(family, src[None, :], eta, w1)
    iterates = W[0]
    w_bar = iterates[:tau].mean(axis=0)
    traj = Trajectory(
        algorithm="wor",
        iterates=iterates,
        observed=obs.copy(),
        gradient_sources=src.copy(),
        played_losses=np.empty(0),
        gradient_norms=gn[0],
        step_sizes=eta,
        schedule=schedule,
        tau=tau,
        w_bar=w_bar,
    )
    traj.played_losses = family.values_rows(traj.played_points, obs)
    return traj


def run_ogd_baseline(
    family: QuadraticFamily,
    order: OrderStream,
    w1=None,
    schedule: StepSchedule | None = None,
) -> Trajectory:
    """Plain random-order gradients for all ``T`` rounds."""
    w1 = _check_inputs(family, order, w1)
    T = family.T
    schedule = schedule or default_schedule("ogd", family)
    obs = order.permutation
    eta = schedule.steps(T)
    W, gn = run_paths(family, obs[None, :], eta, w1)
    iterates = W[0]
    return Trajectory(
        algorithm="ogd",
        iterates=iterates,
        observed=obs.copy(),
        gradient_sources=obs.copy(),
        played_losses=family.values_rows(iterates[:T], obs),
        gradient_norms=gn[0],
        step_sizes=eta,
        schedule=schedule,
    )


def batch_sources(algorithm: str, observed: np.ndarray, u: np.ndarray | None, T: int) -> np.ndarray:
    """Gradient sources for ``(n, s)`` observed prefixes.

    ``u`` holds the reservoir uniforms ``(n, s, 2)`` and is ignored by the
    other algorithms.
    """
    if algorithm == "reservoir":
        pos = reservoir_positions(u, T)
        return np.take_along_axis(observed, pos, axis=1)
    if algorithm in ("wor", "ogd"):
        return observed
    raise ValueError(f"unknown algorithm {algorithm!r}")
