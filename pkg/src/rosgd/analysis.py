"""Oracles and Monte Carlo estimators: minimizer, regret, stability, bounds."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .domain import Ball, project_rows
from .families import QuadraticFamily, population_gradient
from .optimizers import (
    ALGORITHMS,
    StepSchedule,
    Trajectory,
    batch_sources,
    default_schedule,
    default_tau,
    regime_flags,
    run_final,
    run_paths,
)
from .rng import derive_rng
from .sampling import OrderStream, reservoir_choice_tree, sampler_uniforms

MAX_ITER = 200_000


def _se(samples: np.ndarray) -> float | None:
    n = samples.shape[0]
    if n < 2:
        return None
    return float(np.std(samples, ddof=1) / math.sqrt(n))


# --------------------------------------------------------------------------
# minimizer


def analytic_minimizer(family: QuadraticFamily) -> np.ndarray:
    """Closed-form ``argmin_W F`` for the quadratic structure.

    With average Hessian ``lam * I`` the minimizer is the projection of the
    unconstrained one; for ``lam = 0`` F is linear and the minimizer is the
    extreme point opposite the mean linear term.
    """
    dom = family.domain
    abar = family.mean_linear
    if family.lam > 0:
        return dom.project(-abar / family.lam)
    norm = np.linalg.norm(abar)
    if norm == 0:
        return dom.midpoint
    if isinstance(dom, Ball):
        return dom.center - dom.radius * abar / norm
    return np.where(abar > 0, dom.lower, np.where(abar < 0, dom.upper, dom.midpoint))


def population_minimizer(family: QuadraticFamily, tol: float = 1e-10) -> np.ndarray:
    """Projected gradient descent on F with step ``1/beta``.

    Stops once the gradient mapping is below ``lambda * tol / 2`` (which
    bounds the distance to ``w*`` by ``tol``) and cross-checks the analytic
    minimizer.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    lam = family.strong_convexity
    if lam <= 0:
        return analytic_minimizer(family)
    beta = family.beta
    dom = family.domain
    w = dom.midpoint
    for _ in range(MAX_ITER):
        w_next = dom.project(w - population_gradient(family, w) / beta)
        if beta * np.linalg.norm(w - w_next) <= 0.5 * lam * tol:
            w = w_next
            break
        w = w_next
    else:
        raise RuntimeError("population_minimizer did not converge; family may be mis-certified")
    ref = analytic_minimizer(family)
    if np.linalg.norm(ref - w) > max(10 * tol, 1e-8):
        raise RuntimeError(
            f"numeric minimizer disagrees with analytic one by {np.linalg.norm(ref - w):.3e}"
        )
    return w


# --------------------------------------------------------------------------
# regret


@dataclass
class RegretReport:
    per_round_regret: np.ndarray
    cumulative: float
    n_trials: int
    cumulative_se: float | None = None
    per_round_se: np.ndarray | None = None
    theorem_bound: float | None = None
    regime_flags: list = field(default_factory=list)
    samples: np.ndarray | None = None
    played_loss_mean: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.per_round_regret.shape[0]

    def within_bound(self, n_se: float = 3.0) -> bool:
        se = self.cumulative_se or 0.0
        return self.cumulative <= self.theorem_bound + n_se * se


def _comparator_check(family: QuadraticFamily, observed: np.ndarray, comp: np.ndarray, w_star):
    if observed.shape[-1] != family.T:
        return
    total = comp.sum(axis=-1)
    FT = family.T * float(family.population_rows(w_star[None, :])[0])
    if not np.all(np.abs(total - FT) <= 1e-9 * max(1.0, abs(FT))):
        raise AssertionError("sum of comparator losses over a full pass differs from T*F(w*)")


def regret(trajectory: Trajectory, order: OrderStream, family: QuadraticFamily, w_star) -> RegretReport:
    """Per-round ``f(w_t; z_t) - f(w*; z_t)`` on the observed sequence."""
    obs = order.permutation
    if obs.shape[0] != trajectory.T or not np.array_equal(obs, trajectory.observed):
        raise ValueError("trajectory and order do not come from the same run")
    w_star = np.asarray(w_star, dtype=np.float64)
    played = family.values_rows(trajectory.played_points, obs)
    comp = family.values_rows(np.tile(w_star, (obs.shape[0], 1)), obs)
    _comparator_check(family, obs, comp, w_star)
    r = played - comp
    return RegretReport(
        per_round_regret=r,
        cumulative=float(r.sum()),
        n_trials=1,
        regime_flags=list(trajectory.flags),
        samples=np.array([r.sum()]),
        played_loss_mean=played,
    )


def regret_decomposition(trajectory: Trajectory, family: QuadraticFamily, w_star) -> dict:
    """Split cumulative regret into online gap, optimisation and comparator sums."""
    obs = trajectory.observed
    P = trajectory.played_points
    w_star = np.asarray(w_star, dtype=np.float64)
    f_played = family.values_rows(P, obs)
    F_played = family.population_rows(P)
    f_star = family.values_rows(np.tile(w_star, (obs.shape[0], 1)), obs)
    F_star = float(family.population_rows(w_star[None, :])[0])
    parts = {
        "online_gap": float(np.sum(f_played - F_played)),
        "optimization": float(np.sum(F_played - F_star)),
        "comparator": float(np.sum(F_star - f_star)),
    }
    parts["total"] = float(np.sum(f_played - f_star))
    return parts


def aggregate_regret(reports: list[RegretReport], theorem_bound: float | None = None) -> RegretReport:
    R = np.stack([r.per_round_regret for r in reports])
    cum = R.sum(axis=1)
    flags = sorted({f for r in reports for f in r.regime_flags})
    return RegretReport(
        per_round_regret=R.mean(axis=0),
        cumulative=float(cum.mean()),
        n_trials=len(reports),
        cumulative_se=_se(cum),
        per_round_se=R.std(axis=0, ddof=1) / math.sqrt(len(reports)) if len(reports) > 1 else None,
        theorem_bound=theorem_bound,
        regime_flags=flags,
        samples=cum,
    )


def trial_orders(master_seed: int, label: str, key: tuple, n_trials: int, T: int) -> np.ndarray:
    """``(n_trials, T)`` permutations, trial ``k`` keyed by ``(label, *key, k)``."""
    out = np.empty((n_trials, T), dtype=np.int64)
    for k in range(n_trials):
        rng = derive_rng(master_seed, label + "/order", *key, k)
        out[k] = kernels.fisher_yates(rng.random(T - 1))
    return out


def trial_uniforms(master_seed: int, label: str, key: tuple, n_trials: int, rounds: int) -> np.ndarray:
    out = np.empty((n_trials, rounds, 2))
    for k in range(n_trials):
        out[k] = sampler_uniforms(derive_rng(master_seed, label + "/sampler", *key, k), rounds)
    return out


def regret_trials(
    algorithm: str,
    family: QuadraticFamily,
    n_trials: int,
    master_seed: int,
    *,
    key: tuple = (),
    loss_family: QuadraticFamily | None = None,
    w_star=None,
    w1=None,
    tau: int | None = None,
    schedule: StepSchedule | None = None,
    chunk: int = 64,
) -> RegretReport:
    """Mean regret over ``n_trials`` random orders.

    The algorithm runs on ``family``; regret is measured on ``loss_family``
    (defaults to ``family``), which is how the regularisation reduction is
    evaluated against the unregularised losses.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    loss_family = loss_family or family
    w_star = population_minimizer(loss_family) if w_star is None else np.asarray(w_star, float)
    T = family.T
    w1 = family.domain.midpoint if w1 is None else np.asarray(w1, dtype=np.float64)
    schedule = schedule or default_schedule(algorithm, family)
    if algorithm == "wor":
        tau = default_tau(family) if tau is None else tau
        steps = tau
    else:
        steps = T
    eta = schedule.steps(steps)
    orders = trial_orders(master_seed, "regret", key, n_trials, T)
    all_u = trial_uniforms(master_seed, "regret", key, n_trials, steps) if (
        algorithm == "reservoir"
    ) else None
    comp_row = loss_family.values_rows(np.tile(w_star, (T, 1)), np.arange(T))
    per_round = np.empty((n_trials, T))
    played_mean = np.zeros(T)
    for start in range(0, n_trials, chunk):
        stop = min(n_trials, start + chunk)
        obs = orders[start:stop]
        u = None if all_u is None else all_u[start:stop]
        src = batch_sources(algorithm, obs[:, :steps], u, T)
        W, _ = run_paths(family, src, eta, w1)
        if algorithm == "wor":
            w_bar = W[:, :tau].mean(axis=1)
            P = np.concatenate(
                [W[:, :tau], np.repeat(w_bar[:, None, :], T - tau, axis=1)], axis=1
            )
        else:
            P = W[:, :T]
        n = stop - start
        played = loss_family.values_rows(P.reshape(n * T, -1), obs.reshape(-1)).reshape(n, T)
        comp = comp_row[obs]
        _comparator_check(loss_family, obs, comp, w_star)
        per_round[start:stop] = played - comp
        played_mean += played.sum(axis=0)
    cum = per_round.sum(axis=1)
    return RegretReport(
        per_round_regret=per_round.mean(axis=0),
        cumulative=float(cum.mean()),
        n_trials=n_trials,
        cumulative_se=_se(cum),
        per_round_se=per_round.std(axis=0, ddof=1) / math.sqrt(n_trials) if n_trials > 1 else None,
        regime_flags=regime_flags(algorithm, family),
        samples=cum,
        played_loss_mean=played_mean / n_trials,
    )


# --------------------------------------------------------------------------
# stability


@dataclass
class StabilityReport:
    algorithm: str
    m: int
    i: int
    n_trials: int
    epsilon_hat: float
    se: float | None
    flags: list = field(default_factory=list)
    samples: np.ndarray | None = None


def _algorithm_setup(algorithm, family, schedule, tau):
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    schedule = schedule or default_schedule(algorithm, family)
    tau = default_tau(family) if (algorithm == "wor" and tau is None) else tau
    return schedule, tau


def _stability_flags(algorithm, family, m, tau):
    flags = regime_flags(algorithm, family)
    if algorithm == "wor" and m > tau:
        flags.append("m_exceeds_tau")
    return flags


def coupled_final_iterates(
    algorithm: str,
    family: QuadraticFamily,
    prefix: np.ndarray,
    i: int,
    u: np.ndarray | None,
    eta: np.ndarray,
    w1: np.ndarray,
):
    """``(w_{m+1}, w^{(i)}_{m+1})`` for ``(n, m+1)`` prefixes sharing uniforms ``u``."""
    m = prefix.shape[1] - 1
    S = prefix[:, :m]
    S_swap = S.copy()
    S_swap[:, i - 1] = prefix[:, m]
    T = family.T
    W = run_final(family, batch_sources(algorithm, S, u, T), eta, w1)
    W_swap = run_final(family, batch_sources(algorithm, S_swap, u, T), eta, w1)
    return W, W_swap


def stability_estimate(
    algorithm: str,
    family: QuadraticFamily,
    m: int,
    i: int,
    n_trials: int,
    master_seed: int,
    *,
    schedule: StepSchedule | None = None,
    tau: int | None = None,
    w1=None,
) -> StabilityReport:
    """Mean ``||w_{m+1} - w^{(i)}_{m+1}||`` over coupled runs.

    Both runs of a trial share the permutation and the sampler uniforms;
    trials for different ``i`` at the same ``m`` share them too.
    """
    T = family.T
    if not 1 <= i <= m < T:
        raise ValueError(f"need 1 <= i <= m < T, got i={i}, m={m}, T={T}")
    schedule, tau = _algorithm_setup(algorithm, family, schedule, tau)
    w1 = family.domain.midpoint if w1 is None else np.asarray(w1, dtype=np.float64)
    eta = schedule.steps(m)
    orders = trial_orders(master_seed, "stability", (m,), n_trials, T)
    u = trial_uniforms(master_seed, "stability", (m,), n_trials, m) if algorithm == "reservoir" else None
    W, W_swap = coupled_final_iterates(algorithm, family, orders[:, : m + 1], i, u, eta, w1)
    dist = np.linalg.norm(W - W_swap, axis=1)
    return StabilityReport(
        algorithm=algorithm,
        m=m,
        i=i,
        n_trials=n_trials,
        epsilon_hat=float(dist.mean()),
        se=_se(dist),
        flags=_stability_flags(algorithm, family, m, tau),
        samples=dist,
    )


def default_i_grid(m: int) -> list[int]:
    return sorted({1, math.ceil(m / 2), m})


def stability_max(
    algorithm: str,
    family: QuadraticFamily,
    m: int,
    n_trials: int,
    master_seed: int,
    *,
    i_grid=None,
    **kwargs,
) -> tuple[StabilityReport, list[StabilityReport]]:
    """Max over an index grid of :func:`stability_estimate`; also returns each ``i``."""
    grid = default_i_grid(m) if i_grid is None else list(i_grid)
    reports = [stability_estimate(algorithm, family, m, i, n_trials, master_seed, **kwargs) for i in grid]
    best = max(reports, key=lambda r: r.epsilon_hat)
    return best, reports


def stability_exhaustive(
    algorithm: str,
    family: QuadraticFamily,
    m: int,
    i: int,
    *,
    schedule: StepSchedule | None = None,
    tau: int | None = None,
    w1=None,
) -> float:
    """Exact ``E||w_{m+1} - w^{(i)}_{m+1}||`` by enumerating orders and sampler choices.

    Feasible only for tiny ``T`` (every ordered ``(m+1)``-prefix times every
    reservoir position sequence).
    """
    T = family.T
    if not 1 <= i <= m < T:
        raise ValueError(f"need 1 <= i <= m < T, got i={i}, m={m}, T={T}")
    schedule, tau = _algorithm_setup(algorithm, family, schedule, tau)
    w1 = family.domain.midpoint if w1 is None else np.asarray(w1, dtype=np.float64)
    eta = schedule.steps(m)
    prefixes = np.array(list(itertools.permutations(range(T), m + 1)), dtype=np.int64)
    p_prefix = 1.0 / prefixes.shape[0]
    S = prefixes[:, :m]
    S_swap = S.copy()
    S_swap[:, i - 1] = prefixes[:, m]
    if algorithm == "reservoir":
        choices = list(reservoir_choice_tree(T, m))
    else:
        choices = [(np.arange(m), 1.0)]
    total = 0.0
    for pos, prob in choices:
        W = run_final(family, S[:, pos], eta, w1)
        W_swap = run_final(family, S_swap[:, pos], eta, w1)
        total += prob * p_prefix * float(np.linalg.norm(W - W_swap, axis=1).sum())
    return total


# --------------------------------------------------------------------------
# generalization


@dataclass
class GapReport:
    m: int
    n_trials: int
    oos_gap: float
    oos_gap_se: float | None
    online_gap: float
    online_gap_se: float | None


def generalization_gap(
    algorithm: str,
    family: QuadraticFamily,
    m: int,
    n_trials: int,
    master_seed: int,
    *,
    schedule: StepSchedule | None = None,
    tau: int | None = None,
    w1=None,
) -> GapReport:
    """Monte Carlo estimates of the out-of-sample gap and the online gap.

    ``oos_gap`` is ``E[f(A(S); z~) - F_m(A(S))]`` and ``online_gap`` is
    ``E[f(w_{m+1}; z_{m+1}) - F(w_{m+1})]`` for ``S, z~`` the first ``m+1``
    points of a random order.
    """
    T = family.T
    if not 1 <= m < T:
        raise ValueError(f"need 1 <= m < T, got m={m}, T={T}")
    schedule, tau = _algorithm_setup(algorithm, family, schedule, tau)
    w1 = family.domain.midpoint if w1 is None else np.asarray(w1, dtype=np.float64)
    eta = schedule.steps(m)
    orders = trial_orders(master_seed, "gap", (m,), n_trials, T)
    S = orders[:, :m]
    held_out = orders[:, m]
    u = trial_uniforms(master_seed, "gap", (m,), n_trials, m) if algorithm == "reservoir" else None
    W = run_final(family, batch_sources(algorithm, S, u, T), eta, w1)
    f_out = family.values_rows(W, held_out)
    Fm = family.values_rows(np.repeat(W, m, axis=0), S.reshape(-1)).reshape(n_trials, m).mean(axis=1)
    F = family.population_rows(W)
    oos = f_out - Fm
    online = f_out - F
    return GapReport(
        m=m,
        n_trials=n_trials,
        oos_gap=float(oos.mean()),
        oos_gap_se=_se(oos),
        online_gap=float(online.mean()),
        online_gap_se=_se(online),
    )


# --------------------------------------------------------------------------
# bounds and diagnostics


def theorem_bound(which: str, G: float, beta: float, lam: float, D: float, T: int) -> float:
    """Closed-form expected-regret bounds for ReservoirSGD (``thm3``) and
    SGD without replacement (``thm8``)."""
    log_term = 1.0 + math.log(T)
    if which == "thm3":
        return 2 * G**2 / lam * log_term + (40 * G**2 + beta**2 * D**2 + 2 * beta * G * D) / lam
    if which == "thm8":
        return (
            20 * beta * G**2 / lam**2 * log_term
            + 16 * G * (G + beta * D) / lam
            + 6 * beta**3 * D**2 / lam**2
        )
    raise ValueError(f"unknown bound {which!r}")


BOUND_FOR = {"reservoir": "thm3", "wor": "thm8"}


def family_bound(algorithm: str, family: QuadraticFamily) -> float | None:
    which = BOUND_FOR.get(algorithm)
    if which is None:
        return None
    k = family.constants
    return theorem_bound(which, k.G, k.beta, k.lam, family.D, family.T)


def expected_contraction(
    family: QuadraticFamily, x, y, eta: float, n_draws: int, rng: np.random.Generator
) -> float:
    """Mean ``||G(x; z, eta) - G(y; z, eta)||`` over ``n_draws`` uniform components."""
    z = rng.integers(0, family.T, size=n_draws)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def step(p):
        P = np.tile(p, (n_draws, 1))
        g = family.lam * P + family.c[z][:, None] * (P @ family.B.T) + family.A[z]
        return project_rows(family.domain, P - eta * g)

    return float(np.linalg.norm(step(x) - step(y), axis=1).mean())


def fit_log(T_values, regrets) -> dict:
    """OLS of regret on ``(1, log T)``; flags sublinearity along the grid."""
    T_values = np.asarray(T_values, dtype=np.float64)
    y = np.asarray(regrets, dtype=np.float64)
    per_T = y / T_values
    sublinear = bool(np.all(np.diff(per_T) < 0))
    if T_values.shape[0] < 3:
        return {"fit": None, "sublinear": sublinear}
    X = np.column_stack([np.ones_like(T_values), np.log(T_values)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return {
        "fit": {"intercept": float(coef[0]), "slope": float(coef[1]), "r2": r2},
        "sublinear": sublinear,
    }


def weighted_slope(x, y, se) -> tuple[float, float]:
    """Weighted least-squares slope of ``y`` on ``x`` and its standard error."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = 1.0 / np.asarray(se, dtype=np.float64) ** 2
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    return slope, float(math.sqrt(1.0 / sxx))
