import math

import numpy as np
import pytest

from rosgd import analysis
from rosgd.analysis import (
    aggregate_regret,
    analytic_minimizer,
    fit_log,
    generalization_gap,
    population_minimizer,
    regret,
    regret_decomposition,
    regret_trials,
    stability_estimate,
    stability_exhaustive,
    stability_max,
    theorem_bound,
    trial_orders,
    weighted_slope,
)
from rosgd.domain import box, euclidean_ball
from rosgd.families import (
    generate_quadratic_family,
    identical_family,
    loss_gradient,
    population_gradient,
    population_value,
)
from rosgd.optimizers import (
    Trajectory,
    default_schedule,
    run_ogd_baseline,
    run_reservoir_sgd,
    run_sgd_wor,
    wor_schedule,
)
from rosgd.sampling import OrderStream, random_permutation


@pytest.fixture(scope="module")
def fam():
    return generate_quadratic_family(3, 32, 1.0, 1.0, seed=8)


# -- minimizer ---------------------------------------------------------------


def test_minimizer_examples():
    f0 = identical_family(euclidean_ball(2), 4)
    np.testing.assert_allclose(population_minimizer(f0), [0.0, 0.0], atol=1e-12)
    f1 = identical_family(euclidean_ball(2), 4, lam=1.0, a=[0.2, 0.0])
    np.testing.assert_allclose(population_minimizer(f1), [-0.2, 0.0], atol=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_numeric_matches_analytic_minimizer(seed):
    boundary = seed % 4 == 3
    dom = box(-0.5 * np.ones(4), 0.5 * np.ones(4)) if seed % 5 == 4 else None
    f = generate_quadratic_family(
        4, 16 + seed, 0.5 + 0.1 * seed, 1.0, seed, a_norm=3.0, interior_minimizer=not boundary, domain=dom
    )
    w_num = population_minimizer(f)
    # the first-order optimality condition holds against random feasible points
    g = population_gradient(f, w_num)
    for v in analysis.project_rows(f.domain, np.random.default_rng(seed).uniform(-1, 1, (200, 4))):
        assert g @ (v - w_num) >= -1e-8
    assert np.linalg.norm(w_num - analytic_minimizer(f)) <= 1e-8


def test_minimizer_nonconvergence(fam, monkeypatch):
    monkeypatch.setattr(analysis, "MAX_ITER", 1)
    far = identical_family(euclidean_ball(2), 4, lam=0.001, a=[0.0001, 0.0])
    with pytest.raises(RuntimeError):
        population_minimizer(far)


# -- regret ---------------------------------------------------------------


def _stationary_trajectory(f, order, w):
    T = f.T
    return Trajectory(
        algorithm="ogd",
        iterates=np.tile(w, (T + 1, 1)),
        observed=order.permutation.copy(),
        gradient_sources=order.permutation.copy(),
        played_losses=f.values_rows(np.tile(w, (T, 1)), order.permutation),
        gradient_norms=np.zeros(T),
        step_sizes=np.ones(T),
        schedule=wor_schedule(1.0, 1.0),
    )


def test_regret_zero_at_comparator(fam):
    w_star = population_minimizer(fam)
    order = random_permutation(fam.T, 1)
    rep = regret(_stationary_trajectory(fam, order, w_star), order, fam, w_star)
    assert abs(rep.cumulative) <= 1e-12


def test_regret_single_loss():
    f = identical_family(euclidean_ball(2), 1, lam=1.0, a=[0.3, 0.4])
    order = OrderStream(np.array([0]))
    tr = run_ogd_baseline(f, order, w1=[0.5, 0.5], schedule=wor_schedule(1.0, 1.0))
    w_star = population_minimizer(f)
    rep = regret(tr, order, f, w_star)
    assert rep.cumulative == pytest.approx(population_value(f, [0.5, 0.5]) - population_value(f, w_star))
    assert rep.cumulative >= 0


def test_comparator_sum_invariant(fam):
    w_star = population_minimizer(fam)
    sums = [
        fam.values_rows(np.tile(w_star, (fam.T, 1)), random_permutation(fam.T, s).permutation).sum()
        for s in range(10)
    ]
    assert np.ptp(sums) <= 1e-9
    assert sums[0] == pytest.approx(fam.T * population_value(fam, w_star), abs=1e-9)


def test_regret_rejects_mismatch(fam):
    tr = run_ogd_baseline(fam, random_permutation(fam.T, 0))
    with pytest.raises(ValueError):
        regret(tr, random_permutation(fam.T, 1), fam, population_minimizer(fam))


@pytest.mark.parametrize("alg", ["reservoir", "wor", "ogd"])
def test_decomposition_sums(fam, alg):
    order = random_permutation(fam.T, 3)
    tr = {"reservoir": run_reservoir_sgd, "wor": run_sgd_wor, "ogd": run_ogd_baseline}[alg](fam, order)
    w_star = population_minimizer(fam)
    parts = regret_decomposition(tr, fam, w_star)
    assert abs(parts["comparator"]) <= 1e-9
    assert parts["online_gap"] + parts["optimization"] + parts["comparator"] == pytest.approx(parts["total"], abs=1e-9)
    assert parts["total"] == pytest.approx(regret(tr, order, fam, w_star).cumulative, abs=1e-9)


@pytest.mark.parametrize("alg", ["reservoir", "wor", "ogd"])
def test_batched_regret_matches_single_runs(fam, alg):
    rep = regret_trials(alg, fam, 5, master_seed=4, key=(1,), chunk=2)
    w_star = population_minimizer(fam)
    for k in range(5):
        order = OrderStream(trial_orders(4, "regret", (1,), 5, fam.T)[k])
        if alg == "reservoir":
            tr = run_reservoir_sgd(fam, order, seed=analysis.derive_rng(4, "regret/sampler", 1, k))
        elif alg == "wor":
            tr = run_sgd_wor(fam, order)
        else:
            tr = run_ogd_baseline(fam, order)
        assert regret(tr, order, fam, w_star).cumulative == pytest.approx(rep.samples[k], abs=1e-11)
    assert rep.cumulative == pytest.approx(rep.per_round_regret.sum(), abs=1e-9)
    assert rep.cumulative_se is not None


def test_aggregate_regret(fam):
    w_star = population_minimizer(fam)
    reps = []
    for s in range(4):
        order = random_permutation(fam.T, s)
        reps.append(regret(run_ogd_baseline(fam, order), order, fam, w_star))
    agg = aggregate_regret(reps, theorem_bound=1e6)
    assert agg.cumulative == pytest.approx(agg.per_round_regret.sum(), abs=1e-9)
    assert agg.within_bound()
    assert aggregate_regret(reps[:1]).cumulative_se is None


# -- stability --------------------------------------------------------------


@pytest.mark.parametrize("alg", ["reservoir", "wor", "ogd"])
def test_identical_losses_are_stable(alg):
    f = identical_family(euclidean_ball(3), 20, lam=1.0, a=[0.3, 0.0, -0.2])
    rep = stability_estimate(alg, f, 6, 3, 50, 0)
    assert rep.epsilon_hat == 0.0
    gap = generalization_gap(alg, f, 6, 50, 0)
    assert gap.oos_gap == pytest.approx(0.0, abs=1e-15)
    assert gap.online_gap == pytest.approx(0.0, abs=1e-15)


def test_m1_hand_rolled(fam):
    rep = stability_estimate("reservoir", fam, 1, 1, 200, master_seed=3)
    orders = trial_orders(3, "stability", (1,), 200, fam.T)
    eta = default_schedule("reservoir", fam).steps(1)[0]
    w1 = fam.domain.midpoint
    want = [
        np.linalg.norm(
            fam.domain.project(w1 - eta * loss_gradient(fam, w1, o[0]))
            - fam.domain.project(w1 - eta * loss_gradient(fam, w1, o[1]))
        )
        for o in orders
    ]
    np.testing.assert_allclose(rep.samples, want, atol=1e-15)


@pytest.mark.parametrize("alg", ["reservoir", "wor", "ogd"])
@pytest.mark.parametrize("m,i", [(3, 1), (3, 2), (3, 3), (5, 5)])
def test_exhaustive_matches_monte_carlo_t6(alg, m, i):
    f = generate_quadratic_family(3, 6, 1.0, 1.0, seed=1)
    exact = stability_exhaustive(alg, f, m, i)
    mc = stability_estimate(alg, f, m, i, 8000, 0)
    assert abs(mc.epsilon_hat - exact) <= 3 * mc.se


def test_stability_flags_and_errors(fam):
    tau = analysis.default_tau(fam)
    rep = stability_estimate("wor", fam, tau + 1, 1, 4, 0)
    assert "m_exceeds_tau" in rep.flags
    with pytest.raises(ValueError):
        stability_estimate("wor", fam, 3, 4, 4, 0)
    with pytest.raises(ValueError):
        stability_estimate("sgd", fam, 3, 1, 4, 0)


def test_stability_max_reports_grid(fam):
    best, reps = stability_max("ogd", fam, 9, 40, 0)
    assert [r.i for r in reps] == [1, 5, 9]
    assert best.epsilon_hat == max(r.epsilon_hat for r in reps)


def test_gap_last_held_out_point(fam):
    m = fam.T - 1
    gap = generalization_gap("ogd", fam, m, 30, 2)
    assert np.isfinite(gap.oos_gap) and gap.oos_gap_se is not None


# -- bounds and fits ----------------------------------------------------------


def test_theorem_bound_values():
    assert theorem_bound("thm3", 1, 1, 1, 1, 1) == 45
    assert theorem_bound("thm8", 1, 1, 1, 1, 1) == 58
    for which in ("thm3", "thm8"):
        vals = [theorem_bound(which, 3.1, 2.1, 1.0, 2.0, T) for T in (1, 2, 10, 512, 8192)]
        assert np.all(np.diff(vals) >= 0)
    with pytest.raises(ValueError):
        theorem_bound("thm4", 1, 1, 1, 1, 1)


def test_fit_log_exact():
    T = np.array([512, 1024, 2048, 4096, 8192])
    res = fit_log(T, 5 + 3 * np.log(T))
    assert res["fit"]["slope"] == pytest.approx(3.0, abs=1e-12)
    assert res["fit"]["intercept"] == pytest.approx(5.0, abs=1e-10)
    assert res["fit"]["r2"] == pytest.approx(1.0, abs=1e-12)
    assert res["sublinear"]
    flat = fit_log(T, np.full(5, 7.0))
    assert flat["fit"]["slope"] == pytest.approx(0.0, abs=1e-12)
    assert fit_log([10, 20], [1.0, 1.5]) == {"fit": None, "sublinear": True}
    assert not fit_log(T, T * 1.0)["sublinear"]


def test_weighted_slope():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    s, se = weighted_slope(x, 2 * x + 1, np.ones(4))
    assert s == pytest.approx(2.0)
    assert se == pytest.approx(1 / math.sqrt(5.0))


def test_expected_contraction_identity_case():
    f = identical_family(euclidean_ball(2, 10.0), 3, lam=1.0)
    rng = np.random.default_rng(0)
    x, y = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    got = analysis.expected_contraction(f, x, y, 0.25, 10, rng)
    assert got == pytest.approx(0.75 * math.sqrt(2))


def test_wor_stability_within_rate_band():
    f = generate_quadratic_family(5, 512, 1.0, 0.1, 0)
    for m in (8, 32, 128):
        best, _ = stability_max("wor", f, m, 500, 1)
        ref = 8 * f.G / (f.lam * m)
        assert 0.05 * ref <= best.epsilon_hat <= ref


def test_reservoir_stability_eps_m_flat(acceptance_family_512):
    em = [m * stability_max("reservoir", acceptance_family_512, m, 500, 1)[0].epsilon_hat for m in (8, 64, 511)]
    assert max(em) / min(em) <= 5
