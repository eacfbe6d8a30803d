"""Tests for trajectory MLE, entropic couplings, and the alternating estimator."""

import numpy as np
import pytest

from snapdrift.estimate import (
    AppexConfig,
    EstimationResult,
    EstimationWarning,
    RegimeSpec,
    appex_estimate,
    estimate_piecewise,
    mle_from_trajectories,
    result_to_model,
    sample_pairing,
    sinkhorn_coupling,
)
from snapdrift.metrics import cosine_similarity, grid_points
from snapdrift.potentials import NamedPotential, PolynomialPotential, gradient_basis, multi_indices
from snapdrift.sim import (
    GibbsInit,
    LangevinModel,
    SnapshotSeries,
    TrajectorySet,
    UniformBox,
    sample_initial,
    shuffle_to_snapshots,
    simulate,
    simulate_piecewise,
)


def quadratic_model(sigma2=0.2):
    return LangevinModel(NamedPotential("quadratic"), sigma2)


def zero_drift_model(sigma2):
    return LangevinModel(PolynomialPotential(2, 2, {}), sigma2)


# ---------------------------------------------------------------------------
# trajectory MLE


def test_mle_matches_stacked_least_squares_oracle():
    # Oracle: solve min_theta sum_n ||(x1-x0) + dt * B(x0) theta||^2 by
    # stacking rows and calling lstsq directly.
    rng = np.random.default_rng(0)
    n, dt, degree = 200, 0.05, 3
    x0 = rng.uniform(-2, 2, size=(n, 2))
    true = PolynomialPotential(2, 2, {(2, 0): 1.0, (0, 2): 1.0, (1, 1): 0.3})
    noise = rng.normal(size=(n, 2))
    x1 = x0 - dt * true.gradient(x0) + np.sqrt(0.2 * dt) * noise
    trajs = TrajectorySet(np.array([0.0, dt]), np.stack([x0, x1], axis=1), seed=0)
    fit = mle_from_trajectories(trajs, degree=degree)

    B = gradient_basis(x0, 2, degree)  # (n, nb, d)
    A = dt * B.transpose(0, 2, 1).reshape(n * 2, -1)
    y = -(x1 - x0).reshape(n * 2)
    theta_ls, *_ = np.linalg.lstsq(A, y, rcond=None)
    alphas = multi_indices(2, degree)
    theta_fit = np.array([fit.coefficients[a] for a in alphas])
    assert np.allclose(theta_fit, theta_ls, rtol=0, atol=1e-9)

    resid = (x1 - x0) + dt * np.einsum("nbd,b->nd", B, theta_fit)
    sigma2_oracle = (resid**2).sum() / (n * 2 * dt)
    assert fit.sigma2_hat == pytest.approx(sigma2_oracle, rel=1e-12)
    assert fit.data_setting == "trajectories"
    assert fit.converged


def test_mle_recovers_exactly_with_zero_noise():
    model = quadratic_model(0.0)
    init = np.random.default_rng(1).uniform(-3, 3, size=(60, 2))
    trajs = simulate(model, init, [0.0, 0.02, 0.04, 0.1], seed=2)
    with pytest.warns(EstimationWarning, match="floored"):
        fit = mle_from_trajectories(trajs, degree=2)
    assert fit.coefficients[(2, 0)] == pytest.approx(1.0, abs=1e-9)
    assert fit.coefficients[(0, 2)] == pytest.approx(1.0, abs=1e-9)
    assert fit.coefficients[(1, 1)] == pytest.approx(0.0, abs=1e-9)
    assert fit.sigma2_hat == pytest.approx(1e-8)
    assert any("floored" in w for w in fit.warnings)


def test_mle_handles_nonuniform_time_grids_exactly():
    model = quadratic_model(0.0)
    init = np.random.default_rng(3).uniform(-2, 2, size=(40, 2))
    trajs = simulate(model, init, [0.0, 0.01, 0.05, 0.2], seed=4)
    with pytest.warns(EstimationWarning):
        fit = mle_from_trajectories(trajs, degree=2)
    assert fit.coefficients[(2, 0)] == pytest.approx(1.0, abs=1e-9)


def test_mle_is_consistent_on_ou_data():
    model = quadratic_model(0.2)
    init = sample_initial(UniformBox(2.0), 5000, seed=5)
    trajs = simulate(model, init, 0.01 * np.arange(6), seed=6)
    fit = mle_from_trajectories(trajs, degree=2)
    assert fit.coefficients[(2, 0)] == pytest.approx(1.0, abs=0.06)
    assert fit.coefficients[(0, 2)] == pytest.approx(1.0, abs=0.06)
    assert fit.coefficients[(1, 1)] == pytest.approx(0.0, abs=0.06)
    assert fit.sigma2_hat == pytest.approx(0.2, rel=0.03)


def test_mle_pools_pairs_like_one_big_cloud():
    # Two transitions of the same dt carry the same information whether they
    # arrive as consecutive steps of one panel or stacked into a single pair.
    model = quadratic_model(0.3)
    init = np.random.default_rng(7).uniform(-2, 2, size=(50, 2))
    trajs = simulate(model, init, [0.0, 0.02, 0.04], seed=8)
    fit_panel = mle_from_trajectories(trajs, degree=2)
    stacked_x0 = np.vstack([trajs.paths[:, 0], trajs.paths[:, 1]])
    stacked_x1 = np.vstack([trajs.paths[:, 1], trajs.paths[:, 2]])
    stacked = TrajectorySet(
        np.array([0.0, 0.02]), np.stack([stacked_x0, stacked_x1], axis=1), seed=0
    )
    fit_stacked = mle_from_trajectories(stacked, degree=2)
    for a in multi_indices(2, 2):
        assert fit_panel.coefficients[a] == pytest.approx(fit_stacked.coefficients[a], abs=1e-12)
    assert fit_panel.sigma2_hat == pytest.approx(fit_stacked.sigma2_hat, rel=1e-12)


def test_mle_warns_on_rank_deficient_design():
    # All mass on the x-axis: monomials that only vary off-axis are dead.
    rng = np.random.default_rng(9)
    x0 = np.column_stack([rng.uniform(-2, 2, 30), np.zeros(30)])
    x1 = x0 * 0.9
    trajs = TrajectorySet(np.array([0.0, 0.05]), np.stack([x0, x1], axis=1), seed=0)
    with pytest.warns(EstimationWarning, match="rank-deficient"):
        fit = mle_from_trajectories(trajs, degree=4)
    assert any("rank-deficient" in w for w in fit.warnings)
    assert np.isfinite(fit.sigma2_hat)


def test_mle_validates_inputs():
    trajs = simulate(quadratic_model(), np.zeros((3, 2)), [0.0, 0.01], seed=0)
    with pytest.raises(ValueError, match="cannot identify"):
        mle_from_trajectories(trajs, degree=4)  # 3 transitions, 14 coefficients
    one_time = TrajectorySet(np.array([0.0]), np.zeros((3, 1, 2)), seed=0)
    with pytest.raises(ValueError):
        mle_from_trajectories(one_time)


# ---------------------------------------------------------------------------
# entropic couplings


def test_sinkhorn_two_point_plan_matches_enumeration():
    # 2x2 entropic OT has a closed form: P00/P01 = exp((C01 - C00)/eps).
    x0 = np.array([[0.0, 0.0], [1.0, 0.0]])
    x1 = np.array([[0.0, 0.0], [1.0, 0.0]])
    guess = zero_drift_model(0.5)
    cp = sinkhorn_coupling(x0, x1, guess, dt=1.0, epsilon_scale=1.0, tol=1e-10)
    ratio = np.exp((1.0 - 0.0) / 0.5)
    p = 0.5 * ratio / (1.0 + ratio)
    expected = np.array([[p, 0.5 - p], [0.5 - p, p]])
    assert np.allclose(cp.weights, expected, atol=1e-6)
    assert cp.converged


def test_sinkhorn_singleton_is_trivial():
    cp = sinkhorn_coupling(
        np.array([[0.0, 0.0]]), np.array([[0.3, 0.0]]), zero_drift_model(0.1), dt=0.5
    )
    assert np.allclose(cp.weights, [[1.0]])
    assert cp.converged


def test_sinkhorn_marginals_are_exact_after_rounding():
    rng = np.random.default_rng(10)
    x0 = rng.uniform(-2, 2, size=(30, 2))
    x1 = rng.uniform(-2, 2, size=(40, 2))
    cp = sinkhorn_coupling(x0, x1, quadratic_model(0.2), dt=0.05)
    assert cp.weights.shape == (30, 40)
    assert np.all(cp.weights >= 0)
    assert np.abs(cp.weights.sum(axis=1) - 1.0 / 30).max() < 1e-12
    assert np.abs(cp.weights.sum(axis=0) - 1.0 / 40).max() < 1e-12
    # pre-rounding plans can stall shy of the strict tolerance on generic
    # clouds; the deviation they stall at must still be tiny
    assert cp.marginal_violation <= 1e-4


def test_sinkhorn_concentrates_on_true_pairing_when_separated():
    # Well-separated clouds with tiny noise: the plan is almost a permutation.
    rng = np.random.default_rng(11)
    x0 = rng.uniform(-4, 4, size=(50, 2))
    x1 = x0 + 0.01 * rng.normal(size=(50, 2))
    cp = sinkhorn_coupling(x0, x1, zero_drift_model(0.01), dt=0.01)
    diag = np.diag(cp.weights).sum()
    assert diag > 0.99  # nearly all mass on the identity pairing


def test_sinkhorn_requires_positive_regularization():
    with pytest.raises(ValueError):
        sinkhorn_coupling(np.zeros((3, 2)), np.zeros((3, 2)), zero_drift_model(0.0), dt=0.1)


def test_sinkhorn_warm_start_reproduces_plan():
    rng = np.random.default_rng(12)
    x0 = rng.uniform(-2, 2, size=(25, 2))
    x1 = x0 * 0.95 + 0.05 * rng.normal(size=(25, 2))
    guess = quadratic_model(0.2)
    cold = sinkhorn_coupling(x0, x1, guess, dt=0.05)
    warm = sinkhorn_coupling(x0, x1, guess, dt=0.05, warm=(cold.f, cold.g))
    assert warm.iterations <= cold.iterations
    assert np.allclose(warm.weights, cold.weights, atol=1e-6)


def test_sample_pairing_is_bijective_and_exact_on_permutations():
    rng = np.random.default_rng(13)
    w = rng.uniform(0.0, 1.0, size=(12, 12))
    w /= w.sum()
    pairing = sample_pairing(w, np.random.default_rng(0))
    assert sorted(pairing) == list(range(12))
    ident = np.eye(8) / 8.0
    assert np.array_equal(sample_pairing(ident, np.random.default_rng(1)), np.arange(8))
    with pytest.raises(ValueError):
        sample_pairing(np.ones((3, 4)) / 12.0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# alternating snapshot estimator


def test_appex_recovers_transient_quadratic():
    model = quadratic_model(0.2)
    init = sample_initial(UniformBox(3.0), 300, seed=14)
    trajs = simulate(model, init, [0.0, 0.01], seed=15)
    snaps = shuffle_to_snapshots(trajs, seed=16)
    fit = appex_estimate(snaps, degree=2, config=AppexConfig(seed=17))
    grid = grid_points(3.0, 15)
    assert cosine_similarity(model, result_to_model(fit), grid) > 0.99
    assert fit.sigma2_hat == pytest.approx(0.2, abs=0.05)
    assert fit.data_setting == "marginals"
    assert fit.iterations <= 30
    trace = np.asarray(fit.loglik_trace)
    assert np.all(np.diff(trace) >= -1e-6)  # the ascended objective


def test_appex_near_trajectory_fit_when_pairing_is_unambiguous():
    # Far-separated clouds let OT recover the exact pairing, so the
    # marginals fit must agree with the trajectory MLE.
    model = quadratic_model(0.2)
    init = sample_initial(UniformBox(4.0), 400, seed=18)
    trajs = simulate(model, init, [0.0, 0.001], seed=19)
    snaps = shuffle_to_snapshots(trajs, seed=20)
    fit_m = appex_estimate(snaps, degree=2, config=AppexConfig(seed=21))
    fit_t = mle_from_trajectories(trajs, degree=2)
    assert fit_m.sigma2_hat == pytest.approx(fit_t.sigma2_hat, rel=0.05)
    for a in multi_indices(2, 2):
        assert fit_m.coefficients[a] == pytest.approx(fit_t.coefficients[a], abs=0.05)


def test_appex_validates_inputs():
    with pytest.raises(ValueError):
        appex_estimate(SnapshotSeries(np.array([0.0]), [np.zeros((20, 2))]))


def test_appex_config_from_dict_reads_nested_sinkhorn_block():
    cfg = AppexConfig.from_dict(
        {
            "tol": 1e-3,
            "max_outer": 7,
            "hard_pairing": True,
            "seed": 5,
            "sinkhorn": {"epsilon_scale": 2.0, "max_iter": 500, "tol": 1e-6},
        }
    )
    assert cfg.tol == 1e-3
    assert cfg.max_outer == 7
    assert cfg.hard_pairing is True
    assert cfg.seed == 5
    assert cfg.epsilon_scale == 2.0
    assert cfg.sinkhorn_max_iter == 500
    assert cfg.sinkhorn_tol == 1e-6
    assert AppexConfig.from_dict({}) == AppexConfig()


def test_estimation_result_round_trips_through_dict():
    res = EstimationResult(
        coefficients={(2, 0): 1.5, (1, 1): -0.25, (0, 2): 0.75},
        sigma2_hat=0.31,
        degree=2,
        dim=2,
        data_setting="marginals",
        iterations=4,
        converged=True,
        loglik_trace=[-10.0, -8.0, -7.9],
        warnings=["note"],
        diagnostics={"k": 1},
        config={"tol": 1e-4},
    )
    back = EstimationResult.from_dict(res.to_dict())
    assert back.coefficients == res.coefficients
    assert back.sigma2_hat == res.sigma2_hat
    assert back.data_setting == res.data_setting
    assert back.loglik_trace == res.loglik_trace
    assert back.warnings == res.warnings
    model = result_to_model(back)
    assert model.sigma2 == pytest.approx(0.31)
    pts = np.array([[1.0, 1.0]])
    assert np.isfinite(model.potential.gradient(pts)).all()


# ---------------------------------------------------------------------------
# piecewise regimes


def test_regime_spec_assignment_and_validation():
    spec = RegimeSpec((0.0, 0.5))
    assert np.array_equal(spec.assign(np.array([0.0, 0.2, 0.5, 0.9])), [0, 0, 1, 1])
    with pytest.raises(ValueError):
        RegimeSpec((0.5, 0.2))
    with pytest.raises(ValueError):
        RegimeSpec((0.5,)).assign(np.array([0.0, 1.0]))


def test_estimate_piecewise_single_regime_matches_appex():
    model = quadratic_model(0.2)
    init = sample_initial(UniformBox(3.0), 250, seed=22)
    trajs = simulate(model, init, [0.0, 0.01, 0.02], seed=23)
    snaps = shuffle_to_snapshots(trajs, seed=24)
    cfg = AppexConfig(seed=25)
    direct = appex_estimate(snaps, degree=2, config=cfg)
    [piece] = estimate_piecewise(snaps, RegimeSpec((0.0,)), degree=2, config=cfg)
    assert piece.coefficients == direct.coefficients
    assert piece.sigma2_hat == direct.sigma2_hat
    assert piece.diagnostics["regime"] == {"index": 0, "start": 0.0}
    assert "stationarity" in piece.diagnostics


def test_estimate_piecewise_recovers_sigma2_step():
    # Diffusivity doubles at t=0.03: the per-regime fits should see it.
    low, high = quadratic_model(0.2), quadratic_model(0.4)
    init = sample_initial(UniformBox(3.0), 400, seed=26)
    times = 0.01 * np.arange(6)
    trajs = simulate_piecewise([low, high], [0.0, 0.03], times, init, seed=27)
    snaps = shuffle_to_snapshots(trajs, seed=28)
    res = estimate_piecewise(snaps, RegimeSpec((0.0, 0.03)), degree=2, config=AppexConfig(seed=29))
    assert len(res) == 2
    ratio = res[1].sigma2_hat / res[0].sigma2_hat
    assert ratio == pytest.approx(2.0, abs=0.3)


def test_estimate_piecewise_warns_on_stationary_regime():
    model = quadratic_model(0.2)
    init = GibbsInit(model).sample(200, seed=30)
    trajs = simulate(model, init, [0.0, 0.01, 0.02], seed=31)
    snaps = shuffle_to_snapshots(trajs, seed=32)
    with pytest.warns(EstimationWarning, match="rescaling"):
        [res] = estimate_piecewise(snaps, RegimeSpec((0.0,)), degree=2, config=AppexConfig(seed=33))
    assert any("rescaling" in w for w in res.warnings)


def test_estimate_piecewise_rejects_underpopulated_regime():
    snaps = SnapshotSeries(
        np.array([0.0, 0.01, 0.02]), [np.zeros((20, 2))] * 3
    )
    with pytest.raises(ValueError, match="need at least 2"):
        estimate_piecewise(snaps, RegimeSpec((0.0, 0.05)), degree=2)
