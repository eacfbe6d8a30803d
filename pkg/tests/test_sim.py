"""Tests for the Euler-Maruyama simulator, initial distributions, and CSV IO."""

import numpy as np
import pytest

from snapdrift.potentials import NamedPotential, PolynomialPotential
from snapdrift.rng import normal_block
from snapdrift.sim import (
    DiracInit,
    GaussianInit,
    GibbsInit,
    LangevinModel,
    RademacherInit,
    SimulationDivergedError,
    SnapshotSeries,
    TrajectorySet,
    UniformBox,
    initial_from_dict,
    sample_initial,
    shuffle_to_snapshots,
    simulate,
    simulate_piecewise,
)


def quadratic_model(sigma2=0.2):
    return LangevinModel(NamedPotential("quadratic"), sigma2)


def test_simulate_matches_hand_recursion():
    # Oracle: replay the update x <- x - grad(x) dt + sqrt(sigma2 dt) z with
    # the same per-step noise blocks the simulator is documented to consume.
    model = quadratic_model(0.3)
    rng = np.random.default_rng(0)
    init = rng.uniform(-2, 2, size=(40, 2))
    times = np.array([0.0, 0.01, 0.02, 0.05, 0.1])
    trajs = simulate(model, init, times, seed=11)
    x = init.copy()
    assert np.array_equal(trajs.paths[:, 0], init)
    for s in range(times.size - 1):
        dt = times[s + 1] - times[s]
        z = normal_block(11, s, 40, 2)
        x = x - model.potential.gradient(x) * dt + np.sqrt(model.sigma2 * dt) * z
        assert np.array_equal(trajs.paths[:, s + 1], x)


def test_simulate_zero_noise_is_deterministic_gradient_flow():
    model = quadratic_model(0.0)
    init = np.array([[1.0, -2.0], [0.5, 0.25]])
    trajs = simulate(model, init, [0.0, 0.1, 0.2], seed=5)
    x = init
    for _ in range(2):
        x = x - 0.1 * model.potential.gradient(x)
    assert np.allclose(trajs.paths[:, -1], x, rtol=0, atol=0)


def test_simulate_reproducible_and_seed_sensitive():
    model = quadratic_model()
    init = np.zeros((30, 2))
    times = [0.0, 0.01, 0.02]
    a = simulate(model, init, times, seed=3)
    b = simulate(model, init, times, seed=3)
    c = simulate(model, init, times, seed=4)
    assert np.array_equal(a.paths, b.paths)
    assert not np.array_equal(a.paths, c.paths)


def test_simulate_ou_moments_match_variance_recursion():
    # For the quadratic potential the EM chain is an AR(1):
    #   x_{s+1} = (1 - 2 dt) x_s + sqrt(sigma2 dt) z,
    # so mean and variance follow an exact linear recursion.
    model = quadratic_model(0.2)
    n, dt, steps = 50_000, 0.01, 50
    init = np.tile([3.0, -1.0], (n, 1))
    times = dt * np.arange(steps + 1)
    trajs = simulate(model, init, times, seed=77)
    mean, var = np.array([3.0, -1.0]), 0.0
    for _ in range(steps):
        mean = (1 - 2 * dt) * mean
        var = (1 - 2 * dt) ** 2 * var + model.sigma2 * dt
    final = trajs.paths[:, -1, :]
    assert np.allclose(final.mean(axis=0), mean, atol=0.01)
    assert np.allclose(final.var(axis=0), var, rtol=0.05)


def test_simulate_validates_times_and_init():
    model = quadratic_model()
    init = np.zeros((5, 2))
    with pytest.raises(ValueError):
        simulate(model, init, [0.1, 0.2], seed=0)  # must start at 0
    with pytest.raises(ValueError):
        simulate(model, init, [0.0, 0.2, 0.1], seed=0)  # must increase
    with pytest.raises(ValueError):
        simulate(model, init, [0.0], seed=0)  # needs two times
    with pytest.raises(ValueError):
        simulate(model, np.zeros((5, 3)), [0.0, 0.1], seed=0)  # wrong dim


def test_simulate_raises_on_divergence():
    # Inverted quartic: drift +20 x^3 pushes mass outward explosively.
    pot = PolynomialPotential(2, 4, {(4, 0): -5.0, (0, 4): -5.0})
    model = LangevinModel(pot, 0.0)
    init = np.array([[2.0, 2.0]])
    with pytest.raises(SimulationDivergedError) as exc:
        simulate(model, init, [0.0, 0.5, 1.0, 1.5], seed=0)
    assert exc.value.path_index == 0
    assert exc.value.step >= 1


def test_simulate_piecewise_single_regime_equals_simulate():
    model = quadratic_model(0.25)
    init = np.random.default_rng(2).uniform(-1, 1, size=(20, 2))
    times = np.linspace(0.0, 0.1, 11)
    a = simulate(model, init, times, seed=9)
    b = simulate_piecewise([model], [0.0], times, init, seed=9)
    assert np.array_equal(a.paths, b.paths)


def test_simulate_piecewise_switches_models_at_regime_start():
    # Zero noise: before the switch the state contracts by (1 - 2 dt) per
    # step (quadratic), after it contracts by (1 - 6 dt) (3x quadratic).
    slow = LangevinModel(NamedPotential("quadratic"), 0.0)
    fast = LangevinModel(NamedPotential("quadratic", scale=3.0), 0.0)
    init = np.array([[1.0, 1.0]])
    times = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
    trajs = simulate_piecewise([slow, fast], [0.0, 0.2], times, init, seed=0)
    x = 1.0
    expected = [x]
    for t in times[:-1]:
        x *= (1 - 2 * 0.1) if t < 0.2 else (1 - 6 * 0.1)
        expected.append(x)
    assert np.allclose(trajs.paths[0, :, 0], expected, atol=1e-12)


def test_simulate_piecewise_validates_regimes():
    model = quadratic_model()
    init = np.zeros((3, 2))
    with pytest.raises(ValueError):
        simulate_piecewise([model], [0.1], [0.0, 0.2], init, seed=0)
    with pytest.raises(ValueError):
        simulate_piecewise([model, model], [0.0, 0.2, 0.3], [0.0, 0.1], init, seed=0)


def test_trajectory_csv_round_trip(tmp_path):
    model = quadratic_model()
    init = np.random.default_rng(4).uniform(-3, 3, size=(17, 2))
    trajs = simulate(model, init, [0.0, 0.01, 0.03], seed=21)
    p = tmp_path / "trajs.csv"
    trajs.to_csv(p)
    back = TrajectorySet.from_csv(p)
    assert np.array_equal(back.times, trajs.times)
    assert np.array_equal(back.paths, trajs.paths)


def test_trajectory_csv_is_row_order_insensitive(tmp_path):
    trajs = simulate(quadratic_model(), np.ones((6, 2)), [0.0, 0.02], seed=1)
    p = tmp_path / "t.csv"
    trajs.to_csv(p)
    lines = p.read_text().strip().splitlines()
    shuffled = [lines[0]] + list(np.random.default_rng(0).permutation(lines[1:]))
    q = tmp_path / "shuffled.csv"
    q.write_text("\n".join(shuffled) + "\n")
    back = TrajectorySet.from_csv(q)
    assert np.array_equal(back.paths, trajs.paths)


def test_snapshot_csv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    series = SnapshotSeries(
        np.array([0.0, 0.5, 1.25]),
        [rng.normal(size=(9, 2)), rng.normal(size=(9, 2)), rng.normal(size=(9, 2))],
    )
    p = tmp_path / "snaps.csv"
    series.to_csv(p)
    back = SnapshotSeries.from_csv(p)
    assert np.array_equal(back.times, series.times)
    for a, b in zip(back.clouds, series.clouds):
        assert np.array_equal(a, b)


def test_csv_readers_reject_wrong_layout(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("time,sample_id,x1,x2\n0,0,1,2\n")
    with pytest.raises(ValueError):
        TrajectorySet.from_csv(p)
    q = tmp_path / "y.csv"
    q.write_text("path_id,time,x1,x2\n0,0,1,2\n")
    with pytest.raises(ValueError):
        SnapshotSeries.from_csv(q)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("path_id,time,x1,x2\n0,0,1,2\n0,0.1,1,2\n1,0,3,4\n")
    with pytest.raises(ValueError):
        TrajectorySet.from_csv(ragged)


def test_shuffle_preserves_multisets_and_breaks_pairings():
    trajs = simulate(quadratic_model(), np.random.default_rng(3).uniform(-2, 2, (80, 2)), [0.0, 0.01, 0.02], seed=6)
    snaps = shuffle_to_snapshots(trajs, seed=13)
    assert snaps.n_times == 3
    changed = 0
    for i in range(3):
        a = np.array(sorted(map(tuple, trajs.snapshot(i))))
        b = np.array(sorted(map(tuple, snaps.clouds[i])))
        assert np.array_equal(a, b)
        changed += int(not np.array_equal(trajs.snapshot(i), snaps.clouds[i]))
    assert changed >= 2  # permutations actually reorder the clouds
    again = shuffle_to_snapshots(trajs, seed=13)
    for a, b in zip(snaps.clouds, again.clouds):
        assert np.array_equal(a, b)


def test_shuffle_keep_selects_times():
    trajs = simulate(quadratic_model(), np.zeros((10, 2)), [0.0, 0.01, 0.02, 0.03], seed=0)
    snaps = shuffle_to_snapshots(trajs, seed=1, keep=[0, 2])
    assert np.array_equal(snaps.times, [0.0, 0.02])
    assert len(snaps.clouds) == 2


def test_uniform_box_and_rademacher_samples():
    box = UniformBox(3.0)
    x = box.sample(20_000, seed=1)
    assert np.all(np.abs(x) <= 3.0)
    assert np.allclose(x.mean(axis=0), 0.0, atol=0.08)
    assert np.allclose(x.var(axis=0), 9.0 / 3.0, rtol=0.05)
    rad = RademacherInit(2.0)
    y = rad.sample(10_000, seed=2)
    assert set(np.unique(np.abs(y))) == {2.0}
    assert abs((y > 0).mean() - 0.5) < 0.02


def test_rademacher_scales_linearly_under_shared_seed():
    # The same seed draws the same signs, so Rademacher(r) = r * Rademacher(1).
    a = RademacherInit(1.0).sample(500, seed=42)
    b = RademacherInit(2.5).sample(500, seed=42)
    assert np.array_equal(b, 2.5 * a)


def test_gaussian_and_dirac_inits():
    g = GaussianInit((1.0, -2.0), ((0.5, 0.2), (0.2, 0.4)))
    x = g.sample(40_000, seed=5)
    assert np.allclose(x.mean(axis=0), [1.0, -2.0], atol=0.02)
    assert np.allclose(np.cov(x.T), [[0.5, 0.2], [0.2, 0.4]], atol=0.02)
    with pytest.raises(ValueError):
        GaussianInit((0.0, 0.0), ((1.0, 0.5), (0.2, 1.0)))  # asymmetric
    with pytest.raises(ValueError):
        GaussianInit((0.0, 0.0), ((1.0, 0.0), (0.0, -1.0)))  # not PSD
    d = DiracInit((0.5, -0.5))
    assert np.array_equal(d.sample(7, seed=0), np.tile([0.5, -0.5], (7, 1)))


def test_gibbs_init_matches_quadratic_stationary_variance():
    # Gibbs density ~ exp(-2 |x|^2 / sigma2) is Gaussian with var sigma2/4.
    model = quadratic_model(0.2)
    x = GibbsInit(model).sample(4000, seed=3)
    assert np.allclose(x.mean(axis=0), 0.0, atol=0.03)
    assert np.allclose(x.var(axis=0), 0.05, rtol=0.15)
    y = GibbsInit(model, method="burnin", burnin_steps=500).sample(4000, seed=4)
    assert np.allclose(y.var(axis=0), 0.05, rtol=0.15)
    with pytest.raises(ValueError):
        GibbsInit(model, method="nope")


def test_sample_initial_validates():
    with pytest.raises(ValueError):
        sample_initial(UniformBox(1.0), 0, seed=0)
    x = sample_initial(UniformBox(1.0, dim=3), 5, seed=0)
    assert x.shape == (5, 3)


def test_initial_from_dict_round_trips():
    model = quadratic_model()
    specs = [
        UniformBox(2.0, 2),
        GaussianInit((0.0, 1.0), ((1.0, 0.0), (0.0, 2.0))),
        RademacherInit(3.0, 2),
        DiracInit((1.0, 2.0)),
    ]
    for dist in specs:
        back = initial_from_dict(dist.to_dict(), model)
        assert back == dist
    gibbs = initial_from_dict({"kind": "gibbs"}, model)
    assert isinstance(gibbs, GibbsInit)
    with pytest.raises(ValueError):
        initial_from_dict({"kind": "gibbs"})  # needs the model
    with pytest.raises(ValueError):
        initial_from_dict({"kind": "mystery"}, model)


def test_model_round_trip_and_validation():
    model = quadratic_model(0.4)
    back = LangevinModel.from_dict(model.to_dict())
    assert back.sigma2 == model.sigma2
    assert back.potential == model.potential
    with pytest.raises(ValueError):
        LangevinModel(NamedPotential("quadratic"), -0.1)
    with pytest.raises(ValueError):
        LangevinModel(NamedPotential("quadratic"), float("nan"))
