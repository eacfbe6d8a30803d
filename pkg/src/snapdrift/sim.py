"""Euler-Maruyama simulation of dX = -grad(Psi)(X) dt + sigma dW.

Provides the model container, initial-distribution specs, trajectory panels,
shuffled snapshot series, and CSV round-trips for both dataset layouts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .potentials import potential_from_dict
from .rng import normal_block, substream

# A coordinate beyond this magnitude is treated as a diverged simulation.
DIVERGENCE_LIMIT = 1.0e6


class SimulationDivergedError(RuntimeError):
    """Raised when a path leaves the sane range; records the offending path."""

    def __init__(self, path_index: int, step: int, value: float):
        self.path_index = int(path_index)
        self.step = int(step)
        super().__init__(
            f"path {path_index} diverged at step {step} (|coordinate| = {abs(value):.3g} > {DIVERGENCE_LIMIT:.0e})"
        )


@dataclass(frozen=True)
class LangevinModel:
    """Overdamped Langevin model (potential, sigma2).

    sigma2 is the squared noise amplitude; sigma2 = 0 is accepted so tests can
    run the deterministic flow, estimation itself floors sigma2 above zero.
    """

    potential: object
    sigma2: float

    def __post_init__(self):
        if not np.isfinite(self.sigma2) or self.sigma2 < 0:
            raise ValueError("sigma2 must be finite and >= 0")

    @property
    def dim(self) -> int:
        return self.potential.dim

    def to_dict(self) -> dict:
        return {"potential": self.potential.to_dict(), "sigma2": self.sigma2}

    @classmethod
    def from_dict(cls, spec: dict) -> "LangevinModel":
        return cls(potential_from_dict(spec["potential"]), float(spec["sigma2"]))


@dataclass(frozen=True)
class UniformBox:
    """Uniform on the box [-half_length, half_length]^dim."""

    half_length: float
    dim: int = 2

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = substream(seed)
        return rng.uniform(-self.half_length, self.half_length, size=(n, self.dim))

    def to_dict(self) -> dict:
        return {"kind": "uniform_box", "r": self.half_length, "d": self.dim}


@dataclass(frozen=True)
class GaussianInit:
    """Gaussian with the given mean vector and PSD covariance matrix."""

    mean: tuple
    cov: tuple

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10:
            raise ValueError("covariance must be positive semidefinite")

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = substream(seed)
        return rng.multivariate_normal(
            np.asarray(self.mean, dtype=float), np.asarray(self.cov, dtype=float), size=n, method="eigh"
        )

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mean": list(self.mean), "cov": [list(r) for r in self.cov]}


@dataclass(frozen=True)
class RademacherInit:
    """Each coordinate independently +level or -level with equal probability."""

    level: float
    dim: int = 2

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = substream(seed)
        return self.level * (2.0 * rng.integers(0, 2, size=(n, self.dim)) - 1.0)

    def to_dict(self) -> dict:
        return {"kind": "rademacher", "r": self.level, "d": self.dim}


@dataclass(frozen=True)
class DiracInit:
    """All mass at a single point."""

    point: tuple

    @property
    def dim(self) -> int:
        return len(self.point)

    def sample(self, n: int, seed: int) -> np.ndarray:
        return np.tile(np.asarray(self.point, dtype=float), (n, 1))

    def to_dict(self) -> dict:
        return {"kind": "dirac", "point": list(self.point)}


@dataclass(frozen=True)
class GibbsInit:
    """Sample from the model's Gibbs density, by Metropolis or Langevin burn-in.

    `metropolis` runs a tuned random-walk chain on the log density; `burnin`
    simulates the SDE itself from a uniform box, which mixes better on the
    oscillatory landscapes (bohachevsky, wavy_plateau, oakley_ohagan).
    """

    model: LangevinModel
    method: str = "metropolis"
    steps: int = 5000
    proposal_scale: float | None = None
    burnin_steps: int = 100
    burnin_dt: float = 0.01
    burnin_box_half: float = 4.0

    def __post_init__(self):
        if self.method not in ("metropolis", "burnin"):
            raise ValueError("method must be 'metropolis' or 'burnin'")

    @property
    def dim(self) -> int:
        return self.model.dim

    def sample(self, n: int, seed: int) -> np.ndarray:
        from . import stationary

        if self.method == "metropolis":
            return stationary.metropolis_sample(
                self.model, n, steps=self.steps, proposal_scale=self.proposal_scale, seed=seed
            )
        init = substream(seed, 1).uniform(-self.burnin_box_half, self.burnin_box_half, size=(n, self.dim))
        return stationary.langevin_burn_in(self.model, init, self.burnin_steps, self.burnin_dt, seed)

    def to_dict(self) -> dict:
        return {"kind": "gibbs", "method": self.method}


def initial_from_dict(spec: dict, model: LangevinModel | None = None):
    """Rebuild an initial-distribution spec from its JSON form."""
    kind = spec.get("kind")
    if kind == "uniform_box":
        return UniformBox(float(spec["r"]), int(spec.get("d", 2)))
    if kind == "gaussian":
        return GaussianInit(tuple(spec["mean"]), tuple(tuple(r) for r in spec["cov"]))
    if kind == "rademacher":
        return RademacherInit(float(spec["r"]), int(spec.get("d", 2)))
    if kind == "dirac":
        return DiracInit(tuple(spec["point"]))
    if kind == "gibbs":
        if model is None:
            raise ValueError("gibbs init requires the model")
        kwargs = {k: spec[k] for k in ("method", "steps", "burnin_steps", "burnin_dt") if k in spec}
        return GibbsInit(model, **kwargs)
    raise ValueError(f"unknown init kind {kind!r}")


def sample_initial(dist, n: int, seed: int) -> np.ndarray:
    """Draw n initial points from a distribution spec."""
    if n < 1:
        raise ValueError("n must be positive")
    x = dist.sample(n, seed)
    if x.shape != (n, dist.dim):
        raise ValueError(f"initial sample has shape {x.shape}, expected {(n, dist.dim)}")
    return x


def euler_maruyama_step(model: LangevinModel, x: np.ndarray, dt: float, z: np.ndarray) -> np.ndarray:
    """One step x - grad(Psi)(x) dt + sqrt(sigma2 dt) z."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = x - model.potential.gradient(x) * dt + np.sqrt(model.sigma2 * dt) * z
    _check_finite(out, step=-1)
    return out


def _check_finite(x: np.ndarray, step: int):
    bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_LIMIT)
    if bad.any():
        idx = np.argwhere(bad)[0]
        path = int(idx[0]) if x.ndim > 1 else 0
        val = x[tuple(idx)]
        raise SimulationDivergedError(path, step, val if np.isfinite(val) else np.inf)


@dataclass
class TrajectorySet:
    """Aligned trajectory panel: times (T,) and paths (N, T, d)."""

    times: np.ndarray
    paths: np.ndarray
    seed: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.paths = np.asarray(self.paths, dtype=float)
        if self.paths.ndim != 3 or self.paths.shape[1] != self.times.size:
            raise ValueError("paths must have shape (n_paths, n_times, dim)")

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def snapshot(self, i: int) -> np.ndarray:
        return self.paths[:, i, :]

    def to_csv(self, path):
        dim = self.dim
        with _atomic_text(path) as f:
            w = csv.writer(f)
            w.writerow(["path_id", "time"] + [f"x{i + 1}" for i in range(dim)])
            for p in range(self.n_paths):
                for t in range(self.times.size):
                    w.writerow(
                        [p, _fmt(self.times[t])] + [_fmt(v) for v in self.paths[p, t]]
                    )

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> "TrajectorySet":
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header[:2] != ["path_id", "time"]:
                raise ValueError(f"{path}: not a trajectory CSV (header {header[:2]})")
            dim = len(header) - 2
            rows = [(int(row[0]), float(row[1]), [float(v) for v in row[2:]]) for row in r]
        rows.sort(key=lambda t: (t[0], t[1]))
        ids = sorted({p for p, _, _ in rows})
        times = sorted({t for _, t, _ in rows})
        index = {t: i for i, t in enumerate(times)}
        paths = np.full((len(ids), len(times), dim), np.nan)
        for p, t, x in rows:
            paths[p, index[t]] = x
        if np.isnan(paths).any():
            raise ValueError(f"{path}: trajectory panel is ragged")
        return cls(np.asarray(times), paths, seed)


@dataclass
class SnapshotSeries:
    """Unpaired population snapshots: times (T,) and per-time clouds (N_t, d)."""

    times: np.ndarray
    clouds: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.clouds = [np.asarray(c, dtype=float) for c in self.clouds]
        if len(self.clouds) != self.times.size:
            raise ValueError("one cloud per time required")
        if any(c.ndim != 2 or c.shape[0] == 0 for c in self.clouds):
            raise ValueError("every snapshot must be a nonempty (n, d) array")
        if len({c.shape[1] for c in self.clouds}) > 1:
            raise ValueError("snapshots disagree on dimension")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.clouds[0].shape[1]

    @property
    def n_times(self) -> int:
        return self.times.size

    def restrict(self, indices) -> "SnapshotSeries":
        indices = list(indices)
        return SnapshotSeries(self.times[indices], [self.clouds[i] for i in indices])

    def to_csv(self, path):
        dim = self.dim
        with _atomic_text(path) as f:
            w = csv.writer(f)
            w.writerow(["time", "sample_id"] + [f"x{i + 1}" for i in range(dim)])
            for t in range(self.n_times):
                for s in range(self.clouds[t].shape[0]):
                    w.writerow([_fmt(self.times[t]), s] + [_fmt(v) for v in self.clouds[t][s]])

    @classmethod
    def from_csv(cls, path) -> "SnapshotSeries":
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header[:2] != ["time", "sample_id"]:
                raise ValueError(f"{path}: not a snapshot CSV (header {header[:2]})")
            rows = [(float(row[0]), int(row[1]), [float(v) for v in row[2:]]) for row in r]
        rows.sort(key=lambda t: (t[0], t[1]))
        times = sorted({t for t, _, _ in rows})
        clouds = [[] for _ in times]
        index = {t: i for i, t in enumerate(times)}
        for t, _, x in rows:
            clouds[index[t]].append(x)
        return cls(np.asarray(times), [np.asarray(c) for c in clouds])


def _fmt(v) -> str:
    return format(float(v), ".17g")


class _atomic_text:
    """Write a text file via temp-then-rename so readers never see partial output."""

    def __init__(self, path):
        import os

        self.path = os.fspath(path)
        self.tmp = self.path + ".tmp"

    def __enter__(self):
        self.f = open(self.tmp, "w", newline="")
        return self.f

    def __exit__(self, exc_type, exc, tb):
        import os

        self.f.close()
        if exc_type is None:
            os.replace(self.tmp, self.path)
        else:
            os.unlink(self.tmp)
        return False


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("times must be a 1-D grid with at least two entries")
    if times[0] != 0.0:
        raise ValueError("times must start at 0")
    if not np.all(np.diff(times) > 0):
        raise ValueError("times must be strictly increasing")
    return times


def simulate(model: LangevinModel, init: np.ndarray, times, seed: int) -> TrajectorySet:
    """Euler-Maruyama panel from the initial cloud over the given time grid.

    One EM step per consecutive time pair; the noise for (path, step) comes
    from the counter-based stream keyed by the seed, so the result is
    bit-identical for identical (model, init, times, seed).
    """
    times = _check_times(times)
    init = np.asarray(init, dtype=float)
    if init.ndim != 2 or init.shape[1] != model.dim:
        raise ValueError(f"init must have shape (n, {model.dim})")
    n, d = init.shape
    paths = np.empty((n, times.size, d))
    paths[:, 0] = init
    x = init
    for s in range(times.size - 1):
        dt = times[s + 1] - times[s]
        z = normal_block(seed, s, n, d)
        x = x - model.potential.gradient(x) * dt + np.sqrt(model.sigma2 * dt) * z
        _check_finite(x, step=s + 1)
        paths[:, s + 1] = x
    return TrajectorySet(times, paths, seed)


def simulate_piecewise(models, regime_starts, times, init: np.ndarray, seed: int) -> TrajectorySet:
    """Simulate with the model switching at the given regime start times.

    regime_starts must begin at 0 and be strictly increasing; the step over
    [t, t+dt) uses the model of the regime containing t.
    """
    times = _check_times(times)
    starts = np.asarray(regime_starts, dtype=float)
    if starts[0] != 0.0 or not np.all(np.diff(starts) > 0):
        raise ValueError("regime_starts must start at 0 and increase strictly")
    if len(models) != starts.size:
        raise ValueError("one model per regime required")
    init = np.asarray(init, dtype=float)
    n, d = init.shape
    paths = np.empty((n, times.size, d))
    paths[:, 0] = init
    x = init
    for s in range(times.size - 1):
        dt = times[s + 1] - times[s]
        regime = int(np.searchsorted(starts, times[s], side="right") - 1)
        model = models[regime]
        z = normal_block(seed, s, n, d)
        x = x - model.potential.gradient(x) * dt + np.sqrt(model.sigma2 * dt) * z
        _check_finite(x, step=s + 1)
        paths[:, s + 1] = x
    return TrajectorySet(times, paths, seed)


def shuffle_to_snapshots(trajs: TrajectorySet, seed: int, keep=None) -> SnapshotSeries:
    """Forget pairings: independently permute the cloud at each kept time.

    keep selects time indices (default: all).  The multiset of points per time
    is exactly preserved; only sample order changes.
    """
    indices = list(range(trajs.times.size)) if keep is None else sorted(keep)
    clouds = []
    for i in indices:
        perm = substream(seed, i).permutation(trajs.n_paths)
        clouds.append(trajs.paths[perm, i, :].copy())
    return SnapshotSeries(trajs.times[indices], clouds)
