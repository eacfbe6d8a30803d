"""Stationarity machinery: Gibbs densities, equilibrium sampling, diagnostics.

The Gibbs density p(x) proportional to exp(-2 Psi(x) / sigma2) is stationary
for the Langevin model, and every rescaling (a*Psi, a*sigma2) shares it; the
tools here sample it, check it on a grid against the stationary operator
div(p grad Psi) + (sigma2/2) lap p, and test whether snapshot clouds are
statistically distinguishable at all.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .rng import substream
from .sim import LangevinModel, SnapshotSeries, simulate, _atomic_text, _fmt


class MixingWarning(UserWarning):
    """Metropolis acceptance rate suggests a poorly mixing chain."""


def gibbs_log_density(model: LangevinModel, x) -> np.ndarray:
    """Unnormalized log of the Gibbs density, -2 Psi(x) / sigma2."""
    if model.sigma2 <= 0:
        raise ValueError("Gibbs density requires sigma2 > 0")
    return -2.0 * model.potential.value(x) / model.sigma2


def _acceptance_rate(model, scale, steps, chains, seed, init_box_half):
    rng = substream(seed)
    x = rng.uniform(-init_box_half, init_box_half, size=(chains, model.dim))
    logp = gibbs_log_density(model, x)
    accepted = 0
    for _ in range(steps):
        y = x + scale * rng.standard_normal(x.shape)
        logq = gibbs_log_density(model, y)
        acc = np.log(rng.random(x.shape[0])) < logq - logp
        x[acc] = y[acc]
        logp[acc] = logq[acc]
        accepted += int(acc.sum())
    return accepted / (steps * chains), x, logp


def tune_proposal_scale(model: LangevinModel, seed: int = 0, target: float = 0.3) -> float:
    """Bisection pre-pass for a random-walk scale with acceptance near target."""
    lo, hi = 1e-4, 1e2
    for it in range(18):
        mid = np.sqrt(lo * hi)
        rate, _, _ = _acceptance_rate(model, mid, steps=200, chains=256, seed=seed + it, init_box_half=4.0)
        if abs(rate - target) < 0.02:
            return float(mid)
        if rate > target:
            lo = mid  # acceptance too high -> widen proposals
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


def metropolis_sample(
    model: LangevinModel,
    n: int,
    steps: int = 5000,
    proposal_scale: float | None = None,
    seed: int = 0,
    init_box_half: float = 4.0,
) -> np.ndarray:
    """Random-walk Metropolis sample of the Gibbs density, shape (n, dim).

    Runs n chains in parallel from a uniform box and returns their final
    states.  With proposal_scale=None a tuning pre-pass targets ~0.3
    acceptance; an overall rate outside [0.05, 0.95] raises MixingWarning.
    """
    if n < 1 or steps < 1:
        raise ValueError("n and steps must be positive")
    if proposal_scale is None:
        proposal_scale = tune_proposal_scale(model, seed=seed + 7_919)
    elif proposal_scale <= 0:
        raise ValueError("proposal_scale must be positive")
    rate, x, _ = _acceptance_rate(
        model, proposal_scale, steps=steps, chains=n, seed=seed, init_box_half=init_box_half
    )
    if not 0.05 <= rate <= 0.95:
        warnings.warn(
            f"Metropolis acceptance rate {rate:.3f} outside [0.05, 0.95]; "
            "samples may not have equilibrated",
            MixingWarning,
        )
    return x


def langevin_burn_in(model: LangevinModel, init: np.ndarray, n_steps: int, dt: float, seed: int) -> np.ndarray:
    """Approximate Gibbs sample: run the SDE itself and keep the final cloud."""
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    times = np.arange(n_steps + 1) * dt
    return simulate(model, np.asarray(init, dtype=float), times, seed).snapshot(n_steps)


def rescaled_model(model: LangevinModel, alpha: float) -> LangevinModel:
    """The model (alpha*Psi, alpha*sigma2): same Gibbs density, faster clock."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return LangevinModel(model.potential.scaled(alpha), alpha * model.sigma2)


@dataclass
class GridDensity:
    """Probability density tabulated on a uniform node grid over a box.

    lo and hi give the box corners, values has one entry per node (endpoints
    included) and must be nonnegative with sum(values) * cell_volume = 1.
    """

    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.lo.size or self.lo.size != self.hi.size:
            raise ValueError("values rank must match box dimension")
        if np.any(self.hi <= self.lo):
            raise ValueError("box corners must satisfy lo < hi")
        if any(s < 4 for s in self.values.shape):
            raise ValueError("need at least 4 nodes per axis")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("density values must be finite and nonnegative")
        total = self.values.sum() * self.cell_volume
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"density not normalized (sum*cell_volume = {total:.3g})")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def spacings(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.values.shape) - 1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(self.lo[i], self.hi[i], self.values.shape[i]) for i in range(self.dim)]

    def mesh(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(grids, axis=-1)

    @classmethod
    def from_values(cls, lo, hi, values) -> "GridDensity":
        values = np.asarray(values, dtype=float)
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        h = (hi - lo) / (np.array(values.shape) - 1)
        total = values.sum() * np.prod(h)
        if total <= 0:
            raise ValueError("cannot normalize a density with zero mass")
        return cls(lo, hi, values / total)

    def to_files(self, json_path, csv_path):
        header = {
            "box": {"lo": self.lo.tolist(), "hi": self.hi.tolist()},
            "resolution": list(self.values.shape),
            "values_csv": str(csv_path),
        }
        with _atomic_text(json_path) as f:
            json.dump(header, f, indent=2, sort_keys=True)
            f.write("\n")
        with _atomic_text(csv_path) as f:
            for row in self.values.reshape(self.values.shape[0], -1):
                f.write(",".join(_fmt(v) for v in row) + "\n")

    @classmethod
    def from_files(cls, json_path) -> "GridDensity":
        with open(json_path) as f:
            header = json.load(f)
        shape = tuple(header["resolution"])
        raw = np.loadtxt(header["values_csv"], delimiter=",")
        return cls(np.asarray(header["box"]["lo"]), np.asarray(header["box"]["hi"]), raw.reshape(shape))


def gibbs_grid_density(model: LangevinModel, half_length: float, resolution: int) -> GridDensity:
    """Normalized Gibbs density on the centered box [-half_length, half_length]^d."""
    d = model.dim
    lo = np.full(d, -float(half_length))
    hi = np.full(d, float(half_length))
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    logd = gibbs_log_density(model, pts)
    vals = np.exp(logd - logd.max())
    return GridDensity.from_values(lo, hi, vals)


def _interior(F: np.ndarray) -> np.ndarray:
    return F[tuple(slice(1, -1) for _ in range(F.ndim))]


def _shifted(F: np.ndarray, axis: int, off: int) -> np.ndarray:
    idx = [slice(1, -1)] * F.ndim
    idx[axis] = slice(1 + off, F.shape[axis] - 1 + off if off < 1 else None)
    return F[tuple(idx)]


def fp_operator_grid(model: LangevinModel, density: GridDensity) -> np.ndarray:
    """Stationary operator div(p grad Psi) + (sigma2/2) lap p on interior nodes.

    Second-order central differences; the returned array drops one node of
    margin per axis.  The field is linear in (Psi, sigma2) for a fixed density.
    """
    if density.dim != model.dim:
        raise ValueError("density dimension does not match model")
    p = density.values
    h = density.spacings
    g = model.potential.gradient(density.mesh())
    out = np.zeros(tuple(s - 2 for s in p.shape))
    for i in range(density.dim):
        flux = p * g[..., i]
        out += (_shifted(flux, i, +1) - _shifted(flux, i, -1)) / (2.0 * h[i])
        out += (model.sigma2 / 2.0) * (
            (_shifted(p, i, +1) - 2.0 * _interior(p) + _shifted(p, i, -1)) / h[i] ** 2
        )
    return out


def fp_residual(model: LangevinModel, density: GridDensity) -> float:
    """Relative stationarity defect of the density under the model.

    Root-mean-square of the stationary operator over interior nodes, divided
    by the peak magnitude of its two constituent terms, so the value is
    dimensionless: ~0 means the terms cancel (stationary density), order one
    means no cancellation.  With second-order central differences the value
    falls ~4x per resolution doubling on smooth densities.
    """
    if density.dim != model.dim:
        raise ValueError("density dimension does not match model")
    p = density.values
    h = density.spacings
    g = model.potential.gradient(density.mesh())
    drift = np.zeros(tuple(s - 2 for s in p.shape))
    diff = np.zeros_like(drift)
    for i in range(density.dim):
        flux = p * g[..., i]
        drift += (_shifted(flux, i, +1) - _shifted(flux, i, -1)) / (2.0 * h[i])
        diff += (model.sigma2 / 2.0) * (
            (_shifted(p, i, +1) - 2.0 * _interior(p) + _shifted(p, i, -1)) / h[i] ** 2
        )
    resid = drift + diff
    scale = float(np.sqrt(drift**2 + diff**2).max())
    if scale == 0.0:
        raise ValueError("operator vanishes identically; residual undefined")
    return float(np.sqrt((resid**2).mean()) / scale)


def energy_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample energy statistic 2 E|x-y| - E|x-x'| - E|y-y'| (all pairs)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(
        2.0 * cdist(x, y).mean() - cdist(x, x).mean() - cdist(y, y).mean()
    )


def two_sample_energy_test(
    x: np.ndarray, y: np.ndarray, n_permutations: int = 200, seed: int = 0
) -> tuple[float, float]:
    """Permutation test of 'same distribution' via the energy statistic.

    Returns (statistic, p_value) with p = (1 + #{perm >= observed}) / (B + 1).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = x.shape[0], y.shape[0]
    if n < 10 or m < 10:
        raise ValueError("two_sample_energy_test needs at least 10 points per sample")
    pooled = np.vstack([x, y])
    D = cdist(pooled, pooled)
    tot = n + m

    def blocks_stat(sxx, syy, sxy):
        return 2.0 * sxy / (n * m) - sxx / (n * n) - syy / (m * m)

    obs = blocks_stat(D[:n, :n].sum(), D[n:, n:].sum(), D[:n, n:].sum())
    rng = substream(seed)
    V = np.zeros((tot, n_permutations))
    for b in range(n_permutations):
        V[rng.permutation(tot)[:n], b] = 1.0
    M = D @ V
    sxx = np.einsum("ib,ib->b", V, M)
    sx_tot = V.T @ D.sum(axis=1)
    sxy = sx_tot - sxx
    syy = D.sum() - sxx - 2.0 * sxy
    perm_stats = blocks_stat(sxx, syy, sxy)
    p = (1.0 + np.count_nonzero(perm_stats >= obs)) / (n_permutations + 1.0)
    return float(obs), float(p)


def stationarity_test(series: SnapshotSeries, n_permutations: int = 200, seed: int = 0) -> list[dict]:
    """Energy permutation test for every consecutive snapshot pair.

    Returns one record {t_i, t_j, statistic, p_value} per pair.  Low p-values
    mean the marginals are moving (the series is transient); uniformly high
    p-values mean the data cannot rule out stationarity.
    """
    if any(c.shape[0] < 10 for c in series.clouds):
        raise ValueError("stationarity_test needs at least 10 points per snapshot")
    records = []
    for i in range(series.n_times - 1):
        stat, p = two_sample_energy_test(
            series.clouds[i], series.clouds[i + 1], n_permutations=n_permutations, seed=seed + i
        )
        records.append(
            {"t_i": float(series.times[i]), "t_j": float(series.times[i + 1]), "statistic": stat, "p_value": p}
        )
    return records
