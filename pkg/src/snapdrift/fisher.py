"""Fisher information of the linearized transition model, and its loss
when trajectory pairings are replaced by marginals.

Per-trajectory scores at the true model have mean ~0; their variance is the
per-trajectory information.  For drift coefficients the theoretical value
depends on moments of the initial cloud, for sigma2 it is d/(2 sigma^4) + O(sqrt(dt))
regardless of the initial condition.  The marginal setting loses the
conditional score variance over pairings consistent with the observed clouds;
`information_gap_estimate` measures that by resampling bijective pairings
from a coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimate import Coupling, sample_pairing
from .potentials import PolynomialPotential, gradient_basis, multi_indices, polynomial_form
from .rng import substream
from .sim import LangevinModel, TrajectorySet


@dataclass
class FisherReport:
    """Total-information summary for one trajectory panel.

    Entries are totals over the n trajectories; divide by n for per-trajectory
    values.  `drift` maps each coefficient multi-index to
    {theoretical, empirical, stderr}; `diffusion` holds the same triple for
    sigma2.  stderr is a jackknife standard error of the empirical entry.
    """

    drift: dict
    diffusion: dict
    n: int
    dt: float
    dim: int

    def to_dict(self) -> dict:
        return {
            "drift": [
                {"alpha": list(a), **{k: float(v) for k, v in rec.items()}}
                for a, rec in sorted(self.drift.items(), key=lambda kv: (sum(kv[0]), tuple(-x for x in kv[0])))
            ],
            "diffusion": {k: float(v) for k, v in self.diffusion.items()},
            "n": self.n,
            "dt": self.dt,
            "d": self.dim,
        }


def _moment(x: np.ndarray, exponents) -> float:
    out = np.ones(x.shape[0])
    for i, e in enumerate(exponents):
        if e:
            out = out * x[:, i] ** e
    return float(out.mean())


def drift_fisher_theoretical(model: LangevinModel, init_samples: np.ndarray, dt: float) -> dict:
    """Per-coefficient drift information n*dt/sigma2 * sum_i alpha_i^2 E[x^(2a-2e_i)].

    The expectation is the empirical mean over init_samples; x^0 is 1, so a
    Dirac at the origin still informs the linear coefficients.  Requires a
    polynomial potential (the coefficients being the parameters).
    """
    pot = polynomial_form(model.potential)
    x = np.asarray(init_samples, dtype=float)
    if x.ndim != 2 or x.shape[1] != pot.dim:
        raise ValueError(f"init_samples must have shape (n, {pot.dim})")
    n = x.shape[0]
    out = {}
    for alpha in multi_indices(pot.dim, pot.degree):
        acc = 0.0
        for i, a in enumerate(alpha):
            if not a:
                continue
            exps = tuple(2 * b - (2 if j == i else 0) for j, b in enumerate(alpha))
            acc += a * a * _moment(x, exps)
        out[alpha] = n * dt * acc / model.sigma2
    return out


def diffusion_fisher_theoretical(dim: int, sigma2: float, n: int) -> float:
    """Leading-order total information about sigma2: n * d / (2 sigma^4).

    Independent of the initial condition; the neglected term is O(sqrt(dt)).
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return n * dim / (2.0 * sigma2**2)


def _jackknife_stderr_of_variance(s: np.ndarray) -> float:
    """Jackknife standard error of the ddof=1 sample variance of s."""
    n = s.size
    if n < 3:
        return float("nan")
    s1 = s.sum()
    s2 = (s**2).sum()
    loo = (s2 - s**2 - (s1 - s) ** 2 / (n - 1)) / (n - 2)
    return float(np.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))


def _scores(model: LangevinModel, trajs: TrajectorySet):
    """Per-trajectory drift and diffusion scores of a one-step panel."""
    if trajs.times.size != 2:
        raise ValueError("score computation expects exactly two times (one step)")
    if trajs.dim != model.dim:
        raise ValueError("model and trajectories disagree on dimension")
    pot = polynomial_form(model.potential)
    dt = float(trajs.times[1] - trajs.times[0])
    x0 = trajs.paths[:, 0, :]
    x1 = trajs.paths[:, 1, :]
    resid = x1 - x0 + dt * pot.gradient(x0)
    B = gradient_basis(x0, pot.dim, pot.degree)
    drift_scores = -np.einsum("nd,nbd->nb", resid, B) / model.sigma2
    diff_scores = -trajs.dim / (2.0 * model.sigma2) + (resid**2).sum(axis=1) / (
        2.0 * model.sigma2**2 * dt
    )
    return pot, dt, x0, drift_scores, diff_scores


def empirical_score_variance(model: LangevinModel, trajs: TrajectorySet) -> FisherReport:
    """Empirical information (score variances) against the theoretical values.

    model must be the generating model; scores are evaluated at it.  Reports
    totals: empirical = n * Var(per-trajectory score), with jackknife stderr.
    """
    pot, dt, x0, drift_scores, diff_scores = _scores(model, trajs)
    n = trajs.n_paths
    theo = drift_fisher_theoretical(model, x0, dt)
    drift = {}
    for k, alpha in enumerate(multi_indices(pot.dim, pot.degree)):
        s = drift_scores[:, k]
        drift[alpha] = {
            "theoretical": theo[alpha],
            "empirical": n * float(s.var(ddof=1)),
            "stderr": n * _jackknife_stderr_of_variance(s),
        }
    diffusion = {
        "theoretical": diffusion_fisher_theoretical(trajs.dim, model.sigma2, n),
        "empirical": n * float(diff_scores.var(ddof=1)),
        "stderr": n * _jackknife_stderr_of_variance(diff_scores),
    }
    return FisherReport(drift=drift, diffusion=diffusion, n=n, dt=dt, dim=trajs.dim)


def information_gap_estimate(
    model: LangevinModel,
    trajs: TrajectorySet,
    coupling: Coupling,
    n_resample: int = 200,
    seed: int = 0,
) -> dict:
    """Across-pairing variance of total scores: the information lost to shuffling.

    Draws bijective pairings consistent with the coupling, recomputes the
    total score for each parameter under every pairing, and returns the
    variance across pairings per parameter ('sigma2' keys the diffusion one).
    A permutation coupling gives exactly zero for every parameter.
    """
    if trajs.times.size != 2:
        raise ValueError("information gap expects a one-step panel")
    n = trajs.n_paths
    if coupling.weights.shape != (n, n):
        raise ValueError(
            f"coupling shape {coupling.weights.shape} inconsistent with {n} trajectories"
        )
    pot = polynomial_form(model.potential)
    dt = float(trajs.times[1] - trajs.times[0])
    x0 = trajs.paths[:, 0, :]
    x1 = trajs.paths[:, 1, :]
    base = -x0 + dt * pot.gradient(x0)  # resid = x1[perm] + base
    B = gradient_basis(x0, pot.dim, pot.degree)
    alphas = multi_indices(pot.dim, pot.degree)
    rng = substream(seed)
    totals_drift = np.empty((n_resample, len(alphas)))
    totals_diff = np.empty(n_resample)
    for r in range(n_resample):
        perm = sample_pairing(coupling.weights, rng)
        resid = x1[perm] + base
        totals_drift[r] = -np.einsum("nd,nbd->b", resid, B) / model.sigma2
        totals_diff[r] = float(
            (-trajs.dim / (2.0 * model.sigma2) + (resid**2).sum(axis=1) / (2.0 * model.sigma2**2 * dt)).sum()
        )
    out = {alpha: float(totals_drift[:, k].var(ddof=1)) for k, alpha in enumerate(alphas)}
    out["sigma2"] = float(totals_diff.var(ddof=1))
    return out
