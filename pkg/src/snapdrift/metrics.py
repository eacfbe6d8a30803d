"""Evaluation metrics comparing a fitted model against the generating one.

Drift fields are compared pointwise on a deterministic grid (or on points
drawn from the true Gibbs density); diffusivity by absolute error.  All
metrics take models so the drift convention (-grad Psi) cancels and gradient
differences are what is measured.
"""

from __future__ import annotations

import numpy as np

from .sim import LangevinModel

COSINE_SKIP_NORM = 1e-12


def grid_points(half_length: float, n_per_axis: int, dim: int = 2) -> np.ndarray:
    """Tensor-product uniform grid over [-half_length, half_length]^dim.

    Deterministic row-major order (first axis slowest), endpoints included;
    shape (n_per_axis**dim, dim).
    """
    if n_per_axis < 2:
        raise ValueError("need at least 2 points per axis")
    axis = np.linspace(-half_length, half_length, n_per_axis)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, dim)


def drift_mae(true_model: LangevinModel, est_model: LangevinModel, points, componentwise: bool = False) -> float:
    """Normalized mean absolute drift error over evaluation points.

    Default: mean Euclidean norm of the field difference divided by the mean
    norm of the true field.  componentwise=True uses per-coordinate absolute
    errors instead of norms (same normalization idea).
    """
    pts = np.asarray(points, dtype=float)
    gt = true_model.potential.gradient(pts)
    ge = est_model.potential.gradient(pts)
    if componentwise:
        denom = np.abs(gt).mean()
        if denom == 0.0:
            raise ValueError("true drift field vanishes on all evaluation points")
        return float(np.abs(ge - gt).mean() / denom)
    denom = np.linalg.norm(gt, axis=-1).mean()
    if denom == 0.0:
        raise ValueError("true drift field vanishes on all evaluation points")
    return float(np.linalg.norm(ge - gt, axis=-1).mean() / denom)


def diffusivity_mae(sigma2_true: float, sigma2_est: float) -> float:
    """Absolute diffusivity error |sigma2_est - sigma2_true|."""
    return float(abs(sigma2_est - sigma2_true))


def cosine_similarity_detail(
    true_model: LangevinModel, est_model: LangevinModel, points
) -> tuple[float, int]:
    """Mean cosine between drift fields, plus how many points were skipped.

    Points where either field has norm below 1e-12 are excluded from the mean.
    Raises if every point is skipped.
    """
    pts = np.asarray(points, dtype=float)
    gt = true_model.potential.gradient(pts)
    ge = est_model.potential.gradient(pts)
    nt = np.linalg.norm(gt, axis=-1)
    ne = np.linalg.norm(ge, axis=-1)
    ok = (nt >= COSINE_SKIP_NORM) & (ne >= COSINE_SKIP_NORM)
    skipped = int(np.count_nonzero(~ok))
    if not ok.any():
        raise ValueError("cosine similarity undefined: every evaluation point was skipped")
    cos = (gt[ok] * ge[ok]).sum(axis=-1) / (nt[ok] * ne[ok])
    return float(cos.mean()), skipped


def cosine_similarity(true_model: LangevinModel, est_model: LangevinModel, points) -> float:
    """Mean cosine between the two drift fields over evaluation points."""
    value, _ = cosine_similarity_detail(true_model, est_model, points)
    return value


def gibbs_eval_points(model: LangevinModel, n: int, seed: int = 0, **metropolis_kwargs) -> np.ndarray:
    """Evaluation points drawn from the model's Gibbs density (Metropolis)."""
    from .stationary import metropolis_sample

    return metropolis_sample(model, n, seed=seed, **metropolis_kwargs)


def trend_flags(means, errs) -> dict:
    """Error-bar-aware monotonicity summary of a sweep curve.

    A step counts as a significant increase (decrease) only when consecutive
    one-standard-error bars separate in that direction; steps whose bars
    overlap are treated as flat.  ``nondecreasing`` tolerates at most one
    significant decrease, ``nonincreasing`` at most one significant increase,
    and ``flat_range_le_2x_min`` checks max(mean) <= 2 * min(mean).
    """
    m = np.asarray(means, dtype=float)
    e = np.asarray(errs, dtype=float)
    if m.shape != e.shape or m.ndim != 1 or m.size < 2:
        raise ValueError("trend_flags needs matching 1-d means and errs with >= 2 entries")
    lo, hi = m - e, m + e
    increases = int(np.count_nonzero(lo[1:] > hi[:-1]))
    decreases = int(np.count_nonzero(hi[1:] < lo[:-1]))
    return {
        "significant_increases": increases,
        "significant_decreases": decreases,
        "nondecreasing": decreases <= 1,
        "nonincreasing": increases <= 1,
        "flat_range_le_2x_min": bool(m.max() <= 2.0 * m.min()),
    }
