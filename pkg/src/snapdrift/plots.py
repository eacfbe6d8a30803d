"""Figure rendering for reports: drift fields, error scatters, sweep curves.

Everything renders through the Agg backend straight to files, so the CLI can
emit figures next to its CSV/JSON output on headless machines.  Functions
take plain arrays or models and return the path they wrote.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

from .metrics import grid_points  # noqa: E402


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def drift_field_panels(labeled_models, path, half_length: float = 5.0, n_per_axis: int = 17):
    """Side-by-side quiver panels of the drift field -grad(Psi) per model.

    labeled_models is a sequence of (label, LangevinModel); all panels share
    the box [-half_length, half_length]^2 and the same arrow scaling so
    magnitudes are comparable.
    """
    labeled_models = list(labeled_models)
    pts = grid_points(half_length, n_per_axis)
    fields = [-m.potential.gradient(pts) for _, m in labeled_models]
    scale = max(np.linalg.norm(f, axis=1).max() for f in fields) * n_per_axis
    fig, axes = plt.subplots(
        1, len(labeled_models), figsize=(4.2 * len(labeled_models), 4.0), squeeze=False
    )
    for ax, (label, model), field in zip(axes[0], labeled_models, fields):
        ax.quiver(
            pts[:, 0], pts[:, 1], field[:, 0], field[:, 1],
            np.linalg.norm(field, axis=1), scale=scale, cmap="viridis", width=0.004,
        )
        ax.set_title(f"{label} (sigma2={model.sigma2:.3g})")
        ax.set_aspect("equal")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    return _finish(fig, path)


def mae_scatter(rows, path):
    """Drift-MAE vs diffusivity-MAE scatter, one marker per run, by setting.

    rows are dicts with keys setting, drift_mae, sigma2_mae; both axes are
    logarithmic because the settings separate by orders of magnitude.
    """
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    markers = {"transient": "o", "stationary": "s"}
    for setting in sorted({r["setting"] for r in rows}):
        xs = [r["drift_mae"] for r in rows if r["setting"] == setting]
        ys = [r["sigma2_mae"] for r in rows if r["setting"] == setting]
        ax.scatter(xs, ys, label=setting, marker=markers.get(setting, "x"), alpha=0.8)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("normalized drift MAE (grid)")
    ax.set_ylabel("diffusivity MAE")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _finish(fig, path)


def sweep_curves(x, series, path, xlabel: str, ylabel: str, logy: bool = True):
    """Mean curves with error bars over a sweep variable.

    series maps label -> (means, errs); errs may be None for a bare line.
    """
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    for label, (means, errs) in series.items():
        ax.errorbar(x, means, yerr=errs, marker="o", capsize=3, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _finish(fig, path)


def snapshot_overlay(series, path, max_points: int = 400):
    """Scatter the snapshot clouds of a series, one color per time."""
    fig, ax = plt.subplots(figsize=(5.0, 4.6))
    cmap = plt.get_cmap("viridis")
    tmin, tmax = float(series.times[0]), float(series.times[-1])
    span = (tmax - tmin) or 1.0
    for t, cloud in zip(series.times, series.clouds):
        pts = cloud[:max_points]
        ax.scatter(
            pts[:, 0], pts[:, 1], s=6, alpha=0.5,
            color=cmap((float(t) - tmin) / span), label=f"t={float(t):g}",
        )
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.legend(fontsize=7, markerscale=1.5)
    return _finish(fig, path)


def sigma2_bars(labels, estimates, truths, path):
    """Estimated sigma2 per group (bars) against the true values (lines)."""
    idx = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(4.6, 3.8))
    ax.bar(idx, estimates, width=0.55, label="estimated")
    ax.plot(idx, truths, "k_", markersize=26, markeredgewidth=2, label="true")
    ax.set_xticks(idx)
    ax.set_xticklabels(labels)
    ax.set_ylabel("sigma2")
    ax.legend()
    return _finish(fig, path)
