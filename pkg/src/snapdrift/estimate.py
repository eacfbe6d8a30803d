"""Joint drift/diffusivity estimation from trajectories or unpaired snapshots.

Both settings fit the same linearized Gaussian transition model
x_{t+dt} ~ N(x_t - dt grad(Psi_theta)(x_t), sigma2 dt I) with Psi_theta a
polynomial, so the drift fit is exact linear least squares.  Snapshots lack
pairings: an alternating scheme couples consecutive clouds by entropic
optimal transport under the current model guess, then reruns the weighted
MLE, until the coefficients stop moving.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sparse
from scipy.special import xlogy

from .potentials import PolynomialPotential, gradient_basis, multi_indices
from .sim import LangevinModel, SnapshotSeries, TrajectorySet


class EstimationWarning(UserWarning):
    """Degenerate design, floored sigma2, or other estimation caveat."""


@dataclass
class Coupling:
    """Soft pairing between two snapshot clouds (weights sum to one)."""

    weights: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    converged: bool
    iterations: int
    marginal_violation: float
    f: np.ndarray | None = None  # dual potentials, reusable as warm starts
    g: np.ndarray | None = None


@dataclass
class AppexConfig:
    """Knobs for the alternating snapshot estimator."""

    tol: float = 1e-4
    max_outer: int = 30
    sigma2_floor: float = 1e-8
    epsilon_scale: float = 1.0
    sinkhorn_max_iter: int = 20000
    sinkhorn_tol: float = 1e-8
    hard_pairing: bool = False
    seed: int = 0

    @classmethod
    def from_dict(cls, spec: dict) -> "AppexConfig":
        kwargs = {}
        for key in ("tol", "max_outer", "sigma2_floor", "hard_pairing", "seed"):
            if key in spec:
                kwargs[key] = spec[key]
        sk = spec.get("sinkhorn", {})
        if "epsilon_scale" in sk:
            kwargs["epsilon_scale"] = float(sk["epsilon_scale"])
        if "max_iter" in sk:
            kwargs["sinkhorn_max_iter"] = int(sk["max_iter"])
        if "tol" in sk:
            kwargs["sinkhorn_tol"] = float(sk["tol"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EstimationResult:
    """Fitted polynomial coefficients and diffusivity, with fit telemetry."""

    coefficients: dict
    sigma2_hat: float
    degree: int
    dim: int
    data_setting: str
    iterations: int
    converged: bool
    loglik_trace: list
    warnings: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "coefficients": [
                {"alpha": list(a), "value": float(v)} for a, v in sorted(
                    self.coefficients.items(), key=lambda kv: (sum(kv[0]), tuple(-x for x in kv[0]))
                )
            ],
            "sigma2_hat": float(self.sigma2_hat),
            "degree": self.degree,
            "d": self.dim,
            "data_setting": self.data_setting,
            "iterations": self.iterations,
            "converged": self.converged,
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "warnings": list(self.warnings),
            "diagnostics": self.diagnostics,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "EstimationResult":
        coeffs = {tuple(item["alpha"]): float(item["value"]) for item in spec["coefficients"]}
        return cls(
            coefficients=coeffs,
            sigma2_hat=float(spec["sigma2_hat"]),
            degree=int(spec["degree"]),
            dim=int(spec["d"]),
            data_setting=spec["data_setting"],
            iterations=int(spec["iterations"]),
            converged=bool(spec["converged"]),
            loglik_trace=list(spec.get("loglik_trace", [])),
            warnings=list(spec.get("warnings", [])),
            diagnostics=spec.get("diagnostics", {}),
            config=spec.get("config", {}),
        )


def result_to_model(result: EstimationResult) -> LangevinModel:
    """Materialize the fitted model for evaluation on a grid."""
    pot = PolynomialPotential(result.dim, result.degree, result.coefficients)
    return LangevinModel(pot, max(result.sigma2_hat, 0.0))


@dataclass
class RegimeSpec:
    """Regime start times partitioning the series for piecewise estimation."""

    starts: tuple

    def __post_init__(self):
        starts = tuple(float(t) for t in self.starts)
        if len(starts) < 1 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("regime starts must be nonempty and strictly increasing")
        object.__setattr__(self, "starts", starts)

    def assign(self, times: np.ndarray) -> np.ndarray:
        """Regime index per time; every time must fall in exactly one regime."""
        times = np.asarray(times, dtype=float)
        if times.min() < self.starts[0]:
            raise ValueError("snapshot times precede the first regime")
        return np.searchsorted(np.asarray(self.starts), times, side="right") - 1


def _pair_moments(x0, x1, dt, W, basis):
    """Accumulated statistics of one snapshot pair under a soft pairing.

    W=None means index-matched transitions with uniform weight.  Returns the
    row mass r (n0,), barycentric images m = W @ x1 (n0, d), and the column
    mass against ||x1||^2 needed for the residual quadratic.
    """
    n0, n1 = x0.shape[0], x1.shape[0]
    if W is None:
        if n0 != n1:
            raise ValueError("matched transitions require equal cloud sizes")
        r = np.full(n0, 1.0 / n0)
        m = x1 / n0
        sq1 = (x1**2).sum(axis=1) / n0
    else:
        if W.shape != (n0, n1):
            raise ValueError(f"coupling shape {W.shape} does not match clouds {(n0, n1)}")
        r = W.sum(axis=1)
        m = W @ x1
        sq1 = (x1**2).sum(axis=1) * W.sum(axis=0)
    return r, m, float(sq1.sum())


def _solve_weighted(pairs, dim, degree, sigma2_floor):
    """Exact weighted MLE given pairs (x0, x1, dt, W or None).

    Drift coefficients solve the weighted least squares in closed form via
    equilibrated normal equations (rank-deficient designs fall back to the
    least-norm solution); sigma2 is the weighted mean squared residual per
    coordinate per unit time.
    """
    alphas = multi_indices(dim, degree)
    nb = len(alphas)
    G = np.zeros((nb, nb))
    c = np.zeros(nb)
    stats = []
    for x0, x1, dt, W in pairs:
        B = gradient_basis(x0, dim, degree)
        r, m, sq1 = _pair_moments(x0, x1, dt, W, B)
        G += dt * np.einsum("nbd,ncd,n->bc", B, B, r)
        c += np.einsum("nbd,nd->b", B, m - r[:, None] * x0)
        stats.append((B, r, m, sq1))
    warns = []
    scale = np.sqrt(np.diag(G))
    dead = scale == 0
    scale[dead] = 1.0
    Gs = G / np.outer(scale, scale)
    eigval, eigvec = np.linalg.eigh(Gs)
    keep = eigval > max(eigval.max(), 0.0) * 1e-12
    rank = int(np.count_nonzero(keep))
    if rank < nb:
        warns.append(f"rank-deficient drift design: null space dimension {nb - rank}")
        warnings.warn(warns[-1], EstimationWarning)
    inv = np.where(keep, 1.0 / np.where(keep, eigval, 1.0), 0.0)
    theta = -(eigvec @ (inv * (eigvec.T @ (c / scale)))) / scale
    # residual quadratic sum_p (1/dt) sum_ij w ||x1_j - x0_i + dt*g(x0_i)||^2
    quads = []
    mass = 0.0
    for (x0, x1, dt, W), (B, r, m, sq1) in zip(pairs, stats):
        g = np.einsum("nbd,b->nd", B, theta)
        a = x0 - dt * g
        quad = sq1 - 2.0 * float((a * m).sum()) + float((r * (a**2).sum(axis=1)).sum())
        quads.append(max(quad, 0.0) / dt)
        mass += float(r.sum())
    sigma2 = sum(quads) / (dim * mass)
    if sigma2 < sigma2_floor:
        warns.append(f"sigma2 estimate {sigma2:.3g} floored at {sigma2_floor:.1e}")
        warnings.warn(warns[-1], EstimationWarning)
        sigma2 = sigma2_floor
    return theta, sigma2, quads, mass, warns


def _loglik(pairs, quads, sigma2, dim):
    """Weighted linearized Gaussian log-likelihood at the fitted parameters."""
    total = 0.0
    for (x0, x1, dt, W), quad in zip(pairs, quads):
        total += -0.5 * dim * np.log(2.0 * np.pi * sigma2 * dt) - quad / (2.0 * sigma2)
    return float(total)


def mle_from_trajectories(
    trajs: TrajectorySet, degree: int = 4, sigma2_floor: float = 1e-8
) -> EstimationResult:
    """Exact MLE from paired transitions of a trajectory panel.

    Drift coefficients minimize sum ||(x_{t+dt}-x_t)/dt + grad(Psi_theta)(x_t)||^2
    (weighted by dt for nonuniform grids, which is what the likelihood says);
    sigma2_hat is the mean squared residual per coordinate per unit time.
    """
    if trajs.times.size < 2:
        raise ValueError("need at least two times")
    alphas = multi_indices(trajs.dim, degree)
    n_trans = trajs.n_paths * (trajs.times.size - 1)
    if n_trans < len(alphas):
        raise ValueError(f"{n_trans} transitions cannot identify {len(alphas)} coefficients")
    pairs = []
    for s in range(trajs.times.size - 1):
        dt = float(trajs.times[s + 1] - trajs.times[s])
        pairs.append((trajs.paths[:, s, :], trajs.paths[:, s + 1, :], dt, None))
    theta, sigma2, quads, _, warns = _solve_weighted(pairs, trajs.dim, degree, sigma2_floor)
    coeffs = {a: float(v) for a, v in zip(alphas, theta)}
    return EstimationResult(
        coefficients=coeffs,
        sigma2_hat=float(sigma2),
        degree=degree,
        dim=trajs.dim,
        data_setting="trajectories",
        iterations=1,
        converged=True,
        loglik_trace=[_loglik(pairs, quads, sigma2, trajs.dim)],
        warnings=warns,
    )


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a**2).sum(axis=1)[:, None] + (b**2).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def _scale_until(C, eps, f, g, a, b, tol, max_iter):
    """Stabilized scaling iterations at fixed eps on the dense kernel.

    Absorbs the scaling vectors into the dual potentials whenever they grow
    past exp(250) and stops once the max row-sum deviation is under tol.
    """
    K = np.exp(np.minimum((f[:, None] + g[None, :] - C) / eps, 690.0))
    u = np.ones(a.size)
    v = np.ones(b.size)
    it = 0
    violation = np.inf
    for it in range(1, max_iter + 1):
        u = a / np.clip(K @ v, 1e-300, 1e300)
        v = b / np.clip(K.T @ u, 1e-300, 1e300)
        big = max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max())
        if big > 250.0:  # absorb scalings into the potentials, rebuild kernel
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
            K = np.exp(np.minimum((f[:, None] + g[None, :] - C) / eps, 690.0))
            u[:] = 1.0
            v[:] = 1.0
            continue
        if it % 5 == 0 or it == max_iter:
            violation = float(np.abs(u * (K @ v) - a).max())
            if violation <= tol:
                break
    return f + eps * np.log(u), g + eps * np.log(v), it, violation


_TRUNC_WIDTH = 30.0  # dropped kernel entries sit below exp(-30), void at any tested tolerance


def _sparse_scale(C, eps, f, g, a, b, tol, max_iter, width=_TRUNC_WIDTH):
    """Scaling iterations on the truncated kernel; cheap when eps is tiny.

    Keeps only entries whose log-kernel under the current duals is within
    `width` of zero.  Absorptions retruncate against the updated duals, so
    support can migrate; the caller verifies the final plan densely.
    """
    n0, n1 = C.shape

    def build(f, g):
        logk = (f[:, None] + g[None, :] - C) / eps
        rows, cols = np.nonzero(logk > -width)
        vals = np.exp(np.minimum(logk[rows, cols], 690.0))  # spikes after absorption chains must not overflow
        K = sparse.csr_matrix((vals, (rows, cols)), shape=(n0, n1))
        return K, K.T.tocsr()

    K, KT = build(f, g)
    u = np.ones(n0)
    v = np.ones(n1)
    it = 0
    violation = np.inf
    best = np.inf
    flat_checks = 0
    while it < max_iter:
        it += 1
        u = a / np.clip(K @ v, 1e-300, 1e300)
        v = b / np.clip(KT @ u, 1e-300, 1e300)
        big = max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max())
        if big > 250.0:
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
            K, KT = build(f, g)
            u[:] = 1.0
            v[:] = 1.0
            continue
        if it % 20 == 0 or it == max_iter:
            violation = float(np.abs(u * (K @ v) - a).max())
            if violation <= tol:
                break
            if violation < 0.7 * best:
                best = violation
                flat_checks = 0
            else:
                flat_checks += 1
                if flat_checks >= 15:  # tail stall: no real progress in 300 sweeps
                    break
    return f + eps * np.log(u), g + eps * np.log(v), it, violation


def _round_to_marginals(P, a, b):
    """Project a near-feasible plan onto exact marginals.

    Scales rows then columns down to their targets and spreads the leftover
    mass as a rank-one correction, so row and column sums match a and b to
    machine precision while staying close to P in total variation.
    """
    r = np.minimum(1.0, a / np.maximum(P.sum(axis=1), 1e-300))
    P = P * r[:, None]
    c = np.minimum(1.0, b / np.maximum(P.sum(axis=0), 1e-300))
    P = P * c[None, :]
    err_r = np.maximum(a - P.sum(axis=1), 0.0)  # clip float dust to keep P nonnegative
    err_c = np.maximum(b - P.sum(axis=0), 0.0)
    short = err_r.sum()
    if short > 0:
        P = P + np.outer(err_r, err_c / max(err_c.sum(), 1e-300))
    return P


def sinkhorn_coupling(
    x0: np.ndarray,
    x1: np.ndarray,
    model_guess: LangevinModel,
    dt: float,
    epsilon_scale: float = 1.0,
    max_iter: int = 20000,
    tol: float = 1e-8,
    warm: tuple | None = None,
) -> Coupling:
    """Entropic OT plan between consecutive clouds under a model guess.

    Cost is the squared distance between x1 and the drift-predicted image of
    x0; regularization is epsilon_scale * sigma2_guess * dt, matching the
    scale of the transition kernel.  Uniform marginals.  Cold starts anneal
    epsilon down on the dense kernel, then polish on the truncated sparse
    kernel where the tiny target epsilon is cheap; warm dual potentials skip
    straight to the polish.  The returned plan is rounded onto exact
    marginals; marginal_violation records the pre-rounding deviation and
    drives the converged flag.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    eps = epsilon_scale * model_guess.sigma2 * dt
    if not eps > 0:
        raise ValueError("entropic regularization must be positive (sigma2_guess and dt > 0)")
    n0, n1 = x0.shape[0], x1.shape[0]
    pred = x0 - dt * model_guess.potential.gradient(x0)
    C = _sq_dists(pred, x1)
    a = np.full(n0, 1.0 / n0)
    b = np.full(n1, 1.0 / n1)
    total_it = 0
    if warm is not None:
        f, g = warm[0].copy(), warm[1].copy()
    else:
        f = C.min(axis=1).copy()  # keeps each kernel row from underflowing entirely
        g = np.zeros(n1)
        e = float(C.max()) / 50.0
        while e > eps * 1.000001 and total_it < max_iter:
            cap = min(60, max_iter - total_it)
            f, g, it, _ = _scale_until(C, e, f, g, a, b, max(100.0 * tol, 1e-5), cap)
            total_it += it
            e = max(eps, e / 4.0)
    width = _TRUNC_WIDTH
    violation = np.inf
    while True:
        f, g, it, inner_viol = _sparse_scale(C, eps, f, g, a, b, tol, max(1, max_iter - total_it), width)
        total_it += it
        P = np.exp(np.minimum((f[:, None] + g[None, :] - C) / eps, 690.0))
        violation = float(
            max(np.abs(P.sum(axis=1) - a).max(), np.abs(P.sum(axis=0) - b).max())
        )
        clipped = violation > max(10.0 * inner_viol, tol)  # truncation hid real support
        if not clipped or width >= 4 * _TRUNC_WIDTH or total_it >= max_iter:
            break
        width *= 2.0
    P = _round_to_marginals(P, a, b)
    return Coupling(
        weights=P,
        row_marginal=a,
        col_marginal=b,
        converged=violation <= tol,
        iterations=total_it,
        marginal_violation=violation,
        f=f,
        g=g,
    )


def sample_pairing(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw a bijective pairing consistent with a coupling's weights.

    Rows are visited in random order; each picks a partner from its weights
    restricted to columns still available.  Requires a square coupling.
    Near-permutation couplings are reproduced exactly.
    """
    n = weights.shape[0]
    if weights.shape[1] != n:
        raise ValueError("bijective pairing requires a square coupling")
    out = np.empty(n, dtype=int)
    available = np.ones(n, dtype=bool)
    cols = np.arange(n)
    for i in rng.permutation(n):
        w = weights[i] * available
        total = w.sum()
        if total <= 0.0:
            w = available.astype(float)
            total = w.sum()
        j = rng.choice(cols, p=w / total)
        out[i] = j
        available[j] = False
    return out


def appex_estimate(series: SnapshotSeries, degree: int = 4, config: AppexConfig | None = None) -> EstimationResult:
    """Alternating entropic-OT / weighted-MLE estimator on a snapshot series.

    Starts from zero drift and a displacement-based sigma2 guess, couples each
    consecutive pair of clouds by Sinkhorn under the current guess, refits the
    weighted MLE, and repeats until the largest parameter change drops below
    config.tol.  loglik_trace records the coupled log-likelihood plus the
    (epsilon_scale/2)-weighted coupling entropy, the objective this loop
    ascends; iterates that dip below the last accepted value (inexact plans
    jitter near plateaus) are kept out of the trace, and a run that never
    meets the tolerance returns the best accepted iterate.
    """
    config = config or AppexConfig()
    if series.n_times < 2:
        raise ValueError("need at least two snapshots")
    dim = series.dim
    alphas = multi_indices(dim, degree)
    raw_pairs = []
    for i in range(series.n_times - 1):
        dt = float(series.times[i + 1] - series.times[i])
        raw_pairs.append((series.clouds[i], series.clouds[i + 1], dt))
    # sigma2 init: nearest-neighbor displacement second moment per pair --
    # the zero-drift, small-epsilon provisional matching.  Transient clouds
    # give roughly sigma2; near-stationary clouds give the cloud spacing
    # scale, which is what the coupled likelihood supports there.
    msd = []
    for x0, x1, dt in raw_pairs:
        nn = _sq_dists(x0, x1).min(axis=1)
        msd.append(float(nn.mean()) / (dim * dt))
    sigma2 = max(float(np.mean(msd)), config.sigma2_floor)
    theta = np.zeros(len(alphas))
    bases = [gradient_basis(x0, dim, degree) for x0, _, _ in raw_pairs]
    warm = [None] * len(raw_pairs)
    trace: list[float] = []
    all_warns: list[str] = []
    converged = False
    iterations = 0
    best_obj = -np.inf
    best_theta = None
    best_sigma2 = sigma2
    rng = np.random.default_rng(config.seed)
    for outer in range(1, config.max_outer + 1):
        iterations = outer
        guess_pot = PolynomialPotential(dim, degree, {a: v for a, v in zip(alphas, theta) if v != 0.0})
        guess = LangevinModel(guess_pot, sigma2)
        couplings = []
        for k, (x0, x1, dt) in enumerate(raw_pairs):
            cp = sinkhorn_coupling(
                x0,
                x1,
                guess,
                dt,
                epsilon_scale=config.epsilon_scale,
                max_iter=config.sinkhorn_max_iter,
                tol=config.sinkhorn_tol,
                warm=warm[k],
            )
            warm[k] = (cp.f, cp.g)
            W = cp.weights
            if config.hard_pairing:
                pairing = sample_pairing(W, rng)
                W = np.zeros_like(W)
                W[np.arange(W.shape[0]), pairing] = 1.0 / W.shape[0]
            couplings.append(W)
        pairs = [(x0, x1, dt, W) for (x0, x1, dt), W in zip(raw_pairs, couplings)]
        theta_new, sigma2_new, quads, _, warns = _solve_weighted(pairs, dim, degree, config.sigma2_floor)
        for w in warns:
            if w not in all_warns:
                all_warns.append(w)
        entropy = sum(-float(xlogy(W, W).sum()) for W in couplings)
        objective = _loglik(pairs, quads, sigma2_new, dim) + 0.5 * config.epsilon_scale * entropy
        if not trace or objective >= trace[-1] - 1e-6:
            trace.append(objective)  # rejected dips stay out of the trace
        if objective > best_obj:
            best_obj = objective
            best_theta, best_sigma2 = theta_new, float(sigma2_new)
        delta = max(float(np.abs(theta_new - theta).max()), abs(sigma2_new - sigma2))
        theta, sigma2 = theta_new, sigma2_new
        if delta < config.tol:
            converged = True
            break
    if not converged and best_theta is not None:
        theta, sigma2 = best_theta, best_sigma2  # best accepted iterate
    coeffs = {a: float(v) for a, v in zip(alphas, theta)}
    return EstimationResult(
        coefficients=coeffs,
        sigma2_hat=float(sigma2),
        degree=degree,
        dim=dim,
        data_setting="marginals",
        iterations=iterations,
        converged=converged,
        loglik_trace=trace,
        warnings=all_warns,
        config=config.to_dict(),
    )


def estimate_piecewise(
    series: SnapshotSeries, regimes: RegimeSpec, degree: int = 4, config: AppexConfig | None = None
) -> list[EstimationResult]:
    """Independent fits on the sub-series of each regime.

    A regime whose snapshots are statistically indistinguishable (all
    consecutive energy-test p-values above 0.05) gets a stationarity warning:
    on such data (potential, sigma2) is only identified up to joint rescaling.
    """
    from .stationary import stationarity_test

    assignment = regimes.assign(series.times)
    results = []
    for reg in range(len(regimes.starts)):
        idx = np.nonzero(assignment == reg)[0]
        if idx.size < 2:
            raise ValueError(f"regime {reg} contains {idx.size} snapshots; need at least 2")
        sub = series.restrict(idx)
        res = appex_estimate(sub, degree=degree, config=config)
        records = stationarity_test(sub, seed=(config.seed if config else 0) + 1000 * reg)
        min_p = min(r["p_value"] for r in records)
        if min_p > 0.05:
            msg = (
                f"regime {reg}: snapshots indistinguishable from stationary (min p={min_p:.3f}); "
                "potential and sigma2 identified only up to joint rescaling"
            )
            res.warnings.append(msg)
            warnings.warn(msg, EstimationWarning)
        res.diagnostics["stationarity"] = records
        res.diagnostics["regime"] = {"index": reg, "start": regimes.starts[reg]}
        results.append(res)
    return results
