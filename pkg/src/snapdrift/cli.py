"""Command-line front end: dataset generation, estimation, evaluation,
Fisher sweeps, and one-command reproduction of the benchmark experiments.

JSON configs are the primary interface; ``--set dotted.key=value`` overrides
single fields.  Outputs land under ``--output-root`` (or
``$SNAPDRIFT_OUTPUT_ROOT``, default the working directory) and every command
writes a ``manifest.json`` with the config echo, the derived per-replicate
seeds, and a SHA-256 per output file, so a rerun can be checked byte for
byte.  Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .estimate import (
    AppexConfig,
    EstimationResult,
    RegimeSpec,
    appex_estimate,
    estimate_piecewise,
    mle_from_trajectories,
    result_to_model,
    sinkhorn_coupling,
)
from .fisher import (
    diffusion_fisher_theoretical,
    drift_fisher_theoretical,
    empirical_score_variance,
    information_gap_estimate,
)
from .metrics import (
    cosine_similarity,
    diffusivity_mae,
    drift_mae,
    gibbs_eval_points,
    grid_points,
    trend_flags,
)
from .potentials import potential_from_dict
from .rng import derive_seed
from .sim import (
    GibbsInit,
    LangevinModel,
    SimulationDivergedError,
    SnapshotSeries,
    TrajectorySet,
    _atomic_text,
    initial_from_dict,
    sample_initial,
    shuffle_to_snapshots,
    simulate,
    simulate_piecewise,
)
from .stationary import rescaled_model, stationarity_test


class ConfigError(ValueError):
    """Invalid configuration or input file; maps to exit code 2."""


_NUMERICAL_ERRORS = (
    SimulationDivergedError,
    np.linalg.LinAlgError,
    FloatingPointError,
    OverflowError,
    ZeroDivisionError,
)


# ---------------------------------------------------------------------------
# config plumbing


def _load_config(path: str | None, overrides: list[str], defaults: dict | None = None) -> dict:
    config = copy.deepcopy(defaults) if defaults else {}
    if path is not None:
        try:
            with open(path) as f:
                loaded = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: line {e.lineno}: {e.msg}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        config = _deep_merge(config, loaded)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings may be given unquoted
        node = config
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not an object")
        node[parts[-1]] = value
    return config


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _require(config: dict, key: str):
    if key not in config:
        raise ConfigError(f"config is missing required field {key!r}")
    return config[key]


def _output_dir(args, config: dict, default_name: str) -> Path:
    root = Path(args.output_root or os.environ.get("SNAPDRIFT_OUTPUT_ROOT", "."))
    name = getattr(args, "output_dir", None) or config.get("output_dir") or default_name
    out = root / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> Path:
    with _atomic_text(path) as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    with _atomic_text(path) as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_manifest(out_dir: Path, command: str, config: dict, seeds: dict, files: list[Path]):
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "outputs": {str(p.relative_to(out_dir)): _sha256(p) for p in sorted(files)},
    }
    _write_json(out_dir / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# config -> domain objects


def _build_model(spec) -> LangevinModel:
    if not isinstance(spec, dict):
        raise ConfigError("model must be an object {potential, sigma2}")
    try:
        return LangevinModel(potential_from_dict(_require(spec, "potential")), float(_require(spec, "sigma2")))
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"invalid model spec: {e}")


def _build_init(spec, model: LangevinModel):
    try:
        return initial_from_dict(spec, model)
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"invalid init spec: {e}")


def _build_schedule(spec) -> tuple[np.ndarray, list[int]]:
    """Times to simulate plus the indices of the observed snapshot times.

    ``substeps`` refines each observation interval with extra internal
    integration steps that are not part of the recorded dataset.
    """
    if not isinstance(spec, dict):
        raise ConfigError("schedule must be an object")
    substeps = int(spec.get("substeps", 1))
    if substeps < 1:
        raise ConfigError("schedule.substeps must be >= 1")
    if "times" in spec:
        obs = np.asarray(spec["times"], dtype=float)
    else:
        dt = float(_require(spec, "dt"))
        n_steps = int(_require(spec, "n_steps"))
        if dt <= 0 or n_steps < 1:
            raise ConfigError("schedule needs dt > 0 and n_steps >= 1")
        obs = np.arange(n_steps + 1) * dt
    if obs.ndim != 1 or obs.size < 2 or not np.all(np.diff(obs) > 0):
        raise ConfigError("schedule times must be at least two strictly increasing values")
    if substeps == 1:
        return obs, list(range(obs.size))
    fine = [obs[0]]
    for a, b in zip(obs[:-1], obs[1:]):
        fine.extend(np.linspace(a, b, substeps + 1)[1:])
    return np.asarray(fine), list(range(0, len(fine), substeps))


def _validate_setting(config: dict, init_spec: dict):
    setting = config.get("setting", "transient")
    if setting not in ("transient", "stationary"):
        raise ConfigError(f"setting must be transient or stationary, got {setting!r}")
    if setting == "stationary" and init_spec.get("kind") != "gibbs":
        raise ConfigError(
            "stationary setting requires a gibbs init spec (metropolis or burn-in); "
            f"got kind={init_spec.get('kind')!r}"
        )
    return setting


def _estimator_config(config: dict) -> dict:
    est = config.get("estimator", config)
    if not isinstance(est, dict):
        raise ConfigError("estimator config must be an object")
    return est


# ---------------------------------------------------------------------------
# generate


def _generate_replicate(config: dict, rep: int) -> tuple[int, dict]:
    model = _build_model(_require(config, "model"))
    init_spec = _require(config, "init")
    init = _build_init(init_spec, model)
    times, keep = _build_schedule(_require(config, "schedule"))
    n = int(config.get("n", 1000))
    if n < 1:
        raise ConfigError("n must be >= 1")
    seed_init = derive_seed(int(config.get("seed", 0)), rep, 0)
    seed_sim = derive_seed(int(config.get("seed", 0)), rep, 1)
    seed_shuffle = derive_seed(int(config.get("seed", 0)), rep, 2)
    x0 = sample_initial(init, n, seed_init)
    fine = simulate(model, x0, times, seed_sim)
    trajs = TrajectorySet(fine.times[keep], fine.paths[:, keep, :], seed_sim)
    snaps = shuffle_to_snapshots(fine, seed_shuffle, keep=keep)
    return rep, {
        "trajs": trajs,
        "snaps": snaps,
        "seeds": {"init": seed_init, "sim": seed_sim, "shuffle": seed_shuffle},
    }


def cmd_generate(args) -> int:
    config = _load_config(args.config, args.set)
    _validate_setting(config, _require(config, "init"))
    replicates = int(config.get("replicates", 1))
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    out = _output_dir(args, config, "dataset")
    tasks = [(config, rep) for rep in range(replicates)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            produced = dict(pool.map(_generate_replicate_star, tasks))
    else:
        produced = dict(_generate_replicate(*t) for t in tasks)
    files, seeds = [], {}
    for rep in range(replicates):
        rep_dir = out / f"rep{rep:03d}"
        rep_dir.mkdir(exist_ok=True)
        item = produced[rep]
        item["trajs"].to_csv(rep_dir / "trajectories.csv")
        item["snaps"].to_csv(rep_dir / "snapshots.csv")
        files += [rep_dir / "trajectories.csv", rep_dir / "snapshots.csv"]
        seeds[f"rep{rep:03d}"] = item["seeds"]
    _write_manifest(out, "generate", config, seeds, files)
    print(f"wrote {len(files)} dataset files under {out}")
    return 0


def _generate_replicate_star(task):
    return _generate_replicate(*task)


# ---------------------------------------------------------------------------
# estimate


def _detect_dataset(path: str):
    try:
        with open(path, newline="") as f:
            header = f.readline().strip().split(",")
    except FileNotFoundError:
        raise ConfigError(f"dataset not found: {path}")
    if header[:2] == ["path_id", "time"]:
        return "trajectories", TrajectorySet.from_csv(path)
    if header[:2] == ["time", "sample_id"]:
        return "marginals", SnapshotSeries.from_csv(path)
    raise ConfigError(f"{path}: unrecognized dataset header {header[:2]}")


def _snapshot_view(data) -> SnapshotSeries:
    if isinstance(data, SnapshotSeries):
        return data
    return SnapshotSeries(data.times, [data.snapshot(i) for i in range(data.times.size)])


def _estimate_dataset(path: str, est_cfg: dict) -> EstimationResult:
    kind, data = _detect_dataset(path)
    degree = int(est_cfg.get("degree", 4))
    if kind == "trajectories":
        result = mle_from_trajectories(data, degree=degree, sigma2_floor=float(est_cfg.get("sigma2_floor", 1e-8)))
    else:
        result = appex_estimate(data, degree=degree, config=AppexConfig.from_dict(est_cfg))
    records = stationarity_test(
        _snapshot_view(data),
        n_permutations=int(est_cfg.get("stationarity_permutations", 200)),
        seed=derive_seed(int(est_cfg.get("seed", 0)), 3),
    )
    result.diagnostics["stationarity"] = records
    min_p = min(r["p_value"] for r in records)
    flag = kind == "marginals" and min_p > 0.05
    result.diagnostics["stationary_warning"] = flag
    if flag:
        result.warnings.append(
            f"snapshots indistinguishable from stationary (min p={min_p:.3f}); "
            "potential and sigma2 identified only up to joint rescaling"
        )
    return result


def cmd_estimate(args) -> int:
    config = _load_config(args.config, args.set)
    est_cfg = _estimator_config(config)
    result = _estimate_dataset(args.dataset, est_cfg)
    payload = result.to_dict()
    payload["dataset"] = args.dataset
    out_path = Path(args.output) if args.output else Path(args.dataset).with_suffix(".estimate.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out_path, payload)
    flag = " [stationary warning]" if result.diagnostics.get("stationary_warning") else ""
    print(f"{out_path}: sigma2_hat={result.sigma2_hat:.6g} converged={result.converged}{flag}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _metrics_config(config: dict) -> dict:
    met = config.get("metrics", config)
    grid = met.get("grid", {}) if isinstance(met, dict) else {}
    gibbs = met.get("gibbs", {}) if isinstance(met, dict) else {}
    return {
        "half_length": float(grid.get("half_length", 5.0)),
        "n_per_axis": int(grid.get("n_per_axis", 26)),
        "gibbs_n": int(gibbs.get("n", 1000)),
        "gibbs_seed": int(gibbs.get("seed", 0)),
    }


def _evaluate_one(truth: LangevinModel, result: EstimationResult, grid: np.ndarray, gibbs_pts: np.ndarray) -> dict:
    est = result_to_model(result)
    return {
        "setting": result.data_setting,
        "cosine": cosine_similarity(truth, est, grid),
        "drift_mae": drift_mae(truth, est, grid),
        "gibbs_drift_mae": drift_mae(truth, est, gibbs_pts),
        "sigma2_mae": diffusivity_mae(truth.sigma2, result.sigma2_hat),
        "sigma2_hat": float(result.sigma2_hat),
    }


_EVAL_COLUMNS = ["cosine", "drift_mae", "gibbs_drift_mae", "sigma2_mae", "sigma2_hat"]


def cmd_evaluate(args) -> int:
    config = _load_config(args.config, args.set)
    if args.truth:
        try:
            with open(args.truth) as f:
                truth_spec = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"truth file not found: {args.truth}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.truth}: line {e.lineno}: {e.msg}")
    else:
        truth_spec = _require(config, "truth")
    truth = _build_model(truth_spec)
    if not args.results:
        raise ConfigError("evaluate needs at least one estimation-result JSON")
    met = _metrics_config(config)
    grid = grid_points(met["half_length"], met["n_per_axis"])
    gibbs_pts = gibbs_eval_points(truth, met["gibbs_n"], seed=met["gibbs_seed"])
    results = []
    for rp in args.results:
        try:
            with open(rp) as f:
                results.append(EstimationResult.from_dict(json.load(f)))
        except FileNotFoundError:
            raise ConfigError(f"result file not found: {rp}")
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"{rp}: not an estimation result ({e})")
    out = _output_dir(args, config, "evaluation")
    rows, recs = [], []
    for rp, res in zip(args.results, results):
        rec = _evaluate_one(truth, res, grid, gibbs_pts)
        recs.append(rec)
        rows.append([rp, rec["setting"]] + [f"{rec[c]:.10g}" for c in _EVAL_COLUMNS])
    if len(recs) > 1:
        for stat, fn in (("mean", np.mean), ("sd", np.std)):
            rows.append(
                [stat, ""] + [f"{fn([r[c] for r in recs]):.10g}" for c in _EVAL_COLUMNS]
            )
    files = [_write_csv(out / "evaluation.csv", ["result", "setting"] + _EVAL_COLUMNS, rows)]
    summary = {
        "per_result": [dict(zip(["result"], [rp])) | rec for rp, rec in zip(args.results, recs)],
        "mean": {c: float(np.mean([r[c] for r in recs])) for c in _EVAL_COLUMNS},
        "sd": {c: float(np.std([r[c] for r in recs])) for c in _EVAL_COLUMNS},
    }
    files.append(_write_json(out / "evaluation.json", summary))
    if not args.no_figures:
        from . import plots

        panels = [("true model", truth)] + [
            (f"estimate {i} ({r.data_setting})", result_to_model(r)) for i, r in enumerate(results[:2])
        ]
        files.append(Path(plots.drift_field_panels(panels, out / "fields.png", half_length=met["half_length"])))
        files.append(Path(plots.mae_scatter(recs, out / "mae_scatter.png")))
    _write_manifest(out, "evaluate", config, {}, files)
    print(f"evaluated {len(recs)} result(s) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# fisher


_SWEEP_FAMILIES = {
    "uniform_box": lambda r: {"kind": "uniform_box", "r": float(r)},
    "rademacher": lambda r: {"kind": "rademacher", "r": float(r)},
    "gaussian": lambda r: {"kind": "gaussian", "mean": [0.0, 0.0], "cov": [[float(r), 0.0], [0.0, float(r)]]},
}


def _one_step_panel(model: LangevinModel, init_spec: dict, n: int, dt: float, seed: int) -> TrajectorySet:
    x0 = sample_initial(_build_init(init_spec, model), n, derive_seed(seed, 0))
    return simulate(model, x0, np.array([0.0, dt]), derive_seed(seed, 1))


def _sweep_cell(config: dict, r: float, rep: int) -> tuple:
    """One (dispersion, replicate) cell: paired-vs-shuffled fits plus scores.

    The same derived seed drives every r within a replicate (common random
    numbers), so sweep curves are compared under identical noise draws.
    """
    model = _build_model(_require(config, "model"))
    family = _SWEEP_FAMILIES[config["sweep"]["family"]]
    n = int(config.get("n", 1000))
    dt = float(config.get("dt", 1e-3))
    est_cfg = _estimator_config(config)
    degree = int(est_cfg.get("degree", 4))
    met = _metrics_config(config)
    grid = grid_points(met["half_length"], met["n_per_axis"])
    seed = derive_seed(int(config.get("seed", 0)), rep)
    trajs = _one_step_panel(model, family(r), n, dt, seed)
    snaps = shuffle_to_snapshots(trajs, derive_seed(seed, 2))

    t0 = time.time()
    fit_t = mle_from_trajectories(trajs, degree=degree)
    cfg = AppexConfig.from_dict({**est_cfg, "seed": derive_seed(seed, 3)})
    fit_m = appex_estimate(snaps, degree=degree, config=cfg)
    seconds = time.time() - t0

    est_rows = []
    for setting, fit in (("trajectories", fit_t), ("marginals", fit_m)):
        est = result_to_model(fit)
        est_rows.append(
            {
                "r": float(r),
                "replicate": rep,
                "setting": setting,
                "cosine": cosine_similarity(model, est, grid),
                "drift_mae": drift_mae(model, est, grid),
                "sigma2_mae": diffusivity_mae(model.sigma2, fit.sigma2_hat),
                "sigma2_hat": float(fit.sigma2_hat),
                "iterations": fit.iterations,
                "converged": fit.converged,
            }
        )
    report = empirical_score_variance(model, trajs)
    alpha20 = tuple([2] + [0] * (model.dim - 1))
    drift_rec = report.drift.get(alpha20)
    fisher_row = {
        "r": float(r),
        "replicate": rep,
        "diffusion_theoretical": report.diffusion["theoretical"],
        "diffusion_empirical": report.diffusion["empirical"],
        "diffusion_stderr": report.diffusion["stderr"],
        "drift20_theoretical": drift_rec["theoretical"] if drift_rec else float("nan"),
        "drift20_empirical": drift_rec["empirical"] if drift_rec else float("nan"),
        "drift20_stderr": drift_rec["stderr"] if drift_rec else float("nan"),
    }
    return est_rows, fisher_row, seconds


def _sweep_cell_star(task):
    return _sweep_cell(*task)


def _summarize_sweep(est_rows: list[dict], r_values: list[float]) -> dict:
    """Per-(setting, metric) replicate means, stderrs, and trend flags."""
    out = {}
    for setting in ("trajectories", "marginals"):
        for metric in ("drift_mae", "sigma2_mae"):
            means, errs = [], []
            for r in r_values:
                vals = [row[metric] for row in est_rows if row["setting"] == setting and row["r"] == r]
                means.append(float(np.mean(vals)))
                errs.append(float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0)
            out[f"{setting}_{metric}"] = {
                "r": list(map(float, r_values)),
                "mean": means,
                "stderr": errs,
                "trend": trend_flags(means, errs),
            }
    return out


def _run_fisher_point(config: dict, out: Path, args) -> list[Path]:
    model = _build_model(_require(config, "model"))
    n = int(config.get("n", 1000))
    dt = float(config.get("dt", 1e-3))
    seed = int(config.get("seed", 0))
    trajs = _one_step_panel(model, _require(config, "init"), n, dt, derive_seed(seed, 0))
    report = empirical_score_variance(model, trajs)
    payload = report.to_dict()
    if "gap" in config:
        coupling = sinkhorn_coupling(
            trajs.paths[:, 0, :], trajs.paths[:, 1, :], model, dt,
            epsilon_scale=float(config["gap"].get("epsilon_scale", 1.0)),
        )
        gap = information_gap_estimate(
            model, trajs, coupling,
            n_resample=int(config["gap"].get("n_resample", 200)),
            seed=derive_seed(seed, 9),
        )
        payload["information_gap"] = {
            "sigma2": gap["sigma2"],
            "drift": [
                {"alpha": list(a), "value": gap[a]}
                for a in sorted((k for k in gap if k != "sigma2"), key=lambda a: (sum(a), a))
            ],
        }
    return [_write_json(out / "fisher_report.json", payload)]


def _run_fisher_sweep(config: dict, out: Path, args) -> list[Path]:
    sweep = config["sweep"]
    family = sweep.get("family", "uniform_box")
    if family not in _SWEEP_FAMILIES:
        raise ConfigError(f"unknown sweep family {family!r}, expected one of {sorted(_SWEEP_FAMILIES)}")
    r_values = [float(r) for r in sweep.get("r_values", [1, 2, 3, 4, 5, 6, 7])]
    replicates = int(config.get("replicates", 5))
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    files = []
    tasks = [(config, r, rep) for rep in range(replicates) for r in r_values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            cells = list(pool.map(_sweep_cell_star, tasks))
    else:
        cells = [_sweep_cell(*t) for t in tasks]

    est_rows = [row for est, _, _ in cells for row in est]
    fisher_rows = [fr for _, fr, _ in cells]
    est_header = ["r", "replicate", "setting", "cosine", "drift_mae", "sigma2_mae", "sigma2_hat", "iterations", "converged"]
    files.append(
        _write_csv(
            out / "sweep_estimates.csv",
            est_header,
            [[_fmt_cell(row[c]) for c in est_header] for row in sorted(est_rows, key=_row_key)],
        )
    )
    fisher_header = list(fisher_rows[0])
    files.append(
        _write_csv(
            out / "sweep_fisher.csv",
            fisher_header,
            [[_fmt_cell(fr[c]) for c in fisher_header] for fr in sorted(fisher_rows, key=lambda f: (f["r"], f["replicate"]))],
        )
    )
    summary = _summarize_sweep(est_rows, r_values)
    summary["family"] = family
    summary["seconds_total"] = float(sum(s for _, _, s in cells))
    files.append(_write_json(out / "sweep_summary.json", summary))
    if not getattr(args, "no_figures", False):
        from . import plots

        for metric, fname in (("drift_mae", "drift_mae_vs_r.png"), ("sigma2_mae", "sigma2_mae_vs_r.png")):
            series = {
                setting: (summary[f"{setting}_{metric}"]["mean"], summary[f"{setting}_{metric}"]["stderr"])
                for setting in ("trajectories", "marginals")
            }
            files.append(Path(plots.sweep_curves(r_values, series, out / fname, xlabel="dispersion r", ylabel=metric)))
        info = {
            "diffusion info (empirical)": (
                [float(np.mean([f["diffusion_empirical"] for f in fisher_rows if f["r"] == r])) for r in r_values],
                None,
            ),
            "diffusion info (theoretical)": (
                [float(np.mean([f["diffusion_theoretical"] for f in fisher_rows if f["r"] == r])) for r in r_values],
                None,
            ),
            "drift info alpha=(2,0) (theoretical)": (
                [float(np.mean([f["drift20_theoretical"] for f in fisher_rows if f["r"] == r])) for r in r_values],
                None,
            ),
        }
        files.append(
            Path(plots.sweep_curves(r_values, info, out / "fisher_info_vs_r.png", xlabel="dispersion r", ylabel="total information"))
        )
    flags = {k: v["trend"] for k, v in summary.items() if isinstance(v, dict) and "trend" in v}
    print(json.dumps(flags, indent=2, sort_keys=True))
    return files


def cmd_fisher(args) -> int:
    config = _load_config(args.config, args.set)
    out = _output_dir(args, config, "fisher")
    seed = int(config.get("seed", 0))
    if "sweep" in config:
        files = _run_fisher_sweep(config, out, args)
        seeds = {f"rep{rep:03d}": derive_seed(seed, rep) for rep in range(int(config.get("replicates", 5)))}
    else:
        files = _run_fisher_point(config, out, args)
        seeds = {"panel": derive_seed(seed, 0)}
    _write_manifest(out, "fisher", config, seeds, files)
    print(f"fisher -> {out}")
    return 0


def _row_key(row: dict):
    return (row["r"], row["replicate"], row["setting"])


def _fmt_cell(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return format(v, ".10g")
    return v


# ---------------------------------------------------------------------------
# reproduce


def _reproduce_cell(config: dict, cell_index: int, kind: str, sigma2: float, setting: str, rep: int) -> dict:
    model = _build_model({"potential": {"kind": kind}, "sigma2": sigma2})
    est_cfg = _estimator_config(config)
    met = _metrics_config(config)
    grid = grid_points(met["half_length"], met["n_per_axis"])
    n = int(config.get("n", 1000))
    times, keep = _build_schedule(config.get("schedule", {"dt": 0.01, "n_steps": 5}))
    cell_seed = derive_seed(int(config.get("seed", 0)), cell_index, rep)
    if setting == "stationary":
        init = GibbsInit(model)
    else:
        init = _build_init(config.get("transient_init", {"kind": "uniform_box", "r": 4.0}), model)
    x0 = sample_initial(init, n, derive_seed(cell_seed, 0))
    fine = simulate(model, x0, times, derive_seed(cell_seed, 1))
    snaps = shuffle_to_snapshots(fine, derive_seed(cell_seed, 2), keep=keep)
    t0 = time.time()
    cfg = AppexConfig.from_dict({**est_cfg, "seed": derive_seed(cell_seed, 3)})
    fit = appex_estimate(snaps, degree=int(est_cfg.get("degree", 4)), config=cfg)
    seconds = time.time() - t0
    est = result_to_model(fit)
    gibbs_pts = gibbs_eval_points(model, met["gibbs_n"], seed=derive_seed(cell_seed, 4))
    return {
        "potential": kind,
        "sigma2": sigma2,
        "setting": setting,
        "replicate": rep,
        "cosine": cosine_similarity(model, est, grid),
        "drift_mae": drift_mae(model, est, grid),
        "gibbs_drift_mae": drift_mae(model, est, gibbs_pts),
        "sigma2_mae": diffusivity_mae(sigma2, fit.sigma2_hat),
        "sigma2_hat": float(fit.sigma2_hat),
        "converged": fit.converged,
        "seconds": seconds,
        "coefficients": {",".join(map(str, a)): v for a, v in fit.coefficients.items()},
    }


def _reproduce_cell_star(task):
    return _reproduce_cell(*task)


_TVS_DEFAULTS = {
    "potentials": ["quadratic", "styblinski_tang"],
    "sigma2_values": [0.2, 0.4],
    "settings": ["transient", "stationary"],
    "n": 1000,
    "replicates": 5,
    "seed": 0,
    "schedule": {"dt": 0.01, "n_steps": 5},
    "estimator": {"degree": 4},
}


def _run_transient_vs_stationary(config: dict, out: Path, args) -> list[Path]:
    cells = [
        (kind, float(s2), setting)
        for kind in config["potentials"]
        for s2 in config["sigma2_values"]
        for setting in config["settings"]
    ]
    tasks = [
        (config, ci, kind, s2, setting, rep)
        for ci, (kind, s2, setting) in enumerate(cells)
        for rep in range(int(config["replicates"]))
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_reproduce_cell_star, tasks))
    else:
        rows = [_reproduce_cell(*t) for t in tasks]
    rows.sort(key=lambda r: (r["potential"], r["sigma2"], r["setting"], r["replicate"]))
    header = ["potential", "sigma2", "setting", "replicate", "cosine", "drift_mae", "gibbs_drift_mae", "sigma2_mae", "sigma2_hat", "converged", "seconds"]
    files = [_write_csv(out / "runs.csv", header, [[_fmt_cell(r[c]) for c in header] for r in rows])]
    summary = {}
    for kind, s2, setting in cells:
        sel = [r for r in rows if (r["potential"], r["sigma2"], r["setting"]) == (kind, s2, setting)]
        summary[f"{kind}|{s2}|{setting}"] = {
            c: {"mean": float(np.mean([r[c] for r in sel])), "sd": float(np.std([r[c] for r in sel]))}
            for c in ("cosine", "drift_mae", "gibbs_drift_mae", "sigma2_mae", "seconds")
        }
    for kind in config["potentials"]:
        for s2 in config["sigma2_values"]:
            key_t, key_s = f"{kind}|{float(s2)}|transient", f"{kind}|{float(s2)}|stationary"
            if key_t in summary and key_s in summary:
                ratio = summary[key_s]["drift_mae"]["mean"] / max(summary[key_t]["drift_mae"]["mean"], 1e-300)
                summary[f"{kind}|{float(s2)}|stationary_to_transient_drift_mae_ratio"] = ratio
    files.append(_write_json(out / "summary.json", summary))
    if not args.no_figures:
        from . import plots

        files.append(Path(plots.mae_scatter(rows, out / "mae_scatter.png")))
        first = [r for r in rows if r["replicate"] == 0]
        if first:
            kind, s2 = first[0]["potential"], first[0]["sigma2"]
            truth = _build_model({"potential": {"kind": kind}, "sigma2": s2})
            panels = [("true model", truth)]
            for setting in config["settings"]:
                match = [r for r in first if (r["potential"], r["sigma2"], r["setting"]) == (kind, s2, setting)]
                if match:
                    coeffs = {tuple(int(x) for x in k.split(",")): v for k, v in match[0]["coefficients"].items()}
                    degree = int(_estimator_config(config).get("degree", 4))
                    est = EstimationResult(
                        coefficients=coeffs, sigma2_hat=match[0]["sigma2_hat"], degree=degree,
                        dim=2, data_setting=setting, iterations=0, converged=True, loglik_trace=[],
                    )
                    panels.append((f"estimated from {setting}", result_to_model(est)))
            files.append(Path(plots.drift_field_panels(panels, out / "fields.png")))
    return files


_SWEEP_DEFAULTS = {
    "model": {"potential": {"kind": "quadratic"}, "sigma2": 0.2},
    "n": 1000,
    "dt": 1e-3,
    "replicates": 5,
    "seed": 0,
    "estimator": {"degree": 4},
}


def _run_sweep_experiment(config: dict, out: Path, args, family: str) -> list[Path]:
    if "sweep" not in config:
        config = _deep_merge(
            config, {"sweep": {"family": family, "r_values": config.get("r_values", [1, 2, 3, 4, 5, 6, 7])}}
        )
    return _run_fisher_sweep(config, out, args)


_EVOLVE_DEFAULTS = {
    "model": {"potential": {"kind": "quadratic"}, "sigma2": 0.2},
    "alphas": [1.0, 4.0, 10.0],
    "regime_snapshots": 3,
    "dt": 0.01,
    "substeps": 10,
    "n": 1000,
    "seed": 0,
    "estimator": {"degree": 4},
}


def _run_evolving_equilibrium(config: dict, out: Path, args) -> list[Path]:
    base = _build_model(config["model"])
    alphas = [float(a) for a in config["alphas"]]
    per = int(config["regime_snapshots"])
    dt = float(config["dt"])
    models = [rescaled_model(base, a) if a != 1.0 else base for a in alphas]
    n_obs = per * len(alphas)
    obs = np.arange(n_obs) * dt
    starts = [float(i * per * dt) for i in range(len(alphas))]
    sched, keep = _build_schedule({"times": list(obs), "substeps": int(config["substeps"])})
    seed = int(config.get("seed", 0))
    x0 = sample_initial(GibbsInit(base), int(config["n"]), derive_seed(seed, 0))
    fine = simulate_piecewise(models, starts, sched, x0, derive_seed(seed, 1))
    snaps = shuffle_to_snapshots(fine, derive_seed(seed, 2), keep=keep)
    files = []
    snaps.to_csv(out / "snapshots.csv")
    files.append(out / "snapshots.csv")
    records = stationarity_test(snaps, seed=derive_seed(seed, 3))
    fits = estimate_piecewise(
        snaps, RegimeSpec(tuple(starts)), degree=int(_estimator_config(config).get("degree", 4)),
        config=AppexConfig.from_dict({**_estimator_config(config), "seed": derive_seed(seed, 4)}),
    )
    summary = {
        "alphas": alphas,
        "stationarity_p_values": [r["p_value"] for r in records],
        "all_pairs_indistinguishable": bool(all(r["p_value"] > 0.05 for r in records)),
        "per_regime": [
            {
                "alpha": a,
                "true_sigma2": m.sigma2,
                "sigma2_hat": f.sigma2_hat,
                "stationary_warning": any("rescaling" in w for w in f.warnings),
            }
            for a, m, f in zip(alphas, models, fits)
        ],
    }
    files.append(_write_json(out / "summary.json", summary))
    if not args.no_figures:
        from . import plots

        files.append(Path(plots.snapshot_overlay(snaps, out / "snapshots.png")))
        files.append(
            Path(
                plots.sigma2_bars(
                    [f"alpha={a:g}" for a in alphas],
                    [f.sigma2_hat for f in fits],
                    [m.sigma2 for m in models],
                    out / "sigma2_by_regime.png",
                )
            )
        )
    return files


_REGIME_DEFAULTS = {
    "model": {"potential": {"kind": "quadratic"}, "sigma2": 0.2},
    "sigma2_factor": 2.0,
    "regime_snapshots": 6,
    "dt": 0.01,
    "init": {"kind": "uniform_box", "r": 4.0},
    "n": 1000,
    "seed": 0,
    "estimator": {"degree": 4},
}


def _run_regime_shift(config: dict, out: Path, args) -> list[Path]:
    base = _build_model(config["model"])
    factor = float(config["sigma2_factor"])
    shifted = LangevinModel(base.potential, base.sigma2 * factor)
    per = int(config["regime_snapshots"])
    dt = float(config["dt"])
    obs = np.arange(2 * per) * dt
    starts = [0.0, float(per * dt)]
    seed = int(config.get("seed", 0))
    x0 = sample_initial(_build_init(config["init"], base), int(config["n"]), derive_seed(seed, 0))
    fine = simulate_piecewise([base, shifted], starts, obs, x0, derive_seed(seed, 1))
    snaps = shuffle_to_snapshots(fine, derive_seed(seed, 2))
    files = []
    snaps.to_csv(out / "snapshots.csv")
    files.append(out / "snapshots.csv")
    fits = estimate_piecewise(
        snaps, RegimeSpec(tuple(starts)), degree=int(_estimator_config(config).get("degree", 4)),
        config=AppexConfig.from_dict({**_estimator_config(config), "seed": derive_seed(seed, 3)}),
    )
    ratio = fits[1].sigma2_hat / max(fits[0].sigma2_hat, 1e-300)
    summary = {
        "true_sigma2": [base.sigma2, shifted.sigma2],
        "sigma2_hat": [f.sigma2_hat for f in fits],
        "sigma2_ratio": ratio,
        "true_ratio": factor,
        "converged": [f.converged for f in fits],
    }
    files.append(_write_json(out / "summary.json", summary))
    if not args.no_figures:
        from . import plots

        files.append(
            Path(
                plots.sigma2_bars(
                    ["regime 0", "regime 1"],
                    [f.sigma2_hat for f in fits],
                    [base.sigma2, shifted.sigma2],
                    out / "sigma2_by_regime.png",
                )
            )
        )
    return files


_EXPERIMENTS = {
    "transient-vs-stationary": (_TVS_DEFAULTS, _run_transient_vs_stationary),
    "dispersion-sweep": (_SWEEP_DEFAULTS, lambda c, o, a: _run_sweep_experiment(c, o, a, "uniform_box")),
    "rademacher-sweep": (_SWEEP_DEFAULTS, lambda c, o, a: _run_sweep_experiment(c, o, a, "rademacher")),
    "evolving-equilibrium": (_EVOLVE_DEFAULTS, _run_evolving_equilibrium),
    "regime-shift": (_REGIME_DEFAULTS, _run_regime_shift),
}


def cmd_reproduce(args) -> int:
    if args.experiment not in _EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {args.experiment!r}; choose from {sorted(_EXPERIMENTS)}"
        )
    defaults, runner = _EXPERIMENTS[args.experiment]
    config = _load_config(args.config, args.set, defaults=defaults)
    out = _output_dir(args, config, args.experiment)
    files = runner(config, out, args)
    if files:
        _write_manifest(out, f"reproduce {args.experiment}", config, {"base": int(config.get("seed", 0))}, files)
    print(f"reproduce {args.experiment} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a single config field (dotted path, JSON value)")
    p.add_argument("--output-root", default=None, help="root for outputs (default $SNAPDRIFT_OUTPUT_ROOT or cwd)")
    p.add_argument("--output-dir", default=None, help="directory under the root (default from config or command)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent replicate workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snapdrift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate datasets (trajectories + shuffled snapshots)")
    _add_common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("estimate", help="fit drift and diffusivity to one dataset CSV")
    p.add_argument("dataset", help="trajectories.csv or snapshots.csv")
    p.add_argument("--output", help="result JSON path (default <dataset>.estimate.json)")
    _add_common(p)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("evaluate", help="score estimation results against a true model")
    p.add_argument("results", nargs="*", help="estimation-result JSON files")
    p.add_argument("--truth", help="true-model JSON file (or put 'truth' in --config)")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    _add_common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("fisher", help="score-information report or dispersion sweep")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    _add_common(p)
    p.set_defaults(fn=cmd_fisher)

    p = sub.add_parser("reproduce", help="run a named end-to-end experiment")
    p.add_argument("experiment", help=f"one of {sorted(_EXPERIMENTS)}")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    _add_common(p)
    p.set_defaults(fn=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    # before the generic ValueError clause: LinAlgError subclasses ValueError
    except _NUMERICAL_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (KeyError, TypeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
