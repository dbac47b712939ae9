"""Command-line entry point for reproducible Holstein-chain experiments.

Every subcommand is a pure function of (config file, flags, input files):
rerunning with the same inputs rewrites byte-identical outputs. Randomness
flows from one global seed through named substreams, and each run drops a
manifest JSON next to its outputs recording the resolved configuration.

Exit codes: 0 success, 1 validation error (bad flags, bad config, bad
inputs), 2 numerical failure (blowup, divergence, eigensolver trouble).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import numpy as np

from . import bounds, cdw, dynamics, learning, peal
from .core import (
    FLOAT_FMT,
    HolsteinParams,
    Trajectory,
    atomic_write_text,
    params_from_dict,
    params_to_dict,
    read_trajectory_csv,
    sample_initial_state,
    substream,
    write_manifest,
    write_trajectory_csv,
)
from .dynamics import ExactField, IntegrationError, ensemble_run, evolve, write_ensemble_csv
from .qss import EigensolverError


class ValidationError(ValueError):
    """Bad configuration or bad input files; exits with code 1."""


# ---------------------------------------------------------------------------
# configuration plumbing


def load_config(path: str | None) -> dict:
    """Flatten an INI-style config into one dict; later sections win."""
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ValidationError(f"config: file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ValidationError(f"config: {exc}") from exc
    flat: dict[str, str] = {}
    for section in parser.sections():
        for key, val in parser.items(section):
            flat[key] = val
    return flat


def _get(cfg: dict, args, key: str, cast, default=None, required=False):
    """Resolve one option: command-line flag beats config beats default."""
    flag = getattr(args, key, None)
    raw = flag if flag is not None else cfg.get(key)
    if raw is None:
        if required:
            raise ValidationError(f"{key}: required option missing")
        return default
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{key}: {exc}") from exc


def _bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    s = str(raw).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _float_list(raw) -> list[float]:
    if isinstance(raw, (list, tuple)):
        return [float(v) for v in raw]
    vals = [float(tok) for tok in str(raw).replace(",", " ").split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _int_list(raw) -> list[int]:
    return [int(round(v)) for v in _float_list(raw)]


def _params_from(cfg: dict, args, default_g: float | None = None) -> HolsteinParams:
    g = _get(cfg, args, "g", float, default=default_g)
    if g is None:
        raise ValidationError("g: required option missing")
    kwargs = dict(
        L=_get(cfg, args, "l", int, default=_get(cfg, args, "L", int, default=50)),
        g=g,
        k=_get(cfg, args, "k", float, default=1.0),
        M=_get(cfg, args, "m", float, default=1.0),
        gamma=_get(cfg, args, "gamma", float, default=0.1),
        dt=_get(cfg, args, "dt", float, default=0.01),
    )
    filling = _get(cfg, args, "filling", int)
    if filling is not None:
        kwargs["filling"] = filling
    try:
        return HolsteinParams(**kwargs)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _out_dir(cfg: dict, args) -> str:
    out = _get(cfg, args, "out", str, default="runs")
    os.makedirs(out, exist_ok=True)
    return out


def _manifest(out_dir: str, name: str, command: str, seed: int, resolved: dict) -> None:
    payload = {"command": command, "seed": seed, "resolved": resolved}
    write_manifest(os.path.join(out_dir, name), payload)


def _g_token(g: float) -> str:
    return ("%g" % g).replace(".", "p").replace("-", "m")


def _traj_name(g: float, seed: int) -> str:
    return f"traj_g{_g_token(g)}_s{seed}.csv"


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: dict, args) -> int:
    seed = _get(cfg, args, "seed", int, default=0)
    out = _out_dir(cfg, args)
    if getattr(args, "g", None) is not None:
        g_grid = [float(args.g)]
    else:
        g_grid = _get(cfg, args, "g_grid", _float_list)
        if g_grid is None:
            g_grid = [_get(cfg, args, "g", float, required=True)]
    n_seeds = _get(cfg, args, "seeds", int, default=1)
    steps = _get(cfg, args, "steps", int, default=10_000)
    stride = _get(cfg, args, "stride", int, default=10)
    q_std = _get(cfg, args, "q_std", float, default=0.2)
    if steps <= 0:
        raise ValidationError(f"steps: must be positive, got {steps}")
    if stride <= 0:
        raise ValidationError(f"stride: must be positive, got {stride}")
    if n_seeds <= 0:
        raise ValidationError(f"seeds: must be positive, got {n_seeds}")
    if not g_grid:
        raise ValidationError("g_grid: empty grid")

    written = []
    for g in g_grid:
        params = _params_from(cfg, args, default_g=g)
        params = HolsteinParams(**{**params_to_dict(params), "g": g})
        field = ExactField(params.filling)
        for path_idx in range(n_seeds):
            path_seed = seed * 100_003 + path_idx
            init = sample_initial_state(params, q_std, path_seed)
            traj = evolve(init, params, steps, field, record_stride=stride)
            if traj.aborted_at_step is not None:
                raise IntegrationError(
                    f"path g={g} seed={path_seed} blew up at step {traj.aborted_at_step}"
                )
            name = _traj_name(g, path_seed)
            write_trajectory_csv(traj, os.path.join(out, name))
            written.append(name)
    _manifest(out, "simulate_manifest.json", "simulate", seed, {
        "g_grid": g_grid, "seeds": n_seeds, "steps": steps, "stride": stride,
        "q_std": q_std, "params": params_to_dict(params), "files": written,
    })
    print(f"wrote {len(written)} trajectories to {out}")
    return 0


def _load_pool(cfg: dict, args, key: str, params: HolsteinParams,
               stride: int) -> list[Trajectory]:
    """Load every trajectory CSV listed (space-separated) or found in a dir."""
    spec = _get(cfg, args, key, str)
    if spec is None:
        raise ValidationError(f"{key}: required option missing")
    paths: list[str] = []
    for tok in spec.split():
        if os.path.isdir(tok):
            paths.extend(
                os.path.join(tok, f) for f in sorted(os.listdir(tok))
                if f.startswith("traj_") and f.endswith(".csv")
            )
        elif os.path.exists(tok):
            paths.append(tok)
        else:
            raise ValidationError(f"{key}: no such file or directory: {tok}")
    if not paths:
        raise ValidationError(f"{key}: no trajectory files found in {spec!r}")
    out = []
    for p in paths:
        g = _g_from_name(p)
        pp = HolsteinParams(**{**params_to_dict(params), "g": g})
        out.append(read_trajectory_csv(p, pp, record_stride=stride))
    return out


def _g_from_name(path: str) -> float:
    """Recover g from a traj_g{...}_s{...}.csv filename."""
    base = os.path.basename(path)
    if not base.startswith("traj_g"):
        raise ValidationError(f"trajectory filename {base!r} carries no g tag")
    tok = base[len("traj_g"):].split("_s")[0]
    return float(tok.replace("p", ".").replace("m", "-"))


# ---------------------------------------------------------------------------
# train


def cmd_train(cfg: dict, args) -> int:
    seed = _get(cfg, args, "seed", int, default=0)
    out = _out_dir(cfg, args)
    params = _params_from(cfg, args, default_g=1.4)
    stride = _get(cfg, args, "stride", int, default=10)

    dataset_path = _get(cfg, args, "dataset", str)
    if dataset_path is not None:
        if not os.path.exists(dataset_path):
            raise ValidationError(f"dataset: no such file: {dataset_path}")
        ts = learning.read_dataset_csv(dataset_path)
    else:
        trajs = _load_pool(cfg, args, "trajectories", params, stride)
        pairs = _get(cfg, args, "pairs", int, default=500)
        if pairs <= 0:
            raise ValidationError(f"pairs: must be positive, got {pairs}")
        ts = learning.build_dataset(trajs, pairs_per_path=pairs, seed=seed)

    samples = _get(cfg, args, "samples", int)
    if samples is not None:
        n_records = samples * ts.L
        if n_records > len(ts):
            raise ValidationError(
                f"samples: {samples} samples need {n_records} records, "
                f"dataset has {len(ts)}"
            )
        # drawn without replacement so a small cap still mixes all paths
        perm = substream(seed, "train-samples").permutation(len(ts))
        ts = learning.subset(ts, perm[:n_records])

    R_grid = _get(cfg, args, "r_grid", _int_list, default=[5, 10, 20, 40, 80, 160])
    gamma_grid = _get(cfg, args, "gamma_grid", _float_list,
                      default=[0.3, 0.6, 1.0, 2.0, 3.0, 6.0, 10.0, 20.0])
    folds = _get(cfg, args, "folds", int, default=4)
    g_mode = _get(cfg, args, "g_mode", str, default="scaled")
    budget = _get(cfg, args, "grid_budget", int, default=128)
    if not R_grid or not gamma_grid:
        raise ValidationError("r_grid/gamma_grid: empty grid")

    report, model = learning.grid_search(
        ts, R_grid=R_grid, gamma_grid=gamma_grid, seed=seed, folds=folds,
        g_mode=g_mode, budget_samples=budget if budget > 0 else None,
    )
    model_path = os.path.join(out, "model.json")
    learning.save_model(model, model_path)
    _write_cv_csv(report, os.path.join(out, "cv_report.csv"))
    _manifest(out, "train_manifest.json", "train", seed, {
        "records": len(ts), "R": model.map.R, "gamma_omega": model.map.gamma_omega,
        "alpha": model.alpha, "nnz": model.nnz, "folds": folds, "g_mode": g_mode,
        "fingerprint": model.fingerprint,
    })
    print(
        f"model: R={model.map.R} gamma_omega={model.map.gamma_omega:g} "
        f"alpha={model.alpha:.6g} nnz={model.nnz} -> {model_path}"
    )
    return 0


def _write_cv_csv(report: learning.CVReport, path) -> None:
    lines = ["alpha,mean_val_mse"]
    mean = report.mean_val_mse
    for a, m in zip(report.alpha_grid, mean):
        lines.append(f"{FLOAT_FMT % a},{FLOAT_FMT % m}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# predict / compare


def _peal_config(cfg: dict, args, params: HolsteinParams) -> peal.PealConfig:
    model_path = _get(cfg, args, "model", str, required=True)
    if model_path == "oracle":
        density_model = peal.OracleDensity(params.filling)
    else:
        if not os.path.exists(model_path):
            raise ValidationError(f"model: no such file: {model_path}")
        density_model = learning.load_model(model_path)
        if density_model.map.L != params.L:
            raise ValidationError(
                f"model: trained for L={density_model.map.L}, run has L={params.L}"
            )
    return peal.PealConfig(
        density_model=density_model,
        filling=params.filling,
        u1_correction=_get(cfg, args, "u1_correction", _bool, default=True),
        clamp=_get(cfg, args, "clamp", _bool, default=False),
    )


def _run_pair(cfg: dict, args, want_exact: bool):
    seed = _get(cfg, args, "seed", int, default=0)
    params = _params_from(cfg, args, default_g=1.4)
    steps = _get(cfg, args, "steps", int, default=10_000)
    stride = _get(cfg, args, "stride", int, default=10)
    q_std = _get(cfg, args, "q_std", float, default=0.2)
    if steps <= 0:
        raise ValidationError(f"steps: must be positive, got {steps}")
    if stride <= 0:
        raise ValidationError(f"stride: must be positive, got {stride}")
    config = _peal_config(cfg, args, params)
    init = sample_initial_state(params, q_std, seed)
    pred = peal.peal_evolve(init, params, steps, config, record_stride=stride)

    exact = None
    exact_path = _get(cfg, args, "exact", str)
    if exact_path is not None:
        if not os.path.exists(exact_path):
            raise ValidationError(f"exact: no such file: {exact_path}")
        exact = read_trajectory_csv(exact_path, params, record_stride=stride)
    elif want_exact:
        exact = evolve(init, params, steps, ExactField(params.filling),
                       record_stride=stride)
    return seed, params, steps, stride, pred, exact


def cmd_predict(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    seed, params, steps, stride, pred, exact = _run_pair(cfg, args, want_exact=False)
    name = "peal_" + _traj_name(params.g, seed)
    write_trajectory_csv(pred, os.path.join(out, name))
    files = [name]
    if exact is not None:
        report = peal.compare(exact, pred)
        peal.write_comparison(
            report,
            os.path.join(out, "comparison.json"),
            os.path.join(out, "comparison_series.csv"),
        )
        files += ["comparison.json", "comparison_series.csv"]
        print(f"density RMSE vs exact: {report.density_rmse:.6g}")
    _manifest(out, "predict_manifest.json", "predict", seed, {
        "params": params_to_dict(params), "steps": steps, "stride": stride,
        "files": files,
    })
    print(f"wrote {name} to {out}")
    return 0


def cmd_compare(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    seed, params, steps, stride, pred, exact = _run_pair(cfg, args, want_exact=True)
    name = "peal_" + _traj_name(params.g, seed)
    write_trajectory_csv(pred, os.path.join(out, name))
    exact_name = "exact_" + _traj_name(params.g, seed)
    write_trajectory_csv(exact, os.path.join(out, exact_name))
    report = peal.compare(exact, pred)
    peal.write_comparison(
        report,
        os.path.join(out, "comparison.json"),
        os.path.join(out, "comparison_series.csv"),
    )
    _manifest(out, "compare_manifest.json", "compare", seed, {
        "params": params_to_dict(params), "steps": steps, "stride": stride,
        "files": [name, exact_name, "comparison.json", "comparison_series.csv"],
    })
    print(
        f"density RMSE {report.density_rmse:.6g}, max |dCDW| {report.max_dcdw:.6g}, "
        f"max |dQ| {report.max_dq:.6g}"
    )
    return 0


# ---------------------------------------------------------------------------
# scaling


def cmd_scaling(cfg: dict, args) -> int:
    seed = _get(cfg, args, "seed", int, default=0)
    out = _out_dir(cfg, args)
    params = _params_from(cfg, args, default_g=1.4)
    stride = _get(cfg, args, "stride", int, default=10)
    pairs = _get(cfg, args, "pairs", int, default=500)

    train_trajs = _load_pool(cfg, args, "train_pool", params, stride)
    test_std = _load_pool(cfg, args, "test_standard", params, stride)
    test_tl = _load_pool(cfg, args, "test_transfer", params, stride)
    if not test_std or not test_tl:
        raise ValidationError("test pools must be nonempty")

    train_set = learning.build_dataset(train_trajs, pairs_per_path=pairs, seed=seed)
    std_set = learning.build_dataset(test_std, pairs_per_path=pairs,
                                     seed=seed + 1)
    tl_set = learning.build_dataset(test_tl, pairs_per_path=pairs, seed=seed + 2)

    counts = _get(cfg, args, "counts", _int_list,
                  default=[2**i for i in range(11)])
    if not counts:
        raise ValidationError("counts: empty grid")
    budget = _get(cfg, args, "grid_budget", int, default=128)
    folds = _get(cfg, args, "folds", int, default=4)
    R = _get(cfg, args, "r", int)
    gamma_omega = _get(cfg, args, "gamma_omega", float)

    rows, scatter, fmap = learning_scaling_curve(
        train_set, std_set, tl_set, counts, seed=seed, folds=folds,
        grid_budget=budget, R=R, gamma_omega=gamma_omega,
    )
    lines = ["N,records,alpha,nnz,rmse_standard,rmse_transfer"]
    for r in rows:
        lines.append(
            f"{r['N']},{r['records']},{FLOAT_FMT % r['alpha']},{r['nnz']},"
            f"{FLOAT_FMT % r['rmse_standard']},{FLOAT_FMT % r['rmse_transfer']}"
        )
    atomic_write_text(os.path.join(out, "scaling.csv"), "\n".join(lines) + "\n")
    sc_lines = ["n_exact,n_peal"]
    for a, b in scatter:
        sc_lines.append(f"{FLOAT_FMT % a},{FLOAT_FMT % b}")
    atomic_write_text(os.path.join(out, "scatter.csv"), "\n".join(sc_lines) + "\n")
    _manifest(out, "scaling_manifest.json", "scaling", seed, {
        "counts": [int(c) for c in counts], "R": fmap.R,
        "gamma_omega": fmap.gamma_omega, "grid_budget": budget,
        "train_records": len(train_set),
        "files": ["scaling.csv", "scatter.csv"],
    })
    print(f"wrote scaling.csv ({len(rows)} rows) and scatter.csv to {out}")
    return 0


def learning_scaling_curve(train_set, std_set, tl_set, counts, seed=0, folds=4,
                           grid_budget=128, R=None, gamma_omega=None):
    """Trace test RMSE against training-set size with nested-prefix subsets.

    The training pool is shuffled once (deterministic in `seed`) and each
    count N trains on the first N*L records of that order, so larger sets
    are supersets of smaller ones and every prefix mixes all source paths.
    The feature cell (R, gamma_omega) is fixed once, either from explicit
    values or by a budgeted grid search, and only alpha is re-validated at
    each sample count. Tiny counts fall back on train-only alpha selection
    inside lasso_cv. Returns (rows, scatter at the largest count, map).
    """
    L = train_set.L
    counts = sorted(int(c) for c in counts)
    if counts[0] < 1:
        raise ValidationError(f"counts: must be >= 1, got {counts[0]}")
    if counts[-1] * L > len(train_set):
        raise ValidationError(
            f"counts: need {counts[-1] * L} records, pool has {len(train_set)}"
        )
    perm = substream(seed, "scaling-prefix").permutation(len(train_set))

    if R is not None and gamma_omega is not None:
        fmap = learning.FeatureMap(L=L, R=int(R), gamma_omega=float(gamma_omega),
                                   seed=seed)
    else:
        budget_records = min(grid_budget * L, len(train_set))
        sub = learning.subset(train_set, perm[:budget_records])
        report, model = learning.grid_search(sub, seed=seed, folds=folds,
                                             budget_samples=None)
        fmap = model.map

    X_std = learning.feature_matrix(std_set, fmap)
    X_tl = learning.feature_matrix(tl_set, fmap)

    rows = []
    scatter = None
    for N in counts:
        sub = learning.subset(train_set, perm[: N * L])
        X = learning.feature_matrix(sub, fmap)
        report = learning.lasso_cv(X, sub.y, seed=seed, folds=folds)
        w, b = learning.lasso_fit(np.asfortranarray(X), sub.y, report.alpha)
        pred_std = X_std @ w + b
        pred_tl = X_tl @ w + b
        rows.append({
            "N": N,
            "records": N * L,
            "alpha": report.alpha,
            "nnz": int(np.count_nonzero(w)),
            "rmse_standard": float(np.sqrt(np.mean((pred_std - std_set.y) ** 2))),
            "rmse_transfer": float(np.sqrt(np.mean((pred_tl - tl_set.y) ** 2))),
        })
        if N == counts[-1]:
            scatter = list(zip(std_set.y.tolist(), pred_std.tolist()))
    return rows, scatter, fmap


# ---------------------------------------------------------------------------
# ensemble


def cmd_ensemble(cfg: dict, args) -> int:
    seed = _get(cfg, args, "seed", int, default=0)
    out = _out_dir(cfg, args)
    params = _params_from(cfg, args, default_g=1.4)
    steps = _get(cfg, args, "steps", int, default=10_000)
    stride = _get(cfg, args, "stride", int, default=10)
    n_seeds = _get(cfg, args, "seeds", int, default=10)
    target_time = _get(cfg, args, "target_time", float,
                       default=params.dt * steps)
    q_std = _get(cfg, args, "q_std", float, default=0.2)
    if n_seeds < 2:
        raise ValidationError(f"seeds: ensemble needs >= 2, got {n_seeds}")
    if steps <= 0:
        raise ValidationError(f"steps: must be positive, got {steps}")
    seeds = [seed * 100_003 + i for i in range(n_seeds)]

    files = []
    model_path = _get(cfg, args, "model", str)
    run_exact = _get(cfg, args, "exact", _bool, default=model_path is None)
    if run_exact:
        stats = ensemble_run(seeds, params, steps, ExactField(params.filling),
                             target_time, q_std=q_std, record_stride=stride)
        write_ensemble_csv(stats, params, os.path.join(out, "ensemble_exact.csv"))
        files.append("ensemble_exact.csv")
        print(f"exact ensemble: {stats.count} paths at t={stats.target_time:g}")
    if model_path is not None:
        config = _peal_config(cfg, args, params)
        field = peal.SurrogateField(config)
        stats = ensemble_run(seeds, params, steps, field, target_time,
                             q_std=q_std, record_stride=stride)
        write_ensemble_csv(stats, params, os.path.join(out, "ensemble_peal.csv"))
        files.append("ensemble_peal.csv")
        print(f"PEAL ensemble: {stats.count} paths at t={stats.target_time:g}")
    if not files:
        raise ValidationError("exact/model: nothing to run (exact disabled, no model)")
    _manifest(out, "ensemble_manifest.json", "ensemble", seed, {
        "params": params_to_dict(params), "steps": steps, "stride": stride,
        "seeds": n_seeds, "target_time": target_time, "files": files,
    })
    return 0


# ---------------------------------------------------------------------------
# analyze-cdw


def cmd_analyze_cdw(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    table_L = _get(cfg, args, "table_l", _int_list, default=[2, 6, 10, 22, 50, 102])
    k_spring = _get(cfg, args, "k", float, default=1.0)
    if not table_L:
        raise ValidationError("table_l: empty grid")
    lines = ["L     slope_at_zero  g_crit"]
    for L in table_L:
        s = cdw.slope_at_zero(L)
        gc = cdw.g_crit(k_spring, L)
        lines.append(f"{L:<6d}{s:<15.4f}{gc:.4f}")
    table = "\n".join(lines) + "\n"
    atomic_write_text(os.path.join(out, "response_table.txt"), table)
    sys.stdout.write(table)

    L_curve = _get(cfg, args, "l", int, default=_get(cfg, args, "L", int, default=50))
    gq_max = _get(cfg, args, "gq_max", float, default=4.0)
    npts = _get(cfg, args, "npts", int, default=200)
    if npts < 2:
        raise ValidationError(f"npts: need >= 2 points, got {npts}")
    if gq_max <= 0:
        raise ValidationError(f"gq_max: must be positive, got {gq_max}")
    gqs = np.linspace(0.0, gq_max, npts)
    rows = ["gQ,n_finite,n_infinite"]
    for gq in gqs:
        rows.append(
            f"{FLOAT_FMT % gq},{FLOAT_FMT % cdw.cdw_finite(gq, L_curve)},"
            f"{FLOAT_FMT % cdw.cdw_infinite(gq)}"
        )
    atomic_write_text(os.path.join(out, "response_curve.csv"), "\n".join(rows) + "\n")
    _manifest(out, "analyze_cdw_manifest.json", "analyze-cdw",
              _get(cfg, args, "seed", int, default=0), {
        "table_L": [int(v) for v in table_L], "L": L_curve, "gq_max": gq_max,
        "npts": npts, "k": k_spring,
        "files": ["response_table.txt", "response_curve.csv"],
    })
    return 0


# ---------------------------------------------------------------------------
# check-bounds


def cmd_check_bounds(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    params = _params_from(cfg, args, default_g=1.4)
    stride = _get(cfg, args, "stride", int, default=10)
    traj_path = _get(cfg, args, "trajectory", str, required=True)
    if not os.path.exists(traj_path):
        raise ValidationError(f"trajectory: no such file: {traj_path}")
    traj = read_trajectory_csv(traj_path, params, record_stride=stride)

    site = _get(cfg, args, "site", int, default=0)
    t_start = _get(cfg, args, "t_start", float)
    t_stop = _get(cfg, args, "t_stop", float)
    series = bounds.measure_stiffness(traj, site, params, t_start=t_start,
                                      t_stop=t_stop)
    bounds.write_stiffness_csv(series, os.path.join(out, "stiffness.csv"))

    cond = bounds.check_spring_condition(series.K_min, series.K_max,
                                         M=params.M, gamma=params.gamma)
    cond_dict = {
        "K_min": cond.K_min, "K_max": cond.K_max, "M": cond.M,
        "gamma": cond.gamma, "floor_ok": cond.floor_ok, "lhs": cond.lhs,
        "rhs": cond.rhs, "holds": cond.holds,
    }
    atomic_write_text(os.path.join(out, "spring_condition.json"),
                      json.dumps(cond_dict, indent=1) + "\n")
    files = ["stiffness.csv", "spring_condition.json"]
    msg = (f"K in [{series.K_min:.4f}, {series.K_max:.4f}]  "
           f"lhs={cond.lhs:.4f} rhs={cond.rhs:.4f} holds={cond.holds}")

    if _get(cfg, args, "relax", _bool, default=True) and cond.holds:
        fbar = _get(cfg, args, "fbar", float, default=1.0)
        horizon = _get(cfg, args, "horizon", float, default=1200.0)
        spec = bounds.spring_spec(series.K_min, series.K_max, M=params.M,
                                  gamma=params.gamma, fbar=fbar,
                                  horizon=horizon)
        epsilons = _get(cfg, args, "epsilons", _float_list,
                        default=[1e-4, 4e-4, 16e-4, 64e-4])
        report = bounds.relaxation_simulate(spec, epsilons)
        bounds.write_bound_report(report, os.path.join(out, "bound_report.json"))
        files.append("bound_report.json")
        msg += f"  relaxation verdict={report.verdict} slope={report.slope:.3f}"

    _manifest(out, "check_bounds_manifest.json", "check-bounds",
              _get(cfg, args, "seed", int, default=0), {
        "trajectory": os.path.basename(traj_path), "site": site,
        "t_start": t_start, "t_stop": t_stop, "files": files,
    })
    print(msg)
    return 0


# ---------------------------------------------------------------------------
# relax


def cmd_relax(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    spec_path = _get(cfg, args, "spec", str, required=True)
    if not os.path.exists(spec_path):
        raise ValidationError(f"spec: no such file: {spec_path}")
    with open(spec_path) as fh:
        try:
            raw = json.load(fh)
            if "K_min" in raw:
                # spring shorthand: K_min/K_max plus optional M, gamma,
                # fbar, horizon, dt, dimension
                spec = bounds.spring_spec(**raw)
            else:
                spec = bounds.spec_from_dict(raw)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"spec: {exc}") from exc
    epsilons = _get(cfg, args, "epsilons", _float_list,
                    default=[1e-4, 4e-4, 16e-4, 64e-4])
    report = bounds.relaxation_simulate(spec, epsilons)
    bounds.write_bound_report(report, os.path.join(out, "bound_report.json"))
    _manifest(out, "relax_manifest.json", "relax",
              _get(cfg, args, "seed", int, default=0), {
        "spec": os.path.basename(spec_path),
        "epsilons": [float(e) for e in epsilons],
        "files": ["bound_report.json"],
    })
    print(f"verdict={report.verdict} slope={report.slope:.4f} "
          f"C_q={report.C_q.max():.4f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "compare": cmd_compare,
    "scaling": cmd_scaling,
    "ensemble": cmd_ensemble,
    "analyze-cdw": cmd_analyze_cdw,
    "check-bounds": cmd_check_bounds,
    "relax": cmd_relax,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="holsteinml",
                     description="Holstein-chain dynamics and learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--g", type=float, default=None)
        p.add_argument("--L", type=int, default=None, dest="l")
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--stride", type=int, default=None)
        p.add_argument("--model", type=str, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except (IntegrationError, EigensolverError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
