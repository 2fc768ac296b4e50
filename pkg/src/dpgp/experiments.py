"""Experiment drivers: inference demo, uncertainty calibration and hyperparameter search.

Each driver takes a resolved config (see :mod:`dpgp.config`) and returns a
dict mapping table names to lists of row dicts. :func:`write_results`
writes each table as CSV next to a JSON sidecar holding the full config.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import replace
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

from dpgp import config as config_mod
from dpgp.data import RegressionDataset, load_csv, split_even, synth_gp_draw, synth_sinc
from dpgp.hyperparams import candidate_grid, select_hyperparameters, solve_budget
from dpgp.inference import (
    NoiseModel,
    NotPositiveDefiniteError,
    calibrate_mechanism,
    dp_gp_inference,
    exact_posterior,
)
from dpgp.kernels import InducingSet, KernelSpec, gram_matrices
from dpgp.mechanisms import CoinPressConfig, PrivacyBudget, coinpress_mean, zcdp_from_approx_dp
from dpgp.prediction import predict

logger = logging.getLogger(__name__)


def build_kernel(cfg: dict) -> KernelSpec:
    k = cfg["kernel"]
    return KernelSpec(k["variance"], tuple(k["lengthscales"]), k["family"])


def build_inducing(cfg: dict) -> InducingSet:
    z = cfg["inducing"]
    return InducingSet.grid_from_bounds(z["lower"], z["upper"], z["counts"])


def build_data(cfg: dict, rng: np.random.Generator, spec: KernelSpec = None, noise_sd: float = None):
    data = cfg["data"]
    src = data["source"]
    if src == "csv":
        return load_csv(data["path"], data.get("output_column"))
    sd = data.get("noise_sd", 0.1) if noise_sd is None else noise_sd
    if src == "sinc":
        return synth_sinc(data["n"], sd, tuple(data["interval"]), rng)
    return synth_gp_draw(spec or build_kernel(cfg), data["n"], sd, tuple(data["interval"]), rng)


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _rng(cfg: dict, *keys) -> np.random.Generator:
    return np.random.default_rng([cfg["seed"], *keys])


def _holdout(data: RegressionDataset, fraction: float, rng):
    if fraction <= 0:
        return data, None
    perm = rng.permutation(len(data))
    cut = int(round(len(data) * (1 - fraction)))
    return data.subset(np.sort(perm[:cut])), data.subset(np.sort(perm[cut:]))


def _private_prior_mean(cfg: dict, y, rng):
    pm = cfg.get("private_prior_mean")
    if not pm:
        return 0.0, 0.0, 0.0
    budget = PrivacyBudget(pm["epsilon"], pm["delta"])
    center, radius = pm.get("center", 0.0), pm["radius"]
    cp = CoinPressConfig(zcdp_from_approx_dp(budget), center, radius)
    clipped = np.clip(y, center - radius, center + radius)
    return coinpress_mean(clipped, cp, rng), budget.epsilon, budget.delta


def run_inference_demo(cfg: dict) -> dict:
    """Posterior fits across privacy levels, with RMSE against the truth.

    RMSE is measured against the true function on the prediction grid for
    synthetic data, or against held-out outputs when ``test_fraction > 0``.
    Posterior and inducing-point dumps come from the first repeat.
    """
    spec, inducing = build_kernel(cfg), build_inducing(cfg)
    noise = NoiseModel(cfg["noise_sd"])
    grid = cfg["prediction_grid"]
    eps_list = cfg["epsilons"]

    def one_repeat(rep):
        rng = _rng(cfg, rep)
        data = build_data(cfg, rng, spec)
        train, test = _holdout(data, cfg["test_fraction"], rng)
        grid_x = None
        if train.x.shape[1] == 1:
            grid_x = np.linspace(grid["lower"], grid["upper"], grid["n"])[:, None]
        rows, dumps, zdumps = [], [], []
        for ei, eps in enumerate(eps_list):
            noise_rng = _rng(cfg, rep, ei)
            prior_mean, pm_eps, pm_delta = _private_prior_mean(cfg, train.y, noise_rng)
            try:
                if math.isinf(eps):
                    km = gram_matrices(spec, inducing, train.x)
                    post = exact_posterior(km, train.y - prior_mean, noise)
                    post = replace(post, mean_offset=prior_mean)
                else:
                    post = dp_gp_inference(
                        train.x, train.y, inducing, spec, noise, cfg["c"], cfg["r_y"],
                        PrivacyBudget(eps, cfg["delta"]), noise_rng,
                        method=cfg["sensitivity_method"], rho_pd=cfg["rho_pd"], prior_mean=prior_mean,
                    )
            except NotPositiveDefiniteError:
                rows.append(dict(
                    epsilon=eps, repeat=rep, rmse=math.nan, failed=1, epsilon_total=math.nan, delta_total=math.nan
                ))
                continue
            if test is not None:
                pred = predict(post, spec, inducing, test.x)
                rmse = float(np.sqrt(np.mean((pred.mean - test.y) ** 2)))
            elif data.true_f is not None and grid_x is not None:
                pred = predict(post, spec, inducing, grid_x)
                rmse = float(np.sqrt(np.mean((pred.mean - data.true_f(grid_x)) ** 2)))
            else:
                rmse = math.nan
            rows.append(dict(
                epsilon=eps, repeat=rep, rmse=rmse, failed=0,
                epsilon_total=eps + pm_eps, delta_total=(0.0 if math.isinf(eps) else cfg["delta"]) + pm_delta,
            ))
            if rep == 0 and grid_x is not None:
                pred = predict(post, spec, inducing, grid_x)
                truth = data.true_f(grid_x) if data.true_f is not None else np.full(len(grid_x), math.nan)
                for xv, fv, mu, var in zip(grid_x[:, 0], truth, pred.mean, pred.var):
                    dumps.append(dict(epsilon=eps, x=xv, f_true=fv, mean=mu, sd=math.sqrt(var)))
                for zi, (mz, sz) in enumerate(zip(post.m, np.diag(post.s))):
                    zdumps.append(dict(
                        epsilon=eps, index=zi, z=inducing.points[zi, 0] if inducing.dim == 1 else math.nan,
                        m=mz + post.mean_offset, sd=math.sqrt(sz),
                    ))
        return rows, dumps, zdumps

    results = _map(one_repeat, range(cfg["repeats"]), cfg["workers"])
    per_repeat = [r for rows, _, _ in results for r in rows]
    summary = []
    for eps in eps_list:
        vals = np.array([r["rmse"] for r in per_repeat if r["epsilon"] == eps and not r["failed"]])
        fails = sum(r["failed"] for r in per_repeat if r["epsilon"] == eps)
        summary.append(dict(
            epsilon=eps,
            repeats=len(vals),
            failures=fails,
            rmse_median=float(np.median(vals)) if len(vals) else math.nan,
            rmse_mean=float(np.mean(vals)) if len(vals) else math.nan,
            rmse_se=float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else math.nan,
        ))
    return {
        "infer_summary": summary,
        "infer_rmse": per_repeat,
        "infer_posterior": results[0][1],
        "infer_inducing": results[0][2],
    }


def interval_coverage(mean, var, y, noise: NoiseModel, alpha: float) -> float:
    """Fraction of noisy targets inside the central ``alpha`` predictive interval."""
    half = stats.norm.ppf((1 + alpha) / 2) * np.sqrt(var + noise.variance)
    return float(np.mean(np.abs(y - mean) <= half))


def run_calibration(cfg: dict) -> dict:
    """Predictive-interval coverage of the full and naive private posteriors.

    For each noise level and repeat one dataset is drawn from the GP prior
    and split in half. Both models for a given privacy level reuse the same
    mechanism noise, so they differ only in the covariance correction.
    """
    spec, inducing = build_kernel(cfg), build_inducing(cfg)
    eps_list, alphas = cfg["epsilons"], cfg["alphas"]
    setups = {
        eps: calibrate_mechanism(spec, inducing, cfg["r_y"], PrivacyBudget(eps, cfg["delta"]), cfg["c"], cfg["sensitivity_method"])
        for eps in eps_list
        if not math.isinf(eps)
    }

    def one(task):
        si, sd, rep = task
        noise = NoiseModel(sd)
        data = build_data(cfg, _rng(cfg, si, rep), spec, noise_sd=sd)
        train, test = split_even(data, _rng(cfg, si, rep, 1))
        out = []
        for ei, eps in enumerate(eps_list):
            for model in ("full", "naive"):
                noise_rng = _rng(cfg, si, rep, 2, ei)
                try:
                    if math.isinf(eps):
                        post = exact_posterior(gram_matrices(spec, inducing, train.x), train.y, noise)
                    else:
                        post = dp_gp_inference(
                            train.x, train.y, inducing, spec, noise, cfg["c"], cfg["r_y"],
                            PrivacyBudget(eps, cfg["delta"]), noise_rng,
                            rho_pd=cfg["rho_pd"], naive=(model == "naive"), setup=setups[eps],
                        )
                except NotPositiveDefiniteError:
                    out.append((sd, eps, model, None))
                    continue
                pred = predict(post, spec, inducing, test.x)
                cov = {a: interval_coverage(pred.mean, pred.var, test.y, noise, a) for a in alphas}
                out.append((sd, eps, model, cov))
        return out

    tasks = [(si, sd, rep) for si, sd in enumerate(cfg["noise_sds"]) for rep in range(cfg["repeats"])]
    flat = [row for chunk in _map(one, tasks, cfg["workers"]) for row in chunk]
    rows = []
    for sd in cfg["noise_sds"]:
        for eps in eps_list:
            for alpha in alphas:
                for model in ("full", "naive"):
                    fits = [c for s, e, m, c in flat if s == sd and e == eps and m == model]
                    vals = np.array([c[alpha] for c in fits if c is not None])
                    se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else math.nan
                    mean = float(vals.mean()) if len(vals) else math.nan
                    rows.append(dict(
                        noise_sd=sd, epsilon=eps, alpha=alpha, model=model,
                        coverage_mean=mean, coverage_se=se,
                        coverage_lower=mean - 2 * se, coverage_upper=mean + 2 * se,
                        repeats=len(vals), failures=len(fits) - len(vals),
                    ))
    return {"calibration": rows}


def run_hyperparam_experiment(cfg: dict) -> dict:
    """Selection frequency of every candidate under private search, per total epsilon."""
    inducing = build_inducing(cfg)
    variance = cfg["kernel"]["variance"]
    candidates = candidate_grid(cfg["noise_sds"], cfg["lengthscales"], variance)
    budgets = {eps: solve_budget(eps, cfg["delta"], cfg["gamma"]) for eps in cfg["epsilons"]}

    def one(task):
        ei, eps, rep = task
        data = build_data(cfg, _rng(cfg, rep))
        train, valid = split_even(data, _rng(cfg, rep, 1))
        state = select_hyperparameters(
            candidates, train, valid, inducing, cfg["r_y"], budgets[eps], _rng(cfg, rep, 2, ei),
            c=cfg["c"], method=cfg["sensitivity_method"], rho_pd=cfg["rho_pd"], coinpress=cfg["coinpress"],
        )
        return dict(
            epsilon_tot=eps, repeat=rep,
            winner_id=-1 if state.winner_id is None else state.winner_id,
            v_opt=state.v_opt, draws_used=state.draws_used,
        )

    tasks = [(ei, eps, rep) for ei, eps in enumerate(cfg["epsilons"]) for rep in range(cfg["repeats"])]
    runs = _map(one, tasks, cfg["workers"])
    freq_rows = []
    for eps in cfg["epsilons"]:
        counts = Counter(r["winner_id"] for r in runs if r["epsilon_tot"] == eps)
        for cand in candidates:
            freq_rows.append(dict(
                epsilon_tot=eps, candidate_id=cand.id, noise_sd=cand.noise.obs_noise_sd,
                lengthscale=cand.spec.lengthscales[0], count=counts.get(cand.id, 0),
                frequency=counts.get(cand.id, 0) / cfg["repeats"],
            ))
        freq_rows.append(dict(
            epsilon_tot=eps, candidate_id=-1, noise_sd=math.nan, lengthscale=math.nan,
            count=counts.get(-1, 0), frequency=counts.get(-1, 0) / cfg["repeats"],
        ))
    budget_rows = [
        dict(epsilon_tot=b.epsilon_tot, delta_tot=b.delta_tot, gamma=b.gamma, t0=b.t0,
             epsilon=b.epsilon, delta=b.delta, delta_2=b.delta_2, max_draws=b.max_draws)
        for b in budgets.values()
    ]
    return {"selection": freq_rows, "selection_runs": runs, "selection_budget": budget_rows}


def run_synth(cfg: dict) -> dict:
    data = build_data(cfg, _rng(cfg))
    names = [f"x{i}" for i in range(data.x.shape[1])]
    rows = [dict(zip(names, xi), y=yi) for xi, yi in zip(data.x.tolist(), data.y.tolist())]
    return {"synth": rows}


RUNNERS = {
    "infer": run_inference_demo,
    "calibrate": run_calibration,
    "hyperparams": run_hyperparam_experiment,
    "synth": run_synth,
}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_results(out_dir, tables: dict, cfg: dict) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in tables.items():
        path = out / f"{name}.csv"
        fields = list(rows[0]) if rows else []
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: _fmt(v) for k, v in row.items()})
        written.append(path)
    side = out / f"{cfg['task']}_config.json"
    side.write_text(config_mod.to_json(cfg))
    written.append(side)
    return written


def run(cfg: dict, out_dir) -> list:
    return write_results(out_dir, RUNNERS[cfg["task"]](cfg), cfg)
