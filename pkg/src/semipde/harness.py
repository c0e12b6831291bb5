"""Experiment orchestration: error metrics, benchmark and coverage runs.

Repeats are embarrassingly parallel; each repeat derives its own seed from
the master seed and repeat index, workers rebuild models from their names
(model objects hold closures and do not travel across processes), and
results are reduced in repeat order, so a full run is reproducible
byte-for-byte from the master seed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from typing import Optional, Sequence

import numpy as np

from .adjoint import predict_points
from .baselines import PinnConfig, nonparametric_fit, parametric_fit, pinn_fit
from .data import (
    Dataset,
    ReferenceSolveDiverged,
    generate_with_reference,
)
from .estimator import AllStepsDiverged, FitConfig, fit, select_lambda
from .grids import SpaceTimePoint
from .inference import InferenceConfig, run_inference
from .models import PdeModel, features_batch, get_model
from .network import forward_shifted_batch
from .solver import Diverged, SolverConfig, Trajectory, solve

__all__ = [
    "ExperimentConfig",
    "l2_error",
    "f_error",
    "semipde_predictor",
    "run_benchmark",
    "run_coverage",
    "write_rows_csv",
]

ALL_METHODS = ("semipde", "baseline1", "baseline2", "baseline3")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "case1"
    n: int = 800
    sigma: float = 0.1
    repeats: int = 10
    seed: int = 0
    theta0: Optional[tuple] = None        # truth override for simulation
    theta_box: Optional[tuple] = None     # parameter-box override
    methods: tuple = ALL_METHODS
    workers: int = 0                      # 0 -> os.cpu_count()
    solver: SolverConfig = field(default_factory=SolverConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    pinn: PinnConfig = field(default_factory=PinnConfig)

    def build_model(self, ic_seed: Optional[int] = None) -> PdeModel:
        model = get_model(self.model, theta0=self.theta0, ic_seed=ic_seed)
        if self.theta_box is not None:
            model.theta_box = np.asarray(self.theta_box, float).reshape(-1, 2)
        return model

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        def load(cls, key):
            sub = dict(doc.get(key, {}))
            for k in ("widths", "lam_grid", "theta_init", "alphas", "colloc"):
                if k in sub and sub[k] is not None:
                    sub[k] = tuple(sub[k])
            return cls(**sub)

        kw = {k: doc[k] for k in ("model", "n", "sigma", "repeats", "seed", "workers")
              if k in doc}
        if doc.get("theta0") is not None:
            kw["theta0"] = tuple(doc["theta0"])
        if doc.get("theta_box") is not None:
            kw["theta_box"] = tuple(tuple(r) for r in doc["theta_box"])
        if doc.get("methods") is not None:
            kw["methods"] = tuple(doc["methods"])
        return ExperimentConfig(
            solver=load(SolverConfig, "solver"), fit=load(FitConfig, "fit"),
            inference=load(InferenceConfig, "inference"),
            pinn=load(PinnConfig, "pinn"), **kw)

    @staticmethod
    def from_json(path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return ExperimentConfig.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        return doc


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _quad_points(model: PdeModel, shape=(128, 128)):
    nt, nx = shape
    ts = model.t0 + (np.arange(nt) + 0.5) / nt * (model.t1 - model.t0)
    xs = model.x_lower + (np.arange(nx) + 0.5) / nx * (model.x_upper - model.x_lower)
    return [SpaceTimePoint(float(t), (float(x),)) for t in ts for x in xs]


def l2_error(predict, u_ref: Trajectory, quad=(128, 128)) -> float:
    """Root-mean-square gap to the reference on a midpoint quadrature grid."""
    pts = _quad_points(u_ref.model, quad)
    diff = np.asarray(predict(pts)) - predict_points(u_ref, pts)
    return float(np.sqrt(np.sum(diff * diff) / len(pts)))


def f_error(f_hat, model: PdeModel, u_ref: Trajectory, n_quad: int = 512) -> float:
    """RMS gap between mechanisms over the reference solution's visited range.

    The mechanism's natural domain is data-dependent, so the comparison runs
    over the empirical feature range of the truth trajectory (midpoint rule,
    tensorized for two features).
    """
    if model.table_feature is not None and model.feature_spec == ("t",):
        los = np.array([model.t0]); his = np.array([model.t1])
    else:
        cols = []
        for tag in model.feature_spec:
            k = int(tag[1:]) if tag[0] == "u" else 0
            cols.append(u_ref.states[:, k, :].ravel())
        los = np.array([c.min() for c in cols])
        his = np.array([c.max() for c in cols])
    d = model.d
    m = n_quad if d == 1 else int(round(n_quad ** (1.0 / d)))
    axes = [lo + (np.arange(m) + 0.5) / m * (hi - lo) for lo, hi in zip(los, his)]
    feats = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    diff = np.asarray(f_hat(feats)).reshape(feats.shape[0], model.d_y) \
        - model.f0_values(feats)
    return float(np.sqrt(np.sum(diff * diff) / feats.shape[0]))


def semipde_predictor(model: PdeModel, theta, params, solver_config: SolverConfig):
    """Point-evaluator of the fitted model's solution."""
    traj = solve(model, theta, params, solver_config)

    def predict(points):
        return predict_points(traj, points)

    return predict


# ---------------------------------------------------------------------------
# benchmark (per-method error table)
# ---------------------------------------------------------------------------

def _repeat_seed(master: int, rep: int) -> int:
    return int(np.random.SeedSequence([master, rep]).generate_state(1)[0] % (2**31))


def _benchmark_one(args):
    cfg_doc, rep = args
    cfg = ExperimentConfig.from_dict(cfg_doc)
    seed = _repeat_seed(cfg.seed, rep)
    base_model = cfg.build_model()
    out = {"repeat": rep, "seed": seed}
    try:
        ds, u_ref, model = generate_with_reference(
            base_model, cfg.n, cfg.sigma, seed, cfg.solver)
    except ReferenceSolveDiverged as exc:
        out["failed"] = f"reference:{exc}"
        return out
    if cfg.theta_box is not None:
        model.theta_box = np.asarray(cfg.theta_box, float).reshape(-1, 2)
    theta0 = model.theta0
    fit_cfg = replace(cfg.fit, seed=seed)

    for method in cfg.methods:
        try:
            if method == "semipde":
                if isinstance(fit_cfg.lam, str):
                    _, res = select_lambda(model, ds, fit_cfg, cfg.solver)
                else:
                    res = fit(model, ds, fit_cfg, cfg.solver)
                pred = semipde_predictor(model, res.theta, res.params, cfg.solver)
                out["semipde_u"] = l2_error(pred, u_ref)
                out["semipde_theta"] = float(np.linalg.norm(res.theta - theta0))
                out["semipde_f"] = f_error(res.mechanism(), model, u_ref)
            elif method == "baseline1":
                b1 = parametric_fit(model, ds, fit_cfg, cfg.solver)
                out["baseline1_u"] = l2_error(b1.predict, u_ref)
                out["baseline1_theta"] = float(np.linalg.norm(b1.theta - theta0))
            elif method == "baseline2":
                b2 = nonparametric_fit(ds, fit_cfg)
                out["baseline2_u"] = l2_error(b2.predict, u_ref)
            elif method == "baseline3":
                b3 = pinn_fit(model, ds, fit_cfg, cfg.solver,
                              replace(cfg.pinn, seed=seed))
                out["baseline3_u"] = l2_error(b3.predict, u_ref)
                out["baseline3_theta"] = float(np.linalg.norm(b3.theta - theta0))
            else:
                raise ValueError(f"unknown method {method!r}")
        except (Diverged, AllStepsDiverged) as exc:
            out[f"{method}_failed"] = str(exc)
    return out


def _pmap(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with get_context("fork").Pool(processes=workers) as pool:
        return pool.map(fn, items)


def _resolve_workers(cfg: ExperimentConfig) -> int:
    if cfg.workers and cfg.workers > 0:
        return cfg.workers
    env = os.environ.get("SEMIPDE_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run_benchmark(cfg: ExperimentConfig):
    """Per-repeat errors and per-method means (error-table layout).

    Returns (rows, summary); a method's cell is marked failed when more than
    20 percent of its repeats failed.
    """
    doc = cfg.to_dict()
    rows = _pmap(_benchmark_one, [(doc, r) for r in range(cfg.repeats)],
                 _resolve_workers(cfg))
    summary = {"model": cfg.model, "n": cfg.n, "sigma": cfg.sigma,
               "repeats": cfg.repeats}
    for method in cfg.methods:
        for metric in ("u", "theta", "f"):
            key = f"{method}_{metric}"
            vals = [r[key] for r in rows if key in r]
            if not vals and metric != "u":
                continue
            n_fail = sum(1 for r in rows if f"{method}_failed" in r or "failed" in r)
            if n_fail > 0.2 * cfg.repeats:
                summary[f"{method}_{metric}_mean"] = float("nan")
                summary[f"{method}_failed"] = n_fail
            elif vals:
                summary[f"{method}_{metric}_mean"] = float(np.mean(vals))
    return rows, summary


# ---------------------------------------------------------------------------
# coverage (bias / std / coverage-rate table plus histogram)
# ---------------------------------------------------------------------------

def _coverage_one(args):
    cfg_doc, rep = args
    cfg = ExperimentConfig.from_dict(cfg_doc)
    seed = _repeat_seed(cfg.seed, rep)
    base_model = cfg.build_model()
    out = {"repeat": rep, "seed": seed}
    try:
        ds, _, model = generate_with_reference(
            base_model, cfg.n, cfg.sigma, seed, cfg.solver)
    except ReferenceSolveDiverged as exc:
        out["failed"] = f"reference:{exc}"
        return out
    if cfg.theta_box is not None:
        model.theta_box = np.asarray(cfg.theta_box, float).reshape(-1, 2)
    fit_cfg = replace(cfg.fit, seed=seed)
    try:
        rep_out = run_inference(model, ds, fit_cfg, cfg.solver, cfg.inference)
    except Exception as exc:  # noqa: BLE001 - any failure marks the repeat
        out["failed"] = f"inference:{type(exc).__name__}:{exc}"
        return out
    theta0 = model.theta0
    out["theta_hat"] = rep_out.theta.tolist()
    out["sigma2"] = rep_out.sigma2
    out["sigma_eff_diag"] = np.diag(rep_out.sigma_eff).tolist()
    out["n_fit"] = rep_out.n_fit
    for (label, alpha), (lo, hi) in rep_out.intervals.items():
        j = int(label[1:])
        out[f"cover_{label}_{alpha}"] = bool(lo <= theta0[j] <= hi)
        out[f"half_{label}_{alpha}"] = 0.5 * (hi - lo)
    return out


def run_coverage(cfg: ExperimentConfig, histogram_bins: int = 20):
    """Repeated generate -> fit -> infer -> interval check.

    Returns (rows, summary, histogram) where summary carries Bias, Std and
    the empirical coverage per level, and histogram holds the bin table of
    theta_hat - theta0 for the first coordinate along with the
    normal-overlay parameters.
    """
    doc = cfg.to_dict()
    rows = _pmap(_coverage_one, [(doc, r) for r in range(cfg.repeats)],
                 _resolve_workers(cfg))
    ok = [r for r in rows if "failed" not in r]
    model = cfg.build_model()
    theta0 = model.theta0
    p = model.p
    summary = {"model": cfg.model, "n": cfg.n, "sigma": cfg.sigma,
               "repeats": cfg.repeats, "completed": len(ok)}
    if not ok:
        return rows, summary, {}
    thetas = np.array([r["theta_hat"] for r in ok])
    for j in range(p):
        summary[f"bias_{j}"] = float(np.mean(thetas[:, j]) - theta0[j])
        summary[f"std_{j}"] = float(np.std(thetas[:, j]))
        summary[f"mean_se_{j}"] = float(np.mean(
            [np.sqrt(r["sigma_eff_diag"][j] / cfg.n) for r in ok]))
        for alpha in cfg.inference.alphas:
            key = f"cover_g{j}_{alpha}"
            summary[f"cover_{j}_{int(round((1 - alpha) * 100))}"] = float(
                np.mean([r[key] for r in ok]))
    devs = thetas[:, 0] - theta0[0]
    counts, edges = np.histogram(devs, bins=histogram_bins)
    histogram = {"bin_lo": edges[:-1].tolist(), "bin_hi": edges[1:].tolist(),
                 "count": counts.tolist(), "bias": summary["bias_0"],
                 "std": summary["std_0"]}
    return rows, summary, histogram


def write_rows_csv(rows: Sequence[dict], path: str) -> None:
    """Stable-order CSV dump of per-repeat dictionaries."""
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in rows:
            line = []
            for k in keys:
                v = row.get(k, "")
                if isinstance(v, float):
                    v = f"{v:.17g}"
                line.append(v)
            w.writerow(line)
