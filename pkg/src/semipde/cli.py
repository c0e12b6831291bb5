"""Command-line interface.

Subcommands:

* ``simulate``        - draw a dataset and write it as CSV (t, x1, y1..)
* ``fit``             - estimate (theta, F) from a dataset CSV or a fresh draw
* ``infer``           - fit plus efficient-variance confidence intervals
* ``benchmark``       - per-method error table over seeded repeats
* ``coverage``        - bias/std/coverage table plus histogram bins
* ``accuracy``        - grid-refinement check of the solver error
* ``bench-backends``  - time the numba kernels against the numpy fallback

Every subcommand reads one JSON experiment config (see README for the
schema); command-line flags override the common fields.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .backend import backend_name, get_kernels
from .data import generate_dataset, load_dataset_csv, save_dataset_csv
from .estimator import fit, select_lambda
from .harness import (
    ExperimentConfig,
    run_benchmark,
    run_coverage,
    write_rows_csv,
)
from .inference import run_inference
from .network import save_checkpoint
from .solver import make_grid, make_time_mesh, solve, verify_accuracy


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for key in ("model", "n", "sigma", "repeats", "seed", "workers"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            overrides[key] = val
    return replace(cfg, **overrides) if overrides else cfg


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--model")
    p.add_argument("--n", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default=".", help="output directory")


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    model = cfg.build_model()
    ds = generate_dataset(model, cfg.n, cfg.sigma, cfg.seed, cfg.solver)
    out = _outdir(args)
    path = os.path.join(out, "dataset.csv")
    save_dataset_csv(ds, path)
    meta = {"model": cfg.model, "n": cfg.n, "sigma": cfg.sigma, "seed": cfg.seed,
            "ic_seed": ds.ic_seed, "theta0": list(map(float, model.theta0))}
    with open(os.path.join(out, "dataset_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    print(f"wrote {path} ({ds.n} points)")
    return 0


def _get_dataset(args, cfg):
    model = cfg.build_model()
    if getattr(args, "data", None):
        return model, load_dataset_csv(args.data, cfg.model, seed=cfg.seed)
    ds = generate_dataset(model, cfg.n, cfg.sigma, cfg.seed, cfg.solver)
    if ds.model_name == cfg.model and ds.ic_seed is not None:
        model = cfg.build_model(ic_seed=ds.ic_seed)
    return model, ds


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    model, ds = _get_dataset(args, cfg)
    if isinstance(cfg.fit.lam, str):
        lam, res = select_lambda(model, ds, cfg.fit, cfg.solver)
        print(f"selected lambda = {lam:g}")
    else:
        res = fit(model, ds, cfg.fit, cfg.solver)
    out = _outdir(args)
    res.save_trace_csv(os.path.join(out, "trace.csv"))
    if res.params is not None:
        save_checkpoint(res.params, os.path.join(out, "network.json"))
    doc = {"theta": res.theta.tolist(), "lambda": res.lam,
           "best_val_loss": res.best_val_loss, "best_val_mse": res.best_val_mse,
           "best_epoch": res.best_epoch, "stop_reason": res.stop_reason,
           "epochs_run": res.epochs_run}
    with open(os.path.join(out, "fit.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    print(f"theta_hat = {res.theta} (epoch {res.best_epoch}, {res.stop_reason})")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    model, ds = _get_dataset(args, cfg)
    report = run_inference(model, ds, cfg.fit, cfg.solver, cfg.inference)
    out = _outdir(args)
    report.to_json(os.path.join(out, "report.json"))
    print(f"theta_hat = {report.theta}, sigma2_hat = {report.sigma2:.6g}")
    for (label, alpha), (lo, hi) in sorted(report.intervals.items()):
        print(f"  {label} {100 * (1 - alpha):.0f}% CI: [{lo:.6g}, {hi:.6g}]")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    rows, summary = run_benchmark(cfg)
    out = _outdir(args)
    write_rows_csv(rows, os.path.join(out, "benchmark_rows.csv"))
    write_rows_csv([summary], os.path.join(out, "benchmark_summary.csv"))
    print(json.dumps(summary, indent=2))
    return 0


def cmd_coverage(args) -> int:
    cfg = _load_config(args)
    rows, summary, hist = run_coverage(cfg)
    out = _outdir(args)
    write_rows_csv(rows, os.path.join(out, "coverage_rows.csv"))
    write_rows_csv([summary], os.path.join(out, "coverage_summary.csv"))
    if hist:
        hist_rows = [
            {"bin_lo": lo, "bin_hi": hi, "count": c, "bias": hist["bias"],
             "std": hist["std"]}
            for lo, hi, c in zip(hist["bin_lo"], hist["bin_hi"], hist["count"])
        ]
        write_rows_csv(hist_rows, os.path.join(out, "histogram.csv"))
    print(json.dumps(summary, indent=2))
    return 0


def cmd_accuracy(args) -> int:
    cfg = _load_config(args)
    model = cfg.build_model()
    eps = verify_accuracy(model, model.theta0, "truth", cfg.solver)
    target = cfg.solver.eps_u_target
    print(f"estimated eps_u = {eps:.3e} (target {target:.1e})"
          + ("" if eps <= target else "  ** above target **"))
    return 0 if eps <= target else 1


def cmd_bench_backends(args) -> int:
    cfg = _load_config(args)
    model = cfg.build_model()
    grid = make_grid(model, cfg.solver)
    mesh = make_time_mesh(model, grid, cfg.solver)
    results = {}
    for name in ("numba", "numpy"):
        try:
            get_kernels(name)
        except Exception as exc:  # numba may be unavailable
            print(f"{name}: unavailable ({exc})")
            continue
        cfg_b = replace(cfg.solver, backend=name)
        solve(model, model.theta0, "truth", cfg_b, time_mesh=mesh)  # warmup/compile
        reps = 3
        t0 = time.perf_counter()
        for _ in range(reps):
            solve(model, model.theta0, "truth", cfg_b, time_mesh=mesh)
        results[name] = (time.perf_counter() - t0) / reps
        print(f"{name:6s}: {results[name] * 1e3:9.2f} ms per forward solve "
              f"({mesh.step_count} steps, {grid.n_nodes} nodes)")
    if len(results) == 2:
        print(f"speedup numba vs numpy: {results['numpy'] / results['numba']:.1f}x")
    print(f"active default backend: {backend_name()}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="semipde", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": cmd_simulate,
        "fit": cmd_fit,
        "infer": cmd_infer,
        "benchmark": cmd_benchmark,
        "coverage": cmd_coverage,
        "accuracy": cmd_accuracy,
        "bench-backends": cmd_bench_backends,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name, help=fn.__doc__)
        _add_common(p)
        if name in ("fit", "infer"):
            p.add_argument("--data", help="dataset CSV (header t, x1, y1..)")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
