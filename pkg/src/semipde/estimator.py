"""Penalized profiling M-estimation by full-batch gradient descent.

One epoch is one forward solve plus one adjoint sweep on the training
points; the same trajectory also scores the held-out validation points.
The best iterate by penalized validation loss is retained (earliest epoch on
ties), and iteration stops when the training-loss decrement per unit
learning rate falls below the tolerance tau or the epoch budget runs out.

Diverged solves reject the step: the learning rate is cut 10x for that
iteration (up to five times, then AllStepsDiverged) and restored after the
next success.  Penalty weights >= LAMBDA_PIN effectively pin the mechanism
to zero, so the network is frozen at its reference weights and the fit
reduces to the parametric baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .adjoint import Diverged, ObservationSet, loss_and_grad
from .data import Dataset
from .models import PdeModel
from .network import NetArchitecture, NetworkParams, init_reference, penalty
from .solver import SolverConfig

__all__ = ["AllStepsDiverged", "InvalidSplit", "FitConfig", "FitResult",
           "fit", "select_lambda", "LAMBDA_PIN"]

LAMBDA_PIN = 1e5   # beyond this the explicit phi step is unstable; pin instead
MAX_BACKOFF = 5

DEFAULT_LAMBDA_GRID = (0.0,) + tuple(float(v) for v in np.logspace(-6.0, -2.0, 8))


class AllStepsDiverged(RuntimeError):
    """Learning-rate backoff exhausted without a finite step."""


class InvalidSplit(ValueError):
    """Dataset train/validation partition unusable."""


@dataclass(frozen=True)
class FitConfig:
    eta: float = 1e-2
    max_epochs: int = 5000
    tau: float = 1e-8
    lam: float | str = 1e-6          # penalty weight, or "select"
    lam_grid: tuple = DEFAULT_LAMBDA_GRID
    seed: int = 0
    optimizer: str = "gd"            # "gd" (default) or "adam"
    theta_init: Optional[tuple] = None  # None -> center of the theta box
    widths: tuple = (16, 64, 64, 16)
    power: int = 1
    pin_network: bool = False        # parametric-only fit (no phi updates)

    def __post_init__(self):
        if self.eta <= 0 or self.max_epochs < 1 or self.tau < 0:
            raise ValueError("eta, max_epochs, tau must be positive")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError("optimizer must be 'gd' or 'adam'")
        if isinstance(self.lam, str) and self.lam != "select":
            raise ValueError("lam must be a number or 'select'")
        if any(l < 0 for l in self.lam_grid):
            raise ValueError("lambda grid must be nonnegative")


@dataclass
class FitResult:
    theta: np.ndarray
    params: Optional[NetworkParams]
    best_val_loss: float          # penalized, per the early-stopping monitor
    best_val_mse: float           # unpenalized data term on validation
    best_epoch: int
    lam: float
    stop_reason: str              # "tolerance" | "max-epochs"
    trace: dict                   # arrays keyed by column name
    seed: int
    epochs_run: int

    def mechanism(self):
        """Fitted mechanism as a feature-batch callable (zero when pinned)."""
        if self.params is None:
            return lambda feats: np.zeros((np.atleast_2d(feats).shape[0], 1))
        from .network import forward_shifted_batch

        return lambda feats: forward_shifted_batch(self.params, np.atleast_2d(feats))

    def save_trace_csv(self, path: str) -> None:
        keys = list(self.trace)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for row in zip(*(self.trace[k] for k in keys)):
                w.writerow([f"{v:.17g}" for v in row])


class _Adam:
    """Adaptive-moment variant; optional plumbing, not used in acceptance."""

    def __init__(self, size, eta, b1=0.9, b2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.eta, self.b1, self.b2, self.eps = eta, b1, b2, eps

    def step(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return x - self.eta * mh / (np.sqrt(vh) + self.eps)


def fit(model: PdeModel, dataset: Dataset, fit_config: FitConfig,
        solver_config: SolverConfig) -> FitResult:
    """Run the estimation loop on the dataset's train/validation split."""
    if isinstance(fit_config.lam, str):
        raise ValueError("lam='select' requires select_lambda()")
    lam = float(fit_config.lam)
    train_pts, train_y = dataset.train
    val_pts, val_y = dataset.validation
    if not len(train_pts) or not len(val_pts):
        raise InvalidSplit("need non-empty train and validation parts")
    if set(map(id, train_pts)) & set(map(id, val_pts)):
        raise InvalidSplit("train and validation overlap")

    pin = fit_config.pin_network or lam >= LAMBDA_PIN
    params = None
    if not pin:
        arch = NetArchitecture(model.d, model.d_y, tuple(fit_config.widths),
                               fit_config.power)
        params = init_reference(arch, fit_config.seed)
    theta_box = model.theta_box
    if fit_config.theta_init is not None:
        theta = np.asarray(fit_config.theta_init, dtype=np.float64).copy()
    else:
        theta = theta_box.mean(axis=1)
    theta = np.clip(theta, theta_box[:, 0], theta_box[:, 1])

    adam = None
    if fit_config.optimizer == "adam":
        adam = _Adam(model.p + (params.arch.n_params if params else 0), fit_config.eta)

    def evaluate(th, pr):
        lg = loss_and_grad(model, th, pr, train_pts, train_y, lam, solver_config)
        val_pred = ObservationSet(lg.trajectory, val_pts).predict(lg.trajectory)
        val_mse = float(np.sum((val_pred - val_y) ** 2)) / len(val_pts)
        return lg, val_mse

    lg, _ = evaluate(theta, params)
    trace = {k: [] for k in ("epoch", "train_loss", "val_loss", "val_mse",
                             "phi_dist", *(f"theta{i}" for i in range(model.p)))}
    best_val = np.inf
    best = (theta.copy(), params.copy() if params else None, 0, np.inf)
    train_prev = lg.loss
    stop_reason = "max-epochs"
    eta = fit_config.eta
    epochs_run = 0

    for k in range(1, fit_config.max_epochs + 1):
        eta_eff = eta
        for attempt in range(MAX_BACKOFF + 1):
            theta_new = np.clip(theta - eta_eff * lg.grad_theta,
                                theta_box[:, 0], theta_box[:, 1])
            params_new = params
            if params is not None:
                if adam is not None:
                    joint = adam.step(np.concatenate([theta, params.phi]),
                                      np.concatenate([lg.grad_theta, lg.grad_phi]))
                    theta_new = np.clip(joint[: model.p], theta_box[:, 0], theta_box[:, 1])
                    params_new = NetworkParams(params.arch, joint[model.p:],
                                               params.phi0, params.seed)
                else:
                    params_new = NetworkParams(params.arch,
                                               params.phi - eta_eff * lg.grad_phi,
                                               params.phi0, params.seed)
            try:
                lg_new, val_mse = evaluate(theta_new, params_new)
                # a finite but exploding loss is rejected like a blow-up:
                # large transient excursions must not derail the run
                if lg_new.loss > 10.0 * max(lg.loss, 1e-12) + 1e-9:
                    raise Diverged("training loss exploded")
                break
            except Diverged:
                eta_eff *= 0.1
        else:
            raise AllStepsDiverged(f"no finite step after {MAX_BACKOFF} reductions")

        theta, params, lg = theta_new, params_new, lg_new
        epochs_run = k
        pen = penalty(params) if params is not None else 0.0
        val_loss = val_mse + lam * pen
        if val_loss < best_val:
            best_val = val_loss
            best = (theta.copy(), params.copy() if params else None, k, val_mse)
        trace["epoch"].append(k)
        trace["train_loss"].append(lg.loss)
        trace["val_loss"].append(val_loss)
        trace["val_mse"].append(val_mse)
        trace["phi_dist"].append(float(np.sqrt(pen)))
        for i in range(model.p):
            trace[f"theta{i}"].append(theta[i])
        if abs(lg.loss - train_prev) / fit_config.eta <= fit_config.tau:
            stop_reason = "tolerance"
            break
        train_prev = lg.loss

    theta_hat, params_hat, best_epoch, best_mse = best
    return FitResult(
        theta=theta_hat, params=params_hat, best_val_loss=float(best_val),
        best_val_mse=float(best_mse), best_epoch=best_epoch, lam=lam,
        stop_reason=stop_reason,
        trace={k: np.asarray(v) for k, v in trace.items()},
        seed=fit_config.seed, epochs_run=epochs_run,
    )


def select_lambda(model: PdeModel, dataset: Dataset, fit_config: FitConfig,
                  solver_config: SolverConfig):
    """Fit once per grid value (shared seed and split); pick the smallest
    unpenalized validation MSE, breaking ties toward the smaller lambda."""
    grid = sorted(set(float(l) for l in fit_config.lam_grid))
    if not grid:
        raise ValueError("empty lambda grid")
    best_lam, best_fit, failures = None, None, []
    for lam in grid:
        try:
            res = fit(model, dataset, replace(fit_config, lam=lam), solver_config)
        except (AllStepsDiverged, Diverged) as exc:
            failures.append((lam, exc))
            continue
        if best_fit is None or res.best_val_mse < best_fit.best_val_mse:
            best_lam, best_fit = lam, res
    if best_fit is None:
        raise AllStepsDiverged(f"every lambda candidate failed: {failures}")
    return best_lam, best_fit
