"""Efficient-variance estimation and confidence intervals.

The dataset's two halves play different roles: part 1 estimates
(theta_hat, f_hat) through the usual fit, part 2 approximates the
expectations below.  With sigma2_hat the mean squared part-2 residual, the
procedure perturbs each parameter coordinate by delta, fits a
nuisance-direction network g_j that best mimics that perturbation from
inside the mechanism space,

    g_j = argmin (1/n) sum_i ||u~(X_i; th+delta e_j, f) - u~(X_i; th, f+g)||^2
          + lambda_tilde ||phi_g - phi_g0||^2,

and inverts the Gram matrix of the residual differences:

    Sigma_eff = delta^2 sigma2_hat * ( (1/n) sum_i M_i^T M_i )^{-1},
    M_i[:, j] = u~(X_i; th+delta e_j, f) - u~(X_i; th, f + g_j).

Intervals for gamma'theta are centered at gamma'theta_hat with half-width
n^{-1/2} z_{1-alpha/2} sqrt(gamma' Sigma_eff gamma), where n is the number
of observations the point estimate was fitted on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .adjoint import Diverged, loss_and_grad, predict_points
from .data import Dataset
from .estimator import FitConfig, FitResult, LAMBDA_PIN, fit, select_lambda
from .models import PdeModel
from .network import NetArchitecture, NetworkParams, init_reference
from .solver import SolverConfig, solve

__all__ = [
    "EmptyPartition",
    "SingularMatrix",
    "InferenceConfig",
    "NuisanceFit",
    "InferenceReport",
    "estimate_noise_variance",
    "fit_nuisance_direction",
    "estimate_variance",
    "confidence_interval",
    "run_inference",
]


class EmptyPartition(ValueError):
    pass


class SingularMatrix(RuntimeError):
    """Gram matrix numerically singular: weak identifiability or delta too small."""


@dataclass(frozen=True)
class InferenceConfig:
    delta: Optional[float] = None        # None -> 0.1 / sqrt(n)
    lam_tilde: Optional[float] = None    # None -> reuse the fit's lambda
    alphas: tuple = (0.2, 0.1, 0.05)
    nuisance_max_epochs: int = 400
    nuisance_eta: Optional[float] = None  # None -> fit eta
    cond_limit: float = 1e12

    def resolved_delta(self, n: int) -> float:
        d = 0.1 * n ** -0.5 if self.delta is None else float(self.delta)
        if d == 0.0:
            raise ValueError("delta must be nonzero")
        return d


@dataclass
class NuisanceFit:
    params: Optional[NetworkParams]
    data_term: float
    data_term_at_zero: float
    epochs: int
    non_decreasing: bool  # optimization made no progress past g = 0


@dataclass
class InferenceReport:
    theta: np.ndarray
    sigma2: float
    sigma_eff: np.ndarray
    intervals: dict            # {(gamma_label, alpha): (lo, hi)}
    delta: float
    n_fit: int
    n_part2: int
    nuisance: list
    fit: Optional[FitResult] = None

    def to_json(self, path: str) -> None:
        doc = {
            "theta": self.theta.tolist(),
            "sigma2": self.sigma2,
            "sigma_eff": self.sigma_eff.ravel().tolist(),
            "p": int(self.sigma_eff.shape[0]),
            "delta": self.delta,
            "n_fit": self.n_fit,
            "n_part2": self.n_part2,
            "nuisance_residuals": [g.data_term for g in self.nuisance],
            "intervals": {
                f"{label}@{alpha}": [lo, hi]
                for (label, alpha), (lo, hi) in self.intervals.items()
            },
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)


def estimate_noise_variance(preds: np.ndarray, y: np.ndarray) -> float:
    """Mean squared residual ||Y_i - u~(X_i)||^2 over the second part."""
    y = np.atleast_2d(y)
    if y.shape[0] == 0:
        raise EmptyPartition("no part-2 observations")
    r = preds - y
    return float(np.sum(r * r)) / y.shape[0]


def fit_nuisance_direction(model: PdeModel, theta_hat: np.ndarray,
                           f_hat: Optional[NetworkParams], points, targets,
                           lam_tilde: float, fit_config: FitConfig,
                           solver_config: SolverConfig,
                           max_epochs: int, eta: float, seed: int) -> NuisanceFit:
    """Gradient-descent fit of one nuisance direction g in the shifted space.

    Targets are precomputed perturbed solutions (noise-free), so there is no
    held-out monitor; iteration keeps the best training objective and stops
    on the tau rule or the epoch budget.  A pinning-scale lam_tilde returns
    g = 0 without optimizing.
    """
    base = None
    if f_hat is not None:
        base_cfg = replace(fit_config, lam=0.0)
        base = f_hat
    # data term with g = 0 (baseline the optimizer must not lose to)
    traj0 = solve(model, theta_hat, f_hat, solver_config)
    preds0 = predict_points(traj0, points)
    at_zero = float(np.sum((preds0 - targets) ** 2)) / len(points)
    if lam_tilde >= LAMBDA_PIN:
        return NuisanceFit(None, at_zero, at_zero, 0, False)

    arch = NetArchitecture(model.d, model.d_y, tuple(fit_config.widths),
                           fit_config.power)
    g = init_reference(arch, seed)
    lg = loss_and_grad(model, theta_hat, g, points, targets, lam_tilde,
                       solver_config, extra_mechanism=base)
    best_term, best_phi = lg.data_term, g.phi.copy()
    prev = lg.loss
    epochs = 0
    for k in range(1, max_epochs + 1):
        eta_eff = eta
        for _ in range(6):
            g_new = NetworkParams(arch, g.phi - eta_eff * lg.grad_phi, g.phi0, seed)
            try:
                lg_new = loss_and_grad(model, theta_hat, g_new, points, targets,
                                       lam_tilde, solver_config, extra_mechanism=base)
                break
            except Diverged:
                eta_eff *= 0.1
        else:
            break
        g, lg = g_new, lg_new
        epochs = k
        if lg.data_term < best_term:
            best_term, best_phi = lg.data_term, g.phi.copy()
        if abs(lg.loss - prev) / eta <= fit_config.tau:
            break
        prev = lg.loss
    g_best = NetworkParams(arch, best_phi, g.phi0, seed)
    return NuisanceFit(g_best, best_term, at_zero, epochs,
                       non_decreasing=best_term >= at_zero)


def estimate_variance(model: PdeModel, theta_hat: np.ndarray,
                      f_hat: Optional[NetworkParams], points, y,
                      fit_config: FitConfig, solver_config: SolverConfig,
                      inf_config: InferenceConfig, n_total: int,
                      seed: int = 0):
    """Sigma_eff from per-coordinate perturbations and nuisance fits.

    Returns (sigma_eff, sigma2, nuisance_fits).
    """
    if len(points) == 0:
        raise EmptyPartition("no part-2 observations")
    delta = inf_config.resolved_delta(n_total)
    lam_tilde = inf_config.lam_tilde
    if lam_tilde is None:
        lam_tilde = fit_config.lam if not isinstance(fit_config.lam, str) else 1e-6
    eta = inf_config.nuisance_eta or fit_config.eta

    traj_hat = solve(model, theta_hat, f_hat, solver_config)
    preds_hat = predict_points(traj_hat, points)
    sigma2 = estimate_noise_variance(preds_hat, y)

    p = model.p
    n2 = len(points)
    cols = np.empty((n2, model.d_y, p))
    nuisances = []
    for j in range(p):
        theta_j = theta_hat.copy()
        theta_j[j] += delta
        targets = predict_points(solve(model, theta_j, f_hat, solver_config), points)
        nf = fit_nuisance_direction(model, theta_hat, f_hat, points, targets,
                                    lam_tilde, fit_config, solver_config,
                                    inf_config.nuisance_max_epochs, eta,
                                    seed=seed * 1000 + 17 + j)
        nuisances.append(nf)
        if nf.params is None:
            preds_j = preds_hat
        else:
            mechs = ([f_hat] if f_hat is not None else []) + [nf.params]
            preds_j = predict_points(solve(model, theta_hat, mechs, solver_config), points)
        cols[:, :, j] = targets - preds_j

    gram = np.einsum("icj,ick->jk", cols, cols) / n2
    gram = 0.5 * (gram + gram.T)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > inf_config.cond_limit:
        raise SingularMatrix(f"difference Gram condition number {cond:.2e}")
    sigma_eff = delta**2 * sigma2 * np.linalg.inv(gram)
    sigma_eff = 0.5 * (sigma_eff + sigma_eff.T)
    return sigma_eff, sigma2, nuisances


def confidence_interval(theta_hat: np.ndarray, sigma_eff: np.ndarray,
                        gamma: np.ndarray, alpha: float, n: int):
    """Symmetric interval for gamma' theta at level 1 - alpha."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if abs(np.linalg.norm(gamma) - 1.0) > 1e-9:
        raise ValueError("gamma must be a unit vector")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    eigs = np.linalg.eigvalsh(sigma_eff)
    if eigs.min() <= 0:
        raise SingularMatrix("sigma_eff is not positive definite")
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    center = float(gamma @ theta_hat)
    half = z * np.sqrt(float(gamma @ sigma_eff @ gamma)) / np.sqrt(n)
    return center - half, center + half


def run_inference(model: PdeModel, dataset: Dataset, fit_config: FitConfig,
                  solver_config: SolverConfig,
                  inf_config: InferenceConfig = InferenceConfig(),
                  gammas: Optional[Sequence[np.ndarray]] = None) -> InferenceReport:
    """Full pipeline: part-1 fit, part-2 variance pieces, intervals."""
    ds1 = dataset.subset(dataset.part1_idx, seed=dataset.seed)
    if isinstance(fit_config.lam, str):
        _, fit_res = select_lambda(model, ds1, fit_config, solver_config)
    else:
        fit_res = fit(model, ds1, fit_config, solver_config)
    pts2, y2 = dataset.part2
    sigma_eff, sigma2, nuis = estimate_variance(
        model, fit_res.theta, fit_res.params, pts2, y2, fit_config,
        solver_config, inf_config, n_total=dataset.n, seed=dataset.seed)
    if gammas is None:
        gammas = [np.eye(model.p)[j] for j in range(model.p)]
    n_fit = len(dataset.part1_idx)
    intervals = {}
    for gi, gamma in enumerate(gammas):
        for alpha in inf_config.alphas:
            intervals[(f"g{gi}", alpha)] = confidence_interval(
                fit_res.theta, sigma_eff, gamma, alpha, n_fit)
    return InferenceReport(
        theta=fit_res.theta, sigma2=sigma2, sigma_eff=sigma_eff,
        intervals=intervals, delta=inf_config.resolved_delta(dataset.n),
        n_fit=n_fit, n_part2=len(pts2), nuisance=nuis, fit=fit_res,
    )
