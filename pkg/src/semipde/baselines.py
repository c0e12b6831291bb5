"""The three comparison estimators.

* Baseline 1 (Parametric): the profiling fit with the mechanism pinned to
  zero - pure physical-operator regression.
* Baseline 2 (Nonparametric): plain network regression of Y on X = (t, x),
  no equations involved.
* Baseline 3 (PinnJoint): joint minimization over (theta, mechanism weights,
  solution network weights) of data misfit + lam1 * mean squared equation
  residual at collocation points + lam2 * boundary/initial mismatch.  The
  residual needs du/dt and the spatial derivatives of the solution network;
  these are propagated exactly through the layers (forward-mode in the
  inputs) and the whole quantity is then reverse-differentiated, so the
  solution network uses the squared rectifier (its second derivatives exist;
  a plain-ReLU network has zero Laplacian almost everywhere).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .data import Dataset
from .estimator import FitConfig, FitResult, fit
from .grids import SpaceTimePoint
from .models import PARAM_DIFFUSION, PARAM_LINEAR_ODE, PdeModel
from .network import (
    NetArchitecture,
    NetworkParams,
    backward_raw_batch,
    backward_shifted_batch,
    forward_raw_batch,
    forward_shifted_batch,
    init_reference,
)
from .solver import SolverConfig, solve

__all__ = ["BaselineResult", "PinnConfig", "parametric_fit",
           "nonparametric_fit", "pinn_fit"]


@dataclass
class BaselineResult:
    which: str                       # Parametric | Nonparametric | PinnJoint
    theta: Optional[np.ndarray]
    predict: Callable               # list[SpaceTimePoint] -> (B, d_y)
    fit_result: Optional[FitResult] = None
    net: Optional[np.ndarray] = None
    loss_split: Optional[dict] = None
    trace: Optional[dict] = None


def _points_to_tx(points) -> np.ndarray:
    return np.array([[p.t, p.x[0]] for p in points], dtype=np.float64)


# ---------------------------------------------------------------------------
# Baseline 1: parametric-only PDE fit
# ---------------------------------------------------------------------------

def parametric_fit(model: PdeModel, dataset: Dataset, fit_config: FitConfig,
                   solver_config: SolverConfig) -> BaselineResult:
    cfg = replace(fit_config, pin_network=True, lam=0.0)
    res = fit(model, dataset, cfg, solver_config)
    traj = solve(model, res.theta, None, solver_config)

    def predict(points):
        from .adjoint import predict_points

        return predict_points(traj, points)

    return BaselineResult("Parametric", res.theta, predict, fit_result=res)


# ---------------------------------------------------------------------------
# Baseline 2: network regression of Y on X
# ---------------------------------------------------------------------------

def nonparametric_fit(dataset: Dataset, fit_config: FitConfig) -> BaselineResult:
    """Fit u directly in the raw network space with validation early stopping."""
    train_pts, train_y = dataset.train
    val_pts, val_y = dataset.validation
    d_y = dataset.y.shape[1]
    arch = NetArchitecture(2, d_y, tuple(fit_config.widths), fit_config.power)
    params = init_reference(arch, fit_config.seed)
    phi = params.phi.copy()
    xt, xv = _points_to_tx(train_pts), _points_to_tx(val_pts)
    n = len(train_pts)

    best_val, best_phi, best_epoch = np.inf, phi.copy(), 0
    prev = np.inf
    for k in range(1, fit_config.max_epochs + 1):
        pred = forward_raw_batch(arch, phi, xt)
        resid = pred - train_y
        loss = float(np.sum(resid * resid)) / n
        g, _ = backward_raw_batch(arch, phi, xt, (2.0 / n) * resid)
        phi = phi - fit_config.eta * g
        val_pred = forward_raw_batch(arch, phi, xv)
        val_mse = float(np.sum((val_pred - val_y) ** 2)) / len(val_pts)
        if val_mse < best_val:
            best_val, best_phi, best_epoch = val_mse, phi.copy(), k
        if abs(loss - prev) / fit_config.eta <= fit_config.tau:
            break
        prev = loss

    net = best_phi

    def predict(points):
        return forward_raw_batch(arch, net, _points_to_tx(points))

    return BaselineResult("Nonparametric", None, predict, net=net)


# ---------------------------------------------------------------------------
# Baseline 3: joint physics-penalized fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PinnConfig:
    lam1: float = 1.0
    lam2: float = 1.0
    colloc: tuple = (64, 64)     # (time, space) interior collocation counts
    boundary_points: int = 64
    u_power: int = 2             # squared rectifier for the solution network
    eta: float = 2e-3
    max_epochs: int = 600
    seed: int = 0
    widths: tuple = (16, 64, 64, 16)


def _ext_forward(arch: NetArchitecture, flat: np.ndarray, x: np.ndarray):
    """Propagate (value, d/dt, d/dx, d2/dx2) through the layers with a tape."""
    b = x.shape[0]
    a = x
    at = np.zeros_like(x); at[:, 0] = 1.0
    ax = np.zeros_like(x); ax[:, 1] = 1.0
    axx = np.zeros_like(x)
    layers = list(arch.layer_slices())
    tape = []
    for i, (w_sl, b_sl, shape, scale) in enumerate(layers):
        w = flat[w_sl].reshape(shape)
        z = scale * (a @ w.T + flat[b_sl])
        zt = scale * (at @ w.T)
        zx = scale * (ax @ w.T)
        zxx = scale * (axx @ w.T)
        tape.append((a, at, ax, axx, z, zt, zx, zxx))
        if i < len(layers) - 1:
            p = arch.power
            pos = z > 0.0
            s1 = np.where(pos, p * np.maximum(z, 0.0) ** (p - 1), 0.0)
            s2 = (np.where(pos, p * (p - 1) * np.maximum(z, 0.0) ** (p - 2), 0.0)
                  if p >= 2 else np.zeros_like(z))
            a = np.maximum(z, 0.0) ** p
            at = s1 * zt
            ax = s1 * zx
            axx = s2 * zx * zx + s1 * zxx
        else:
            a, at, ax, axx = z, zt, zx, zxx
    return (a, at, ax, axx), tape


def _ext_backward(arch: NetArchitecture, flat: np.ndarray, tape,
                  cu, cut, cux, cuxx):
    """Reverse the extended propagation; returns grad_flat."""
    grad = np.zeros(arch.n_params)
    layers = list(arch.layer_slices())
    ca, cat_, cax, caxx = cu, cut, cux, cuxx
    for i in range(len(layers) - 1, -1, -1):
        w_sl, b_sl, shape, scale = layers[i]
        a, at, ax, axx, z, zt, zx, zxx = tape[i]
        if i < len(layers) - 1:
            p = arch.power
            pos = z > 0.0
            s1 = np.where(pos, p * np.maximum(z, 0.0) ** (p - 1), 0.0)
            s2 = (np.where(pos, p * (p - 1) * np.maximum(z, 0.0) ** (p - 2), 0.0)
                  if p >= 2 else np.zeros_like(z))
            # sigma''' vanishes a.e. for p <= 2 (used only by the p=2 default)
            cz = ca * s1 + cat_ * s2 * zt + cax * s2 * zx + caxx * s2 * zxx
            czt = cat_ * s1
            czx = cax * s1 + caxx * 2.0 * s2 * zx
            czxx = caxx * s1
        else:
            cz, czt, czx, czxx = ca, cat_, cax, caxx
        w = flat[w_sl].reshape(shape)
        grad[w_sl] += (scale * (cz.T @ a + czt.T @ at + czx.T @ ax + czxx.T @ axx)).ravel()
        grad[b_sl] += scale * cz.sum(axis=0)
        ca = scale * (cz @ w)
        cat_ = scale * (czt @ w)
        cax = scale * (czx @ w)
        caxx = scale * (czxx @ w)
    return grad


def pinn_fit(model: PdeModel, dataset: Dataset, fit_config: FitConfig,
             solver_config: SolverConfig,
             pinn_config: PinnConfig = PinnConfig()) -> BaselineResult:
    """Joint (theta, F, u) fit with an equation-residual penalty.

    Only value features (u_k) are supported in the mechanism here, matching
    the built-in systems.
    """
    if any(not tag.startswith("u") for tag in model.feature_spec):
        raise NotImplementedError("joint baseline supports value features only")
    train_pts, train_y = dataset.train
    val_pts, val_y = dataset.validation
    xt, xv = _points_to_tx(train_pts), _points_to_tx(val_pts)
    n = len(train_pts)
    d_y = model.d_y

    u_arch = NetArchitecture(2, d_y, tuple(pinn_config.widths), pinn_config.u_power)
    u_params = init_reference(u_arch, pinn_config.seed)
    phi_u = u_params.phi.copy()
    f_params = init_reference(
        NetArchitecture(model.d, d_y, tuple(fit_config.widths), fit_config.power),
        pinn_config.seed + 1)
    theta = model.theta_box.mean(axis=1)
    box = model.theta_box

    nt, nx = pinn_config.colloc
    ts = model.t0 + (np.arange(nt) + 0.5) / nt * (model.t1 - model.t0)
    xs = model.x_lower + (np.arange(nx) + 0.5) / nx * (model.x_upper - model.x_lower)
    colloc = np.array([[t, x] for t in ts for x in xs])
    n_c = colloc.shape[0]
    nb = pinn_config.boundary_points
    tb = model.t0 + (np.arange(nb) + 0.5) / nb * (model.t1 - model.t0)
    xb = model.x_lower + (np.arange(nb) + 0.5) / nb * (model.x_upper - model.x_lower)
    bc_lo = np.stack([tb, np.full(nb, model.x_lower)], axis=1)
    bc_hi = np.stack([tb, np.full(nb, model.x_upper)], axis=1)
    ic_pts = np.stack([np.full(nb, model.t0), xb], axis=1)
    ic_target = np.atleast_2d(model.ic(xb)).T  # (nb, d_y)

    feat_idx = [int(tag[1:]) for tag in model.feature_spec]
    mult, idx = model.param_mult, model.param_idx

    def objective(phi_u_, phi_f_, theta_, want_grad: bool):
        fp = NetworkParams(f_params.arch, phi_f_, f_params.phi0, f_params.seed)
        # data term
        (pred, _, _, _), tape_d = _ext_forward(u_arch, phi_u_, xt)
        resid_d = pred - train_y
        data = float(np.sum(resid_d * resid_d)) / n
        # equation residual at collocation points
        (u, ut, ux, uxx), tape_c = _ext_forward(u_arch, phi_u_, colloc)
        feats = u[:, feat_idx]
        fvals = forward_shifted_batch(fp, feats)
        if model.param_kind == PARAM_DIFFUSION:
            pvals = mult * theta_[idx] * uxx
        elif model.param_kind == PARAM_LINEAR_ODE:
            pvals = mult * theta_[idx] * u
        else:
            raise NotImplementedError("joint baseline needs a linear parametric kind")
        r = ut - pvals - fvals
        res = float(np.sum(r * r)) / n_c
        # boundary/initial mismatch
        (u_lo, _, _, _), tape_lo = _ext_forward(u_arch, phi_u_, bc_lo)
        (u_hi, _, _, _), tape_hi = _ext_forward(u_arch, phi_u_, bc_hi)
        (u_ic, _, _, _), tape_ic = _ext_forward(u_arch, phi_u_, ic_pts)
        r_per = u_lo - u_hi
        r_ic = u_ic - ic_target
        bc = (float(np.sum(r_per * r_per)) + float(np.sum(r_ic * r_ic))) / nb
        total = data + pinn_config.lam1 * res + pinn_config.lam2 * bc
        if not want_grad:
            return total, (data, res, bc)

        g_u = np.zeros_like(phi_u_)
        zero = np.zeros_like(pred)
        g_u += _ext_backward(u_arch, phi_u_, tape_d, (2.0 / n) * resid_d, zero, zero, zero)
        cr = (2.0 * pinn_config.lam1 / n_c) * r
        cuxx = np.zeros_like(cr)
        cu = np.zeros_like(cr)
        if model.param_kind == PARAM_DIFFUSION:
            cuxx = -cr * (mult * theta_[idx])
        else:
            cu = -cr * (mult * theta_[idx])
        g_f, g_feats = backward_shifted_batch(fp, feats, -cr)
        for col, k in enumerate(feat_idx):
            cu[:, k] += g_feats[:, col]
        g_u += _ext_backward(u_arch, phi_u_, tape_c, cu, cr, np.zeros_like(cr), cuxx)
        zb = np.zeros_like(r_per)
        g_u += _ext_backward(u_arch, phi_u_, tape_lo, (2.0 * pinn_config.lam2 / nb) * r_per, zb, zb, zb)
        g_u += _ext_backward(u_arch, phi_u_, tape_hi, -(2.0 * pinn_config.lam2 / nb) * r_per, zb, zb, zb)
        g_u += _ext_backward(u_arch, phi_u_, tape_ic, (2.0 * pinn_config.lam2 / nb) * r_ic, zb, zb, zb)
        g_theta = np.zeros(model.p)
        if model.param_kind == PARAM_DIFFUSION:
            contrib = mult * np.einsum("bc,bc->c", uxx, -cr)
        else:
            contrib = mult * np.einsum("bc,bc->c", u, -cr)
        np.add.at(g_theta, idx, contrib)
        return total, (data, res, bc), g_u, g_f, g_theta

    best = (np.inf, phi_u.copy(), f_params.phi.copy(), theta.copy(), {})
    phi_f = f_params.phi.copy()
    prev = np.inf
    for k in range(1, pinn_config.max_epochs + 1):
        total, split, g_u, g_f, g_th = objective(phi_u, phi_f, theta, True)
        phi_u = phi_u - pinn_config.eta * g_u
        phi_f = phi_f - pinn_config.eta * g_f
        theta = np.clip(theta - pinn_config.eta * g_th, box[:, 0], box[:, 1])
        val_pred = forward_raw_batch(u_arch, phi_u, xv)
        val_mse = float(np.sum((val_pred - val_y) ** 2)) / len(val_pts)
        monitor = val_mse + pinn_config.lam1 * split[1] + pinn_config.lam2 * split[2]
        if monitor < best[0]:
            best = (monitor, phi_u.copy(), phi_f.copy(), theta.copy(),
                    {"data": val_mse, "residual": split[1], "boundary": split[2]})
        if abs(total - prev) / pinn_config.eta <= fit_config.tau:
            break
        prev = total

    _, phi_u_b, phi_f_b, theta_b, split_b = best

    def predict(points):
        return forward_raw_batch(u_arch, phi_u_b, _points_to_tx(points))

    return BaselineResult("PinnJoint", theta_b, predict, net=phi_u_b,
                          loss_split=split_b)
