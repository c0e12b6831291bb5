"""Exact gradients of the penalized data-misfit loss via a discrete adjoint.

The loss is

    L(theta, phi) = (1/n) sum_i ||Y_i - u~(X_i; theta, F_phi)||^2
                    + lambda * ||phi - phi_0||^2

with u~ the stored RK4 trajectory.  Residual cotangents enter the adjoint
state at the interpolation taps of each observation (the exact transpose of
the space-time interpolation), the sweep runs backward through every RK
stage, and parameter gradients accumulate along the way:

* grad_theta through the parametric operator's theta-dependence,
* grad_phi through the mechanism's nodewise evaluations - either chained
  through the knot table (fast path) or through per-stage network backward
  passes (direct path).

Because the sweep differentiates the scheme itself, the gradients match
symmetric finite differences of the computed loss to truncation error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backend import get_kernels
from .grids import SpaceTimePoint
from .models import (
    F0_EXAMPLE3,
    F0_NONE,
    FEAT_U0,
    PdeModel,
    features_batch,
    first_derivative,
    first_derivative_transpose,
    needs_du,
)
from .network import NetworkParams, backward_shifted_batch, penalty, penalty_grad
from .solver import Diverged, SolverConfig, Trajectory, _neighbors, solve
from .surrogate import MechanismTable, table_weight_grad
from . import kernels_numpy as _ref

__all__ = ["LossGradient", "ObservationSet", "loss_and_grad", "predict_points"]


@dataclass
class LossGradient:
    loss: float
    data_term: float
    penalty_term: float
    grad_theta: np.ndarray
    grad_phi: Optional[np.ndarray]
    trajectory: Trajectory
    predictions: np.ndarray


class ObservationSet:
    """Precomputed interpolation taps of scattered points on one trajectory.

    Every point owns four taps (two time slices x two spatial nodes); the
    same weights serve prediction (gather) and adjoint injection (scatter),
    which is what makes the pairing identity exact.
    """

    def __init__(self, traj: Trajectory, points: Sequence[SpaceTimePoint]):
        if traj.diverged:
            raise Diverged("cannot bind observations to a diverged trajectory")
        mesh, grid = traj.stored_mesh, traj.grid
        t = np.array([p.t for p in points], dtype=np.float64)
        x = np.array([p.x[0] for p in points], dtype=np.float64)
        if np.any(t < mesh.t0 - 1e-12) or np.any(t > mesh.t1 + 1e-12):
            raise ValueError("observation time outside the trajectory span")
        s = (np.clip(t, mesh.t0, mesh.t1) - mesh.t0) / mesh.dt
        m = np.minimum(s.astype(np.int64), mesh.step_count - 1)
        wt = s - m
        if grid.periodic:
            span = grid.upper - grid.lower
            r = ((x - grid.lower) % span) / grid.dx
            j = np.minimum(r.astype(np.int64), grid.n_nodes - 1)
            wx = r - j
            j1 = (j + 1) % grid.n_nodes
        else:
            if np.any(x < grid.lower - 1e-12) or np.any(x > grid.upper + 1e-12):
                raise ValueError("observation point outside the spatial box")
            r = (np.clip(x, grid.lower, grid.upper) - grid.lower) / grid.dx
            j = np.minimum(r.astype(np.int64), grid.n_nodes - 2)
            wx = r - j
            j1 = j + 1
        self.n = len(points)
        # tap layout: (n, 4)
        self.slices = np.stack([m, m, m + 1, m + 1], axis=1)
        self.nodes = np.stack([j, j1, j, j1], axis=1)
        self.weights = np.stack(
            [(1 - wt) * (1 - wx), (1 - wt) * wx, wt * (1 - wx), wt * wx], axis=1
        )

    def predict(self, traj: Trajectory) -> np.ndarray:
        """Interpolated solution values at every point, shape (n, d_y)."""
        vals = traj.states[self.slices, :, self.nodes]  # (n, 4, C)
        return np.einsum("ik,ikc->ic", self.weights, vals)

    def injections(self, cot: np.ndarray, n_slices: int):
        """CSR-by-slice scatter arrays for per-point cotangents (n, d_y)."""
        n_comp = cot.shape[1]
        slc = np.repeat(self.slices.ravel(), n_comp)
        node = np.repeat(self.nodes.ravel(), n_comp)
        comp = np.tile(np.arange(n_comp, dtype=np.int64), self.n * 4)
        w = (self.weights[:, :, None] * cot[:, None, :]).ravel()
        order = np.argsort(slc, kind="stable")
        slc, node, comp, w = slc[order], node[order], comp[order], w[order]
        ptr = np.searchsorted(slc, np.arange(n_slices + 2, dtype=np.int64))
        return ptr.astype(np.int64), comp, node.astype(np.int64), w


def predict_points(traj: Trajectory, points: Sequence[SpaceTimePoint]) -> np.ndarray:
    return ObservationSet(traj, points).predict(traj)


def _distribute_feature_grads(model, gfeats, dx, out):
    """Scatter mechanism input-gradients back onto state cotangents."""
    for i, tag in enumerate(model.feature_spec):
        kind, k = model._tag_index(tag)
        if kind == "u":
            out[k] += gfeats[:, i]
        elif kind == "dxu":
            out[k] += first_derivative_transpose(gfeats[None, :, i], dx, model.bc)[0]


def _direct_adjoint(traj: Trajectory, inj, train_net: Optional[NetworkParams]):
    """Python reverse sweep supporting networks/callables evaluated exactly."""
    model, grid = traj.model, traj.grid
    theta, dx, dt = traj.theta, traj.grid.dx, traj.dt
    mech = traj.mechanism
    nodes = grid.nodes
    inj_ptr, inj_comp, inj_node, inj_w = inj
    n_steps = traj.stages.shape[0]
    lam = np.zeros_like(traj.states[0])
    g_theta = np.zeros(model.p)
    g_phi = np.zeros(train_net.arch.n_params) if train_net is not None else None
    mech_parts = list(mech.direct_parts)
    if mech.f0_kind not in (F0_NONE, F0_EXAMPLE3):
        raise NotImplementedError("adjoint through a built-in reaction truth")

    def stage_pullback(s, t, ck):
        nonlocal g_phi
        g_theta_loc = model.parametric_theta_vjp(t, s, theta, ck, dx)
        cs = model.parametric_jtvec(t, s, theta, ck, dx)
        if mech_parts:
            du = first_derivative(s, dx, model.bc) if needs_du(model) else None
            feats = features_batch(model, t, nodes, s, du)
            gfeats_total = np.zeros_like(feats)
            for part in mech_parts:
                if isinstance(part, NetworkParams):
                    gp, gfeats = backward_shifted_batch(part, feats, np.ascontiguousarray(ck.T))
                    gfeats_total += gfeats
                    if train_net is not None and part is train_net:
                        g_phi += gp
                elif isinstance(part, MechanismTable):
                    if part.feat_kind == FEAT_U0:
                        dvals = _ref.table_derivs(part.values, part.lo, part.hi, feats[:, 0])
                        gfeats_total[:, 0] += np.einsum("bc,cb->b", dvals, ck)
                else:
                    raise NotImplementedError(
                        "direct adjoint needs networks or tables, not raw callables")
            _distribute_feature_grads(model, gfeats_total, dx, cs)
        return g_theta_loc, cs

    for m in range(n_steps, 0, -1):
        lo, hi = inj_ptr[m], inj_ptr[m + 1]
        if hi > lo:
            np.add.at(lam, (inj_comp[lo:hi], inj_node[lo:hi]), inj_w[lo:hi])
        u = traj.states[m - 1]
        s2, s3, s4 = traj.stages[m - 1]
        t = traj.stored_mesh.t0 + (m - 1) * dt
        ck1, ck2 = (dt / 6.0) * lam, (dt / 3.0) * lam
        ck3, ck4 = (dt / 3.0) * lam, (dt / 6.0) * lam
        lam_new = lam.copy()
        for s, ts, ck, carry, fac in (
            (s4, t + dt, ck4, ck3, dt),
            (s3, t + 0.5 * dt, ck3, ck2, 0.5 * dt),
            (s2, t + 0.5 * dt, ck2, ck1, 0.5 * dt),
        ):
            gt, cs = stage_pullback(s, ts, ck)
            g_theta += gt
            lam_new += cs
            carry += fac * cs
        gt, cs = stage_pullback(u, t, ck1)
        g_theta += gt
        lam_new += cs
        lam = lam_new
    return g_theta, g_phi


def loss_and_grad(model: PdeModel, theta, params: Optional[NetworkParams],
                  points: Sequence[SpaceTimePoint], y: np.ndarray, lam: float,
                  config: SolverConfig, extra_mechanism=None,
                  time_mesh=None) -> LossGradient:
    """Penalized loss and its exact gradients at (theta, phi).

    ``params`` is the trainable shifted network (None for parametric-only
    fits); ``extra_mechanism`` rides along in the solve but contributes no
    weight gradient (used by the nuisance-direction fits).  Raises
    :class:`Diverged` when the forward solve blows up.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != len(points):
        y = y.T
    parts = []
    if params is not None:
        parts.append(params)
    if extra_mechanism is not None:
        parts.append(extra_mechanism)
    traj = solve(model, theta, parts or None, config, time_mesh=time_mesh,
                 store_stages=True)
    if traj.diverged:
        raise Diverged(f"forward solve diverged at step {traj.diverged_step}")
    obs = ObservationSet(traj, points)
    preds = obs.predict(traj)
    resid = preds - y
    n = len(points)
    data_term = float(np.sum(resid * resid)) / n
    pen = penalty(params) if params is not None else 0.0
    loss = data_term + lam * pen

    inj = obs.injections((2.0 / n) * resid, traj.stored_mesh.step_count)
    mech = traj.mechanism
    if mech.path == "kernel":
        kern = get_kernels(config.backend)
        jm, jp = _neighbors(traj.grid)
        table = mech.table.values if mech.table is not None else np.zeros((model.d_y, 0))
        f_lo, f_hi = (mech.table.lo, mech.table.hi) if mech.table is not None else (0.0, 1.0)
        g_theta, t_cot = kern.rk4_adjoint(
            traj.states, traj.stages, traj.grid.dx, traj.dt, jm, jp,
            model.param_kind, model.param_mult, model.param_idx, theta, model.p,
            mech.feat_kind, np.ascontiguousarray(table), f_lo, f_hi,
            traj.stored_mesh.t0, *inj)
        g_phi = None
        if params is not None:
            # sum-table cotangent chains into the trainable net unchanged
            g_phi = table_weight_grad(params, mech.table, t_cot)
    else:
        g_theta, g_phi = _direct_adjoint(traj, inj, params)

    if params is not None:
        g_phi = g_phi + lam * penalty_grad(params)
    return LossGradient(loss=loss, data_term=data_term, penalty_term=lam * pen,
                        grad_theta=g_theta, grad_phi=g_phi, trajectory=traj,
                        predictions=preds)
