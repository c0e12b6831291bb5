"""Pure-numpy time-stepping and adjoint kernels.

Vectorized fallback with the same call signatures as kernels_numba; selected
by ``SEMIPDE_BACKEND=numpy``.  The right-hand side is

    du/dt = P(u; theta) + f0(u, t) + T(feature)

with P one of the linear parametric kinds, f0 an optional built-in true
mechanism, and T an optional tabulated mechanism (uniform-knot Catmull-Rom,
one scalar feature, clamped outside its box so the extrapolation is constant
and its derivative zero).  Neighbor index arrays jm/jp encode the boundary
handling: periodic wrap or mirror ghosts for zero-flux walls.
"""

import numpy as np

from .models import (
    F0_EXAMPLE3,
    F0_FHN,
    F0_FISHER,
    F0_NONE,
    FEAT_T,
    FEAT_U0,
    PARAM_DIFFUSION,
    PARAM_LINEAR_ODE,
)

NAME = "numpy"


def catmull_rom_weights(r):
    """Interpolation weights of the four taps at local coordinate r in [0, 1]."""
    r2 = r * r
    r3 = r2 * r
    w0 = 0.5 * (-r3 + 2.0 * r2 - r)
    w1 = 0.5 * (3.0 * r3 - 5.0 * r2 + 2.0)
    w2 = 0.5 * (-3.0 * r3 + 4.0 * r2 + r)
    w3 = 0.5 * (r3 - r2)
    return w0, w1, w2, w3


def catmull_rom_dweights(r):
    """d(weights)/dr of the four taps."""
    r2 = r * r
    d0 = 0.5 * (-3.0 * r2 + 4.0 * r - 1.0)
    d1 = 0.5 * (9.0 * r2 - 10.0 * r)
    d2 = 0.5 * (-9.0 * r2 + 8.0 * r + 1.0)
    d3 = 0.5 * (3.0 * r2 - 2.0 * r)
    return d0, d1, d2, d3


def _table_locate(v, f_lo, f_hi, n_cells):
    """Cell index, local coordinate, inside-mask for query values ``v``."""
    h = (f_hi - f_lo) / n_cells
    inside = (v >= f_lo) & (v <= f_hi)
    s = np.clip((v - f_lo) / h, 0.0, float(n_cells))
    j = np.minimum(s.astype(np.int64), n_cells - 1)
    return j, s - j, inside, h


def table_values(table, f_lo, f_hi, v):
    """Evaluate the tabulated mechanism at scalar features ``v`` -> (B, C)."""
    n_cells = table.shape[1] - 3
    j, r, _, _ = _table_locate(np.asarray(v, float), f_lo, f_hi, n_cells)
    w0, w1, w2, w3 = catmull_rom_weights(r)
    return (table[:, j] * w0 + table[:, j + 1] * w1
            + table[:, j + 2] * w2 + table[:, j + 3] * w3).T


def table_derivs(table, f_lo, f_hi, v):
    """d(table)/dv at scalar features ``v`` -> (B, C); zero outside the box."""
    n_cells = table.shape[1] - 3
    j, r, inside, h = _table_locate(np.asarray(v, float), f_lo, f_hi, n_cells)
    d0, d1, d2, d3 = catmull_rom_dweights(r)
    out = (table[:, j] * d0 + table[:, j + 1] * d1
           + table[:, j + 2] * d2 + table[:, j + 3] * d3) / h
    return (out * inside).T


def _rhs(u, t, dx, jm, jp, param_kind, param_mult, param_idx, theta,
         f0_kind, feat_kind, table, f_lo, f_hi):
    coef = (param_mult * theta[param_idx])[:, None]
    if param_kind == PARAM_DIFFUSION:
        out = coef * (u[:, jp] + u[:, jm] - 2.0 * u) / (dx * dx)
    elif param_kind == PARAM_LINEAR_ODE:
        out = coef * u
    else:
        raise ValueError("kernel path supports linear parametric kinds only")
    if f0_kind == F0_FISHER:
        out[0] += u[0] * (1.0 - u[0])
    elif f0_kind == F0_FHN:
        out[0] += u[0] - u[0] ** 3 - 5e-3 - u[1]
        out[1] += u[0] - u[1]
    elif f0_kind == F0_EXAMPLE3:
        out += np.exp(t) * (1.5 + 0.5 * np.sin(2.0 * np.pi * t))
    if table.shape[1] > 0:
        if feat_kind == FEAT_U0:
            out += table_values(table, f_lo, f_hi, u[0]).T
        else:  # FEAT_T: one value for every node
            out += table_values(table, f_lo, f_hi, np.array([t]))[0][:, None]
    return out


def rk4_solve(u0, dx, dt, n_steps, store_every, store_stages,
              jm, jp, param_kind, param_mult, param_idx, theta,
              f0_kind, feat_kind, table, f_lo, f_hi, t0):
    """Classic RK4 march; returns (states, stages, diverged_step).

    ``states`` holds every store_every-th slice including the initial one;
    ``stages`` holds the three off-step stage states per step when
    requested (required later by the adjoint sweep).  diverged_step is -1
    for a clean run, else the first step whose update went non-finite.
    """
    n_comp, _ = u0.shape
    n_stored = n_steps // store_every
    states = np.empty((n_stored + 1,) + u0.shape)
    stages = np.empty(((n_steps if store_stages else 0), 3) + u0.shape)
    u = u0.copy()
    states[0] = u
    args = (dx, jm, jp, param_kind, param_mult, param_idx, theta,
            f0_kind, feat_kind, table, f_lo, f_hi)
    diverged = -1
    for step in range(n_steps):
        t = t0 + step * dt
        k1 = _rhs(u, t, *args)
        s2 = u + 0.5 * dt * k1
        k2 = _rhs(s2, t + 0.5 * dt, *args)
        s3 = u + 0.5 * dt * k2
        k3 = _rhs(s3, t + 0.5 * dt, *args)
        s4 = u + dt * k3
        k4 = _rhs(s4, t + dt, *args)
        if store_stages:
            stages[step, 0] = s2
            stages[step, 1] = s3
            stages[step, 2] = s4
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(u.sum()):
            diverged = step
            break
        if (step + 1) % store_every == 0:
            states[(step + 1) // store_every] = u
    return states, stages, diverged


def _jtvec(u, t, v, dx, jm, jp, param_kind, param_mult, param_idx, theta,
           feat_kind, table, f_lo, f_hi):
    """Transpose-Jacobian product of the rhs at state ``u`` applied to ``v``."""
    coef = (param_mult * theta[param_idx])[:, None]
    if param_kind == PARAM_DIFFUSION:
        sv = coef * v
        out = np.zeros_like(v)
        np.add.at(out.T, jp, sv.T / (dx * dx))
        np.add.at(out.T, jm, sv.T / (dx * dx))
        out -= 2.0 * sv / (dx * dx)
    else:
        out = coef * v
    if table.shape[1] > 0 and feat_kind == FEAT_U0:
        out[0] += np.einsum("bc,cb->b", table_derivs(table, f_lo, f_hi, u[0]), v)
    return out


def _accumulate(u, t, ck, dx, param_kind, param_mult, param_idx, theta, n_theta,
                feat_kind, table, f_lo, f_hi, jm, jp, g_theta, t_cot):
    """Parameter cotangents of one stage: theta gradient and table scatter."""
    if param_kind == PARAM_DIFFUSION:
        lap = (u[:, jp] + u[:, jm] - 2.0 * u) / (dx * dx)
        contrib = param_mult * np.einsum("cn,cn->c", lap, ck)
    else:
        contrib = param_mult * np.einsum("cn,cn->c", u, ck)
    np.add.at(g_theta, param_idx, contrib)
    if table.shape[1] > 0:
        n_cells = table.shape[1] - 3
        if feat_kind == FEAT_U0:
            j, r, _, _ = _table_locate(u[0], f_lo, f_hi, n_cells)
            ws = catmull_rom_weights(r)
            for tap, w in enumerate(ws):
                np.add.at(t_cot.T, j + tap, (w * ck).T)
        else:
            j, r, _, _ = _table_locate(np.array([t]), f_lo, f_hi, n_cells)
            ws = catmull_rom_weights(r)
            csum = ck.sum(axis=1)
            for tap, w in enumerate(ws):
                t_cot[:, j[0] + tap] += w[0] * csum


def rk4_adjoint(states, stages, dx, dt, jm, jp,
                param_kind, param_mult, param_idx, theta, n_theta,
                feat_kind, table, f_lo, f_hi, t0,
                inj_ptr, inj_comp, inj_node, inj_w):
    """Reverse sweep over a stored RK4 trajectory.

    Cotangents listed in the CSR-style injection arrays (grouped by slice
    index) are added to the adjoint state as the sweep passes each slice.
    Returns (grad_theta, table_cotangent); the table cotangent is chained
    through the network separately by the caller.
    """
    n_steps = stages.shape[0]
    lam = np.zeros_like(states[0])
    g_theta = np.zeros(n_theta)
    t_cot = np.zeros_like(table)
    jt_args = (dx, jm, jp, param_kind, param_mult, param_idx, theta,
               feat_kind, table, f_lo, f_hi)
    acc_args = (dx, param_kind, param_mult, param_idx, theta, n_theta,
                feat_kind, table, f_lo, f_hi, jm, jp, g_theta, t_cot)
    for m in range(n_steps, 0, -1):
        lo, hi = inj_ptr[m], inj_ptr[m + 1]
        if hi > lo:
            np.add.at(lam, (inj_comp[lo:hi], inj_node[lo:hi]), inj_w[lo:hi])
        u = states[m - 1]
        s2, s3, s4 = stages[m - 1]
        t = t0 + (m - 1) * dt
        ck4 = (dt / 6.0) * lam
        ck3 = (dt / 3.0) * lam
        ck2 = (dt / 3.0) * lam
        ck1 = (dt / 6.0) * lam
        lam_new = lam.copy()

        cs = _jtvec(s4, t + dt, ck4, *jt_args)
        _accumulate(s4, t + dt, ck4, *acc_args)
        lam_new += cs
        ck3 += dt * cs

        cs = _jtvec(s3, t + 0.5 * dt, ck3, *jt_args)
        _accumulate(s3, t + 0.5 * dt, ck3, *acc_args)
        lam_new += cs
        ck2 += 0.5 * dt * cs

        cs = _jtvec(s2, t + 0.5 * dt, ck2, *jt_args)
        _accumulate(s2, t + 0.5 * dt, ck2, *acc_args)
        lam_new += cs
        ck1 += 0.5 * dt * cs

        cs = _jtvec(u, t, ck1, *jt_args)
        _accumulate(u, t, ck1, *acc_args)
        lam_new += cs
        lam = lam_new
    return g_theta, t_cot
