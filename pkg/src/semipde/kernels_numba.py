"""Numba-compiled time-stepping and adjoint kernels.

Same contract as kernels_numpy, written as explicit loops so the whole RK4
march and the backward sweep each compile to one nopython unit.  Selected by
default whenever numba imports; ``SEMIPDE_BACKEND=numpy`` switches it off.
"""

import numpy as np
from numba import njit

from .models import (
    F0_EXAMPLE3,
    F0_FHN,
    F0_FISHER,
    FEAT_U0,
    PARAM_DIFFUSION,
)

NAME = "numba"

# keep jitted helpers reusable across processes
_JIT = dict(cache=True, fastmath=False)


@njit(**_JIT)
def _rhs_nb(u, t, out, dx, jm, jp, param_kind, param_mult, param_idx, theta,
            f0_kind, feat_kind, table, f_lo, f_hi):
    n_comp, n = u.shape
    inv2 = 1.0 / (dx * dx)
    for c in range(n_comp):
        coef = param_mult[c] * theta[param_idx[c]]
        if param_kind == PARAM_DIFFUSION:
            for jj in range(n):
                out[c, jj] = coef * (u[c, jp[jj]] + u[c, jm[jj]] - 2.0 * u[c, jj]) * inv2
        else:
            for jj in range(n):
                out[c, jj] = coef * u[c, jj]
    if f0_kind == F0_FISHER:
        for jj in range(n):
            out[0, jj] += u[0, jj] * (1.0 - u[0, jj])
    elif f0_kind == F0_FHN:
        for jj in range(n):
            a = u[0, jj]
            b = u[1, jj]
            out[0, jj] += a - a * a * a - 5e-3 - b
            out[1, jj] += a - b
    elif f0_kind == F0_EXAMPLE3:
        g = np.exp(t) * (1.5 + 0.5 * np.sin(2.0 * np.pi * t))
        for c in range(n_comp):
            for jj in range(n):
                out[c, jj] += g
    n_knots = table.shape[1]
    if n_knots > 0:
        n_cells = n_knots - 3
        h = (f_hi - f_lo) / n_cells
        if feat_kind == FEAT_U0:
            for jj in range(n):
                v = u[0, jj]
                s = (v - f_lo) / h
                if s < 0.0:
                    s = 0.0
                elif s > n_cells:
                    s = float(n_cells)
                cell = int(s)
                if cell > n_cells - 1:
                    cell = n_cells - 1
                r = s - cell
                r2 = r * r
                r3 = r2 * r
                w0 = 0.5 * (-r3 + 2.0 * r2 - r)
                w1 = 0.5 * (3.0 * r3 - 5.0 * r2 + 2.0)
                w2 = 0.5 * (-3.0 * r3 + 4.0 * r2 + r)
                w3 = 0.5 * (r3 - r2)
                for c in range(n_comp):
                    out[c, jj] += (w0 * table[c, cell] + w1 * table[c, cell + 1]
                                   + w2 * table[c, cell + 2] + w3 * table[c, cell + 3])
        else:  # FEAT_T
            s = (t - f_lo) / h
            if s < 0.0:
                s = 0.0
            elif s > n_cells:
                s = float(n_cells)
            cell = int(s)
            if cell > n_cells - 1:
                cell = n_cells - 1
            r = s - cell
            r2 = r * r
            r3 = r2 * r
            w0 = 0.5 * (-r3 + 2.0 * r2 - r)
            w1 = 0.5 * (3.0 * r3 - 5.0 * r2 + 2.0)
            w2 = 0.5 * (-3.0 * r3 + 4.0 * r2 + r)
            w3 = 0.5 * (r3 - r2)
            for c in range(n_comp):
                val = (w0 * table[c, cell] + w1 * table[c, cell + 1]
                       + w2 * table[c, cell + 2] + w3 * table[c, cell + 3])
                for jj in range(n):
                    out[c, jj] += val


@njit(**_JIT)
def rk4_solve(u0, dx, dt, n_steps, store_every, store_stages,
              jm, jp, param_kind, param_mult, param_idx, theta,
              f0_kind, feat_kind, table, f_lo, f_hi, t0):
    n_comp, n = u0.shape
    n_stored = n_steps // store_every
    states = np.empty((n_stored + 1, n_comp, n))
    n_stage = n_steps if store_stages else 0
    stages = np.empty((n_stage, 3, n_comp, n))
    u = u0.copy()
    for c in range(n_comp):
        for jj in range(n):
            states[0, c, jj] = u[c, jj]
    k1 = np.empty((n_comp, n))
    k2 = np.empty((n_comp, n))
    k3 = np.empty((n_comp, n))
    k4 = np.empty((n_comp, n))
    s = np.empty((n_comp, n))
    diverged = -1
    for step in range(n_steps):
        t = t0 + step * dt
        _rhs_nb(u, t, k1, dx, jm, jp, param_kind, param_mult, param_idx,
                theta, f0_kind, feat_kind, table, f_lo, f_hi)
        for c in range(n_comp):
            for jj in range(n):
                s[c, jj] = u[c, jj] + 0.5 * dt * k1[c, jj]
        if store_stages:
            stages[step, 0] = s
        _rhs_nb(s, t + 0.5 * dt, k2, dx, jm, jp, param_kind, param_mult,
                param_idx, theta, f0_kind, feat_kind, table, f_lo, f_hi)
        for c in range(n_comp):
            for jj in range(n):
                s[c, jj] = u[c, jj] + 0.5 * dt * k2[c, jj]
        if store_stages:
            stages[step, 1] = s
        _rhs_nb(s, t + 0.5 * dt, k3, dx, jm, jp, param_kind, param_mult,
                param_idx, theta, f0_kind, feat_kind, table, f_lo, f_hi)
        for c in range(n_comp):
            for jj in range(n):
                s[c, jj] = u[c, jj] + dt * k3[c, jj]
        if store_stages:
            stages[step, 2] = s
        _rhs_nb(s, t + dt, k4, dx, jm, jp, param_kind, param_mult, param_idx,
                theta, f0_kind, feat_kind, table, f_lo, f_hi)
        total = 0.0
        for c in range(n_comp):
            for jj in range(n):
                u[c, jj] += (dt / 6.0) * (k1[c, jj] + 2.0 * k2[c, jj]
                                          + 2.0 * k3[c, jj] + k4[c, jj])
                total += u[c, jj]
        if not np.isfinite(total):
            diverged = step
            break
        if (step + 1) % store_every == 0:
            states[(step + 1) // store_every] = u
    return states, stages, diverged


@njit(**_JIT)
def _jtvec_nb(u, t, v, out, dx, jm, jp, param_kind, param_mult, param_idx,
              theta, feat_kind, table, f_lo, f_hi):
    n_comp, n = u.shape
    inv2 = 1.0 / (dx * dx)
    for c in range(n_comp):
        for jj in range(n):
            out[c, jj] = 0.0
    for c in range(n_comp):
        coef = param_mult[c] * theta[param_idx[c]]
        if param_kind == PARAM_DIFFUSION:
            # scatter form: exact transpose of the gather stencil
            for jj in range(n):
                sv = coef * v[c, jj] * inv2
                out[c, jp[jj]] += sv
                out[c, jm[jj]] += sv
                out[c, jj] -= 2.0 * sv
        else:
            for jj in range(n):
                out[c, jj] += coef * v[c, jj]
    n_knots = table.shape[1]
    if n_knots > 0 and feat_kind == FEAT_U0:
        n_cells = n_knots - 3
        h = (f_hi - f_lo) / n_cells
        for jj in range(n):
            val = u[0, jj]
            if val < f_lo or val > f_hi:
                continue  # clamped region: constant extrapolation, zero slope
            s = (val - f_lo) / h
            cell = int(s)
            if cell > n_cells - 1:
                cell = n_cells - 1
            r = s - cell
            r2 = r * r
            d0 = 0.5 * (-3.0 * r2 + 4.0 * r - 1.0)
            d1 = 0.5 * (9.0 * r2 - 10.0 * r)
            d2 = 0.5 * (-9.0 * r2 + 8.0 * r + 1.0)
            d3 = 0.5 * (3.0 * r2 - 2.0 * r)
            acc = 0.0
            for c in range(n_comp):
                slope = (d0 * table[c, cell] + d1 * table[c, cell + 1]
                         + d2 * table[c, cell + 2] + d3 * table[c, cell + 3]) / h
                acc += slope * v[c, jj]
            out[0, jj] += acc


@njit(**_JIT)
def _accum_nb(u, t, ck, dx, jm, jp, param_kind, param_mult, param_idx, theta,
              feat_kind, table, f_lo, f_hi, g_theta, t_cot):
    n_comp, n = u.shape
    inv2 = 1.0 / (dx * dx)
    for c in range(n_comp):
        acc = 0.0
        if param_kind == PARAM_DIFFUSION:
            for jj in range(n):
                lap = (u[c, jp[jj]] + u[c, jm[jj]] - 2.0 * u[c, jj]) * inv2
                acc += lap * ck[c, jj]
        else:
            for jj in range(n):
                acc += u[c, jj] * ck[c, jj]
        g_theta[param_idx[c]] += param_mult[c] * acc
    n_knots = table.shape[1]
    if n_knots > 0:
        n_cells = n_knots - 3
        h = (f_hi - f_lo) / n_cells
        if feat_kind == FEAT_U0:
            for jj in range(n):
                v = u[0, jj]
                s = (v - f_lo) / h
                if s < 0.0:
                    s = 0.0
                elif s > n_cells:
                    s = float(n_cells)
                cell = int(s)
                if cell > n_cells - 1:
                    cell = n_cells - 1
                r = s - cell
                r2 = r * r
                r3 = r2 * r
                w0 = 0.5 * (-r3 + 2.0 * r2 - r)
                w1 = 0.5 * (3.0 * r3 - 5.0 * r2 + 2.0)
                w2 = 0.5 * (-3.0 * r3 + 4.0 * r2 + r)
                w3 = 0.5 * (r3 - r2)
                for c in range(n_comp):
                    t_cot[c, cell] += w0 * ck[c, jj]
                    t_cot[c, cell + 1] += w1 * ck[c, jj]
                    t_cot[c, cell + 2] += w2 * ck[c, jj]
                    t_cot[c, cell + 3] += w3 * ck[c, jj]
        else:  # FEAT_T
            s = (t - f_lo) / h
            if s < 0.0:
                s = 0.0
            elif s > n_cells:
                s = float(n_cells)
            cell = int(s)
            if cell > n_cells - 1:
                cell = n_cells - 1
            r = s - cell
            r2 = r * r
            r3 = r2 * r
            w0 = 0.5 * (-r3 + 2.0 * r2 - r)
            w1 = 0.5 * (3.0 * r3 - 5.0 * r2 + 2.0)
            w2 = 0.5 * (-3.0 * r3 + 4.0 * r2 + r)
            w3 = 0.5 * (r3 - r2)
            for c in range(n_comp):
                csum = 0.0
                for jj in range(n):
                    csum += ck[c, jj]
                t_cot[c, cell] += w0 * csum
                t_cot[c, cell + 1] += w1 * csum
                t_cot[c, cell + 2] += w2 * csum
                t_cot[c, cell + 3] += w3 * csum


@njit(**_JIT)
def rk4_adjoint(states, stages, dx, dt, jm, jp,
                param_kind, param_mult, param_idx, theta, n_theta,
                feat_kind, table, f_lo, f_hi, t0,
                inj_ptr, inj_comp, inj_node, inj_w):
    n_steps = stages.shape[0]
    n_comp = states.shape[1]
    n = states.shape[2]
    lam = np.zeros((n_comp, n))
    lam_new = np.empty((n_comp, n))
    cs = np.empty((n_comp, n))
    ck1 = np.empty((n_comp, n))
    ck2 = np.empty((n_comp, n))
    ck3 = np.empty((n_comp, n))
    ck4 = np.empty((n_comp, n))
    g_theta = np.zeros(n_theta)
    t_cot = np.zeros(table.shape)
    for m in range(n_steps, 0, -1):
        for e in range(inj_ptr[m], inj_ptr[m + 1]):
            lam[inj_comp[e], inj_node[e]] += inj_w[e]
        u = states[m - 1]
        s2 = stages[m - 1, 0]
        s3 = stages[m - 1, 1]
        s4 = stages[m - 1, 2]
        t = t0 + (m - 1) * dt
        for c in range(n_comp):
            for jj in range(n):
                val = lam[c, jj]
                ck1[c, jj] = (dt / 6.0) * val
                ck2[c, jj] = (dt / 3.0) * val
                ck3[c, jj] = (dt / 3.0) * val
                ck4[c, jj] = (dt / 6.0) * val
                lam_new[c, jj] = val

        _jtvec_nb(s4, t + dt, ck4, cs, dx, jm, jp, param_kind, param_mult,
                  param_idx, theta, feat_kind, table, f_lo, f_hi)
        _accum_nb(s4, t + dt, ck4, dx, jm, jp, param_kind, param_mult,
                  param_idx, theta, feat_kind, table, f_lo, f_hi, g_theta, t_cot)
        for c in range(n_comp):
            for jj in range(n):
                lam_new[c, jj] += cs[c, jj]
                ck3[c, jj] += dt * cs[c, jj]

        _jtvec_nb(s3, t + 0.5 * dt, ck3, cs, dx, jm, jp, param_kind, param_mult,
                  param_idx, theta, feat_kind, table, f_lo, f_hi)
        _accum_nb(s3, t + 0.5 * dt, ck3, dx, jm, jp, param_kind, param_mult,
                  param_idx, theta, feat_kind, table, f_lo, f_hi, g_theta, t_cot)
        for c in range(n_comp):
            for jj in range(n):
                lam_new[c, jj] += cs[c, jj]
                ck2[c, jj] += 0.5 * dt * cs[c, jj]

        _jtvec_nb(s2, t + 0.5 * dt, ck2, cs, dx, jm, jp, param_kind, param_mult,
                  param_idx, theta, feat_kind, table, f_lo, f_hi)
        _accum_nb(s2, t + 0.5 * dt, ck2, dx, jm, jp, param_kind, param_mult,
                  param_idx, theta, feat_kind, table, f_lo, f_hi, g_theta, t_cot)
        for c in range(n_comp):
            for jj in range(n):
                lam_new[c, jj] += cs[c, jj]
                ck1[c, jj] += 0.5 * dt * cs[c, jj]

        _jtvec_nb(u, t, ck1, cs, dx, jm, jp, param_kind, param_mult,
                  param_idx, theta, feat_kind, table, f_lo, f_hi)
        _accum_nb(u, t, ck1, dx, jm, jp, param_kind, param_mult,
                  param_idx, theta, feat_kind, table, f_lo, f_hi, g_theta, t_cot)
        for c in range(n_comp):
            for jj in range(n):
                lam[c, jj] = lam_new[c, jj] + cs[c, jj]
    return g_theta, t_cot
