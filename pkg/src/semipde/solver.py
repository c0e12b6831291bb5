"""Method-of-lines forward solver (classic RK4 over central stencils).

``solve`` integrates du/dt = P(u; theta) + F(V) on a uniform grid and
returns a Trajectory holding every stored time slice (and, when requested,
the three off-step RK stage states per step, which the adjoint sweep
replays).  The time step obeys dt <= c_cfl * dx^2 / (2 * theta_max * n_diff)
for diffusive models, with theta_max the largest diffusivity allowed by the
parameter box, so the discretization never changes when theta moves during
optimization.

Mechanism arguments accepted by ``solve``:

* None                  - no mechanism
* "truth"               - the model's built-in true mechanism
* NetworkParams         - the learned shifted network
* MechanismTable        - a pre-tabulated mechanism
* callable              - feature batch (B, d) -> (B, d_y)
* a list of the above   - their sum

Single-feature mechanisms run through the tabulated kernel path (numba or
numpy per SEMIPDE_BACKEND); anything else falls back to an exact direct
python loop that evaluates networks nodewise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .backend import get_kernels
from .errors import Diverged
from .grids import SpatialGrid, TimeMesh
from .models import (
    BC_PERIODIC,
    F0_NONE,
    PARAM_CUSTOM,
    PARAM_DIFFUSION,
    PdeModel,
    features_batch,
    first_derivative,
    needs_du,
)
from .network import NetworkParams, forward_shifted_batch
from .surrogate import MechanismTable, build_table

logger = logging.getLogger(__name__)

__all__ = [
    "Diverged",
    "UnstableConfig",
    "SolverConfig",
    "Trajectory",
    "make_grid",
    "make_time_mesh",
    "solve",
    "verify_accuracy",
    "export_trajectory_csv",
]


class UnstableConfig(ValueError):
    """Requested time mesh violates the stability bound."""


@dataclass(frozen=True)
class SolverConfig:
    n_nodes: int = 64
    c_cfl: float = 0.4
    eps_u_target: float = 1e-4
    min_steps: int = 400
    table_cells: int = 512
    mechanism_eval: str = "auto"  # "auto" tabulates single-feature F, "direct" never
    backend: Optional[str] = None  # None -> SEMIPDE_BACKEND / availability

    def __post_init__(self):
        if not 0.0 < self.c_cfl <= 1.0:
            raise ValueError("c_cfl must lie in (0, 1]")
        if self.n_nodes < 4:
            raise ValueError("need at least 4 spatial nodes")
        if self.mechanism_eval not in ("auto", "direct"):
            raise ValueError("mechanism_eval must be 'auto' or 'direct'")


Mechanism = Union[None, str, NetworkParams, MechanismTable, Callable, Sequence]


@dataclass
class _ResolvedMechanism:
    """How one solve evaluates F: kernel codes or direct callables."""

    path: str = "kernel"                 # "kernel" | "direct"
    f0_kind: int = F0_NONE
    table: Optional[MechanismTable] = None
    direct_parts: list = field(default_factory=list)  # NetworkParams or callables
    feat_kind: int = -1


@dataclass
class Trajectory:
    """Dense stored solution plus everything the adjoint sweep needs."""

    model: PdeModel
    theta: np.ndarray
    grid: SpatialGrid
    stored_mesh: TimeMesh
    dt: float
    store_every: int
    states: np.ndarray            # (n_stored + 1, d_y, N)
    stages: Optional[np.ndarray]  # (n_steps, 3, d_y, N) when retained
    diverged: bool
    diverged_step: int
    mechanism: _ResolvedMechanism

    @property
    def n_components(self) -> int:
        return self.states.shape[1]

    @property
    def n_steps(self) -> int:
        return self.stored_mesh.step_count * self.store_every

    def final_state(self) -> np.ndarray:
        return self.states[-1]


def make_grid(model: PdeModel, config: SolverConfig) -> SpatialGrid:
    n = 4 if model.param_kind != PARAM_DIFFUSION and not model.diffusive else config.n_nodes
    return SpatialGrid(n, model.x_lower, model.x_upper,
                       periodic=model.bc == BC_PERIODIC)


def stability_dt_bound(model: PdeModel, grid: SpatialGrid, config: SolverConfig) -> float:
    """Largest admissible dt for the declared parameter box."""
    if model.diffusive and model.param_kind == PARAM_DIFFUSION:
        theta_max = float(np.max(model.theta_box[model.param_idx, 1] * np.abs(model.param_mult)))
        n_diff = len(model.param_mult)
        return config.c_cfl * grid.dx**2 / (2.0 * theta_max * n_diff)
    return math.inf


def make_time_mesh(model: PdeModel, grid: SpatialGrid, config: SolverConfig) -> TimeMesh:
    span = model.t1 - model.t0
    bound = stability_dt_bound(model, grid, config)
    steps = config.min_steps
    if math.isfinite(bound):
        steps = max(steps, int(math.ceil(span / bound)))
    return TimeMesh(model.t0, model.t1, steps)


def _neighbors(grid: SpatialGrid):
    n = grid.n_nodes
    idx = np.arange(n, dtype=np.int64)
    if grid.periodic:
        return (idx - 1) % n, (idx + 1) % n
    jm = np.maximum(idx - 1, 0)
    jp = np.minimum(idx + 1, n - 1)
    jm[0], jp[-1] = 1, n - 2  # mirror ghosts: zero flux at the walls
    return jm, jp


def _resolve_mechanism(model: PdeModel, F: Mechanism, config: SolverConfig) -> _ResolvedMechanism:
    res = _ResolvedMechanism()
    parts = list(F) if isinstance(F, (list, tuple)) else [F]
    if model.f0_known and "truth" not in parts:
        parts.append("truth")  # known forcing always rides along
    single = model.table_feature
    tabulate = config.mechanism_eval == "auto" and single is not None
    if single is not None:
        res.feat_kind = single
        lo, hi = model.feature_box[0]
    for part in parts:
        if part is None:
            continue
        if isinstance(part, str):
            if part != "truth":
                raise ValueError(f"unknown mechanism spec {part!r}")
            if model.f0_kind != F0_NONE:
                res.f0_kind = model.f0_kind
            elif model.f0_callable is not None:
                part = model.f0_callable  # fall through to callable handling
            else:
                continue
            if isinstance(part, str):
                continue
        if isinstance(part, MechanismTable):
            res.table = part if res.table is None else res.table + part
            continue
        if tabulate:
            tab = build_table(part, lo, hi, config.table_cells, model.d_y, single)
            res.table = tab if res.table is None else res.table + tab
        else:
            res.direct_parts.append(part)
    if res.direct_parts or model.param_kind == PARAM_CUSTOM:
        res.path = "direct"
        if res.table is not None:
            res.direct_parts.append(res.table)
            res.table = None
    return res


def _direct_solve(model, theta, mesh: TimeMesh, grid: SpatialGrid,
                  mech: _ResolvedMechanism, store_stages: bool, store_every: int):
    """Exact python RK4 loop for mechanisms the kernels cannot express."""
    dx = grid.dx
    nodes = grid.nodes
    u = model.ic_values(grid)
    dt = mesh.dt
    n_steps = mesh.step_count
    n_stored = n_steps // store_every
    states = np.empty((n_stored + 1,) + u.shape)
    states[0] = u
    stages = np.empty((n_steps, 3) + u.shape) if store_stages else None

    def rhs(state, t):
        out = model.parametric_rhs(t, state, theta, dx)
        if mech.f0_kind != F0_NONE or mech.direct_parts:
            du = first_derivative(state, dx, model.bc) if needs_du(model) else None
            feats = features_batch(model, t, nodes, state, du)
            if mech.f0_kind != F0_NONE:
                out = out + model.f0_values(feats).T
            for part in mech.direct_parts:
                if isinstance(part, NetworkParams):
                    out = out + forward_shifted_batch(part, feats).T
                else:
                    vals = np.asarray(part(feats), float).reshape(feats.shape[0], model.d_y)
                    out = out + vals.T
        return out

    diverged = -1
    for step in range(n_steps):
        t = mesh.t0 + step * dt
        k1 = rhs(u, t)
        s2 = u + 0.5 * dt * k1
        k2 = rhs(s2, t + 0.5 * dt)
        s3 = u + 0.5 * dt * k2
        k3 = rhs(s3, t + 0.5 * dt)
        s4 = u + dt * k3
        k4 = rhs(s4, t + dt)
        if store_stages:
            stages[step, 0], stages[step, 1], stages[step, 2] = s2, s3, s4
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(u.sum()):
            diverged = step
            break
        if (step + 1) % store_every == 0:
            states[(step + 1) // store_every] = u
    return states, stages, diverged


def solve(model: PdeModel, theta, F: Mechanism, config: SolverConfig,
          time_mesh: Optional[TimeMesh] = None, store_stages: bool = False,
          store_every: int = 1) -> Trajectory:
    """Integrate the model and return the stored trajectory.

    Divergent runs are returned flagged (``trajectory.diverged``), never
    silently; interpolation on them raises.  ``store_stages`` is required
    for a later adjoint sweep and implies store_every == 1.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.shape != (model.p,):
        raise ValueError(f"theta must have length {model.p}")
    tol = 0.1 * (model.theta_box[:, 1] - model.theta_box[:, 0])
    if np.any(theta < model.theta_box[:, 0] - tol) or np.any(theta > model.theta_box[:, 1] + tol):
        raise ValueError("theta outside its declared box")
    grid = make_grid(model, config)
    mesh = time_mesh or make_time_mesh(model, grid, config)
    bound = stability_dt_bound(model, grid, config)
    if mesh.dt > bound * (1.0 + 1e-9):
        raise UnstableConfig(f"dt={mesh.dt:.3e} exceeds stability bound {bound:.3e}")
    if store_stages and store_every != 1:
        raise ValueError("stage storage requires store_every=1")
    if mesh.step_count % store_every != 0:
        raise ValueError("store_every must divide the step count")

    mech = _resolve_mechanism(model, F, config)
    if mech.path == "direct":
        states, stages, dvg = _direct_solve(model, theta, mesh, grid, mech,
                                            store_stages, store_every)
    else:
        kern = get_kernels(config.backend)
        jm, jp = _neighbors(grid)
        table = mech.table.values if mech.table is not None else np.zeros((model.d_y, 0))
        f_lo, f_hi = (mech.table.lo, mech.table.hi) if mech.table is not None else (0.0, 1.0)
        states, stages, dvg = kern.rk4_solve(
            np.ascontiguousarray(model.ic_values(grid)), grid.dx, mesh.dt,
            mesh.step_count, store_every, store_stages, jm, jp,
            model.param_kind, model.param_mult, model.param_idx, theta,
            mech.f0_kind, mech.feat_kind, np.ascontiguousarray(table),
            f_lo, f_hi, mesh.t0)
        if not store_stages:
            stages = None

    stored_mesh = TimeMesh(mesh.t0, mesh.t1, mesh.step_count // store_every)
    return Trajectory(
        model=model, theta=theta.copy(), grid=grid, stored_mesh=stored_mesh,
        dt=mesh.dt, store_every=store_every, states=states, stages=stages,
        diverged=dvg >= 0, diverged_step=int(dvg), mechanism=mech,
    )


def verify_accuracy(model: PdeModel, theta, F: Mechanism, config: SolverConfig,
                    quad_shape=(48, 48)) -> float:
    """Richardson-style numerical-error estimate.

    Solves at (N, dt) and (2N, dt/4) and reports the root-mean-square
    difference on a midpoint quadrature grid as the eps_u proxy; warns when
    it exceeds the configured target.
    """
    from .grids import SpaceTimePoint, interpolate

    coarse = solve(model, theta, F, config)
    fine_cfg = replace(config, n_nodes=2 * config.n_nodes, min_steps=4 * config.min_steps)
    fine = solve(model, theta, F, fine_cfg)
    if coarse.diverged or fine.diverged:
        raise Diverged("accuracy check solve diverged")
    nt, nx = quad_shape
    ts = model.t0 + (np.arange(nt) + 0.5) / nt * (model.t1 - model.t0)
    xs = model.x_lower + (np.arange(nx) + 0.5) / nx * (model.x_upper - model.x_lower)
    err2 = 0.0
    for t in ts:
        for x in xs:
            p = SpaceTimePoint(t, (x,))
            d = interpolate(coarse, p) - interpolate(fine, p)
            err2 += float(d @ d)
    eps = math.sqrt(err2 / (nt * nx))
    if eps > config.eps_u_target:
        logger.warning("estimated eps_u %.3e above target %.3e", eps, config.eps_u_target)
    return eps


def export_trajectory_csv(traj: Trajectory, path: str) -> None:
    """Write (t, x, component, value) rows for plotting."""
    times = traj.stored_mesh.times
    xs = traj.grid.nodes
    with open(path, "w") as fh:
        fh.write("t,x,component,value\n")
        for m, t in enumerate(times):
            for c in range(traj.n_components):
                for j, x in enumerate(xs):
                    fh.write(f"{t:.17g},{x:.17g},{c},{traj.states[m, c, j]:.17g}\n")
