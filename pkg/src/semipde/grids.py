"""Grids, state fields, and interpolation between grids and scattered points.

Only one spatial dimension is wired up (the desk-scale systems are all 1D);
the types carry a ``dim`` field so higher dimensions can be added without
breaking the interfaces.  Interpolation is multilinear: linear in time
between stored slices and linear in space with periodic wraparound when the
grid is periodic.  ``interpolate_adjoint`` distributes a cotangent onto the
same stencil with the same weights, so the pairing identity

    <interpolate(w), c> == <w, interpolate_adjoint(c)>

holds to machine precision for any nodal field w.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PointOutsideDomain",
    "DivergedTrajectory",
    "SpatialGrid",
    "TimeMesh",
    "StateField",
    "SpaceTimePoint",
    "interpolate",
    "interpolate_adjoint",
]


class PointOutsideDomain(ValueError):
    """Query point lies outside the space-time box."""


class DivergedTrajectory(RuntimeError):
    """Operation on a trajectory whose solve blew up."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform 1D grid on [lower, upper].

    For periodic grids the node count excludes the duplicate endpoint, so
    dx = (upper - lower) / n_nodes and nodes sit at lower + j*dx.  For
    non-periodic grids the nodes include both endpoints and
    dx = (upper - lower) / (n_nodes - 1).
    """

    n_nodes: int
    lower: float = -1.0
    upper: float = 1.0
    periodic: bool = True
    dim: int = 1

    def __post_init__(self):
        if self.dim != 1:
            raise NotImplementedError("only dim=1 grids are implemented")
        if self.n_nodes < 4:
            raise ValueError("need at least 4 nodes per axis")
        if not self.upper > self.lower:
            raise ValueError("upper bound must exceed lower bound")

    @property
    def dx(self) -> float:
        span = self.upper - self.lower
        return span / self.n_nodes if self.periodic else span / (self.n_nodes - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.lower + self.dx * np.arange(self.n_nodes)

    def locate(self, x: float):
        """Return (left node index, fractional weight of the right node)."""
        if self.periodic:
            span = self.upper - self.lower
            s = (x - self.lower) % span / self.dx
            j = int(s)
            if j >= self.n_nodes:  # guard the x == upper wrap
                j, s = 0, 0.0
            return j, s - j
        if x < self.lower - 1e-12 or x > self.upper + 1e-12:
            raise PointOutsideDomain(f"x={x} outside [{self.lower}, {self.upper}]")
        s = (min(max(x, self.lower), self.upper) - self.lower) / self.dx
        j = min(int(s), self.n_nodes - 2)
        return j, s - j

    def right_neighbor(self, j: int) -> int:
        return (j + 1) % self.n_nodes if self.periodic else j + 1


@dataclass(frozen=True)
class TimeMesh:
    """Uniform time discretization of [t0, t1] with step_count steps."""

    t0: float
    t1: float
    step_count: int

    def __post_init__(self):
        if self.step_count < 1 or not self.t1 > self.t0:
            raise ValueError("need t1 > t0 and at least one step")
        # t0 + step_count*dt must reproduce t1 (uniform mesh, no drift)
        if abs(self.t0 + self.step_count * self.dt - self.t1) > 1e-12 * max(1.0, abs(self.t1)):
            raise ValueError("inconsistent time mesh")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.step_count

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.step_count + 1)

    def locate(self, t: float):
        """Return (lower slice index, fractional weight of the upper slice)."""
        if t < self.t0 - 1e-12 or t > self.t1 + 1e-12:
            raise PointOutsideDomain(f"t={t} outside [{self.t0}, {self.t1}]")
        s = (min(max(t, self.t0), self.t1) - self.t0) / self.dt
        m = min(int(s), self.step_count - 1)
        return m, s - m


@dataclass
class StateField:
    """Nodal values of a (possibly multi-component) state on one grid."""

    grid: SpatialGrid
    values: np.ndarray  # shape (n_components, n_nodes)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.shape[1] != self.grid.n_nodes:
            raise ValueError("values must have one column per grid node")

    @property
    def n_components(self) -> int:
        return self.values.shape[0]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(frozen=True)
class SpaceTimePoint:
    """One observation location (t, x)."""

    t: float
    x: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if isinstance(self.x, (int, float)):
            object.__setattr__(self, "x", (float(self.x),))
        else:
            object.__setattr__(self, "x", tuple(float(v) for v in self.x))


def _stencil(traj, p: SpaceTimePoint):
    """Shared 4-tap (2 time x 2 space) stencil of one query point."""
    if traj.diverged:
        raise DivergedTrajectory("cannot interpolate a diverged trajectory")
    m, wt = traj.stored_mesh.locate(p.t)
    j, wx = traj.grid.locate(p.x[0])
    j1 = traj.grid.right_neighbor(j)
    return ((m, j, (1 - wt) * (1 - wx)), (m, j1, (1 - wt) * wx),
            (m + 1, j, wt * (1 - wx)), (m + 1, j1, wt * wx))


def interpolate(traj, p: SpaceTimePoint) -> np.ndarray:
    """Value of the stored solution at (t, x); exact at grid nodes."""
    out = np.zeros(traj.n_components)
    for m, j, w in _stencil(traj, p):
        out += w * traj.states[m, :, j]
    return out


def interpolate_adjoint(traj, p: SpaceTimePoint, cotangent: np.ndarray):
    """Transpose of :func:`interpolate`.

    Returns a list of (slice_index, node_index, weight) taps; the caller
    scatters ``weight * cotangent`` into its nodal cotangent field.  Weights
    per point sum to one (partition of unity).
    """
    return list(_stencil(traj, p))
