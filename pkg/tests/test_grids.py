import numpy as np
import pytest

from semipde.grids import (
    PointOutsideDomain,
    SpaceTimePoint,
    SpatialGrid,
    TimeMesh,
    interpolate,
    interpolate_adjoint,
)
from semipde.models import get_model
from semipde.solver import SolverConfig, solve


def _flat_trajectory(values, periodic=True, t0=0.0, t1=1.0):
    """Minimal stand-in trajectory wrapping a (M+1, C, N) state array."""

    class T:
        pass

    t = T()
    n = values.shape[2]
    t.states = values
    t.grid = SpatialGrid(n, -1.0, 1.0, periodic=periodic)
    t.stored_mesh = TimeMesh(t0, t1, values.shape[0] - 1)
    t.diverged = False
    t.n_components = values.shape[1]
    return t


def test_grid_invariants():
    with pytest.raises(ValueError):
        SpatialGrid(3)
    with pytest.raises(ValueError):
        SpatialGrid(8, 1.0, -1.0)
    g = SpatialGrid(8)
    assert g.dx == pytest.approx(0.25)
    assert g.nodes[0] == -1.0 and g.nodes[-1] == pytest.approx(1.0 - g.dx)
    gn = SpatialGrid(9, periodic=False)
    assert gn.dx == pytest.approx(0.25)
    assert gn.nodes[-1] == pytest.approx(1.0)


def test_time_mesh_consistency():
    mesh = TimeMesh(0.0, 2.5, 1000)
    assert mesh.t0 + mesh.step_count * mesh.dt == pytest.approx(2.5, rel=1e-12)
    with pytest.raises(ValueError):
        TimeMesh(0.0, 0.0, 10)


def test_interpolate_nodal_identity(rng):
    vals = rng.standard_normal((4, 1, 8))
    traj = _flat_trajectory(vals)
    mesh, grid = traj.stored_mesh, traj.grid
    for m in range(4):
        for j in range(8):
            p = SpaceTimePoint(mesh.times[m], (grid.nodes[j],))
            assert interpolate(traj, p)[0] == pytest.approx(vals[m, 0, j], abs=1e-14)


def test_interpolate_constant_field():
    traj = _flat_trajectory(np.full((3, 2, 8), 0.7))
    out = interpolate(traj, SpaceTimePoint(0.37, (0.123,)))
    assert np.allclose(out, 0.7, atol=1e-15)


def test_interpolate_linear_midpoint():
    # u(t, x) = x on a non-periodic grid: midpoint between nodes gives the mean
    grid_vals = np.linspace(-1, 1, 9)
    traj = _flat_trajectory(np.tile(grid_vals, (3, 1, 1)), periodic=False)
    x_mid = 0.5 * (grid_vals[2] + grid_vals[3])
    out = interpolate(traj, SpaceTimePoint(0.4, (x_mid,)))
    assert out[0] == pytest.approx(0.5 * (grid_vals[2] + grid_vals[3]), abs=1e-14)


def test_interpolation_affine_exact(rng):
    # affine in x and t is reproduced exactly within a cell
    grid = SpatialGrid(16, periodic=False)
    times = np.linspace(0.0, 1.0, 5)
    vals = np.empty((5, 1, 16))
    a, b, c = 0.3, -0.8, 0.25
    for m, t in enumerate(times):
        vals[m, 0] = a + b * grid.nodes + c * t
    traj = _flat_trajectory(vals, periodic=False)
    for _ in range(100):
        t = rng.uniform(0, 1)
        x = rng.uniform(-1, 1)
        out = interpolate(traj, SpaceTimePoint(t, (x,)))[0]
        assert out == pytest.approx(a + b * x + c * t, rel=1e-12, abs=1e-12)


def test_periodic_wraparound(rng):
    vals = rng.standard_normal((3, 1, 8))
    traj = _flat_trajectory(vals)
    lo = interpolate(traj, SpaceTimePoint(0.5, (-1.0,)))
    hi = interpolate(traj, SpaceTimePoint(0.5, (1.0,)))  # wraps to the same node
    assert lo[0] == pytest.approx(hi[0], abs=1e-15)


def test_point_outside_domain(rng):
    traj = _flat_trajectory(rng.standard_normal((3, 1, 8)))
    with pytest.raises(PointOutsideDomain):
        interpolate(traj, SpaceTimePoint(2.0, (0.0,)))


def test_diverged_trajectory_rejected(rng):
    traj = _flat_trajectory(rng.standard_normal((3, 1, 8)))
    traj.diverged = True
    from semipde.grids import DivergedTrajectory

    with pytest.raises(DivergedTrajectory):
        interpolate(traj, SpaceTimePoint(0.5, (0.0,)))


def test_adjoint_identity_node_cotangent(rng):
    traj = _flat_trajectory(rng.standard_normal((3, 1, 8)))
    p = SpaceTimePoint(traj.stored_mesh.times[1], (traj.grid.nodes[3],))
    taps = interpolate_adjoint(traj, p, np.ones(1))
    weights = {(m, j): w for m, j, w in taps}
    assert weights[(1, 3)] == pytest.approx(1.0)
    assert sum(w for w in weights.values()) == pytest.approx(1.0)


def test_adjoint_pairing_identity(rng):
    # <interpolate(w), c> == <w, interpolate_adjoint(c)> on random triples
    vals = rng.standard_normal((5, 2, 12))
    traj = _flat_trajectory(vals)
    worst = 0.0
    for _ in range(1000):
        w = rng.standard_normal(vals.shape)
        c = rng.standard_normal(2)
        p = SpaceTimePoint(rng.uniform(0, 1), (rng.uniform(-1, 1),))
        wtraj = _flat_trajectory(w)
        lhs = float(interpolate(wtraj, p) @ c)
        rhs = 0.0
        for m, j, weight in interpolate_adjoint(traj, p, c):
            rhs += float(w[m, :, j] @ (weight * c))
        denom = max(abs(lhs), 1e-12)
        worst = max(worst, abs(lhs - rhs) / denom)
    assert worst < 1e-13


def test_partition_of_unity(rng):
    traj = _flat_trajectory(rng.standard_normal((4, 1, 8)))
    for _ in range(50):
        p = SpaceTimePoint(rng.uniform(0, 1), (rng.uniform(-1, 1),))
        taps = interpolate_adjoint(traj, p, np.ones(1))
        assert sum(w for _, _, w in taps) == pytest.approx(1.0, abs=1e-12)


def test_solver_trajectory_interpolates(small_solver):
    model = get_model("case1")
    traj = solve(model, [0.5], None, small_solver)
    mid = interpolate(traj, SpaceTimePoint(1.2, (0.3,)))
    assert np.isfinite(mid).all()
