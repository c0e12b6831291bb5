import numpy as np
import pytest

from semipde.grids import SpatialGrid, StateField
from semipde.models import (
    BC_NEUMANN,
    BC_PERIODIC,
    Theta,
    assemble_rhs,
    builtin_names,
    extract_features,
    features_batch,
    first_derivative,
    first_derivative_transpose,
    get_model,
    laplacian,
    laplacian_transpose,
    random_fourier_ic,
    register_model,
)
from semipde.solver import SolverConfig, solve


def test_registry():
    names = builtin_names()
    for expected in ("case1", "case2", "example3", "example3_vec"):
        assert expected in names
    with pytest.raises(KeyError):
        get_model("nope")


def test_theta_box():
    th = Theta([1.0], [[0.0, 2.0]])
    assert np.allclose(th.project(np.array([5.0])), [2.0])
    with pytest.raises(ValueError):
        Theta([3.0], [[0.0, 2.0]])


def test_extract_features_trivial():
    m = get_model("case1")
    assert np.allclose(extract_features(m, 0.3, 0.1, [0.3], [0.0]), [0.3])
    m2 = get_model("case2")
    assert np.allclose(extract_features(m2, 0.0, 0.0, [0.1, -0.2], [0.0, 0.0]),
                       [0.1, -0.2])


def test_extract_features_with_derivative_tag(case1):
    import dataclasses

    m = dataclasses.replace(case1, feature_spec=("x", "u0", "dxu0"),
                            feature_box=np.array([[-1.0, 1.0], [-2.0, 2.0], [-9.0, 9.0]]))
    # u(x) = x^2 on a non-periodic grid; central stencil is exact on quadratics
    grid = SpatialGrid(17, 0.0, 1.0, periodic=False)
    u = (grid.nodes**2)[None, :]
    du = first_derivative(u, grid.dx, BC_NEUMANN)
    j = int(np.argmin(np.abs(grid.nodes - 0.5)))
    feats = extract_features(m, 0.0, grid.nodes[j], u[:, j], du[:, j])
    assert feats[0] == pytest.approx(0.5)
    assert feats[1] == pytest.approx(0.25)
    assert feats[2] == pytest.approx(1.0, abs=1e-12)


def test_assemble_rhs_zero_case(case1):
    import dataclasses

    m = dataclasses.replace(case1, theta_box=np.array([[0.0, 2.0]]))
    grid = SpatialGrid(32)
    fld = StateField(grid, random_fourier_ic(3)(grid.nodes))
    rhs = assemble_rhs(m, np.array([0.0]), None, 0.0, fld)
    assert np.all(rhs.values == 0.0)


def test_assemble_rhs_sin_laplacian(case1):
    grid = SpatialGrid(128)
    fld = StateField(grid, np.sin(np.pi * grid.nodes)[None, :])
    rhs = assemble_rhs(case1, np.array([1.0]), None, 0.0, fld)
    expected = -np.pi**2 * np.sin(np.pi * grid.nodes)
    assert np.max(np.abs(rhs.values[0] - expected)) < np.pi**4 / 12 * grid.dx**2 * 1.1


def test_assemble_rhs_matches_reference_time_derivative():
    # d/dt of the true fine-grid solution vs assemble_rhs at a snapshot
    cfg = SolverConfig(n_nodes=96, c_cfl=0.6, min_steps=400)
    m = get_model("case1", theta0=[0.02], ic_seed=5)
    traj = solve(m, [0.02], "truth", cfg)
    k = traj.states.shape[0] // 2
    dt = traj.stored_mesh.dt
    dudt_fd = (traj.states[k + 1] - traj.states[k - 1]) / (2 * dt)
    fld = StateField(traj.grid, traj.states[k])
    rhs = assemble_rhs(m, np.array([0.02]), m.f0_values, 0.0, fld)
    assert np.max(np.abs(rhs.values - dudt_fd)) < 5e-4


def test_rhs_linear_in_theta(rng):
    for name in ("case1", "case2", "example3"):
        m = get_model(name)
        grid = SpatialGrid(24, m.x_lower, m.x_upper, periodic=m.bc == BC_PERIODIC)
        u = rng.standard_normal((m.d_y, grid.n_nodes))
        th1 = m.theta_box[:, 0] * 0.7 + m.theta_box[:, 1] * 0.3
        th2 = m.theta_box[:, 0] * 0.2 + m.theta_box[:, 1] * 0.8
        a, b = 0.35, 0.65
        r1 = m.parametric_rhs(0.0, u, th1, grid.dx)
        r2 = m.parametric_rhs(0.0, u, th2, grid.dx)
        rc = m.parametric_rhs(0.0, u, a * th1 + b * th2, grid.dx)
        assert np.allclose(rc, a * r1 + b * r2, rtol=1e-12, atol=1e-13)


def test_periodic_diffusion_sum_zero(rng):
    grid = SpatialGrid(64)
    u = rng.standard_normal((1, 64))
    lap = laplacian(u, grid.dx, BC_PERIODIC)
    assert abs(lap.sum()) < 1e-9 * np.abs(lap).max()


def test_case2_constant_second_component():
    m = get_model("case2")
    feats = np.array([[0.37, 0.37]])
    vals = m.f0_values(feats)
    assert vals[0, 1] == 0.0  # f2(u, u) = 0 exactly
    assert vals[0, 0] == pytest.approx(0.37 - 0.37**3 - 5e-3 - 0.37)


def test_example3_presets():
    m = get_model("example3")
    assert m.d_y == 1 and m.p == 1 and m.feature_spec == ("t",)
    mv = get_model("example3_vec")
    assert mv.d_y == 2 and mv.p == 1
    u = np.ones((2, 4))
    rhs = mv.parametric_rhs(0.0, u, np.array([1.0]), 0.1)
    assert np.allclose(rhs[0], 1.0) and np.allclose(rhs[1], 2.0)  # rates (b, 2b)


def test_stencil_transposes_are_adjoint(rng):
    for bc in (BC_PERIODIC, BC_NEUMANN):
        u = rng.standard_normal((2, 16))
        v = rng.standard_normal((2, 16))
        dx = 0.13
        lhs = np.sum(laplacian(u, dx, bc) * v)
        rhs = np.sum(u * laplacian_transpose(v, dx, bc))
        assert lhs == pytest.approx(rhs, rel=1e-12)
        lhs = np.sum(first_derivative(u, dx, bc) * v)
        rhs = np.sum(u * first_derivative_transpose(v, dx, bc))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_features_batch_matches_pointwise(rng):
    m = get_model("case2")
    grid = SpatialGrid(8)
    u = rng.standard_normal((2, 8))
    feats = features_batch(m, 0.5, grid.nodes, u, None)
    for j in range(8):
        single = extract_features(m, 0.5, grid.nodes[j], u[:, j], [0.0, 0.0])
        assert np.allclose(feats[j], single)


def test_register_custom_model(case1):
    import dataclasses

    register_model("custom_copy", lambda: dataclasses.replace(get_model("case1")))
    got = get_model("custom_copy")
    assert got.d_y == case1.d_y


def test_fourier_ic_reproducible():
    a = random_fourier_ic(7)(np.linspace(-1, 1, 33))
    b = random_fourier_ic(7)(np.linspace(-1, 1, 33))
    assert np.array_equal(a, b)
    c = random_fourier_ic(8)(np.linspace(-1, 1, 33))
    assert not np.array_equal(a, c)
