import dataclasses

import numpy as np
import pytest

from semipde.grids import SpaceTimePoint, TimeMesh, interpolate
from semipde.models import F0_NONE, get_model
from semipde.solver import (
    SolverConfig,
    UnstableConfig,
    make_grid,
    make_time_mesh,
    solve,
    verify_accuracy,
)

try:
    from scipy.integrate import quad
    HAVE_SCIPY = True
except ImportError:
    HAVE_SCIPY = False


def _heat_model(theta_hi=2.0):
    m = get_model("case1")
    m.ic = lambda x: np.sin(np.pi * x)[None, :]
    m.theta_box = np.array([[0.0, theta_hi]])
    m.f0_kind = F0_NONE
    return m


def _heat_l2_error(n_nodes):
    cfg = SolverConfig(n_nodes=n_nodes)
    m = _heat_model()
    traj = solve(m, [1.0], None, cfg)
    err2 = 0.0
    cnt = 0
    for t in np.linspace(0.05, 2.5, 20):
        for x in np.linspace(-1, 1, 17):
            u = interpolate(traj, SpaceTimePoint(t, (x,)))[0]
            err2 += (u - np.exp(-np.pi**2 * t) * np.sin(np.pi * x)) ** 2
            cnt += 1
    return np.sqrt(err2 / cnt)


def test_constant_solution_for_zero_theta():
    m = get_model("case1", ic_seed=2)
    m.theta_box = np.array([[0.0, 2.0]])
    m.f0_kind = F0_NONE
    cfg = SolverConfig(n_nodes=24, min_steps=50)
    traj = solve(m, [0.0], None, cfg)
    assert np.max(np.abs(traj.states - traj.states[0])) == 0.0


def test_heat_equation_oracle_and_convergence_order():
    e64 = _heat_l2_error(64)
    e128 = _heat_l2_error(128)
    assert e64 < 1e-3
    assert 3.5 < e64 / e128 < 4.5  # second order in space


@pytest.mark.skipif(not HAVE_SCIPY, reason="needs scipy quadrature oracle")
def test_example3_integrating_factor_oracle():
    m = get_model("example3")
    theta = 1.0
    cfg = SolverConfig(min_steps=800)
    traj = solve(m, [theta], "truth", cfg)

    def g(s):
        return np.exp(s) * (1.5 + 0.5 * np.sin(2 * np.pi * s))

    for t in (0.2, 0.5, 0.8, 1.0):
        closed, _ = quad(lambda s: np.exp(theta * (t - s)) * g(s), 0.0, t,
                         epsabs=1e-12, epsrel=1e-12)
        got = interpolate(traj, SpaceTimePoint(t, (0.0,)))[0]
        assert got == pytest.approx(closed, abs=1e-6)


def test_conservation_pure_diffusion():
    m = _heat_model()
    m.ic = get_model("case1", ic_seed=9).ic
    cfg = SolverConfig(n_nodes=32)
    mesh = TimeMesh(0.0, 2.5, 1000)
    bound = cfg.c_cfl * make_grid(m, cfg).dx**2 / (2.0 * 2.0)
    if mesh.dt > bound:
        mesh = TimeMesh(0.0, 1000 * bound * 0.9, 1000)
    traj = solve(m, [1.0], None, cfg, time_mesh=mesh)
    sums = traj.states.sum(axis=(1, 2))
    rel = np.abs(sums - sums[0]) / np.abs(sums[0])
    assert rel.max() < 1e-12


def test_determinism_bitwise():
    m = get_model("case1", ic_seed=4)
    cfg = SolverConfig(n_nodes=32, min_steps=100)
    a = solve(m, [0.7], "truth", cfg)
    b = solve(m, [0.7], "truth", cfg)
    assert np.array_equal(a.states, b.states)


def test_backends_agree():
    m = get_model("case1", ic_seed=4)
    for F in (None, "truth"):
        a = solve(m, [0.7], F, SolverConfig(n_nodes=32, backend="numba"))
        b = solve(m, [0.7], F, SolverConfig(n_nodes=32, backend="numpy"))
        assert np.allclose(a.states, b.states, rtol=1e-13, atol=1e-14)


def test_diverged_flagged_not_silent():
    m = get_model("case1")
    m.ic = lambda x: np.full((1, x.size), -1.0)  # reaction blows down from -1
    cfg = SolverConfig(n_nodes=24, min_steps=200)
    traj = solve(m, [0.1], "truth", cfg)
    assert traj.diverged
    assert traj.diverged_step >= 0
    from semipde.grids import DivergedTrajectory

    with pytest.raises(DivergedTrajectory):
        interpolate(traj, SpaceTimePoint(0.1, (0.0,)))


def test_unstable_config_rejected():
    m = _heat_model()
    cfg = SolverConfig(n_nodes=64)
    with pytest.raises(UnstableConfig):
        solve(m, [1.0], None, cfg, time_mesh=TimeMesh(0.0, 2.5, 50))


def test_stage_storage_shape():
    m = get_model("case1", ic_seed=1)
    cfg = SolverConfig(n_nodes=16, min_steps=40)
    traj = solve(m, [0.5], "truth", cfg, store_stages=True)
    n_steps = traj.stored_mesh.step_count
    assert traj.stages.shape == (n_steps, 3, 1, 16)
    assert traj.states.shape == (n_steps + 1, 1, 16)


def test_store_every_strided():
    m = get_model("case1", ic_seed=1)
    cfg = SolverConfig(n_nodes=16, min_steps=40)
    mesh = make_time_mesh(m, make_grid(m, cfg), cfg)
    steps = mesh.step_count - mesh.step_count % 4
    mesh = TimeMesh(mesh.t0, mesh.t1, steps)
    full = solve(m, [0.5], "truth", cfg, time_mesh=mesh)
    strided = solve(m, [0.5], "truth", cfg, time_mesh=mesh, store_every=4)
    assert strided.states.shape[0] == steps // 4 + 1
    assert np.array_equal(strided.states[1], full.states[4])


def test_verify_accuracy_zero_for_constant():
    m = get_model("case1")
    m.ic = lambda x: np.full((1, x.size), 0.4)
    m.f0_kind = F0_NONE
    cfg = SolverConfig(n_nodes=16, min_steps=60)
    eps = verify_accuracy(m, [0.5], None, cfg, quad_shape=(8, 8))
    assert eps < 1e-13


def test_verify_accuracy_refinement_order():
    m = _heat_model()
    e_coarse = verify_accuracy(m, [1.0], None, SolverConfig(n_nodes=24), quad_shape=(12, 12))
    e_fine = verify_accuracy(m, [1.0], None, SolverConfig(n_nodes=48), quad_shape=(12, 12))
    assert 2.5 < e_coarse / e_fine < 6.0  # about 4x per doubling


def test_verify_accuracy_case1_defaults_meets_target():
    m = get_model("case1", theta0=[0.01], ic_seed=3)
    m.theta_box = np.array([[0.004, 0.02]])
    cfg = SolverConfig(n_nodes=64, eps_u_target=1e-4)
    eps = verify_accuracy(m, [0.01], "truth", cfg, quad_shape=(16, 16))
    assert eps < 1e-4


def test_trajectory_export_csv(tmp_path):
    m = get_model("example3")
    traj = solve(m, [1.0], "truth", SolverConfig(min_steps=50))
    path = tmp_path / "traj.csv"
    from semipde.solver import export_trajectory_csv

    export_trajectory_csv(traj, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,component,value"
    assert len(lines) == 1 + traj.states.shape[0] * traj.grid.n_nodes
