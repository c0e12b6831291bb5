import dataclasses

import numpy as np
import pytest

from semipde.adjoint import ObservationSet, loss_and_grad, predict_points
from semipde.grids import SpaceTimePoint
from semipde.models import get_model
from semipde.network import NetArchitecture, NetworkParams, init_reference
from semipde.solver import SolverConfig, solve


def _setup(n=40, seed=5, widths=(8, 16, 8), phi_scale=0.1, model=None):
    rng = np.random.default_rng(seed)
    m = model or get_model("case1", theta0=[0.01], ic_seed=3)
    if model is None:
        m.theta_box = np.array([[0.002, 0.05]])
    arch = NetArchitecture(m.d, m.d_y, widths)
    base = init_reference(arch, seed)
    params = NetworkParams(arch, base.phi + phi_scale * rng.standard_normal(arch.n_params),
                           base.phi0, seed)
    pts = [SpaceTimePoint(rng.uniform(m.t0, m.t1), (rng.uniform(m.x_lower, m.x_upper),))
           for _ in range(n)]
    y = rng.normal(0.3, 0.25, (n, m.d_y))
    return m, params, pts, y, rng


def test_zero_residual_zero_gradient(small_solver):
    m, params, pts, _, _ = _setup()
    cfg = SolverConfig(n_nodes=24, min_steps=80)
    theta = np.array([0.01])
    traj = solve(m, theta, params, cfg)
    y = predict_points(traj, pts)  # residuals vanish by construction
    lg = loss_and_grad(m, theta, params, pts, y, 0.0, cfg)
    assert lg.loss == pytest.approx(0.0, abs=1e-22)
    assert np.allclose(lg.grad_theta, 0.0, atol=1e-12)
    assert np.allclose(lg.grad_phi, 0.0, atol=1e-12)


def test_penalty_only_gradient_when_residuals_vanish():
    m, params, pts, _, _ = _setup()
    cfg = SolverConfig(n_nodes=24, min_steps=80)
    theta = np.array([0.01])
    y = predict_points(solve(m, theta, params, cfg), pts)
    lam = 3e-3
    lg = loss_and_grad(m, theta, params, pts, y, lam, cfg)
    assert np.allclose(lg.grad_phi, 2 * lam * (params.phi - params.phi0), atol=1e-12)


def test_residual_doubling_doubles_data_gradient():
    m, params, pts, y, _ = _setup()
    cfg = SolverConfig(n_nodes=24, min_steps=80)
    theta = np.array([0.01])
    preds = predict_points(solve(m, theta, params, cfg), pts)
    y2 = preds - 2.0 * (preds - y)  # doubles every residual
    g1 = loss_and_grad(m, theta, params, pts, y, 0.0, cfg)
    g2 = loss_and_grad(m, theta, params, pts, y2, 0.0, cfg)
    assert np.allclose(g2.grad_theta, 2 * g1.grad_theta, rtol=1e-10)
    assert np.allclose(g2.grad_phi, 2 * g1.grad_phi, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("mode", ["auto", "direct"])
def test_gradients_match_finite_differences(mode):
    m, params, pts, y, rng = _setup(n=25)
    cfg = SolverConfig(n_nodes=16, min_steps=60, mechanism_eval=mode)
    theta = np.array([0.012])
    lam = 1e-4
    lg = loss_and_grad(m, theta, params, pts, y, lam, cfg)
    arch = params.arch
    eps = 1e-6
    n_dirs = 12 if mode == "auto" else 5
    for _ in range(n_dirs):
        dth = rng.standard_normal(1)
        dph = rng.standard_normal(arch.n_params)
        norm = np.sqrt(dth @ dth + dph @ dph)
        dth, dph = dth / norm, dph / norm

        def loss_at(s):
            p = NetworkParams(arch, params.phi + s * eps * dph, params.phi0, 0)
            return loss_and_grad(m, theta + s * eps * dth, p, pts, y, lam, cfg).loss

        fd = (loss_at(1.0) - loss_at(-1.0)) / (2 * eps)
        an = float(lg.grad_theta @ dth + lg.grad_phi @ dph)
        assert an == pytest.approx(fd, rel=1e-5, abs=1e-11)


def test_gradient_example3_against_closed_form():
    # single observation at the endpoint; F pinned to zero:
    # dL/dtheta = -2 (y - u(1)) du/dtheta with u, du/dtheta from quadrature
    pytest.importorskip("scipy")
    from scipy.integrate import quad

    m = get_model("example3")
    theta = np.array([0.9])
    cfg = SolverConfig(min_steps=1600)
    pts = [SpaceTimePoint(1.0, (0.0,))]
    y = np.array([[2.0]])
    # the known forcing rides along automatically (oracle mode)
    lg = loss_and_grad(m, theta, None, pts, y, 0.0, cfg)

    def g(s):
        return np.exp(s) * (1.5 + 0.5 * np.sin(2 * np.pi * s))

    u1, _ = quad(lambda s: np.exp(theta[0] * (1 - s)) * g(s), 0, 1,
                 epsabs=1e-13, epsrel=1e-13)
    du1, _ = quad(lambda s: (1 - s) * np.exp(theta[0] * (1 - s)) * g(s), 0, 1,
                  epsabs=1e-13, epsrel=1e-13)
    expected = -2.0 * (2.0 - u1) * du1
    assert lg.grad_theta[0] == pytest.approx(expected, rel=1e-6)


def test_observation_set_roundtrip(rng):
    m = get_model("case1", ic_seed=2)
    cfg = SolverConfig(n_nodes=24, min_steps=60)
    traj = solve(m, [0.5], "truth", cfg)
    pts = [SpaceTimePoint(rng.uniform(0, 2.5), (rng.uniform(-1, 1),)) for _ in range(30)]
    obs = ObservationSet(traj, pts)
    from semipde.grids import interpolate

    direct = np.array([interpolate(traj, p) for p in pts])
    assert np.allclose(obs.predict(traj), direct, atol=1e-13)


def test_injection_partition(rng):
    m = get_model("case1", ic_seed=2)
    cfg = SolverConfig(n_nodes=16, min_steps=50)
    traj = solve(m, [0.5], "truth", cfg)
    pts = [SpaceTimePoint(rng.uniform(0, 2.5), (rng.uniform(-1, 1),)) for _ in range(17)]
    obs = ObservationSet(traj, pts)
    cot = rng.standard_normal((17, 1))
    ptr, comp, node, w = obs.injections(cot, traj.stored_mesh.step_count)
    assert ptr[-1] == 17 * 4
    assert w.sum() == pytest.approx(cot.sum(), rel=1e-12)  # weights sum to one per point


def test_case2_direct_adjoint_fd():
    m = get_model("case2", ic_seed=1)
    m.theta_box = np.array([[0.05, 2.0], [0.05, 2.0]])
    rng = np.random.default_rng(0)
    arch = NetArchitecture(2, 2, (6, 6))
    base = init_reference(arch, 2)
    params = NetworkParams(arch, base.phi + 0.05 * rng.standard_normal(arch.n_params),
                           base.phi0, 2)
    cfg = SolverConfig(n_nodes=12, min_steps=400, c_cfl=0.9)
    pts = [SpaceTimePoint(rng.uniform(0, 2.5), (rng.uniform(-1, 1),)) for _ in range(12)]
    y = rng.normal(0.0, 0.3, (12, 2))
    theta = np.array([0.4, 0.6])
    lg = loss_and_grad(m, theta, params, pts, y, 1e-4, cfg)
    eps = 1e-6
    for _ in range(3):
        dth = rng.standard_normal(2)
        dph = rng.standard_normal(arch.n_params)
        norm = np.sqrt(dth @ dth + dph @ dph)
        dth, dph = dth / norm, dph / norm

        def loss_at(s):
            p = NetworkParams(arch, params.phi + s * eps * dph, params.phi0, 0)
            return loss_and_grad(m, theta + s * eps * dth, p, pts, y, 1e-4, cfg).loss

        fd = (loss_at(1.0) - loss_at(-1.0)) / (2 * eps)
        an = float(lg.grad_theta @ dth + lg.grad_phi @ dph)
        assert an == pytest.approx(fd, rel=2e-5, abs=1e-11)
