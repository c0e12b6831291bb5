import os

import numpy as np
import pytest

from semipde.network import (
    NetArchitecture,
    NetworkParams,
    backward_shifted,
    backward_shifted_batch,
    forward_shifted,
    forward_shifted_batch,
    init_reference,
    load_checkpoint,
    penalty,
    penalty_grad,
    save_checkpoint,
)


def _perturbed(arch, seed, scale=0.1):
    params = init_reference(arch, seed)
    rng = np.random.default_rng(seed + 1)
    return NetworkParams(arch, params.phi + scale * rng.standard_normal(arch.n_params),
                         params.phi0, seed)


def test_init_determinism():
    arch = NetArchitecture(2, 1)
    a = init_reference(arch, 42)
    b = init_reference(arch, 42)
    assert np.array_equal(a.phi0, b.phi0)
    assert not np.array_equal(a.phi0, init_reference(arch, 43).phi0)


def test_init_bias_layout():
    arch = NetArchitecture(3, 2, (8, 8))
    params = init_reference(arch, 0)
    for i, (w_sl, b_sl, shape, _) in enumerate(arch.layer_slices()):
        b = params.phi0[b_sl]
        if i == 0:
            assert np.any(b != 0.0)  # first-layer bias is drawn
        else:
            assert np.all(b == 0.0)  # all later biases start at zero


def test_init_weight_statistics():
    # entries of the weight matrices are standard normal draws
    arch = NetArchitecture(40, 1, (128, 64))
    params = init_reference(arch, 7)
    w_sl, _, shape, _ = next(iter(arch.layer_slices()))
    entries = []
    for w_sl, b_sl, shape, _ in arch.layer_slices():
        entries.append(params.phi0[w_sl])
    entries = np.concatenate(entries)
    assert entries.size > 10_000
    assert abs(entries.mean()) < 0.05
    assert abs(entries.std() - 1.0) < 0.05


def test_layer_scaling_factor():
    arch = NetArchitecture(1, 1, (64,), power=1)
    scales = [scale for *_, scale in arch.layer_slices()]
    assert scales[0] == pytest.approx(np.sqrt(2.0 / 64.0))


def test_shifted_zero_at_reference(rng):
    arch = NetArchitecture(2, 2)
    params = init_reference(arch, 3)
    v = rng.standard_normal((50, 2))
    out = forward_shifted_batch(params, v)
    assert np.all(out == 0.0)


def test_hand_computed_small_network():
    # 1 -> 2 -> 1 with hand-set weights, ReLU
    arch = NetArchitecture(1, 1, (2,), power=1)
    phi = np.zeros(arch.n_params)
    params0 = init_reference(arch, 0)
    # layout: W0 (2x1), b0 (2), W1 (1x2), b1 (1)
    phi[:2] = [1.0, -2.0]
    phi[2:4] = [0.5, 1.0]
    phi[4:6] = [3.0, -1.0]
    phi[6] = 0.25
    params = NetworkParams(arch, phi, params0.phi0, 0)
    v = np.array([0.8])
    s0, s1 = np.sqrt(2.0 / 2.0), np.sqrt(2.0 / 1.0)
    hidden = np.maximum(s0 * (np.array([1.0, -2.0]) * 0.8 + np.array([0.5, 1.0])), 0.0)
    expected = s1 * (np.array([3.0, -1.0]) @ hidden + 0.25)
    raw_ref = None
    # shifted output subtracts the phi0 branch
    from semipde.network import _forward_raw

    raw_ref = _forward_raw(arch, params0.phi0, v.reshape(1, -1))[0][0, 0]
    got = forward_shifted(params, v)[0]
    assert got == pytest.approx(expected - raw_ref, rel=1e-14)


def test_backward_zero_cotangent(rng):
    arch = NetArchitecture(2, 1, (8, 8))
    params = _perturbed(arch, 5)
    gp, gv = backward_shifted(params, rng.standard_normal(2), np.zeros(1))
    assert np.all(gp == 0.0) and np.all(gv == 0.0)


@pytest.mark.parametrize("power", [1, 2])
def test_backward_matches_finite_differences(rng, power):
    arch = NetArchitecture(3, 2, (8, 12), power=power)
    params = _perturbed(arch, 11)
    v = rng.standard_normal(3)
    cot = rng.standard_normal(2)
    gp, gv = backward_shifted(params, v, cot)
    eps = 1e-6
    for j in rng.choice(arch.n_params, 50, replace=False):
        phi_p = params.phi.copy(); phi_p[j] += eps
        phi_m = params.phi.copy(); phi_m[j] -= eps
        fp = forward_shifted(NetworkParams(arch, phi_p, params.phi0, 0), v) @ cot
        fm = forward_shifted(NetworkParams(arch, phi_m, params.phi0, 0), v) @ cot
        fd = (fp - fm) / (2 * eps)
        assert gp[j] == pytest.approx(fd, rel=1e-5, abs=1e-9)
    for j in range(3):
        vp = v.copy(); vp[j] += eps
        vm = v.copy(); vm[j] -= eps
        fd = (forward_shifted(params, vp) - forward_shifted(params, vm)) @ cot / (2 * eps)
        assert gv[j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_directional_derivative_joint(rng):
    arch = NetArchitecture(2, 1, (16,))
    params = _perturbed(arch, 2)
    v = rng.standard_normal(2)
    cot = np.array([1.0])
    gp, _ = backward_shifted(params, v, cot)
    eps = 1e-6
    for _ in range(10):
        w = rng.standard_normal(arch.n_params)
        w /= np.linalg.norm(w)
        fp = forward_shifted(NetworkParams(arch, params.phi + eps * w, params.phi0, 0), v)
        fm = forward_shifted(NetworkParams(arch, params.phi - eps * w, params.phi0, 0), v)
        fd = float((fp - fm) @ cot) / (2 * eps)
        assert float(gp @ w) == pytest.approx(fd, rel=1e-5, abs=1e-10)


def test_relu_positive_homogeneity(rng):
    # bias-free ReLU stack scales positively homogeneously in its input
    arch = NetArchitecture(2, 1, (8, 8), power=1)
    params = _perturbed(arch, 9)
    phi = params.phi.copy()
    for _, b_sl, _, _ in arch.layer_slices():
        phi[b_sl] = 0.0
    phi0 = params.phi0.copy()
    for _, b_sl, _, _ in arch.layer_slices():
        phi0[b_sl] = 0.0
    biasfree = NetworkParams(arch, phi, phi0, 0)
    v = rng.standard_normal((5, 2))
    c = 2.7
    out1 = forward_shifted_batch(biasfree, v)
    out2 = forward_shifted_batch(biasfree, c * v)
    assert np.allclose(out2, c * out1, rtol=1e-12)


def test_penalty_and_gradient(rng):
    arch = NetArchitecture(1, 1, (4,))
    params = init_reference(arch, 1)
    assert penalty(params) == 0.0
    assert np.all(penalty_grad(params) == 0.0)
    e3 = np.zeros(arch.n_params); e3[3] = 1.0
    shifted = NetworkParams(arch, params.phi + e3, params.phi0, 1)
    assert penalty(shifted) == pytest.approx(1.0)
    assert np.allclose(penalty_grad(shifted), 2 * e3)
    rand = NetworkParams(arch, params.phi + rng.standard_normal(arch.n_params),
                         params.phi0, 1)
    g = penalty_grad(rand)
    eps = 1e-4  # penalty is exactly quadratic: no truncation error, less roundoff
    for j in rng.choice(arch.n_params, 10, replace=False):
        p = rand.phi.copy(); p[j] += eps
        m = rand.phi.copy(); m[j] -= eps
        fd = (penalty(NetworkParams(arch, p, rand.phi0, 1))
              - penalty(NetworkParams(arch, m, rand.phi0, 1))) / (2 * eps)
        assert g[j] == pytest.approx(fd, rel=1e-8, abs=1e-10)


def test_batch_matches_single(rng):
    arch = NetArchitecture(2, 2, (8,))
    params = _perturbed(arch, 21)
    v = rng.standard_normal((7, 2))
    cot = rng.standard_normal((7, 2))
    batch = forward_shifted_batch(params, v)
    for i in range(7):
        assert np.allclose(batch[i], forward_shifted(params, v[i]), atol=1e-14)
    gp, gv = backward_shifted_batch(params, v, cot)
    gp_sum = np.zeros(arch.n_params)
    for i in range(7):
        gpi, gvi = backward_shifted(params, v[i], cot[i])
        gp_sum += gpi
        assert np.allclose(gv[i], gvi, atol=1e-12)
    assert np.allclose(gp, gp_sum, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path, rng):
    arch = NetArchitecture(2, 1, (8, 8), power=2)
    params = _perturbed(arch, 4)
    path = os.path.join(tmp_path, "net.json")
    save_checkpoint(params, path)
    back = load_checkpoint(path)
    assert np.array_equal(back.phi, params.phi)
    assert np.array_equal(back.phi0, params.phi0)
    assert back.arch == params.arch
    v = rng.standard_normal((4, 2))
    assert np.array_equal(forward_shifted_batch(back, v),
                          forward_shifted_batch(params, v))
