"""Fixed-architecture feedforward network and the shifted function space.

The raw network composes scaled affine layers with a rectified-power
activation a -> max(a, 0)**l:

    layer_i(z) = sqrt((l + 1) / m_{i+1}) * (W_i @ z + b_i)

with W_i of shape (m_{i+1}, m_i) and b_i of length m_{i+1}.  The function
space actually used for the unknown mechanism is the shifted one,

    f(v; phi) = raw(v; phi) - raw(v; phi_0),

where phi_0 is a frozen reference weight vector, so the space contains the
zero function at initialization and the roughness penalty is simply
``||phi - phi_0||^2``.

All weights live in one flat float64 vector with layout
[W_0 row-major, b_0, W_1, b_1, ...]; the checkpoint format mirrors this.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NetArchitecture",
    "NetworkParams",
    "init_reference",
    "forward_shifted",
    "forward_shifted_batch",
    "backward_shifted",
    "backward_shifted_batch",
    "penalty",
    "penalty_grad",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class NetArchitecture:
    """Shapes and activation power of the fixed network.

    ``widths`` lists the hidden-layer widths only; the affine maps run
    input_dim -> widths[0] -> ... -> widths[-1] -> output_dim, every one of
    them scaled by sqrt((power + 1) / fan_out).
    """

    input_dim: int
    output_dim: int
    widths: tuple[int, ...] = (16, 64, 64, 16)
    power: int = 1  # 1 = ReLU, >= 2 = RePU

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.power < 1:
            raise ValueError("activation power must be >= 1")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.widths, self.output_dim)

    @property
    def n_layers(self) -> int:
        return len(self.widths) + 1

    @property
    def n_params(self) -> int:
        dims = self.layer_dims
        return sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(self.n_layers))

    def layer_slices(self):
        """Yield (W_slice, b_slice, shape, scale) per affine layer."""
        dims = self.layer_dims
        off = 0
        for i in range(self.n_layers):
            m_in, m_out = dims[i], dims[i + 1]
            w_sl = slice(off, off + m_out * m_in)
            off += m_out * m_in
            b_sl = slice(off, off + m_out)
            off += m_out
            yield w_sl, b_sl, (m_out, m_in), np.sqrt((self.power + 1) / m_out)


@dataclass
class NetworkParams:
    """Current weights ``phi`` plus the frozen reference ``phi0``."""

    arch: NetArchitecture
    phi: np.ndarray
    phi0: np.ndarray
    seed: int = 0

    def __post_init__(self):
        n = self.arch.n_params
        if self.phi.shape != (n,) or self.phi0.shape != (n,):
            raise ValueError(f"flat weight vectors must have length {n}")
        self.phi0.setflags(write=False)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.phi.copy(), self.phi0, self.seed)


def init_reference(arch: NetArchitecture, seed: int) -> NetworkParams:
    """Draw the frozen reference weights and start the network there.

    All weight matrices and the first-layer bias are iid standard normal;
    every later bias starts at zero.  Deterministic in ``seed``.
    """
    rng = np.random.default_rng(seed)
    phi0 = np.zeros(arch.n_params)
    for i, (w_sl, b_sl, shape, _) in enumerate(arch.layer_slices()):
        phi0[w_sl] = rng.standard_normal(shape[0] * shape[1])
        if i == 0:
            phi0[b_sl] = rng.standard_normal(shape[0])
    return NetworkParams(arch, phi0.copy(), phi0, seed)


def _activation(z: np.ndarray, power: int) -> np.ndarray:
    a = np.maximum(z, 0.0)
    return a if power == 1 else a**power


def _activation_deriv(z: np.ndarray, power: int) -> np.ndarray:
    # derivative at exactly 0 is taken as 0 (subgradient choice)
    if power == 1:
        return (z > 0.0).astype(z.dtype)
    return power * np.maximum(z, 0.0) ** (power - 1)


def _forward_raw(arch: NetArchitecture, flat: np.ndarray, v: np.ndarray, keep=False):
    """Raw network on a batch ``v`` of shape (B, d); optionally keep tape."""
    a = v
    tape = [] if keep else None
    layers = list(arch.layer_slices())
    for i, (w_sl, b_sl, shape, scale) in enumerate(layers):
        w = flat[w_sl].reshape(shape)
        z = scale * (a @ w.T + flat[b_sl])
        if i < len(layers) - 1:
            if keep:
                tape.append((a, z))
            a = _activation(z, arch.power)
        else:
            if keep:
                tape.append((a, z))
            a = z
    return a, tape


def _backward_raw(arch, flat, tape, cot, want_phi=True):
    """Reverse sweep through one raw-network branch.

    Returns (grad_flat or None, grad_v), with grad_flat summed over the
    batch and grad_v per sample.
    """
    grad_flat = np.zeros(arch.n_params) if want_phi else None
    layers = list(arch.layer_slices())
    ca = cot
    for i in range(len(layers) - 1, -1, -1):
        w_sl, b_sl, shape, scale = layers[i]
        a_in, z = tape[i]
        cz = ca if i == len(layers) - 1 else ca * _activation_deriv(z, arch.power)
        if want_phi:
            grad_flat[w_sl] += (scale * (cz.T @ a_in)).ravel()
            grad_flat[b_sl] += scale * cz.sum(axis=0)
        w = flat[w_sl].reshape(shape)
        ca = scale * (cz @ w)
    return grad_flat, ca


def forward_shifted_batch(params: NetworkParams, v: np.ndarray) -> np.ndarray:
    """Shifted-space values for a batch ``v`` of shape (B, input_dim)."""
    out, _ = _forward_raw(params.arch, params.phi, v)
    ref, _ = _forward_raw(params.arch, params.phi0, v)
    return out - ref


def forward_shifted(params: NetworkParams, v: np.ndarray) -> np.ndarray:
    """Shifted-space value at a single input vector."""
    return forward_shifted_batch(params, np.asarray(v, float).reshape(1, -1))[0]


def backward_shifted_batch(params: NetworkParams, v: np.ndarray, cot: np.ndarray):
    """Reverse-mode pass over a batch.

    Returns ``(grad_phi, grad_v)`` for the scalar sum_b <f(v_b; phi), cot_b>.
    The frozen branch contributes nothing to grad_phi but does carry input
    sensitivity, so grad_v sees both branches.
    """
    arch = params.arch
    _, tape = _forward_raw(arch, params.phi, v, keep=True)
    grad_phi, gv = _backward_raw(arch, params.phi, tape, cot, want_phi=True)
    _, tape0 = _forward_raw(arch, params.phi0, v, keep=True)
    _, gv0 = _backward_raw(arch, params.phi0, tape0, cot, want_phi=False)
    return grad_phi, gv - gv0


def backward_shifted(params: NetworkParams, v: np.ndarray, cot: np.ndarray):
    """Single-input version of :func:`backward_shifted_batch`."""
    gp, gv = backward_shifted_batch(
        params, np.asarray(v, float).reshape(1, -1), np.asarray(cot, float).reshape(1, -1)
    )
    return gp, gv[0]


def penalty(params: NetworkParams) -> float:
    """Squared distance of the weights from the frozen reference."""
    d = params.phi - params.phi0
    return float(d @ d)


def penalty_grad(params: NetworkParams) -> np.ndarray:
    return 2.0 * (params.phi - params.phi0)


def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype=np.float64).tobytes()).decode()


def _unb64(s: str, n: int) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(s), dtype=np.float64).copy()
    if a.shape != (n,):
        raise ValueError("checkpoint weight vector has wrong length")
    return a


def save_checkpoint(params: NetworkParams, path: str) -> None:
    """Write a bit-exact JSON checkpoint (shapes, seed, raw weight bytes)."""
    doc = {
        "input_dim": params.arch.input_dim,
        "output_dim": params.arch.output_dim,
        "widths": list(params.arch.widths),
        "power": params.arch.power,
        "seed": params.seed,
        "phi": _b64(params.phi),
        "phi0": _b64(params.phi0),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> NetworkParams:
    with open(path) as fh:
        doc = json.load(fh)
    arch = NetArchitecture(
        input_dim=doc["input_dim"],
        output_dim=doc["output_dim"],
        widths=tuple(doc["widths"]),
        power=doc["power"],
    )
    n = arch.n_params
    return NetworkParams(arch, _unb64(doc["phi"], n), _unb64(doc["phi0"], n), doc["seed"])


def forward_raw_batch(arch: NetArchitecture, flat: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Unshifted network on a batch (used by the regression baselines)."""
    out, _ = _forward_raw(arch, flat, v)
    return out


def backward_raw_batch(arch: NetArchitecture, flat: np.ndarray, v: np.ndarray,
                       cot: np.ndarray):
    """Reverse pass of the unshifted network: (grad_flat, grad_v)."""
    _, tape = _forward_raw(arch, flat, v, keep=True)
    return _backward_raw(arch, flat, tape, cot, want_phi=True)
