"""Declarative PDE models: parametric operator, features for the unknown
mechanism, boundary/initial conditions, and the built-in systems.

A model describes the semi-discrete evolution  du/dt = P(u; theta) + F(V)
where P is the known physical operator (linear in theta for every built-in)
and F consumes the ordered feature set V extracted nodewise from
(t, x, u, du/dx).  Built-ins:

* ``case1``       - scalar reaction-diffusion, P = theta * Lap(u), true
                    mechanism u*(1-u)
* ``case2``       - two-component reaction-diffusion with per-component
                    diffusivities and a cubic/linear reaction pair
* ``example3``    - scalar first-order linear equation marched from u(0)=0
                    with a known smooth forcing as the true mechanism
* ``example3_vec``- two-component variant, rates (beta, 2*beta)

For ``example3`` the march variable plays the role of time internally; the
solution carries no spatial structure and the grid is a stub.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .grids import SpatialGrid, StateField

__all__ = [
    "PARAM_DIFFUSION",
    "PARAM_LINEAR_ODE",
    "PARAM_CUSTOM",
    "BC_PERIODIC",
    "BC_NEUMANN",
    "F0_NONE",
    "F0_FISHER",
    "F0_FHN",
    "F0_EXAMPLE3",
    "FEAT_U0",
    "FEAT_T",
    "DivergedField",
    "Theta",
    "PdeModel",
    "laplacian",
    "laplacian_transpose",
    "first_derivative",
    "first_derivative_transpose",
    "extract_features",
    "features_batch",
    "assemble_rhs",
    "random_fourier_ic",
    "get_model",
    "register_model",
    "builtin_names",
]

# parametric-operator kinds understood by the fused kernels
PARAM_DIFFUSION = 0   # rhs_c = mult[c] * theta[idx[c]] * Lap(u_c)
PARAM_LINEAR_ODE = 1  # rhs_c = mult[c] * theta[idx[c]] * u_c
PARAM_CUSTOM = -1     # python callables, direct path only

BC_PERIODIC = 0
BC_NEUMANN = 1

# built-in true mechanisms for data generation
F0_NONE = 0
F0_FISHER = 1    # u0 * (1 - u0)
F0_FHN = 2       # (u0 - u0^3 - 5e-3 - u1, u0 - u1)
F0_EXAMPLE3 = 3  # exp(t) * (1.5 + 0.5 sin(2 pi t)) added to every component

# single-feature codes for the tabulated fast path
FEAT_U0 = 0
FEAT_T = 1


class DivergedField(RuntimeError):
    """A right-hand side evaluation produced non-finite values."""


# ---------------------------------------------------------------------------
# second-order central stencils (periodic wrap or zero-flux mirror ghosts)
# ---------------------------------------------------------------------------

def laplacian(u: np.ndarray, dx: float, bc: int = BC_PERIODIC) -> np.ndarray:
    if bc == BC_PERIODIC:
        return (np.roll(u, -1, -1) - 2.0 * u + np.roll(u, 1, -1)) / (dx * dx)
    out = np.empty_like(u)
    out[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / (dx * dx)
    out[..., 0] = 2.0 * (u[..., 1] - u[..., 0]) / (dx * dx)
    out[..., -1] = 2.0 * (u[..., -2] - u[..., -1]) / (dx * dx)
    return out


def laplacian_transpose(v: np.ndarray, dx: float, bc: int = BC_PERIODIC) -> np.ndarray:
    if bc == BC_PERIODIC:
        return laplacian(v, dx, bc)  # symmetric
    out = np.zeros_like(v)
    inv = 1.0 / (dx * dx)
    out[..., 1:-1] += -2.0 * v[..., 1:-1] * inv
    out[..., 2:] += v[..., 1:-1] * inv
    out[..., :-2] += v[..., 1:-1] * inv
    out[..., 0] += -2.0 * v[..., 0] * inv
    out[..., 1] += 2.0 * v[..., 0] * inv
    out[..., -1] += -2.0 * v[..., -1] * inv
    out[..., -2] += 2.0 * v[..., -1] * inv
    return out


def first_derivative(u: np.ndarray, dx: float, bc: int = BC_PERIODIC) -> np.ndarray:
    if bc == BC_PERIODIC:
        return (np.roll(u, -1, -1) - np.roll(u, 1, -1)) / (2.0 * dx)
    out = np.empty_like(u)
    out[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * dx)
    out[..., 0] = 0.0   # mirror ghost: zero slope at the wall
    out[..., -1] = 0.0
    return out


def first_derivative_transpose(v: np.ndarray, dx: float, bc: int = BC_PERIODIC) -> np.ndarray:
    if bc == BC_PERIODIC:
        return -first_derivative(v, dx, bc)  # antisymmetric
    out = np.zeros_like(v)
    inv = 1.0 / (2.0 * dx)
    out[..., 2:] += v[..., 1:-1] * inv
    out[..., :-2] -= v[..., 1:-1] * inv
    return out


# ---------------------------------------------------------------------------
# model description
# ---------------------------------------------------------------------------

@dataclass
class Theta:
    """Physical parameter vector constrained to a box."""

    values: np.ndarray
    box: np.ndarray  # shape (p, 2): lower/upper per coordinate

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.box = np.asarray(self.box, dtype=np.float64).reshape(-1, 2)
        if self.box.shape[0] != self.values.size:
            raise ValueError("box must have one (lo, hi) row per coordinate")
        if np.any(self.values < self.box[:, 0] - 1e-12) or np.any(
            self.values > self.box[:, 1] + 1e-12
        ):
            raise ValueError("theta outside its box")

    def project(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.box[:, 0], self.box[:, 1])


@dataclass
class PdeModel:
    """Everything the solver and estimator need to know about one system."""

    name: str
    d_y: int
    p: int
    feature_spec: tuple[str, ...]
    param_kind: int
    param_mult: np.ndarray
    param_idx: np.ndarray
    bc: int = BC_PERIODIC
    ic: Callable[[np.ndarray], np.ndarray] = None
    ic_family: Optional[Callable[[int], Callable]] = None  # seed -> ic draw
    x_lower: float = -1.0
    x_upper: float = 1.0
    t0: float = 0.0
    t1: float = 2.5
    theta0: np.ndarray = None          # reference truth for simulation
    theta_box: np.ndarray = None       # (p, 2)
    f0_kind: int = F0_NONE
    f0_callable: Optional[Callable] = None  # features (B, d) -> (B, d_y)
    f0_known: bool = False   # forcing is part of the known physics (oracle mode)
    feature_box: np.ndarray = None     # (d, 2) domain the mechanism is defined on
    diffusive: bool = True             # whether dt obeys the dx^2 bound
    # custom-operator escape hatch (direct path only)
    custom_rhs: Optional[Callable] = None        # (t, u, theta) -> (C, N)
    custom_jtvec: Optional[Callable] = None      # (t, u, theta, v) -> (C, N)
    custom_theta_vjp: Optional[Callable] = None  # (t, u, theta, cot) -> (p,)

    def __post_init__(self):
        if not self.feature_spec:
            raise ValueError("feature_spec must be non-empty")
        for tag in self.feature_spec:
            self._tag_index(tag)  # validates
        self.param_mult = np.asarray(self.param_mult, dtype=np.float64)
        self.param_idx = np.asarray(self.param_idx, dtype=np.int64)
        self.theta0 = np.asarray(self.theta0, dtype=np.float64)
        self.theta_box = np.asarray(self.theta_box, dtype=np.float64).reshape(-1, 2)
        if self.feature_box is None:
            self.feature_box = np.tile([-2.0, 2.0], (self.d, 1))
        self.feature_box = np.asarray(self.feature_box, dtype=np.float64).reshape(-1, 2)
        if self.feature_box.shape[0] != self.d:
            raise ValueError("feature_box needs one row per feature")

    @property
    def d(self) -> int:
        return len(self.feature_spec)

    def _tag_index(self, tag: str):
        if tag == "t":
            return ("t", 0)
        if tag == "x":
            return ("x", 0)
        if tag.startswith("dxu"):
            k = int(tag[3:])
        elif tag.startswith("u"):
            k = int(tag[1:])
        else:
            raise ValueError(f"unknown feature tag {tag!r}")
        if not 0 <= k < self.d_y:
            raise ValueError(f"feature tag {tag!r} references a missing component")
        return (tag[: -len(str(k))], k)

    @property
    def table_feature(self) -> Optional[int]:
        """Kernel code of the single feature when the fast path applies."""
        if self.feature_spec == ("u0",):
            return FEAT_U0
        if self.feature_spec == ("t",):
            return FEAT_T
        return None

    def make_theta(self, values=None) -> Theta:
        vals = self.theta0 if values is None else np.asarray(values, float)
        return Theta(vals.copy(), self.theta_box.copy())

    def ic_values(self, grid: SpatialGrid) -> np.ndarray:
        vals = np.atleast_2d(np.asarray(self.ic(grid.nodes), dtype=np.float64))
        if vals.shape != (self.d_y, grid.n_nodes):
            raise ValueError("initial condition returned wrong shape")
        return vals

    def parametric_rhs(self, t: float, u: np.ndarray, theta: np.ndarray, dx: float) -> np.ndarray:
        """theta-part of du/dt on nodal values ``u`` of shape (d_y, N)."""
        if self.param_kind == PARAM_DIFFUSION:
            lap = laplacian(u, dx, self.bc)
            return self.param_mult[:, None] * theta[self.param_idx][:, None] * lap
        if self.param_kind == PARAM_LINEAR_ODE:
            return self.param_mult[:, None] * theta[self.param_idx][:, None] * u
        return self.custom_rhs(t, u, theta)

    def parametric_jtvec(self, t, u, theta, v, dx) -> np.ndarray:
        """Transpose-Jacobian product of the parametric part in u."""
        if self.param_kind == PARAM_DIFFUSION:
            scaled = self.param_mult[:, None] * theta[self.param_idx][:, None] * v
            return laplacian_transpose(scaled, dx, self.bc)
        if self.param_kind == PARAM_LINEAR_ODE:
            return self.param_mult[:, None] * theta[self.param_idx][:, None] * v
        return self.custom_jtvec(t, u, theta, v)

    def parametric_theta_vjp(self, t, u, theta, cot, dx) -> np.ndarray:
        """Gradient of <parametric_rhs, cot> with respect to theta."""
        g = np.zeros(self.p)
        if self.param_kind == PARAM_DIFFUSION:
            lap = laplacian(u, dx, self.bc)
            contrib = self.param_mult * np.einsum("cn,cn->c", lap, cot)
        elif self.param_kind == PARAM_LINEAR_ODE:
            contrib = self.param_mult * np.einsum("cn,cn->c", u, cot)
        else:
            return self.custom_theta_vjp(t, u, theta, cot)
        np.add.at(g, self.param_idx, contrib)
        return g

    def f0_values(self, feats: np.ndarray) -> np.ndarray:
        """True mechanism on a feature batch (B, d) -> (B, d_y)."""
        if self.f0_kind == F0_FISHER:
            u = feats[:, 0]
            return (u * (1.0 - u))[:, None]
        if self.f0_kind == F0_FHN:
            u1, u2 = feats[:, 0], feats[:, 1]
            return np.stack([u1 - u1**3 - 5e-3 - u2, u1 - u2], axis=1)
        if self.f0_kind == F0_EXAMPLE3:
            g = np.exp(feats[:, 0]) * (1.5 + 0.5 * np.sin(2.0 * np.pi * feats[:, 0]))
            return np.repeat(g[:, None], self.d_y, axis=1)
        if self.f0_callable is not None:
            return np.asarray(self.f0_callable(feats), dtype=np.float64).reshape(
                feats.shape[0], self.d_y
            )
        return np.zeros((feats.shape[0], self.d_y))

    def with_ic(self, ic: Callable) -> "PdeModel":
        return replace(self, ic=ic)

    def with_truth(self, theta0=None, f0_callable=None, f0_kind=None) -> "PdeModel":
        out = replace(self)
        if theta0 is not None:
            out.theta0 = np.asarray(theta0, dtype=np.float64)
        if f0_callable is not None:
            out.f0_callable = f0_callable
            out.f0_kind = F0_NONE if f0_kind is None else f0_kind
        elif f0_kind is not None:
            out.f0_kind = f0_kind
        return out


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def extract_features(model: PdeModel, t: float, x_node: float, u_node, du_dx_node):
    """Feature vector at one node, in declared order.

    Spatial derivatives are computed by the solver's central stencil and
    passed in, never recomputed here.
    """
    u_node = np.atleast_1d(np.asarray(u_node, float))
    du_dx_node = np.atleast_1d(np.asarray(du_dx_node, float))
    if not (np.all(np.isfinite(u_node)) and np.all(np.isfinite(du_dx_node))):
        raise DivergedField("non-finite nodal values in feature extraction")
    out = np.empty(model.d)
    for i, tag in enumerate(model.feature_spec):
        kind, k = model._tag_index(tag)
        if kind == "t":
            out[i] = t
        elif kind == "x":
            out[i] = x_node
        elif kind == "u":
            out[i] = u_node[k]
        else:
            out[i] = du_dx_node[k]
    return out


def features_batch(model: PdeModel, t: float, x_nodes: np.ndarray, u: np.ndarray,
                   du: Optional[np.ndarray] = None) -> np.ndarray:
    """Features for all nodes at once, shape (N, d)."""
    n = x_nodes.size
    out = np.empty((n, model.d))
    for i, tag in enumerate(model.feature_spec):
        kind, k = model._tag_index(tag)
        if kind == "t":
            out[:, i] = t
        elif kind == "x":
            out[:, i] = x_nodes
        elif kind == "u":
            out[:, i] = u[k]
        else:
            out[:, i] = du[k]
    return out


def needs_du(model: PdeModel) -> bool:
    return any(tag.startswith("dxu") for tag in model.feature_spec)


def assemble_rhs(model: PdeModel, theta: np.ndarray, F: Optional[Callable],
                 t: float, fld: StateField) -> StateField:
    """Full du/dt field: parametric part plus the mechanism evaluated nodewise.

    ``F`` maps a feature batch (N, d) to (N, d_y); pass None for a zero
    mechanism.  Raises DivergedField if the result is non-finite.
    """
    grid = fld.grid
    rhs = model.parametric_rhs(t, fld.values, np.asarray(theta, float), grid.dx)
    if F is not None:
        du = first_derivative(fld.values, grid.dx, model.bc) if needs_du(model) else None
        feats = features_batch(model, t, grid.nodes, fld.values, du)
        rhs = rhs + np.asarray(F(feats)).reshape(grid.n_nodes, model.d_y).T
    if not np.all(np.isfinite(rhs)):
        raise DivergedField("right-hand side is non-finite")
    return StateField(grid, rhs)


# ---------------------------------------------------------------------------
# built-ins
# ---------------------------------------------------------------------------

def random_fourier_ic(seed: int, mean: float = 0.25, scale: float = 0.18,
                      n_modes: int = 4) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth periodic initial condition: truncated Fourier series on [-1, 1].

    a0 + sum_k a_k sin(k pi x) + b_k cos(k pi x) with a0 ~ N(mean, scale^2)
    and a_k, b_k ~ N(0, (scale/k)^2).  The positive mean offset starts
    reaction dynamics such as u*(1-u) inside the growth basin; draws whose
    dips still escape it are redrawn upstream.
    """
    rng = np.random.default_rng(seed)
    a0 = mean + scale * rng.standard_normal()
    ks = np.arange(1, n_modes + 1)
    a = (scale / ks) * rng.standard_normal(n_modes)
    b = (scale / ks) * rng.standard_normal(n_modes)

    def ic(x: np.ndarray) -> np.ndarray:
        phase = np.pi * np.outer(ks, x)
        return (a0 + a @ np.sin(phase) + b @ np.cos(phase))[None, :]

    return ic


def _pair_fourier_ic(seed: int):
    one = random_fourier_ic(seed, mean=0.0, scale=0.25)
    two = random_fourier_ic(seed + 1, mean=0.0, scale=0.25)

    def ic(x: np.ndarray) -> np.ndarray:
        return np.vstack([one(x), two(x)])

    return ic


def example3_forcing(feats: np.ndarray) -> np.ndarray:
    """Known smooth forcing e^t * f(t) with 1 <= f <= 2."""
    t = feats[:, 0]
    return (np.exp(t) * (1.5 + 0.5 * np.sin(2.0 * np.pi * t)))[:, None]


def _example3_forcing_vec(feats: np.ndarray) -> np.ndarray:
    g = example3_forcing(feats)
    return np.hstack([g, g])


def _make_case1() -> PdeModel:
    return PdeModel(
        name="case1", d_y=1, p=1, feature_spec=("u0",),
        param_kind=PARAM_DIFFUSION, param_mult=[1.0], param_idx=[0],
        ic=random_fourier_ic(0), ic_family=random_fourier_ic,
        theta0=[1.0], theta_box=[[0.05, 2.0]],
        f0_kind=F0_FISHER, feature_box=[[-0.75, 1.75]],
    )


def _make_case2() -> PdeModel:
    return PdeModel(
        name="case2", d_y=2, p=2, feature_spec=("u0", "u1"),
        param_kind=PARAM_DIFFUSION, param_mult=[1.0, 1.0], param_idx=[0, 1],
        ic=_pair_fourier_ic(0), ic_family=_pair_fourier_ic,
        theta0=[1.0, 1.0], theta_box=[[0.05, 2.0], [0.05, 2.0]],
        f0_kind=F0_FHN, feature_box=[[-2.0, 2.0], [-2.0, 2.0]],
    )


def _make_example3() -> PdeModel:
    return PdeModel(
        name="example3", d_y=1, p=1, feature_spec=("t",),
        param_kind=PARAM_LINEAR_ODE, param_mult=[1.0], param_idx=[0],
        ic=lambda x: np.zeros((1, x.size)),
        t0=0.0, t1=1.0,
        theta0=[1.0], theta_box=[[0.0, 2.0]],
        f0_kind=F0_EXAMPLE3, f0_callable=example3_forcing, f0_known=True,
        feature_box=[[0.0, 1.0]],
        diffusive=False,
    )


def _make_example3_vec() -> PdeModel:
    return PdeModel(
        name="example3_vec", d_y=2, p=1, feature_spec=("t",),
        param_kind=PARAM_LINEAR_ODE, param_mult=[1.0, 2.0], param_idx=[0, 0],
        ic=lambda x: np.zeros((2, x.size)),
        t0=0.0, t1=1.0,
        theta0=[1.0], theta_box=[[0.0, 2.0]],
        f0_kind=F0_EXAMPLE3, f0_callable=_example3_forcing_vec, f0_known=True,
        feature_box=[[0.0, 1.0]],
        diffusive=False,
    )


_REGISTRY: dict[str, Callable[[], PdeModel]] = {
    "case1": _make_case1,
    "case2": _make_case2,
    "example3": _make_example3,
    "example3_vec": _make_example3_vec,
}


def register_model(name: str, factory: Callable[[], PdeModel]) -> None:
    _REGISTRY[name] = factory


def builtin_names() -> list[str]:
    return sorted(_REGISTRY)


def get_model(name: str, theta0=None, ic_seed: Optional[int] = None) -> PdeModel:
    """Instantiate a registered model, optionally overriding truth/ic."""
    try:
        model = _REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; have {builtin_names()}") from None
    if theta0 is not None:
        model.theta0 = np.asarray(theta0, dtype=np.float64)
    if ic_seed is not None:
        if name == "case1":
            model.ic = random_fourier_ic(ic_seed)
        elif name == "case2":
            model.ic = _pair_fourier_ic(ic_seed)
        # example3 initial condition is pinned at zero by the equation
    return model
