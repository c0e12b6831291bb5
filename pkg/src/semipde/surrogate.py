"""Tabulated mechanism: the fast evaluation path for single-feature F.

When the unknown mechanism consumes one scalar feature (u for the
reaction-diffusion systems, the march variable for the first-order model),
each solve only ever queries F along a line.  We therefore sample F on a
fixed uniform knot grid once per optimization step and let the kernels
evaluate the C1 local-cubic (Catmull-Rom) interpolant instead of the network
at every node and stage.  The interpolant is linear in the knot values, so
the adjoint sweep accumulates knot cotangents exactly and one batched
network backward pass per step recovers the weight gradient.  Gradients are
exact for the tabulated objective; the knot density makes the surrogate
itself accurate to O(h^2 |F''|), far below the noise floor.

Outside [lo, hi] the interpolant extrapolates as a constant (and reports
zero slope), keeping the objective well defined if a trajectory leaves the
declared feature box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels_numpy as _ref
from .errors import Diverged
from .network import NetworkParams, backward_shifted_batch, forward_shifted_batch

__all__ = ["MechanismTable", "build_table", "table_weight_grad"]


@dataclass
class MechanismTable:
    """Knot values of a scalar-feature mechanism, padded one cell each side."""

    values: np.ndarray      # (d_y, n_cells + 3)
    lo: float
    hi: float
    feat_kind: int          # FEAT_U0 or FEAT_T

    @property
    def n_cells(self) -> int:
        return self.values.shape[1] - 3

    @property
    def knots(self) -> np.ndarray:
        h = (self.hi - self.lo) / self.n_cells
        return self.lo + h * (np.arange(self.values.shape[1]) - 1.0)

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        """Evaluate on a feature batch (B, 1) or flat (B,) -> (B, d_y)."""
        v = np.asarray(feats, float).reshape(-1)
        return _ref.table_values(self.values, self.lo, self.hi, v)

    def __add__(self, other: "MechanismTable") -> "MechanismTable":
        if (self.values.shape != other.values.shape or self.lo != other.lo
                or self.hi != other.hi or self.feat_kind != other.feat_kind):
            raise ValueError("can only add tables on identical knot grids")
        return MechanismTable(self.values + other.values, self.lo, self.hi, self.feat_kind)


def _knots(lo: float, hi: float, n_cells: int) -> np.ndarray:
    h = (hi - lo) / n_cells
    return lo + h * (np.arange(n_cells + 3) - 1.0)


def build_table(mechanism, lo: float, hi: float, n_cells: int, d_y: int,
                feat_kind: int) -> MechanismTable:
    """Sample a mechanism (NetworkParams or feature-batch callable) at knots."""
    pts = _knots(lo, hi, n_cells)[:, None]
    if isinstance(mechanism, NetworkParams):
        vals = forward_shifted_batch(mechanism, pts)
    else:
        vals = np.asarray(mechanism(pts), dtype=np.float64)
    vals = vals.reshape(pts.shape[0], d_y)
    if not np.all(np.isfinite(vals)):
        raise Diverged("mechanism produced non-finite knot values")
    return MechanismTable(np.ascontiguousarray(vals.T), float(lo), float(hi), feat_kind)


def table_weight_grad(params: NetworkParams, table: MechanismTable,
                      knot_cotangent: np.ndarray) -> np.ndarray:
    """Chain knot cotangents (d_y, K) through the network into grad_phi."""
    pts = table.knots[:, None]
    grad_phi, _ = backward_shifted_batch(params, pts, np.ascontiguousarray(knot_cotangent.T))
    return grad_phi
