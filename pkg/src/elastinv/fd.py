"""Finite-difference derivatives and the static-equilibrium residual.

Central differences in the interior, first-order two-point differences on the
edges (corners use the one-sided rule in each direction independently).
Arrays are indexed ``[..., j, i]`` with ``x`` along the last axis.  The same
functions accept autodiff tensors, in which case the explicit adjoint stencil
is used for the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, linear_map
from .grid import GridGeom, ScalarField, Scales, StressField


@dataclass(frozen=True)
class FDSpacing:
    dX: float
    dY: float

    def __post_init__(self):
        if not (self.dX > 0 and self.dY > 0):
            raise ValueError("spacings must be positive")


def grid_spacing(geom: GridGeom, scales: Scales) -> FDSpacing:
    return FDSpacing(
        dX=geom.length_x / (scales.l0 * (geom.nx - 1)),
        dY=geom.length_y / (scales.l0 * (geom.ny - 1)),
    )


def _diff_last(a: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(a)
    n = a.shape[-1]
    if n > 2:
        out[..., 1:-1] = (a[..., 2:] - a[..., :-2]) / (2.0 * h)
    out[..., 0] = (a[..., 1] - a[..., 0]) / h
    out[..., -1] = (a[..., -1] - a[..., -2]) / h
    return out


def _diff_last_adjoint(g: np.ndarray, h: float) -> np.ndarray:
    n = g.shape[-1]
    out = np.zeros_like(g)
    if n > 2:
        gi = g[..., 1:-1] / (2.0 * h)
        out[..., 2:] += gi
        out[..., :-2] -= gi
    out[..., 1] += g[..., 0] / h
    out[..., 0] -= g[..., 0] / h
    out[..., -1] += g[..., -1] / h
    out[..., -2] -= g[..., -1] / h
    return out


def _diff_x(a, h):
    return _diff_last(a, h)


def _diff_x_adj(g, h):
    return _diff_last_adjoint(g, h)


def _diff_y(a, h):
    return np.swapaxes(_diff_last(np.swapaxes(a, -1, -2), h), -1, -2)


def _diff_y_adj(g, h):
    return np.swapaxes(_diff_last_adjoint(np.swapaxes(g, -1, -2), h), -1, -2)


def _apply(f, fwd, adj, h):
    if isinstance(f, ScalarField):
        return ScalarField(f.geom, fwd(f.values, h))
    if isinstance(f, Tensor):
        return linear_map(f, lambda a: fwd(a, h), lambda g: adj(g, h))
    return fwd(np.asarray(f, dtype=np.float64), h)


def partial_x(f, sp: FDSpacing):
    """d/dX of a ScalarField, array or tensor (x is the last axis)."""
    if np.shape(f.values if isinstance(f, ScalarField) else f.data if isinstance(f, Tensor) else f)[-1] < 2:
        raise ValueError("need at least two pixels along x")
    return _apply(f, _diff_x, _diff_x_adj, sp.dX)


def partial_y(f, sp: FDSpacing):
    """d/dY of a ScalarField, array or tensor (y is the second-to-last axis)."""
    if np.shape(f.values if isinstance(f, ScalarField) else f.data if isinstance(f, Tensor) else f)[-2] < 2:
        raise ValueError("need at least two pixels along y")
    return _apply(f, _diff_y, _diff_y_adj, sp.dY)


def divergence(sxx, syy, sxy, sp: FDSpacing):
    """Equilibrium residuals ``(R1, R2)`` for raw arrays or tensors."""
    r1 = partial_x(sxx, sp) + partial_y(sxy, sp)
    r2 = partial_x(sxy, sp) + partial_y(syy, sp)
    return r1, r2


def equilibrium_residual(S: StressField, sp: FDSpacing) -> tuple[ScalarField, ScalarField]:
    r1, r2 = divergence(S.xx.values, S.yy.values, S.xy.values, sp)
    return ScalarField(S.geom, r1), ScalarField(S.geom, r2)
