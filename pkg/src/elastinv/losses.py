"""Physics losses for the inversion variants and self-adaptive spatial weights.

Weights multiply residuals *before* squaring, so a weight field ``psi``
contributes ``psi**2`` per pixel.  Weights are ascent parameters: the
optimizer pushes them up wherever residuals persist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .fd import FDSpacing, divergence
from .grid import stress_from_lame

VARIANTS = ("P", "PS", "PS-W1", "PS-W2", "dense-PINN")
WEIGHTED_VARIANTS = ("PS-W1", "PS-W2")

EQUILIBRIUM_TERMS = ("equilibrium_x", "equilibrium_y")
CONSTITUTIVE_TERMS = ("constitutive_xx", "constitutive_yy", "constitutive_xy")
BOUNDARY_KEYS = tuple(f"{e}_{c}" for e in ("top", "bottom", "left", "right") for c in ("normal", "shear"))


def term_names(variant: str, targets: dict) -> list[str]:
    """Loss-term names reported for ``variant`` given the boundary targets."""
    names = list(EQUILIBRIUM_TERMS)
    if variant != "P":
        names += CONSTITUTIVE_TERMS
    names += [f"boundary_{k}" for k in BOUNDARY_KEYS if k in targets]
    return names


@dataclass
class WeightFields:
    psi_C: Parameter
    psi_E: Parameter | None
    psi_sides: Parameter
    psi_topbottom: Parameter

    @classmethod
    def ones(cls, shape, equilibrium: bool = True) -> WeightFields:
        ny, nx = shape
        return cls(
            psi_C=Parameter(np.ones((ny, nx)), ascent=True, name="psi_C"),
            psi_E=Parameter(np.ones((ny, nx)), ascent=True, name="psi_E") if equilibrium else None,
            psi_sides=Parameter(np.ones((2, ny - 2)), ascent=True, name="psi_sides"),
            psi_topbottom=Parameter(np.ones((2, nx)), ascent=True, name="psi_topbottom"),
        )

    @classmethod
    def for_variant(cls, variant: str, shape) -> WeightFields | None:
        if variant not in WEIGHTED_VARIANTS:
            return None
        return cls.ones(shape, equilibrium=(variant == "PS-W1"))

    def parameters(self) -> list[Parameter]:
        return [p for p in (self.psi_C, self.psi_E, self.psi_sides, self.psi_topbottom) if p is not None]

    def arrays(self) -> dict[str, np.ndarray]:
        """Current weight values keyed by file stem (``psi_C``, ``psi_E``, ...)."""
        return {p.name: p.data.copy() for p in self.parameters()}


@dataclass
class LossBreakdown:
    """Unweighted per-term losses plus the totals.

    ``weighted_total`` is the tensor the optimizer differentiates;
    ``unweighted_total`` is what gets logged.
    """

    terms: dict[str, float]
    weighted_terms: dict[str, float]
    weighted_total: Tensor
    unweighted_total: float


def _weighted_mse(r: Tensor, psi) -> tuple[Tensor, Tensor]:
    un = ad.mse(r)
    if psi is None:
        return un, un
    return ad.mse(psi * r), un


def _equilibrium_terms(r1, r2, psi_E):
    wx, ux = _weighted_mse(r1, psi_E)
    wy, uy = _weighted_mse(r2, psi_E)
    return {"equilibrium_x": (wx, ux), "equilibrium_y": (wy, uy)}


def equilibrium_loss(S, sp: FDSpacing, psi_E=None) -> tuple[Tensor, Tensor]:
    """MSE of both finite-difference equilibrium residuals over all pixels.

    ``S`` is a ``(sxx, syy, sxy)`` triple of ``(H, W)`` tensors.
    """
    sxx, syy, sxy = S
    r1, r2 = divergence(sxx, syy, sxy, sp)
    return _total(_equilibrium_terms(r1, r2, psi_E))


def _constitutive_terms(S_net, M, Lam, strain, psi_C):
    exx, eyy, exy = strain
    predicted = stress_from_lame(M, Lam, exx, eyy, exy)
    out = {}
    for name, s, p in zip(CONSTITUTIVE_TERMS, S_net, predicted):
        out[name] = _weighted_mse(s - p, psi_C)
    return out


def constitutive_loss(S_net, M, Lam, strain, psi_C=None) -> tuple[Tensor, Tensor]:
    """Mismatch between network stresses and stresses implied by (M, Lambda) and strain.

    ``strain`` is a ``(3, H, W)`` array (xx, yy, tensorial xy).
    """
    return _total(_constitutive_terms(S_net, M, Lam, strain, psi_C))


def _edge(t: Tensor, edge: str) -> Tensor:
    if edge == "top":
        return t[-1, :]
    if edge == "bottom":
        return t[0, :]
    if edge == "left":
        return t[1:-1, 0]
    return t[1:-1, -1]


def _boundary_terms(S, targets, psi_sides, psi_topbottom):
    sxx, syy, sxy = S
    H, W = sxx.shape
    if H < 3 or W < 2:
        raise ValueError("boundary loss needs a grid of at least 3 rows and 2 columns")
    out = {}
    for key in BOUNDARY_KEYS:
        if key not in targets:
            continue
        edge, comp = key.split("_")
        if comp == "shear":
            field = sxy
        else:
            field = syy if edge in ("top", "bottom") else sxx
        r = _edge(field, edge) - targets[key]
        if edge in ("top", "bottom"):
            psi = None if psi_topbottom is None else psi_topbottom[1 if edge == "top" else 0]
        else:
            psi = None if psi_sides is None else psi_sides[1 if edge == "right" else 0]
        out[f"boundary_{key}"] = _weighted_mse(r, psi)
    return out


def boundary_loss(S, targets: dict, psi_sides=None, psi_topbottom=None) -> tuple[Tensor, Tensor]:
    """Stress mismatch on the edge pixel rows/columns against dimensionless targets.

    Top and bottom rows include the corners; side columns exclude them.
    """
    for key in targets:
        if key not in BOUNDARY_KEYS:
            raise ValueError(f"unknown boundary target {key!r}")
    return _total(_boundary_terms(S, targets, psi_sides, psi_topbottom))


def _total(terms):
    w = None
    u = None
    for wt, ut in terms.values():
        w = wt if w is None else w + wt
        u = ut if u is None else u + ut
    if w is None:
        return Tensor(0.0), Tensor(0.0)
    return w, u


def _channels(t: Tensor):
    return [t[k] for k in range(t.shape[0])]


def pinn_equilibrium_residuals(stresses: Tensor, coords: Tensor, shape):
    """Equilibrium residuals of the stress MLP by differentiating w.r.t. its inputs."""
    H, W = shape
    dsxx, = ad.grad(stresses[:, 0].sum(), coords, create_graph=True)
    dsyy, = ad.grad(stresses[:, 1].sum(), coords, create_graph=True)
    dsxy, = ad.grad(stresses[:, 2].sum(), coords, create_graph=True)
    r1 = dsxx[:, 0] + dsxy[:, 1]
    r2 = dsxy[:, 0] + dsyy[:, 1]
    return r1.reshape(H, W), r2.reshape(H, W)


def assemble_loss(variant: str, outputs, strain, targets: dict, sp: FDSpacing,
                  weights: WeightFields | None = None) -> LossBreakdown:
    """Total physics loss of one forward pass.

    ``outputs`` is the ``(C, H, W)`` network output for the UNet variants, or a
    ``(params, stresses, coords)`` triple of ``(N, .)`` tensors for the dense
    PINN with ``N = H*W`` in row-major pixel order.  ``strain`` is the raw
    (un-normalized) ``(3, H, W)`` strain array.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if (weights is not None) != (variant in WEIGHTED_VARIANTS):
        raise ValueError(f"variant {variant} {'needs' if weights is None else 'takes no'} weight fields")
    if weights is not None and (weights.psi_E is not None) != (variant == "PS-W1"):
        raise ValueError("PS-W1 weights equilibrium, PS-W2 must not")
    strain = np.asarray(strain, dtype=np.float64)
    H, W = strain.shape[1:]

    if variant == "dense-PINN":
        params, stresses, coords = outputs
        Lam, M = params[:, 0].reshape(H, W), params[:, 1].reshape(H, W)
        S = [stresses[:, k].reshape(H, W) for k in range(3)]
        r1, r2 = pinn_equilibrium_residuals(stresses, coords, (H, W))
        terms = _equilibrium_terms(r1, r2, None)
    else:
        expected = 2 if variant == "P" else 5
        if outputs.shape[0] != expected:
            raise ValueError(f"variant {variant} expects {expected} output channels, got {outputs.shape[0]}")
        chans = _channels(outputs)
        Lam, M = chans[0], chans[1]
        if variant == "P":
            S = list(stress_from_lame(M, Lam, strain[0], strain[1], strain[2]))
        else:
            S = chans[2:5]
        psi_E = weights.psi_E if weights is not None else None
        terms = _equilibrium_terms(*divergence(S[0], S[1], S[2], sp), psi_E)

    if variant != "P":
        psi_C = weights.psi_C if weights is not None else None
        terms.update(_constitutive_terms(S, M, Lam, strain, psi_C))
    psi_s = weights.psi_sides if weights is not None else None
    psi_tb = weights.psi_topbottom if weights is not None else None
    terms.update(_boundary_terms(S, targets, psi_s, psi_tb))

    weighted, _ = _total(terms)
    unweighted = {k: float(u.data) for k, (_, u) in terms.items()}
    return LossBreakdown(
        terms=unweighted,
        weighted_terms={k: float(w.data) for k, (w, _) in terms.items()},
        weighted_total=weighted,
        unweighted_total=float(sum(unweighted.values())),
    )


def minmax_update(weights: WeightFields | None, net_params, optimizer: ad.Adam) -> None:
    """One simultaneous step: network parameters descend, weight fields ascend."""
    if weights is not None:
        for p in weights.parameters():
            if not p.ascent:
                raise ValueError(f"weight field {p.name} is not an ascent parameter")
    for p in net_params:
        if p.ascent:
            raise ValueError(f"network parameter {p.name} is marked for ascent")
    optimizer.step()
