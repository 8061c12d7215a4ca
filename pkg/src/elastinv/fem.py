"""Synthetic plane-strain data: phantoms, a Q4 finite-element solver, noise.

The mesh nodes coincide with the pixels, so the solution comes out directly
on the image grid.  Each cell between four pixels is one bilinear element
whose Lamé parameters are the mean of its corner pixels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .autodiff import Tensor
from .grid import (
    EDGES,
    BoundarySpec,
    GridGeom,
    MaterialField,
    ScalarField,
    StrainField,
    StressField,
    SymTensorField,
    lame_from_engineering,
)

PHANTOM_KINDS = ("inclusion", "multi-inclusion", "layered", "label-map")

_GP = 1.0 / np.sqrt(3.0)
# node order: (0,0) (1,0) (1,1) (0,1) counterclockwise, natural coords
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


class SingularSystemError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class PhantomSpec:
    """Region layout plus a material table of ``(E [Pa], nu)`` per region label.

    ``inclusions`` holds ``{"center": (x, y), "radius": r, "region": k}``
    dicts in physical units; ``layers`` the increasing y positions separating
    regions ``0, 1, ...``; ``labels`` an integer grid with row 0 at the bottom.
    Region 0 is the background for the inclusion kinds.
    """

    kind: str
    materials: list[tuple[float, float]]
    inclusions: list[dict] = field(default_factory=list)
    layers: list[float] = field(default_factory=list)
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if not self.materials:
            raise ValueError("phantom has an empty material table")
        self.materials = [(float(E), float(nu)) for E, nu in self.materials]
        for E, nu in self.materials:
            lame_from_engineering(E, nu)
        if self.kind == "inclusion" and len(self.inclusions) > 1:
            raise ValueError("kind 'inclusion' takes exactly one inclusion")

    def label_grid(self, geom: GridGeom) -> np.ndarray:
        X, Y = geom.coordinates()
        if self.kind in ("inclusion", "multi-inclusion"):
            labels = np.zeros(geom.shape, dtype=int)
            for inc in self.inclusions:
                cx, cy = inc["center"]
                r = float(inc["radius"])
                if not (0 <= cx <= geom.length_x and 0 <= cy <= geom.length_y):
                    warnings.warn(f"inclusion center {(cx, cy)} lies outside the domain; clipped")
                inside = (X - cx) ** 2 + (Y - cy) ** 2 < r * r
                labels[inside] = int(inc.get("region", 1))
        elif self.kind == "layered":
            labels = np.searchsorted(np.asarray(self.layers, dtype=float), Y, side="right")
        else:
            if self.labels is None:
                raise ValueError("label-map phantom needs a label grid")
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != geom.shape:
                raise ValueError(f"label grid shape {labels.shape} does not match grid {geom.shape}")
        if labels.min() < 0 or labels.max() >= len(self.materials):
            raise ValueError("phantom refers to a region missing from the material table")
        return labels

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "materials": [{"E": E, "nu": nu} for E, nu in self.materials]}
        if self.inclusions:
            d["inclusions"] = [
                {"center": [float(c) for c in inc["center"]], "radius": float(inc["radius"]),
                 "region": int(inc.get("region", 1))}
                for inc in self.inclusions
            ]
        if self.layers:
            d["layers"] = [float(y) for y in self.layers]
        if self.labels is not None:
            d["labels"] = np.asarray(self.labels, dtype=int).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PhantomSpec:
        mats = [(m["E"], m["nu"]) for m in d.get("materials", [])]
        labels = d.get("labels")
        return cls(
            kind=d["kind"],
            materials=mats,
            inclusions=[dict(inc) for inc in d.get("inclusions", [])],
            layers=list(d.get("layers", [])),
            labels=None if labels is None else np.asarray(labels, dtype=int),
        )


def build_phantom(spec: PhantomSpec, geom: GridGeom) -> MaterialField:
    labels = spec.label_grid(geom)
    E = np.array([m[0] for m in spec.materials])[labels]
    nu = np.array([m[1] for m in spec.materials])[labels]
    lam, mu = lame_from_engineering(E, nu)
    return MaterialField(ScalarField(geom, lam), ScalarField(geom, mu))


# element matrices ----------------------------------------------------------

def _shape_grads(xi, eta, hx, hy):
    """dN/dx, dN/dy of the four bilinear shape functions at (xi, eta)."""
    dxi = 0.25 * _XI * (1.0 + _ETA * eta)
    deta = 0.25 * _ETA * (1.0 + _XI * xi)
    return dxi * (2.0 / hx), deta * (2.0 / hy)


def _b_matrix(xi, eta, hx, hy):
    """Strain-displacement matrix with rows (eps_xx, eps_yy, gamma_xy)."""
    dx, dy = _shape_grads(xi, eta, hx, hy)
    B = np.zeros((3, 8))
    B[0, 0::2] = dx
    B[1, 1::2] = dy
    B[2, 0::2] = dy
    B[2, 1::2] = dx
    return B


_GAUSS = [(-_GP, -_GP), (_GP, -_GP), (_GP, _GP), (-_GP, _GP)]
_D_LAM = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
_D_MU = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]])


def element_stiffness_parts(hx: float, hy: float) -> tuple[np.ndarray, np.ndarray]:
    """8x8 unit stiffness matrices ``K_lam``, ``K_mu`` with ``K = lam*K_lam + mu*K_mu``."""
    detJ = hx * hy / 4.0
    K_lam = np.zeros((8, 8))
    K_mu = np.zeros((8, 8))
    for xi, eta in _GAUSS:
        B = _b_matrix(xi, eta, hx, hy)
        K_lam += B.T @ _D_LAM @ B * detJ
        K_mu += B.T @ _D_MU @ B * detJ
    return K_lam, K_mu


def _element_dofs(nx: int, ny: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    n0 = (j * nx + i).ravel()
    nodes = np.stack([n0, n0 + 1, n0 + 1 + nx, n0 + nx], axis=1)
    dofs = np.empty((nodes.shape[0], 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    return dofs


def element_lame(material: MaterialField) -> tuple[np.ndarray, np.ndarray]:
    def corner_mean(a):
        return 0.25 * (a[:-1, :-1] + a[:-1, 1:] + a[1:, :-1] + a[1:, 1:])

    return corner_mean(material.lam.values).ravel(), corner_mean(material.mu.values).ravel()


def assemble_stiffness(material: MaterialField) -> sp.csr_matrix:
    geom = material.geom
    K_lam, K_mu = element_stiffness_parts(geom.hx, geom.hy)
    lam_e, mu_e = element_lame(material)
    dofs = _element_dofs(geom.nx, geom.ny)
    data = lam_e[:, None, None] * K_lam + mu_e[:, None, None] * K_mu
    rows = np.broadcast_to(dofs[:, :, None], data.shape)
    cols = np.broadcast_to(dofs[:, None, :], data.shape)
    n = 2 * geom.nx * geom.ny
    K = sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    return K.tocsr()


def edge_nodes(geom: GridGeom, edge: str) -> np.ndarray:
    nx, ny = geom.nx, geom.ny
    if edge == "bottom":
        return np.arange(nx)
    if edge == "top":
        return (ny - 1) * nx + np.arange(nx)
    if edge == "left":
        return np.arange(ny) * nx
    if edge == "right":
        return np.arange(ny) * nx + nx - 1
    raise ValueError(f"unknown edge {edge!r}")


_OUTWARD = {"top": (0.0, 1.0), "bottom": (0.0, -1.0), "left": (-1.0, 0.0), "right": (1.0, 0.0)}


def traction_vector(edge: str, normal: float, shear: float) -> tuple[float, float]:
    """Traction ``sigma . n`` on an edge carrying normal stress and ``sigma_xy``."""
    n = _OUTWARD[edge]
    if edge in ("top", "bottom"):
        sxx, syy = 0.0, normal
    else:
        sxx, syy = normal, 0.0
    return sxx * n[0] + shear * n[1], shear * n[0] + syy * n[1]


def traction_loads(geom: GridGeom, bc: BoundarySpec) -> np.ndarray:
    """Consistent nodal forces of uniform edge tractions (per unit thickness)."""
    f = np.zeros(2 * geom.nx * geom.ny)
    for edge in EDGES:
        e = bc.edge(edge)
        tx, ty = traction_vector(edge, e.normal or 0.0, e.shear or 0.0)
        if tx == 0.0 and ty == 0.0:
            continue
        nodes = edge_nodes(geom, edge)
        h = geom.hx if edge in ("top", "bottom") else geom.hy
        w = np.full(len(nodes), h)
        w[0] = w[-1] = 0.5 * h
        f[2 * nodes] += tx * w
        f[2 * nodes + 1] += ty * w
    return f


def constrained_dofs(geom: GridGeom, bc: BoundarySpec) -> np.ndarray:
    """Prescribed (zero) displacement dofs, including automatic pins.

    Raises ``SingularSystemError`` naming the rigid-body modes left free when
    ``auto_pin`` is off.
    """
    fixed = set()
    free_modes = {"x-translation", "y-translation", "rotation"}
    for edge in EDGES:
        c = bc.edge(edge).constraint
        if c == "free":
            continue
        nodes = edge_nodes(geom, edge)
        horizontal = edge in ("top", "bottom")
        if c == "fixed":
            fixed.update(2 * nodes)
            fixed.update(2 * nodes + 1)
            free_modes.clear()
        elif horizontal:
            fixed.update(2 * nodes + 1)
            free_modes -= {"y-translation", "rotation"}
        else:
            fixed.update(2 * nodes)
            free_modes -= {"x-translation", "rotation"}
    if free_modes:
        if not bc.auto_pin:
            raise SingularSystemError(
                "boundary conditions leave rigid-body modes free: " + ", ".join(sorted(free_modes))
                + "; add a roller or fixed edge or enable auto_pin"
            )
        left, right = 0, geom.nx - 1
        if "x-translation" in free_modes:
            fixed.add(2 * left)
        if "y-translation" in free_modes:
            fixed.add(2 * left + 1)
        if "rotation" in free_modes:
            fixed.add(2 * right + 1)
    return np.array(sorted(fixed), dtype=np.int64)


@dataclass
class FEMSolution:
    strain: StrainField
    stress: StressField
    ux: ScalarField
    uy: ScalarField
    reactions: np.ndarray
    loads: np.ndarray
    residual: float

    def force_balance_error(self) -> float:
        """Relative mismatch of total applied load plus reactions, worst of x and y."""
        total = self.loads + self.reactions
        scale = max(np.abs(self.loads).sum(), np.finfo(float).tiny)
        return float(max(abs(total[0::2].sum()), abs(total[1::2].sum())) / scale)


def recover_nodal_strain(geom: GridGeom, u: np.ndarray) -> np.ndarray:
    """Nodal strains ``(3, ny, nx)`` (xx, yy, tensorial xy).

    Gauss-point strains of each element are extrapolated to its corners and
    averaged over the elements sharing a node.
    """
    dofs = _element_dofs(geom.nx, geom.ny)
    ue = u[dofs]
    Bs = np.stack([_b_matrix(xi, eta, geom.hx, geom.hy) for xi, eta in _GAUSS])
    gp_strain = np.einsum("gkd,ed->egk", Bs, ue)
    # bilinear extrapolation: corners sit at +-sqrt(3) in Gauss-point coordinates
    s3 = np.sqrt(3.0)
    gxi = np.array([p[0] for p in _GAUSS]) / _GP
    geta = np.array([p[1] for p in _GAUSS]) / _GP
    ext = 0.25 * (1.0 + np.outer(_XI * s3, gxi)) * (1.0 + np.outer(_ETA * s3, geta))
    corner_strain = np.einsum("ag,egk->eak", ext, gp_strain)

    i, j = np.meshgrid(np.arange(geom.nx - 1), np.arange(geom.ny - 1))
    n0 = (j * geom.nx + i).ravel()
    nodes = np.stack([n0, n0 + 1, n0 + 1 + geom.nx, n0 + geom.nx], axis=1)
    nn = geom.nx * geom.ny
    acc = np.zeros((nn, 3))
    cnt = np.zeros(nn)
    for a in range(4):
        np.add.at(acc, nodes[:, a], corner_strain[:, a, :])
        np.add.at(cnt, nodes[:, a], 1.0)
    acc /= cnt[:, None]
    acc[:, 2] *= 0.5
    return acc.T.reshape(3, geom.ny, geom.nx)


def solve_plane_strain(material: MaterialField, bc: BoundarySpec, rtol: float = 1e-10,
                       method: str = "direct") -> FEMSolution:
    """Solve the plane-strain traction problem on the pixel grid.

    ``method`` is ``"direct"`` (sparse LU) or ``"cg"`` (Jacobi-preconditioned
    conjugate gradients).  The relative residual of the reduced system must
    reach ``rtol``.
    """
    geom = material.geom
    K = assemble_stiffness(material)
    f = traction_loads(geom, bc)
    fixed = constrained_dofs(geom, bc)
    n = K.shape[0]
    free = np.setdiff1d(np.arange(n), fixed)
    Kff = K[free][:, free].tocsc()
    ff = f[free]

    u = np.zeros(n)
    fnorm = np.linalg.norm(ff)
    if fnorm > 0:
        if method == "direct":
            try:
                uf = spla.splu(Kff).solve(ff)
            except RuntimeError as exc:
                raise SingularSystemError(f"stiffness matrix is singular: {exc}") from exc
        elif method == "cg":
            dinv = 1.0 / Kff.diagonal()
            M = spla.LinearOperator(Kff.shape, matvec=lambda r: dinv * r)
            uf, info = spla.cg(Kff, ff, rtol=rtol * 1e-2, atol=0.0, M=M, maxiter=20 * n)
            if info != 0:
                res = np.linalg.norm(Kff @ uf - ff) / fnorm
                raise ConvergenceError(f"CG did not converge (info={info}), relative residual {res:.3e}")
        else:
            raise ValueError(f"unknown solver method {method!r}")
        u[free] = uf
        residual = float(np.linalg.norm(Kff @ uf - ff) / fnorm)
        if not np.isfinite(residual) or residual > rtol:
            raise ConvergenceError(f"linear solve reached relative residual {residual:.3e} > {rtol:.1e}")
    else:
        residual = 0.0

    reactions = np.zeros(n)
    reactions[fixed] = (K @ u)[fixed] - f[fixed]

    eps = recover_nodal_strain(geom, u)
    lam, mu = material.lam.values, material.mu.values
    sxx = (lam + 2 * mu) * eps[0] + lam * eps[1]
    syy = (lam + 2 * mu) * eps[1] + lam * eps[0]
    sxy = 2 * mu * eps[2]
    return FEMSolution(
        strain=SymTensorField.from_arrays(geom, *eps),
        stress=SymTensorField.from_arrays(geom, sxx, syy, sxy),
        ux=ScalarField(geom, u[0::2].reshape(geom.shape)),
        uy=ScalarField(geom, u[1::2].reshape(geom.shape)),
        reactions=reactions,
        loads=f,
        residual=residual,
    )


def max_axial_strain(strain: StrainField) -> float:
    return float(max(np.abs(strain.xx.values).max(), np.abs(strain.yy.values).max()))


def scale_to_strain(material: MaterialField, bc: BoundarySpec, max_strain: float = 0.05):
    """Rescale all tractions so the largest |normal strain| equals ``max_strain``.

    Returns ``(scaled_bc, solution)``; linearity makes one reference solve enough.
    """
    ref = solve_plane_strain(material, bc)
    peak = max_axial_strain(ref.strain)
    if peak == 0:
        raise ValueError("reference loading produces no strain")
    factor = max_strain / peak * (1.0 - 1e-12)
    return bc.scaled(factor), solve_plane_strain(material, bc.scaled(factor))


def add_noise(strain: StrainField, level: float, seed: int) -> StrainField:
    """Zero-mean Gaussian noise with std ``level * max|channel|`` per channel."""
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return strain
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    out = []
    for comp, rng in zip((strain.xx, strain.yy, strain.xy), streams):
        v = comp.values
        sigma = level * np.abs(v).max()
        out.append(v + sigma * rng.standard_normal(v.shape))
    return SymTensorField.from_arrays(strain.geom, *out)


def normalize_for_network(strain: StrainField) -> tuple[Tensor, float]:
    """Strain channels divided by one shared ``eps_ref = max |eps|``."""
    stacked = strain.stack()
    eps_ref = float(np.abs(stacked).max())
    if eps_ref == 0:
        raise ValueError("all-zero strain carries no deformation information")
    return Tensor(stacked / eps_ref), eps_ref


def generate_bundle(phantom: PhantomSpec, geom: GridGeom, bc: BoundarySpec,
                    max_strain: float | None = None, noise: float = 0.0, noise_seed: int = 0):
    """Phantom -> FEM solve -> optional noise, packaged as a FieldBundle.

    With ``max_strain`` set, tractions are rescaled so the largest normal
    strain equals that value.  Truth fields hold the pixel materials and the
    noise-free stresses.
    """
    from .bundle import FieldBundle
    from .grid import compute_scales

    material = build_phantom(phantom, geom)
    if max_strain is not None:
        bc, sol = scale_to_strain(material, bc, max_strain)
    else:
        sol = solve_plane_strain(material, bc)
    strain = add_noise(sol.strain, noise, noise_seed) if noise > 0 else sol.strain
    E, nu = material.engineering()
    fields = {
        "strain_xx": strain.xx.values,
        "strain_yy": strain.yy.values,
        "strain_xy": strain.xy.values,
        "truth_E": E,
        "truth_nu": nu,
        "truth_stress_xx": sol.stress.xx.values,
        "truth_stress_yy": sol.stress.yy.values,
        "truth_stress_xy": sol.stress.xy.values,
    }
    meta = {
        "phantom": phantom.to_dict(),
        "noise": {"level": float(noise), "seed": int(noise_seed) if noise > 0 else None,
                  "model": "gaussian, std = level * max|channel|"},
        "max_strain": max_strain,
        "generator": "Q4 plane-strain FEM on the pixel grid, element Lame = corner mean",
        "conventions": {"row0": "bottom", "shear": "tensorial eps_xy",
                        "shear_target": "sigma_xy component value"},
    }
    return FieldBundle(geom, compute_scales(geom, bc), bc, fields, meta)
