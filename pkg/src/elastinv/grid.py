"""Grid geometry, field containers and isotropic elasticity algebra.

All per-pixel quantities live on a regular ``ny x nx`` grid.  Row ``j = 0`` is
the bottom edge of the domain, column ``i = 0`` the left edge.  Shear strain is
always stored in tensorial form (``eps_xy``); the engineering factor of two only
appears inside :func:`constitutive_stress`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EDGES = ("top", "bottom", "left", "right")


@dataclass(frozen=True)
class GridGeom:
    """Regular pixel grid spanning ``[0, length_x] x [0, length_y]``."""

    nx: int
    ny: int
    length_x: float
    length_y: float

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2x2 pixels, got {self.nx}x{self.ny}")
        if not (self.length_x > 0 and self.length_y > 0):
            raise ValueError("grid lengths must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def hx(self) -> float:
        return self.length_x / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.length_y / (self.ny - 1)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical pixel coordinates as two ``(ny, nx)`` arrays."""
        x = np.arange(self.nx) * self.hx
        y = np.arange(self.ny) * self.hy
        return np.meshgrid(x, y)


@dataclass(frozen=True, eq=False)
class ScalarField:
    geom: GridGeom
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.geom.shape:
            raise ValueError(f"field shape {values.shape} does not match grid {self.geom.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, geom: GridGeom, value: float) -> ScalarField:
        return cls(geom, np.full(geom.shape, float(value)))


@dataclass(frozen=True, eq=False)
class SymTensorField:
    """Three components of a symmetric 2D tensor field (strain or stress)."""

    xx: ScalarField
    yy: ScalarField
    xy: ScalarField

    def __post_init__(self):
        if not (self.xx.geom == self.yy.geom == self.xy.geom):
            raise ValueError("tensor components must share one grid")

    @property
    def geom(self) -> GridGeom:
        return self.xx.geom

    @classmethod
    def from_arrays(cls, geom: GridGeom, xx, yy, xy) -> SymTensorField:
        return cls(ScalarField(geom, xx), ScalarField(geom, yy), ScalarField(geom, xy))

    def stack(self) -> np.ndarray:
        """Components as a ``(3, ny, nx)`` array ordered xx, yy, xy."""
        return np.stack([self.xx.values, self.yy.values, self.xy.values])


StrainField = SymTensorField
StressField = SymTensorField


@dataclass(frozen=True, eq=False)
class MaterialField:
    """Lamé parameter maps in Pa."""

    lam: ScalarField
    mu: ScalarField

    def __post_init__(self):
        if self.lam.geom != self.mu.geom:
            raise ValueError("lambda and mu must share one grid")
        if np.any(self.mu.values <= 0) or np.any(self.lam.values <= 0):
            raise ValueError("material requires lambda > 0 and mu > 0 everywhere")

    @property
    def geom(self) -> GridGeom:
        return self.mu.geom

    def engineering(self) -> tuple[np.ndarray, np.ndarray]:
        return engineering_from_lame(self.lam.values, self.mu.values)


@dataclass(frozen=True)
class Scales:
    """Reference length ``l0`` (m) and reference stress ``sigma0`` (Pa)."""

    l0: float
    sigma0: float

    def __post_init__(self):
        if not (self.l0 > 0 and self.sigma0 > 0):
            raise ValueError("scales must be positive")


@dataclass(frozen=True)
class EdgeSpec:
    """Loading of one edge.

    ``normal`` is the normal stress on the edge (tension positive), ``shear``
    the value of the ``sigma_xy`` stress component there.  ``None`` means the
    component is not prescribed.
    """

    normal: float | None = None
    shear: float | None = None
    constraint: str = "free"

    def __post_init__(self):
        if self.constraint not in ("free", "roller", "fixed"):
            raise ValueError(f"unknown edge constraint {self.constraint!r}")
        if self.constraint in ("roller", "fixed") and self.normal is not None:
            raise ValueError("normal traction prescribed on a displacement-constrained edge")
        if self.constraint == "fixed" and self.shear is not None:
            raise ValueError("shear traction prescribed on a fixed edge")


@dataclass(frozen=True)
class BoundarySpec:
    """Per-edge tractions and constraints.

    With ``auto_pin`` set, rigid-body modes left open by the edge constraints
    are removed with a statically determinate set of point supports at the
    bottom corners; they carry no load when the applied tractions are
    self-equilibrated.
    """

    top: EdgeSpec = field(default_factory=EdgeSpec)
    bottom: EdgeSpec = field(default_factory=EdgeSpec)
    left: EdgeSpec = field(default_factory=EdgeSpec)
    right: EdgeSpec = field(default_factory=EdgeSpec)
    auto_pin: bool = True

    def edge(self, name: str) -> EdgeSpec:
        if name not in EDGES:
            raise ValueError(f"unknown edge {name!r}")
        return getattr(self, name)

    def targets(self, sigma0: float = 1.0) -> dict[str, float]:
        """Prescribed stress values keyed ``"<edge>_<normal|shear>"``, divided by ``sigma0``."""
        out = {}
        for name in EDGES:
            e = self.edge(name)
            if e.normal is not None:
                out[f"{name}_normal"] = e.normal / sigma0
            if e.shear is not None:
                out[f"{name}_shear"] = e.shear / sigma0
        return out

    def scaled(self, factor: float) -> BoundarySpec:
        def _s(v):
            return None if v is None else v * factor

        edges = {
            n: EdgeSpec(_s(self.edge(n).normal), _s(self.edge(n).shear), self.edge(n).constraint)
            for n in EDGES
        }
        return BoundarySpec(**edges, auto_pin=self.auto_pin)

    def to_dict(self) -> dict:
        d = {n: {"normal": self.edge(n).normal, "shear": self.edge(n).shear,
                 "constraint": self.edge(n).constraint} for n in EDGES}
        d["auto_pin"] = self.auto_pin
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BoundarySpec:
        edges = {}
        for n in EDGES:
            e = d.get(n) or {}
            edges[n] = EdgeSpec(e.get("normal"), e.get("shear"), e.get("constraint", "free"))
        return cls(**edges, auto_pin=d.get("auto_pin", True))


def two_sided_tension(traction: float) -> BoundarySpec:
    """Uniform normal tension on top and bottom, traction-free sides."""
    return BoundarySpec(
        top=EdgeSpec(normal=traction, shear=0.0),
        bottom=EdgeSpec(normal=traction, shear=0.0),
        left=EdgeSpec(normal=0.0, shear=0.0),
        right=EdgeSpec(normal=0.0, shear=0.0),
    )


def roller_bottom_tension(traction: float) -> BoundarySpec:
    """Top tension over a frictionless (roller) bottom edge, traction-free sides."""
    return BoundarySpec(
        top=EdgeSpec(normal=traction, shear=0.0),
        bottom=EdgeSpec(shear=0.0, constraint="roller"),
        left=EdgeSpec(normal=0.0, shear=0.0),
        right=EdgeSpec(normal=0.0, shear=0.0),
    )


def lame_from_engineering(E, nu):
    """Convert Young's modulus and Poisson's ratio to Lamé parameters.

    Works elementwise on arrays.  Raises ``ValueError`` unless ``E > 0`` and
    ``0 < nu < 0.5``.
    """
    E = np.asarray(E, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if np.any(E <= 0):
        raise ValueError("E must be positive")
    if np.any(nu <= 0) or np.any(nu >= 0.5):
        raise ValueError("nu must lie in the open interval (0, 0.5)")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return _unwrap(lam), _unwrap(mu)


def engineering_from_lame(lam, mu):
    """Convert Lamé parameters to ``(E, nu)``; requires ``lam + mu > 0``."""
    lam = np.asarray(lam, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    denom = lam + mu
    if np.any(denom <= 0):
        raise ValueError("lambda + mu must be positive")
    E = mu * (3.0 * lam + 2.0 * mu) / denom
    nu = lam / (2.0 * denom)
    return _unwrap(E), _unwrap(nu)


def plane_stress_convert(E, nu):
    """Divide both constants by ``1 - nu**2``.

    Note that the Poisson's ratio line is not the textbook conversion
    ``nu / (1 - nu)``; it is kept in this form on purpose.  Post-processing
    only, never used by the plane-strain pipeline.
    """
    E = np.asarray(E, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if np.any(np.abs(nu) >= 1):
        raise ValueError("|nu| must be < 1")
    d = 1.0 - nu * nu
    return _unwrap(E / d), _unwrap(nu / d)


def stress_from_lame(M, Lam, exx, eyy, exy):
    """Dimensionless isotropic stress from strains.

    Operands may be numpy arrays, scalars, or autodiff tensors; only ``+`` and
    ``*`` are used.
    """
    sxx = (2.0 * M + Lam) * exx + Lam * eyy
    syy = (2.0 * M + Lam) * eyy + Lam * exx
    sxy = 2.0 * M * exy
    return sxx, syy, sxy


def constitutive_stress(M: ScalarField, Lam: ScalarField, strain: StrainField) -> StressField:
    if not (M.geom == Lam.geom == strain.geom):
        raise ValueError("fields must share one grid")
    sxx, syy, sxy = stress_from_lame(
        M.values, Lam.values, strain.xx.values, strain.yy.values, strain.xy.values
    )
    return SymTensorField.from_arrays(M.geom, sxx, syy, sxy)


def compute_scales(geom: GridGeom, boundary: BoundarySpec) -> Scales:
    """``l0`` is the mean side length, ``sigma0`` the largest prescribed |normal traction|."""
    normals = [abs(boundary.edge(n).normal) for n in EDGES if boundary.edge(n).normal is not None]
    sigma0 = max(normals, default=0.0)
    if sigma0 == 0.0:
        raise ValueError("no nonzero normal traction: the problem has no stress scale")
    return Scales(l0=0.5 * (geom.length_x + geom.length_y), sigma0=sigma0)


def lame_validity_mask(M, Lam) -> np.ndarray:
    M = np.asarray(M)
    Lam = np.asarray(Lam)
    return (M > 0) & (Lam + M > 0)


def redimensionalize(M, Lam, scales: Scales):
    """Dimensionless Lamé maps to physical ``(E, nu, valid)``.

    Pixels with ``M <= 0`` or ``Lam + M <= 0`` are flagged ``False`` in
    ``valid`` and hold NaN in ``E`` and ``nu``.  Accepts ScalarFields or arrays.
    """
    Mv = M.values if isinstance(M, ScalarField) else np.asarray(M, dtype=np.float64)
    Lv = Lam.values if isinstance(Lam, ScalarField) else np.asarray(Lam, dtype=np.float64)
    valid = lame_validity_mask(Mv, Lv)
    mu = np.where(valid, Mv, 1.0) * scales.sigma0
    lam = np.where(valid, Lv, 0.0) * scales.sigma0
    E, nu = engineering_from_lame(lam, mu)
    E = np.where(valid, E, np.nan)
    nu = np.where(valid, nu, np.nan)
    return E, nu, valid


def _unwrap(a: np.ndarray):
    return float(a) if a.ndim == 0 else a
