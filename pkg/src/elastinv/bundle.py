"""FieldBundle: a grid, its scales and boundary spec, and named per-pixel fields.

On disk a bundle is a directory with ``meta.json`` and one headerless CSV per
field: ``ny`` rows of ``nx`` values, row 0 is the bottom edge (``j = 0``),
values written with 17 significant digits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import BoundarySpec, GridGeom, Scales, StrainField, SymTensorField

FORMAT_VERSION = 1
STRAIN_FIELDS = ("strain_xx", "strain_yy", "strain_xy")


class BundleFormatError(ValueError):
    pass


@dataclass
class FieldBundle:
    geom: GridGeom
    scales: Scales
    boundary: BoundarySpec
    fields: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def strain(self) -> StrainField:
        missing = [n for n in STRAIN_FIELDS if n not in self.fields]
        if missing:
            raise BundleFormatError(f"bundle lacks strain fields {missing}")
        return SymTensorField.from_arrays(self.geom, *(self.fields[n] for n in STRAIN_FIELDS))

    def truth(self, name: str) -> np.ndarray | None:
        return self.fields.get(f"truth_{name}")


def write_csv(path, values: np.ndarray) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    lines = [",".join(format(v, ".17g") for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> np.ndarray:
    rows = [line for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array([[float(v) for v in line.split(",")] for line in rows], dtype=np.float64)


def write_bundle(bundle: FieldBundle, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, values in bundle.fields.items():
        if np.shape(values) != bundle.geom.shape:
            raise BundleFormatError(f"field {name} has shape {np.shape(values)}, grid is {bundle.geom.shape}")
        write_csv(d / f"{name}.csv", values)
    meta = dict(bundle.meta)
    meta.update({
        "format_version": FORMAT_VERSION,
        "nx": bundle.geom.nx,
        "ny": bundle.geom.ny,
        "length_x": bundle.geom.length_x,
        "length_y": bundle.geom.length_y,
        "l0": bundle.scales.l0,
        "sigma0": bundle.scales.sigma0,
        "boundary": bundle.boundary.to_dict(),
        "fields": sorted(bundle.fields),
    })
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def read_bundle(directory) -> FieldBundle:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise BundleFormatError(f"{d} has no meta.json")
    meta = json.loads(meta_path.read_text())
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleFormatError(f"unsupported bundle format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        geom = GridGeom(int(meta["nx"]), int(meta["ny"]), float(meta["length_x"]), float(meta["length_y"]))
        scales = Scales(float(meta["l0"]), float(meta["sigma0"]))
        boundary = BoundarySpec.from_dict(meta["boundary"])
    except KeyError as exc:
        raise BundleFormatError(f"meta.json is missing {exc}") from exc
    fields = {}
    for name in meta.get("fields", []):
        values = read_csv(d / f"{name}.csv")
        if values.shape != geom.shape:
            raise BundleFormatError(f"{name}.csv has shape {values.shape}, expected {geom.shape}")
        fields[name] = values
    extra = {k: v for k, v in meta.items()
             if k not in ("format_version", "nx", "ny", "length_x", "length_y", "l0", "sigma0",
                          "boundary", "fields")}
    return FieldBundle(geom, scales, boundary, fields, extra)
