"""Command-line interface: ``generate``, ``invert``, ``evaluate`` and ``render``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bundle import BundleFormatError, read_bundle, read_csv, write_bundle, write_csv
from .fem import ConvergenceError, PhantomSpec, SingularSystemError, generate_bundle
from .grid import BoundarySpec, GridGeom, two_sided_tension
from .training import ModelConfig, RunRecord, aggregate_runs, mean_abs_rel_error, train_one

log = logging.getLogger("elastinv")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# generate ------------------------------------------------------------------------

def load_phantom_config(path) -> dict:
    """Read a phantom file.

    The file holds ``{"phantom": {...}, "length_x", "length_y", "boundary",
    "max_strain"}``; a bare phantom dict (with ``kind`` at top level) is also
    accepted and gets unit lengths, two-sided unit tension and the 5 % strain
    rule.
    """
    d = json.loads(Path(path).read_text())
    if "kind" in d:
        d = {"phantom": d}
    if "phantom" not in d:
        raise BundleFormatError("phantom file needs a 'phantom' entry")
    boundary = d.get("boundary")
    return {
        "phantom": PhantomSpec.from_dict(d["phantom"]),
        "length_x": float(d.get("length_x", 1.0)),
        "length_y": float(d.get("length_y", d.get("length_x", 1.0))),
        "boundary": BoundarySpec.from_dict(boundary) if boundary else two_sided_tension(1.0),
        "max_strain": d.get("max_strain", 0.05),
    }


def cmd_generate(args) -> int:
    cfg = load_phantom_config(args.phantom)
    geom = GridGeom(args.nx, args.ny, cfg["length_x"], cfg["length_y"])
    bundle = generate_bundle(cfg["phantom"], geom, cfg["boundary"], max_strain=cfg["max_strain"],
                             noise=args.noise, noise_seed=args.noise_seed)
    write_bundle(bundle, args.out)
    log.info("wrote %s (sigma0 = %.6g Pa)", args.out, bundle.scales.sigma0)
    return 0


# invert --------------------------------------------------------------------------

def write_losses(path, record: RunRecord) -> None:
    header = ["epoch", *record.terms, "total", "E_error", "nu_error"]
    lines = [",".join(header)]
    for k in range(record.epochs):
        row = [str(k + 1)]
        row += [format(record.losses[k][t], ".17g") for t in record.terms]
        row += [format(v, ".17g") for v in (record.totals[k], record.E_error[k], record.nu_error[k])]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_losses(path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
    return {name: rows[:, k] for k, name in enumerate(header)}


def _field_file(name: str) -> str:
    if name in ("E", "nu", "lambda", "mu") or name.startswith("stress_"):
        return f"est_{name}.csv"
    if name == "valid":
        return "valid_mask.csv"
    return f"{name}.csv"


def write_run(directory, record: RunRecord) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, values in record.fields.items():
        write_csv(d / _field_file(name), values)
    write_losses(d / "losses.csv", record)
    return d


def write_aggregate(directory, summary: dict, records: list[RunRecord]) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, values in summary["fields"].items():
        write_csv(d / _field_file(name), values)
    curves = summary["curves"]
    names = list(curves)
    lines = [",".join(names)]
    for k in range(summary["epochs"]):
        lines.append(",".join(
            str(int(curves[n][k])) if n == "epoch" else format(curves[n][k], ".17g") for n in names))
    (d / "curves.csv").write_text("\n".join(lines) + "\n")
    info = {
        "seeds": [r.seed for r in records],
        "epochs": summary["epochs"],
        "final_E_error": [float(v) for v in summary["final_E_error"]],
        "final_nu_error": [float(v) for v in summary["final_nu_error"]],
        "median_E_error": summary["median_E_error"],
        "median_nu_error": summary["median_nu_error"],
        "std_convention": "population (ddof=0)",
    }
    (d / "summary.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return d


def load_model_config(path) -> ModelConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"{path}: {exc}") from exc
    for key in ("dataset", "output"):
        d.pop(key, None)
    try:
        return ModelConfig.from_dict(d)
    except TypeError as exc:
        raise BundleFormatError(f"{path}: {exc}") from exc


def run_inversion(cfg: ModelConfig, data_dir, out_dir) -> dict:
    """Train every seed, write ``run-<seed>/`` and ``aggregate/``; returns the summary."""
    data = read_bundle(data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    records = []
    for seed in cfg.seeds:
        record = train_one(cfg, data, seed)
        write_run(out / f"run-{seed}", record)
        log.info("seed %d: %d epochs, E error %.4f, nu error %.4f",
                 seed, record.epochs, record.final_E_error, record.final_nu_error)
        records.append(record)
    summary = aggregate_runs(records)
    write_aggregate(out / "aggregate", summary, records)
    return summary


def cmd_invert(args) -> int:
    cfg = load_model_config(args.model)
    run_inversion(cfg, args.data, args.out)
    return 0


# evaluate ------------------------------------------------------------------------

def _load_estimate(d: Path, name: str) -> np.ndarray:
    for candidate in (f"est_{name}.csv", f"truth_{name}.csv"):
        if (d / candidate).exists():
            return read_csv(d / candidate)
    raise BundleFormatError(f"{d} has neither est_{name}.csv nor truth_{name}.csv")


def evaluate_dirs(est_dir, truth_dir) -> dict:
    """Error metrics of an estimate directory against a truth bundle.

    The estimate directory is a run directory (``est_*.csv``, optional
    ``valid_mask.csv``) or another bundle, whose ``truth_*`` fields are then
    taken as the estimate.  Pixels outside the mask or with non-finite
    estimates are excluded.
    """
    est_dir, truth_dir = Path(est_dir), Path(truth_dir)
    truth = read_bundle(truth_dir)
    tE, tnu = truth.truth("E"), truth.truth("nu")
    if tE is None or tnu is None:
        raise BundleFormatError(f"{truth_dir} carries no truth_E/truth_nu fields")
    E, nu = _load_estimate(est_dir, "E"), _load_estimate(est_dir, "nu")
    if E.shape != tE.shape or nu.shape != tnu.shape:
        raise BundleFormatError(f"estimate grid {E.shape} does not match truth grid {tE.shape}")
    mask = np.isfinite(E) & np.isfinite(nu)
    if (est_dir / "valid_mask.csv").exists():
        m = read_csv(est_dir / "valid_mask.csv")
        if m.shape != mask.shape:
            raise BundleFormatError("valid_mask.csv does not match the grid")
        mask &= m > 0.5
    with np.errstate(invalid="ignore"):
        err_E = np.where(mask, np.abs(E - tE) / np.abs(tE), np.nan)
        err_nu = np.where(mask, np.abs(nu - tnu) / np.abs(tnu), np.nan)
    return {
        "E_error": mean_abs_rel_error(E, tE, mask),
        "nu_error": mean_abs_rel_error(nu, tnu, mask),
        "valid_pixels": int(mask.sum()),
        "total_pixels": int(mask.size),
        "error_map_E": err_E,
        "error_map_nu": err_nu,
    }


def cmd_evaluate(args) -> int:
    m = evaluate_dirs(args.est, args.truth)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("E_error,nu_error,valid_pixels,total_pixels\n"
                   f"{m['E_error']:.17g},{m['nu_error']:.17g},{m['valid_pixels']},{m['total_pixels']}\n")
    write_csv(out.parent / "error_map_E.csv", m["error_map_E"])
    write_csv(out.parent / "error_map_nu.csv", m["error_map_nu"])
    return 0


# render --------------------------------------------------------------------------

def grayscale_bytes(values: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    """``round(255 (v - min) / (max - min))`` with halves rounded up, clamped to [0, 255].

    Defaults take the finite min and max of the field.  Non-finite pixels map
    to 0.  A constant field with ``min == max`` renders as 0.
    """
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    if vmin is None:
        vmin = float(values[finite].min()) if finite.any() else 0.0
    if vmax is None:
        vmax = float(values[finite].max()) if finite.any() else 0.0
    if vmax < vmin:
        raise ValueError(f"render range is inverted: min {vmin} > max {vmax}")
    if vmax == vmin:
        if finite.any() and np.ptp(values[finite]) > 0:
            raise ValueError("render range has min == max but the field is not constant")
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = np.floor(255.0 * (values - vmin) / (vmax - vmin) + 0.5)
    scaled = np.where(finite, scaled, 0.0)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def ppm_bytes(values: np.ndarray, vmin=None, vmax=None) -> bytes:
    """Binary P6 image, top row of the image = last row of the field."""
    g = grayscale_bytes(values, vmin, vmax)[::-1]
    ny, nx = g.shape
    rgb = np.repeat(g[:, :, None], 3, axis=2)
    return f"P6\n{nx} {ny}\n255\n".encode("ascii") + rgb.tobytes()


def cmd_render(args) -> int:
    values = read_csv(args.field)
    Path(args.out).write_bytes(ppm_bytes(values, args.min, args.max))
    return 0


# entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="elastinv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="synthesize a strain dataset with the FEM solver")
    g.add_argument("--phantom", required=True, help="phantom JSON file")
    g.add_argument("--nx", type=int, required=True)
    g.add_argument("--ny", type=int, required=True)
    g.add_argument("--noise", type=float, default=0.0, help="noise level as a fraction of max|strain|")
    g.add_argument("--noise-seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("invert", help="train a model on a dataset")
    i.add_argument("--data", required=True)
    i.add_argument("--model", required=True, help="model config JSON file")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_invert)

    e = sub.add_parser("evaluate", help="error metrics of an estimate against ground truth")
    e.add_argument("--est", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", required=True, help="metrics CSV path")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render", help="render a field CSV as a grayscale PPM")
    r.add_argument("--field", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--min", type=float, default=None)
    r.add_argument("--max", type=float, default=None)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SingularSystemError, ConvergenceError, FloatingPointError) as exc:
        print(f"elastinv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BundleFormatError, ValueError, KeyError, OSError) as exc:
        print(f"elastinv: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
