"""Training loop, error metrics and multi-seed aggregation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bundle import FieldBundle
from .fd import grid_spacing
from .fem import normalize_for_network
from .grid import redimensionalize
from .losses import VARIANTS, WeightFields, assemble_loss, minmax_update, term_names
from .networks import DEFAULT_CHANNELS, DensePINN, MLPConfig, UNet, UNetConfig

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    variant: str
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    mlp: MLPConfig = field(default_factory=MLPConfig)
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int | None = None
    wall_seconds: float | None = None
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if (self.epochs is None) == (self.wall_seconds is None):
            raise ValueError("give exactly one budget: epochs or wall_seconds")
        if self.epochs is not None and self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        self.channels = tuple(int(c) for c in self.channels)
        self.betas = tuple(float(b) for b in self.betas)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        budget = d.pop("budget", {})
        mlp = MLPConfig(**d.pop("mlp", {}))
        return cls(mlp=mlp, epochs=budget.get("epochs"), wall_seconds=budget.get("wall_seconds"), **d)

    def to_dict(self) -> dict:
        budget = {"epochs": self.epochs} if self.epochs is not None else {"wall_seconds": self.wall_seconds}
        return {
            "variant": self.variant,
            "channels": list(self.channels),
            "mlp": {"hidden_layers": self.mlp.hidden_layers, "width": self.mlp.width,
                    "activation": self.mlp.activation},
            "lr": self.lr,
            "betas": list(self.betas),
            "eps": self.eps,
            "budget": budget,
            "seeds": list(self.seeds),
        }


@dataclass
class RunRecord:
    seed: int
    variant: str
    terms: list[str]
    losses: list[dict[str, float]] = field(default_factory=list)
    totals: list[float] = field(default_factory=list)
    E_error: list[float] = field(default_factory=list)
    nu_error: list[float] = field(default_factory=list)
    fields: dict[str, np.ndarray] = field(default_factory=dict)
    final_E_error: float = float("nan")
    final_nu_error: float = float("nan")

    @property
    def epochs(self) -> int:
        return len(self.totals)


def mean_abs_rel_error(est, truth, mask=None) -> float:
    """Mean of ``|est - truth| / |truth|`` over the pixels where ``mask`` holds."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    mask = np.ones(est.shape, bool) if mask is None else np.asarray(mask, bool)
    if not mask.any():
        raise ValueError("error mask selects no pixels")
    t = truth[mask]
    if np.any(t == 0):
        raise ValueError("truth is zero on masked-in pixels")
    return float(np.mean(np.abs(est[mask] - t) / np.abs(t)))


def _errors(Lam, M, scales, truth_E, truth_nu):
    E, nu, valid = redimensionalize(M, Lam, scales)
    if truth_E is None or not valid.any():
        return float("nan"), float("nan"), E, nu, valid
    return (mean_abs_rel_error(E, truth_E, valid), mean_abs_rel_error(nu, truth_nu, valid),
            E, nu, valid)


class _Model:
    """Network plus input plumbing for one variant."""

    def __init__(self, cfg: ModelConfig, data: FieldBundle, seed: int):
        self.variant = cfg.variant
        geom = data.geom
        if cfg.variant == "dense-PINN":
            mcfg = MLPConfig(cfg.mlp.hidden_layers, cfg.mlp.width, cfg.mlp.activation, seed)
            self.net = DensePINN(mcfg)
            X, Y = geom.coordinates()
            xy = np.stack([X.ravel(), Y.ravel()], axis=1) / data.scales.l0
            self.input = Tensor(xy, requires_grad=True)
        else:
            out = 2 if cfg.variant == "P" else 5
            self.net = UNet(UNetConfig(out_channels=out, channels=cfg.channels, seed=seed))
            self.input, _ = normalize_for_network(data.strain())

    def forward(self):
        if self.variant == "dense-PINN":
            params, stresses = self.net(self.input)
            return params, stresses, self.input
        return self.net(self.input)

    def fields(self, outputs, shape):
        """Dimensionless ``Lambda, M`` and stresses (or None) as arrays."""
        H, W = shape
        if self.variant == "dense-PINN":
            params, stresses, _ = outputs
            p = params.data.T.reshape(2, H, W)
            s = stresses.data.T.reshape(3, H, W)
            return p[0], p[1], s
        d = outputs.data
        return d[0], d[1], (d[2:5] if d.shape[0] == 5 else None)


def train_one(cfg: ModelConfig, data: FieldBundle, seed: int) -> RunRecord:
    strain = data.strain().stack()
    shape = data.geom.shape
    sp = grid_spacing(data.geom, data.scales)
    targets = data.boundary.targets(data.scales.sigma0)
    truth_E, truth_nu = data.truth("E"), data.truth("nu")
    if cfg.variant != "P" and not targets:
        raise ValueError("dataset has no boundary targets")

    model = _Model(cfg, data, seed)
    weights = WeightFields.for_variant(cfg.variant, shape)
    net_params = model.net.parameters()
    psi_params = weights.parameters() if weights is not None else []
    opt = ad.Adam(net_params + psi_params, cfg.lr, cfg.betas, cfg.eps)
    record = RunRecord(seed=seed, variant=cfg.variant, terms=term_names(cfg.variant, targets))

    start = time.perf_counter()
    epoch = 0
    while True:
        if cfg.epochs is not None and epoch >= cfg.epochs:
            break
        if cfg.wall_seconds is not None and time.perf_counter() - start >= cfg.wall_seconds:
            break
        epoch += 1
        opt.zero_grad()
        outputs = model.forward()
        lb = assemble_loss(cfg.variant, outputs, strain, targets, sp, weights)
        lb.weighted_total.backward()
        Lam, M, _ = model.fields(outputs, shape)
        e_err, nu_err, *_ = _errors(Lam, M, data.scales, truth_E, truth_nu)
        record.losses.append(lb.terms)
        record.totals.append(lb.unweighted_total)
        record.E_error.append(e_err)
        record.nu_error.append(nu_err)
        minmax_update(weights, net_params, opt)
        if epoch % 100 == 0:
            log.info("seed %d epoch %d loss %.4e E-err %.4f nu-err %.4f",
                     seed, epoch, lb.unweighted_total, e_err, nu_err)

    outputs = model.forward()
    Lam, M, S = model.fields(outputs, shape)
    e_err, nu_err, E, nu, valid = _errors(Lam, M, data.scales, truth_E, truth_nu)
    record.final_E_error, record.final_nu_error = e_err, nu_err
    s0 = data.scales.sigma0
    record.fields = {"E": E, "nu": nu, "valid": valid.astype(np.float64),
                     "lambda": Lam * s0, "mu": M * s0}
    if S is not None and cfg.variant != "P":
        for k, name in enumerate(("xx", "yy", "xy")):
            record.fields[f"stress_{name}"] = S[k] * s0
    if weights is not None:
        record.fields.update(weights.arrays())
    return record


def train(cfg: ModelConfig, data: FieldBundle) -> list[RunRecord]:
    """One RunRecord per configured seed."""
    return [train_one(cfg, data, seed) for seed in cfg.seeds]


def aggregate_runs(records: list[RunRecord]) -> dict:
    """Seed statistics: curves truncated to the shortest run, pixelwise field means.

    Standard deviations use the population convention (``ddof=0``).
    """
    if not records:
        raise ValueError("nothing to aggregate")
    shapes = {r.fields["E"].shape for r in records if "E" in r.fields}
    if len(shapes) > 1:
        raise ValueError(f"runs have different grids: {shapes}")
    n = min(r.epochs for r in records)
    curves = {"epoch": np.arange(1, n + 1)}
    series = {"total": [r.totals[:n] for r in records],
              "E_error": [r.E_error[:n] for r in records],
              "nu_error": [r.nu_error[:n] for r in records]}
    for term in records[0].terms:
        series[term] = [[row[term] for row in r.losses[:n]] for r in records]
    for name, rows in series.items():
        a = np.asarray(rows, dtype=np.float64).reshape(len(records), n)
        curves[f"{name}_mean"] = a.mean(axis=0)
        curves[f"{name}_std"] = a.std(axis=0)
    fields = {}
    for name in records[0].fields:
        stack = np.stack([r.fields[name] for r in records])
        with np.errstate(invalid="ignore"), _quiet_nanmean():
            fields[name] = np.nanmean(stack, axis=0)
    finals_E = np.array([r.final_E_error for r in records])
    finals_nu = np.array([r.final_nu_error for r in records])
    return {
        "epochs": n,
        "curves": curves,
        "fields": fields,
        "final_E_error": finals_E,
        "final_nu_error": finals_nu,
        "median_E_error": float(np.median(finals_E)),
        "median_nu_error": float(np.median(finals_nu)),
    }


class _quiet_nanmean:
    def __enter__(self):
        import warnings
        self._ctx = warnings.catch_warnings()
        self._ctx.__enter__()
        warnings.simplefilter("ignore", RuntimeWarning)

    def __exit__(self, *exc):
        return self._ctx.__exit__(*exc)
