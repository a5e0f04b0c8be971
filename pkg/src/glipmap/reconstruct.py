"""Per-map generator fitting against the observed sensor cells."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, ValidationError
from .generator import (GLIP, PRIOR_MODES, NetConfig, build, forward, make_prior_input,
                        prior_channels, with_input_channels)
from .grid import (ExposureGrid, ObservationMask, SensorSet, rasterize_sensors, normalize,
                   write_grid)


@dataclass(frozen=True)
class ReconstructionConfig:
    prior_mode: str = GLIP
    epochs: int = 150
    lr: float = 0.01
    net: NetConfig = field(default_factory=NetConfig)
    seed: int = 0
    suppress_buildings: bool = True
    log_every: int = 1
    # the sparse image alone is the network input; the mask plane is opt-in
    mask_channel: bool = False

    def __post_init__(self):
        object.__setattr__(self, "prior_mode", self.prior_mode.lower())
        if self.prior_mode not in PRIOR_MODES:
            raise ValidationError(f"prior mode must be one of {PRIOR_MODES}, got {self.prior_mode!r}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if self.log_every < 1:
            raise ValidationError(f"log_every must be >= 1, got {self.log_every}")
        if self.seed < 0:
            raise ValidationError("seed must be unsigned")


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    predicted: ExposureGrid
    loss_curve: list[tuple[int, float]]
    epochs_run: int
    seed: int
    scale: float
    initial_loss: float
    # masked loss of the map actually emitted, measured after the last update
    final_loss: float
    params: dict = field(default_factory=dict, repr=False)


def suppress_buildings(grid: ExposureGrid, buildings: ObservationMask | None) -> ExposureGrid:
    if buildings is None:
        return grid
    if buildings.dims.shape != grid.dims.shape:
        raise ValidationError(
            f"building raster {buildings.dims.shape} does not match grid {grid.dims.shape}"
        )
    values = np.where(buildings.as_bool(), 0.0, grid.values)
    return ExposureGrid(grid.dims, values)


def fit(sensors: SensorSet, buildings: ObservationMask | None,
        cfg: ReconstructionConfig) -> ReconstructionResult:
    """Fit an untrained generator to the sensor readings and emit the full map."""
    if len(sensors) == 0:
        raise ValidationError("cannot reconstruct from an empty sensor set")
    sparse, mask = rasterize_sensors(sensors)
    return fit_grid(sparse, mask, buildings, cfg)


def fit_grid(target: ExposureGrid, mask: ObservationMask, buildings: ObservationMask | None,
             cfg: ReconstructionConfig) -> ReconstructionResult:
    """Same as :func:`fit`, from a target raster and the mask of its observed cells.

    Only masked cells of ``target`` are ever read.
    """
    if target.dims.shape != mask.dims.shape:
        raise ValidationError("target and mask shapes differ")
    if buildings is not None:
        if buildings.dims.shape != target.dims.shape:
            raise ValidationError(
                f"building raster {buildings.dims.shape} does not match grid {target.dims.shape}"
            )
        # a hand-made sensor file may put a reading on a building cell
        mask = ObservationMask(mask.dims, mask.bits & (1 - buildings.bits))
    if mask.count == 0:
        raise ValidationError("no observed points")

    sparse = ExposureGrid(target.dims, np.where(mask.as_bool(), target.values, 0.0))
    sparse_n, scale = normalize(sparse)
    goal = sparse_n.values

    channels = prior_channels(cfg.prior_mode, cfg.net, cfg.mask_channel)
    net_cfg = with_input_channels(cfg.net, channels)
    z = make_prior_input(cfg.prior_mode, sparse_n, mask, seed=cfg.seed, channels=channels,
                         mask_channel=cfg.mask_channel)
    net = build(net_cfg, target.dims.shape, cfg.seed)
    opt = ad.Adam(lr=cfg.lr)

    curve = []
    initial = None
    for epoch in range(cfg.epochs):
        net.params.zero_grad()
        with ad.Tape():
            out = forward(net, z)
            loss = ad.masked_sq_loss(out, goal, mask)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(epoch, value)
        if initial is None:
            initial = value
        if epoch % cfg.log_every == 0:
            curve.append((epoch, value))
        ad.backward(loss, net.params)
        opt.step(net.params)

    out = forward(net, z).data[0, 0]
    final = ad.masked_sq_loss(ad.Tensor(out[None, None]), goal, mask).item()
    if not math.isfinite(final):
        raise DivergenceError(cfg.epochs, final)
    # a linear head can dip below zero; exposure cannot
    pred = ExposureGrid(target.dims, np.maximum(out, 0.0) * scale)
    if cfg.suppress_buildings:
        pred = suppress_buildings(pred, buildings)
    return ReconstructionResult(pred, curve, cfg.epochs, cfg.seed, scale, initial, final,
                                net.params.snapshot())


def write_loss_curve(curve, path):
    lines = ["iter,loss"] + [f"{i},{v!r}" for i, v in curve]
    Path(path).write_text("\n".join(lines) + "\n")


def read_loss_curve(path) -> list[tuple[int, float]]:
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0].strip() != "iter,loss":
        raise ValidationError(f"{path}: expected header 'iter,loss'")
    out = []
    for line in rows[1:]:
        if line.strip():
            i, v = line.split(",")
            out.append((int(i), float(v)))
    return out


def write_result(result: ReconstructionResult, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"predicted": out_dir / "predicted.emgrid", "loss": out_dir / "loss.csv"}
    write_grid(result.predicted, paths["predicted"])
    write_loss_curve(result.loss_curve, paths["loss"])
    return paths
