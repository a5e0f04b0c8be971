"""Error metrics and classical interpolation baselines."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grid import ExposureGrid, GridDims, ObservationMask, SensorSet

RESULT_COLUMNS = ("run_id", "method", "sensor_count", "seed", "mse_vm", "mae_vm",
                  "mse_norm", "mae_norm", "n_evaluated")


def _eval_bool(reference: ExposureGrid, eval_mask) -> np.ndarray:
    if eval_mask is None:
        return np.ones(reference.dims.shape, dtype=bool)
    bits = eval_mask.bits if isinstance(eval_mask, ObservationMask) else np.asarray(eval_mask)
    if bits.shape != reference.dims.shape:
        raise ValidationError(f"eval mask {bits.shape} does not match grid {reference.dims.shape}")
    sel = bits.astype(bool)
    if not sel.any():
        raise ValidationError("empty eval mask")
    return sel


def _check(reference: ExposureGrid, predicted: ExposureGrid):
    if reference.dims.shape != predicted.dims.shape:
        raise ValidationError(
            f"grid shapes differ: {reference.dims.shape} vs {predicted.dims.shape}"
        )


def mse(reference: ExposureGrid, predicted: ExposureGrid, eval_mask=None) -> float:
    _check(reference, predicted)
    sel = _eval_bool(reference, eval_mask)
    d = reference.values[sel] - predicted.values[sel]
    return float(np.mean(d * d))


def mae(reference: ExposureGrid, predicted: ExposureGrid, eval_mask=None) -> float:
    _check(reference, predicted)
    sel = _eval_bool(reference, eval_mask)
    return float(np.mean(np.abs(reference.values[sel] - predicted.values[sel])))


def error_map(reference: ExposureGrid, predicted: ExposureGrid) -> ExposureGrid:
    _check(reference, predicted)
    return ExposureGrid(reference.dims, np.abs(reference.values - predicted.values))


def held_out_mask(dims: GridDims, sensors: SensorSet | None = None,
                  buildings: ObservationMask | None = None,
                  exclude_sensors: bool = True, exclude_buildings: bool = True) -> ObservationMask:
    """Cells scored by the held-out metrics: everything but sensor and building cells."""
    keep = np.ones(dims.shape, dtype=np.uint8)
    if exclude_sensors and sensors is not None:
        for r in sensors:
            keep[r.row, r.col] = 0
    if exclude_buildings and buildings is not None:
        keep[buildings.as_bool()] = 0
    return ObservationMask(dims, keep)


@dataclass(frozen=True)
class ErrorReport:
    mse: float
    mae: float
    n_evaluated: int
    error_map: ExposureGrid
    # same errors after dividing both maps by the reference maximum
    mse_norm: float = float("nan")
    mae_norm: float = float("nan")


def evaluate(reference: ExposureGrid, predicted: ExposureGrid, eval_mask=None) -> ErrorReport:
    sel = _eval_bool(reference, eval_mask)
    e_mse, e_mae = mse(reference, predicted, eval_mask), mae(reference, predicted, eval_mask)
    top = float(reference.values.max())
    if top > 0:
        ref_n = ExposureGrid(reference.dims, reference.values / top)
        pred_n = ExposureGrid(predicted.dims, predicted.values / top)
        mse_n, mae_n = mse(ref_n, pred_n, sel), mae(ref_n, pred_n, sel)
    else:
        mse_n = mae_n = float("nan")
    return ErrorReport(e_mse, e_mae, int(sel.sum()), error_map(reference, predicted), mse_n, mae_n)


def report_row(report: ErrorReport, run_id: str, method: str, sensor_count: int, seed) -> dict:
    return {
        "run_id": run_id,
        "method": method,
        "sensor_count": sensor_count,
        "seed": seed,
        "mse_vm": report.mse,
        "mae_vm": report.mae,
        "mse_norm": report.mse_norm,
        "mae_norm": report.mae_norm,
        "n_evaluated": report.n_evaluated,
    }


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_row(row: dict, columns=RESULT_COLUMNS) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([format_value(row.get(c, "")) for c in columns])
    return buf.getvalue()


# -- baselines -----------------------------------------------------------------


def _sensor_arrays(sensors: SensorSet):
    if len(sensors) == 0:
        raise ValidationError("interpolation needs at least one sensor")
    pts = np.array([(r.row, r.col) for r in sensors], dtype=np.float64)
    vals = np.array([r.value_vm for r in sensors], dtype=np.float64)
    return pts, vals


def _cell_centres(dims: GridDims) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(dims.rows), np.arange(dims.cols), indexing="ij")
    return np.column_stack([rr.ravel(), cc.ravel()]).astype(np.float64)


def idw_interpolate(sensors: SensorSet, dims: GridDims | None = None, power: float = 2.0) -> ExposureGrid:
    """Inverse-distance weighting over all sensors; sensor cells keep their readings."""
    dims = dims or sensors.dims
    pts, vals = _sensor_arrays(sensors)
    cells = _cell_centres(dims)
    # distances in cell units; IDW is scale free so metres are unnecessary
    d = np.sqrt(((cells[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
    at_sensor = d == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(at_sensor, 0.0, d ** -power)
        # offset by one reading so equal readings come back exactly
        out = vals[0] + (w @ (vals - vals[0])) / w.sum(axis=1)
    hit = at_sensor.any(axis=1)
    out = np.where(hit, vals[np.argmax(at_sensor, axis=1)], out)
    return ExposureGrid(dims, out.reshape(dims.shape))


def nearest_interpolate(sensors: SensorSet, dims: GridDims | None = None) -> ExposureGrid:
    """Value of the nearest sensor; ties go to the lowest (row, col) sensor."""
    dims = dims or sensors.dims
    pts, vals = _sensor_arrays(sensors)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts, vals = pts[order], vals[order]
    cells = _cell_centres(dims)
    # squared integer distances are exact; argmin keeps the first (lowest row, col) on ties
    d2 = ((cells[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    return ExposureGrid(dims, vals[np.argmin(d2, axis=1)].reshape(dims.shape))
