"""Exposure grids, observation masks and sensor sets, plus their file formats.

Two on-disk formats are handled here:

* EMGRID v1, an ASCII raster::

      EMGRID 1
      <rows> <cols> <cell_size_m>
      v00 v01 ...            (rows*cols values, row-major)

* sensor CSV with header ``row,col,value_vm``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

EMGRID_MAGIC = "EMGRID 1"
SENSOR_HEADER = ("row", "col", "value_vm")

DEFAULT_ROWS = 128
DEFAULT_COLS = 128
AREA_SIDE_M = 1000.0


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridDims:
    rows: int = DEFAULT_ROWS
    cols: int = DEFAULT_COLS
    cell_size_m: float = AREA_SIDE_M / DEFAULT_COLS

    def __post_init__(self):
        if int(self.rows) != self.rows or int(self.cols) != self.cols:
            raise ValidationError(f"grid dims must be integers, got {self.rows}x{self.cols}")
        if self.rows < 8 or self.cols < 8:
            raise ValidationError(f"grid must be at least 8x8, got {self.rows}x{self.cols}")
        if not (math.isfinite(self.cell_size_m) and self.cell_size_m > 0):
            raise ValidationError(f"cell_size_m must be > 0, got {self.cell_size_m}")

    @classmethod
    def square_km(cls, rows: int, cols: int | None = None) -> "GridDims":
        """Dims covering a 1 km wide area, cell size derived from the column count."""
        cols = rows if cols is None else cols
        return cls(rows, cols, AREA_SIDE_M / cols)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def contains(self, row: int, col: int) -> bool:
        return 0 <= row < self.rows and 0 <= col < self.cols


@dataclass(frozen=True, eq=False)
class ExposureGrid:
    """Scalar field of exposure values in V/m on a ``dims`` raster."""

    dims: GridDims
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size != self.dims.size:
            raise ValidationError(
                f"grid has {v.size} values, expected {self.dims.rows}*{self.dims.cols}"
            )
        v = v.reshape(self.dims.shape)
        if not np.all(np.isfinite(v)):
            raise ValidationError("grid values must be finite")
        if np.any(v < 0):
            raise ValidationError("grid values must be >= 0")
        object.__setattr__(self, "values", _frozen(v, np.float64))

    def __eq__(self, other):
        if not isinstance(other, ExposureGrid):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.values, other.values)

    __hash__ = None

    @classmethod
    def zeros(cls, dims: GridDims) -> "ExposureGrid":
        return cls(dims, np.zeros(dims.shape))


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Binary raster; 1 marks an observed (or, for building rasters, occupied) cell."""

    dims: GridDims
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.size != self.dims.size:
            raise ValidationError(
                f"mask has {b.size} entries, expected {self.dims.rows}*{self.dims.cols}"
            )
        b = b.reshape(self.dims.shape)
        if not np.all((b == 0) | (b == 1)):
            raise ValidationError("mask entries must be exactly 0 or 1")
        object.__setattr__(self, "bits", _frozen(b, np.uint8))

    def __eq__(self, other):
        if not isinstance(other, ObservationMask):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.bits, other.bits)

    __hash__ = None

    @classmethod
    def empty(cls, dims: GridDims) -> "ObservationMask":
        return cls(dims, np.zeros(dims.shape, dtype=np.uint8))

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def as_bool(self) -> np.ndarray:
        return self.bits.astype(bool)


@dataclass(frozen=True)
class SensorReading:
    row: int
    col: int
    value_vm: float

    def __post_init__(self):
        if not math.isfinite(self.value_vm) or self.value_vm < 0:
            raise ValidationError(
                f"sensor at ({self.row}, {self.col}) has invalid value {self.value_vm}"
            )


@dataclass(frozen=True)
class SensorSet:
    dims: GridDims
    readings: tuple[SensorReading, ...] = ()

    def __post_init__(self):
        readings = tuple(self.readings)
        seen = set()
        for r in readings:
            if not self.dims.contains(r.row, r.col):
                raise ValidationError(
                    f"sensor ({r.row}, {r.col}) outside {self.dims.rows}x{self.dims.cols} grid"
                )
            if (r.row, r.col) in seen:
                raise ValidationError(f"duplicate sensor cell ({r.row}, {r.col})")
            seen.add((r.row, r.col))
        object.__setattr__(self, "readings", readings)

    def __len__(self):
        return len(self.readings)

    def __iter__(self):
        return iter(self.readings)

    def cells(self) -> list[tuple[int, int]]:
        return [(r.row, r.col) for r in self.readings]

    def sorted(self) -> "SensorSet":
        return SensorSet(self.dims, tuple(sorted(self.readings, key=lambda r: (r.row, r.col))))


def rasterize_sensors(sensors: SensorSet) -> tuple[ExposureGrid, ObservationMask]:
    """Sparse exposure raster (zeros off-sensor) and the matching observation mask."""
    dims = sensors.dims
    values = np.zeros(dims.shape)
    bits = np.zeros(dims.shape, dtype=np.uint8)
    for r in sensors.readings:
        # SensorSet already rejects duplicates; guard hand-built tuples too
        if bits[r.row, r.col]:
            raise ValidationError(f"duplicate sensor cell ({r.row}, {r.col})")
        values[r.row, r.col] = r.value_vm
        bits[r.row, r.col] = 1
    return ExposureGrid(dims, values), ObservationMask(dims, bits)


def normalize(grid: ExposureGrid) -> tuple[ExposureGrid, float]:
    """Divide by the field maximum. Returns the scaled grid and the scale."""
    scale = float(grid.values.max())
    if scale <= 0:
        raise ValidationError("cannot normalize zero field")
    return ExposureGrid(grid.dims, grid.values / scale), scale


def denormalize(grid: ExposureGrid, scale: float) -> ExposureGrid:
    return ExposureGrid(grid.dims, grid.values * scale)


# -- EMGRID ------------------------------------------------------------------


def format_grid(values: np.ndarray, cell_size_m: float) -> str:
    values = np.asarray(values, dtype=np.float64)
    rows, cols = values.shape
    lines = [EMGRID_MAGIC, f"{rows} {cols} {cell_size_m!r}"]
    for row in values:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def write_grid(grid: ExposureGrid, path) -> None:
    Path(path).write_text(format_grid(grid.values, grid.dims.cell_size_m))


def _parse_grid_text(text: str, path=None) -> tuple[GridDims, np.ndarray]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != EMGRID_MAGIC:
        raise FormatError(f"expected header {EMGRID_MAGIC!r}", line=1, path=path)
    if len(lines) < 2:
        raise FormatError("missing dimension line", line=2, path=path)
    parts = lines[1].split()
    if len(parts) != 3:
        raise FormatError("dimension line must be '<rows> <cols> <cell_size_m>'", line=2, path=path)
    try:
        rows, cols, cell = int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError as exc:
        raise FormatError(f"bad dimension line: {exc}", line=2, path=path) from None
    try:
        dims = GridDims(rows, cols, cell)
    except ValidationError as exc:
        raise FormatError(str(exc), line=2, path=path) from None

    expected = rows * cols
    values = []
    for lineno, line in enumerate(lines[2:], start=3):
        for tok in line.split():
            if len(values) == expected:
                raise FormatError(
                    f"too many values: expected {expected} for a {rows}x{cols} grid",
                    line=lineno, path=path,
                )
            try:
                v = float(tok)
            except ValueError:
                raise FormatError(f"value {len(values) + 1}: cannot parse {tok!r}",
                                  line=lineno, path=path) from None
            if not math.isfinite(v):
                raise FormatError(f"value {len(values) + 1}: non-finite {tok!r}",
                                  line=lineno, path=path)
            values.append(v)
    if len(values) != expected:
        raise FormatError(
            f"value {len(values) + 1} missing: expected {expected} values for a "
            f"{rows}x{cols} grid, got {len(values)}",
            line=len(lines) + 1, path=path,
        )
    return dims, np.array(values).reshape(rows, cols)


def read_grid(path) -> ExposureGrid:
    dims, values = _parse_grid_text(Path(path).read_text(), path=path)
    try:
        return ExposureGrid(dims, values)
    except ValidationError as exc:
        raise FormatError(str(exc), path=path) from None


def write_mask(mask: ObservationMask, path) -> None:
    Path(path).write_text(format_grid(mask.bits, mask.dims.cell_size_m))


def read_mask(path) -> ObservationMask:
    """Read a {0,1} EMGRID raster (building masks arrive this way)."""
    dims, values = _parse_grid_text(Path(path).read_text(), path=path)
    try:
        return ObservationMask(dims, values)
    except ValidationError as exc:
        raise FormatError(str(exc), path=path) from None


# -- sensor CSV --------------------------------------------------------------


def write_sensors(sensors: SensorSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SENSOR_HEADER)
        for r in sensors.readings:
            w.writerow((r.row, r.col, f"{r.value_vm:.17g}"))


def read_sensors(path, dims: GridDims) -> SensorSet:
    """Parse a sensor CSV for a grid of ``dims``.

    The header line is optional. Errors carry the file line number.
    """
    readings = []
    seen = {}
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if lineno == 1 and tuple(f.strip() for f in rec) == SENSOR_HEADER:
                continue
            if len(rec) != 3:
                raise FormatError(f"expected 3 fields, got {len(rec)}", line=lineno, path=path)
            try:
                row, col, value = int(rec[0]), int(rec[1]), float(rec[2])
            except ValueError as exc:
                raise FormatError(f"bad field: {exc}", line=lineno, path=path) from None
            if not dims.contains(row, col):
                raise FormatError(
                    f"sensor ({row}, {col}) out of bounds for {dims.rows}x{dims.cols} grid",
                    line=lineno, path=path,
                )
            if (row, col) in seen:
                raise FormatError(
                    f"duplicate sensor cell ({row}, {col}), first seen on line {seen[(row, col)]}",
                    line=lineno, path=path,
                )
            try:
                readings.append(SensorReading(row, col, value))
            except ValidationError as exc:
                raise FormatError(str(exc), line=lineno, path=path) from None
            seen[(row, col)] = lineno
    return SensorSet(dims, tuple(readings))
