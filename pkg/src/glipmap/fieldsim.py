"""Synthetic urban exposure fields and random sensor placement.

Field model per transmitter::

    E = sqrt(30 * P) / max(d, d_min) * 10 ** (-wall_loss_db * W / 20)

with ``d`` the centre-to-centre distance in metres and ``W`` the number of
building entries along the grid traversal between transmitter and cell.
Transmitters combine as a root-sum-square; building cells are zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .errors import ValidationError
from .grid import (ExposureGrid, GridDims, ObservationMask, SensorReading, SensorSet,
                   read_mask, write_mask)

DEFAULT_POWER_W = 120.0
DEFAULT_FREQUENCY_HZ = 5.89e9
MAX_TRANSMITTERS = 8


@dataclass(frozen=True)
class Transmitter:
    row: int
    col: int
    power_w: float = DEFAULT_POWER_W
    frequency_hz: float = DEFAULT_FREQUENCY_HZ

    def __post_init__(self):
        if not self.power_w > 0:
            raise ValidationError(f"transmitter power must be > 0, got {self.power_w}")
        if not self.frequency_hz > 0:
            raise ValidationError(f"transmitter frequency must be > 0, got {self.frequency_hz}")


@dataclass(frozen=True)
class PropagationConfig:
    wall_loss_db: float = 10.0
    min_distance_cells: float = 1.0

    def __post_init__(self):
        if not self.wall_loss_db >= 0:
            raise ValidationError(f"wall_loss_db must be >= 0, got {self.wall_loss_db}")
        if not self.min_distance_cells > 0:
            raise ValidationError(f"min_distance_cells must be > 0, got {self.min_distance_cells}")


@dataclass(frozen=True)
class Scene:
    dims: GridDims
    buildings: ObservationMask
    transmitters: tuple[Transmitter, ...]
    seed: int = 0
    # sensor height above ground; a 2-D grid has no use for it beyond bookkeeping
    sensor_height_m: float = field(default=1.5, compare=False)

    def __post_init__(self):
        txs = tuple(self.transmitters)
        object.__setattr__(self, "transmitters", txs)
        if self.buildings.dims.shape != self.dims.shape:
            raise ValidationError(
                f"building raster {self.buildings.dims.shape} does not match grid {self.dims.shape}"
            )
        if not 1 <= len(txs) <= MAX_TRANSMITTERS:
            raise ValidationError(f"scene needs 1..{MAX_TRANSMITTERS} transmitters, got {len(txs)}")
        for t in txs:
            if not self.dims.contains(t.row, t.col):
                raise ValidationError(f"transmitter ({t.row}, {t.col}) out of bounds")
            if self.buildings.bits[t.row, t.col]:
                raise ValidationError(f"transmitter ({t.row}, {t.col}) inside a building")
        if self.seed < 0:
            raise ValidationError("scene seed must be unsigned")

    def free_cells(self) -> np.ndarray:
        """Flat row-major indices of non-building cells."""
        return np.flatnonzero(self.buildings.bits.ravel() == 0)


# -- wall crossings ----------------------------------------------------------


def traverse(a: tuple[int, int], b: tuple[int, int]) -> list[tuple[int, int]]:
    """Cells visited by the segment joining the centres of cells ``a`` and ``b``.

    Supercover traversal: when the segment passes exactly through a cell
    corner both side cells are visited (row neighbour, then column neighbour)
    between the two diagonal cells. The walk always
    starts at the lexicographically smaller endpoint, so the visited
    sequence for (a, b) and (b, a) is the same.
    """
    (r, c), (r1, c1) = sorted([tuple(a), tuple(b)])
    adr, adc = abs(r1 - r), abs(c1 - c)
    sr = 1 if r1 > r else -1
    sc = 1 if c1 > c else -1
    cells = [(r, c)]
    k = j = 0
    while k < adr or j < adc:
        if k == adr:
            cmp = 1
        elif j == adc:
            cmp = -1
        else:
            # row boundary k is crossed at t=(2k+1)/(2 adr), column j at (2j+1)/(2 adc)
            cmp = (2 * k + 1) * adc - (2 * j + 1) * adr
        if cmp < 0:
            r += sr
            k += 1
        elif cmp > 0:
            c += sc
            j += 1
        else:
            cells.append((r + sr, c))
            cells.append((r, c + sc))
            r += sr
            c += sc
            k += 1
            j += 1
        cells.append((r, c))
    return cells


def count_wall_crossings(scene: Scene, from_cell, to_cell) -> int:
    """Number of free-to-building transitions along the traversal between two cells."""
    for rc in (from_cell, to_cell):
        if not scene.dims.contains(*rc):
            raise ValidationError(f"cell {tuple(rc)} out of bounds")
    b = scene.buildings.bits
    seq = [b[r, c] for r, c in traverse(from_cell, to_cell)]
    return sum(1 for prev, cur in zip(seq, seq[1:]) if not prev and cur)


def wall_crossing_map(buildings: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    """Wall crossings from ``source`` to every cell, all rays walked in lock-step.

    Same traversal rule as :func:`traverse`; each iteration advances every
    unfinished ray by one step.
    """
    B = np.asarray(buildings).astype(bool)
    rows, cols = B.shape
    tr, tc = source
    pr, pc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    pr, pc = pr.ravel(), pc.ravel()
    # target before source in lexicographic order -> start the walk at the target
    target_first = (pr < tr) | ((pr == tr) & (pc < tc))
    r = np.where(target_first, pr, tr)
    c = np.where(target_first, pc, tc)
    r1 = np.where(target_first, tr, pr)
    c1 = np.where(target_first, tc, pc)
    adr, adc = np.abs(r1 - r), np.abs(c1 - c)
    sr = np.where(r1 > r, 1, -1)
    sc = np.where(c1 > c, 1, -1)
    k = np.zeros_like(r)
    j = np.zeros_like(r)
    prev = B[r, c]
    count = np.zeros(r.shape, dtype=np.int64)

    for _ in range(int((adr + adc).max(initial=0))):
        active = (k < adr) | (j < adc)
        if not active.any():
            break
        both = (k < adr) & (j < adc)
        cmp = np.where(k == adr, 1, np.where(j == adc, -1, (2 * k + 1) * adc - (2 * j + 1) * adr))
        rowstep = active & (cmp < 0)
        colstep = active & (cmp > 0)
        corner = active & both & (cmp == 0)

        ir = np.where(corner, r + sr, r)
        ic = np.where(corner, c + sc, c)
        b_row = B[ir, c] & corner
        b_col = B[r, ic] & corner
        count += corner & ~prev & b_row
        count += corner & ~b_row & b_col
        prev = np.where(corner, b_col, prev)

        dr = np.where(rowstep | corner, sr, 0)
        dc = np.where(colstep | corner, sc, 0)
        r = r + dr
        c = c + dc
        b_new = B[r, c]
        count += active & ~prev & b_new
        prev = np.where(active, b_new, prev)
        k = k + (rowstep | corner)
        j = j + (colstep | corner)
    return count.reshape(rows, cols)


# -- ground truth ------------------------------------------------------------


def free_space_field(power_w: float, distance_m):
    """|E| in V/m at ``distance_m`` from an isotropic source radiating ``power_w``."""
    return math.sqrt(30.0 * power_w) / np.asarray(distance_m, dtype=np.float64)


def generate_ground_truth(scene: Scene, cfg: PropagationConfig | None = None) -> ExposureGrid:
    cfg = cfg or PropagationConfig()
    dims = scene.dims
    rr, cc = np.meshgrid(np.arange(dims.rows), np.arange(dims.cols), indexing="ij")
    d_min = cfg.min_distance_cells * dims.cell_size_m
    power = np.zeros(dims.shape)
    for t in scene.transmitters:
        d = np.hypot(rr - t.row, cc - t.col) * dims.cell_size_m
        walls = wall_crossing_map(scene.buildings.bits, (t.row, t.col))
        e = free_space_field(t.power_w, np.maximum(d, d_min))
        e = e * 10.0 ** (-cfg.wall_loss_db * walls / 20.0)
        power += e * e
    field = np.sqrt(power)
    field[scene.buildings.as_bool()] = 0.0
    return ExposureGrid(dims, field)


def place_sensors(scene: Scene, count: int, seed: int, truth: ExposureGrid | None = None,
                  cfg: PropagationConfig | None = None) -> SensorSet:
    """Draw ``count`` distinct free cells uniformly without replacement.

    Readings carry the ground-truth value (computed from the scene unless
    ``truth`` is given) and are returned sorted by (row, col).
    """
    free = scene.free_cells()
    if count < 0:
        raise ValidationError("sensor count must be >= 0")
    if count > free.size:
        raise ValidationError(f"cannot place {count} sensors on {free.size} free cells")
    if truth is None:
        truth = generate_ground_truth(scene, cfg)
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(free, size=count, replace=False))
    cols = scene.dims.cols
    readings = tuple(
        SensorReading(int(i // cols), int(i % cols), float(truth.values.flat[i])) for i in picked
    )
    return SensorSet(scene.dims, readings)


# -- random scenes -------------------------------------------------------------


def random_buildings(dims: GridDims, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Axis-aligned rectangular blocks dropped until ``fraction`` of cells is covered."""
    bits = np.zeros(dims.shape, dtype=np.uint8)
    if fraction <= 0:
        return bits
    if fraction >= 0.9:
        raise ValidationError("building fraction must be < 0.9")
    lo_r, hi_r = max(1, dims.rows // 16), max(2, dims.rows // 6)
    lo_c, hi_c = max(1, dims.cols // 16), max(2, dims.cols // 6)
    target = fraction * dims.size
    while bits.sum() < target:
        h = int(rng.integers(lo_r, hi_r + 1))
        w = int(rng.integers(lo_c, hi_c + 1))
        r0 = int(rng.integers(0, dims.rows - h + 1))
        c0 = int(rng.integers(0, dims.cols - w + 1))
        bits[r0:r0 + h, c0:c0 + w] = 1
    return bits


def random_scene(dims: GridDims, seed: int, n_transmitters: int = 2,
                 building_fraction: float = 0.2, power_w: float = DEFAULT_POWER_W,
                 frequency_hz: float = DEFAULT_FREQUENCY_HZ) -> Scene:
    rng = np.random.default_rng(seed)
    bits = random_buildings(dims, building_fraction, rng)
    free = np.flatnonzero(bits.ravel() == 0)
    picks = rng.choice(free, size=n_transmitters, replace=False)
    txs = tuple(Transmitter(int(i // dims.cols), int(i % dims.cols), power_w, frequency_hz)
                for i in picks)
    return Scene(dims, ObservationMask(dims, bits), txs, seed)


# -- persistence ---------------------------------------------------------------


def scene_config(scene: Scene) -> Config:
    d = scene.dims
    values = {
        "scene.rows": d.rows,
        "scene.cols": d.cols,
        "scene.cell_size_m": repr(d.cell_size_m),
        "scene.seed": scene.seed,
        "scene.sensor_height_m": repr(scene.sensor_height_m),
        "scene.n_transmitters": len(scene.transmitters),
    }
    for i, t in enumerate(scene.transmitters):
        values[f"scene.tx.{i}"] = f"{t.row},{t.col},{t.power_w!r},{t.frequency_hz!r}"
    return Config({k: str(v) for k, v in values.items()})


def write_scene(scene: Scene, directory) -> tuple[Path, Path]:
    """Write ``buildings.emgrid`` and ``scene.cfg`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bpath, cpath = directory / "buildings.emgrid", directory / "scene.cfg"
    write_mask(scene.buildings, bpath)
    text = scene_config(scene).dump()
    cpath.write_text(f"buildings={bpath.name}\n" + text)
    return bpath, cpath


def read_scene(path) -> Scene:
    """Load a scene from ``scene.cfg`` (or a directory containing one)."""
    path = Path(path)
    if path.is_dir():
        path = path / "scene.cfg"
    cfg = Config.load(path)
    bpath = path.parent / cfg.get_str("buildings", "buildings.emgrid")
    buildings = read_mask(bpath)
    n = cfg.get_int("scene.n_transmitters", 0)
    txs = []
    for i in range(n):
        key = f"scene.tx.{i}"
        fields = cfg.get_list(key, cast=float)
        if fields is None or len(fields) != 4:
            cfg.fail(key, "expected row,col,power_w,frequency_hz")
        txs.append(Transmitter(int(fields[0]), int(fields[1]), fields[2], fields[3]))
    return Scene(buildings.dims, buildings, tuple(txs), cfg.get_int("scene.seed", 0),
                 cfg.get_float("scene.sensor_height_m", 1.5))
