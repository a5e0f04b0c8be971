import math
from fractions import Fraction

import numpy as np
import pytest

from glipmap.errors import ValidationError
from glipmap.fieldsim import (PropagationConfig, Scene, Transmitter, count_wall_crossings,
                              generate_ground_truth, place_sensors, random_scene, read_scene,
                              traverse, wall_crossing_map, write_scene)
from glipmap.grid import GridDims, ObservationMask


def open_scene(dims, txs, bits=None, seed=0):
    bits = np.zeros(dims.shape, dtype=np.uint8) if bits is None else bits
    return Scene(dims, ObservationMask(dims, bits), tuple(txs), seed)


def segment_hits_cell(p0, p1, r, c):
    """Liang-Barsky clip of segment p0->p1 against the closed square of cell (r, c)."""
    (y0, x0), (y1, x1) = p0, p1
    dy, dx = y1 - y0, x1 - x0
    t0, t1 = Fraction(0), Fraction(1)
    for p, q in ((-dx, x0 - c), (dx, c + 1 - x0), (-dy, y0 - r), (dy, r + 1 - y0)):
        if p == 0:
            if q < 0:
                return False
            continue
        t = Fraction(q) / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return False
    return True


def brute_cells(a, b, shape):
    half = Fraction(1, 2)
    p0 = (a[0] + half, a[1] + half)
    p1 = (b[0] + half, b[1] + half)
    return {(r, c) for r in range(shape[0]) for c in range(shape[1])
            if segment_hits_cell(p0, p1, r, c)}


# -- traversal -----------------------------------------------------------------


def test_traverse_matches_brute_force_cell_set():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = tuple(int(v) for v in rng.integers(0, 16, 2))
        b = tuple(int(v) for v in rng.integers(0, 16, 2))
        cells = traverse(a, b)
        assert set(cells) == brute_cells(a, b, (16, 16))
        assert len(cells) == len(set(cells))
        for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
            assert max(abs(r0 - r1), abs(c0 - c1)) == 1


def test_traverse_diagonal_includes_both_corner_cells():
    assert traverse((0, 0), (1, 1)) == [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert traverse((1, 1), (0, 0)) == [(0, 0), (1, 0), (0, 1), (1, 1)]


def test_no_buildings_zero_crossings():
    s = open_scene(GridDims(16, 16, 1.0), [Transmitter(0, 0)])
    assert count_wall_crossings(s, (0, 0), (15, 9)) == 0


def test_self_path_zero_crossings():
    bits = np.ones((16, 16), dtype=np.uint8)
    bits[0, 0] = 0
    s = open_scene(GridDims(16, 16, 1.0), [Transmitter(0, 0)], bits)
    assert count_wall_crossings(s, (5, 5), (5, 5)) == 0


def test_one_solid_building_counts_once():
    dims = GridDims(16, 16, 1.0)
    bits = np.zeros((16, 16), dtype=np.uint8)
    bits[4:9, 6:10] = 1
    s = open_scene(dims, [Transmitter(6, 0)], bits)
    a, b = (6, 1), (7, 14)
    # independent count over the brute-force supercover, walked in segment order
    cells = sorted(brute_cells(a, b, (16, 16)),
                   key=lambda rc: math.hypot(rc[0] + 0.5 - a[0] - 0.5, rc[1] + 0.5 - a[1] - 0.5))
    seq = [bits[r, c] for r, c in cells]
    expected = sum(1 for p, q in zip(seq, seq[1:]) if not p and q)
    assert expected == 1
    assert count_wall_crossings(s, a, b) == 1
    assert count_wall_crossings(s, b, a) == 1


def test_two_separate_buildings():
    bits = np.zeros((16, 16), dtype=np.uint8)
    bits[:, 4] = 1
    bits[:, 9] = 1
    s = open_scene(GridDims(16, 16, 1.0), [Transmitter(3, 0)], bits)
    assert count_wall_crossings(s, (3, 0), (3, 15)) == 2


def test_wall_crossing_symmetry_random_scenes():
    rng = np.random.default_rng(1)
    for size in (8, 16, 32):
        dims = GridDims(size, size, 1.0)
        bits = (rng.random((size, size)) < 0.3).astype(np.uint8)
        bits[0, 0] = 0
        s = open_scene(dims, [Transmitter(0, 0)], bits)
        for _ in range(200):
            a = tuple(int(v) for v in rng.integers(0, size, 2))
            b = tuple(int(v) for v in rng.integers(0, size, 2))
            assert count_wall_crossings(s, a, b) == count_wall_crossings(s, b, a)


def test_vectorized_map_matches_scalar():
    rng = np.random.default_rng(2)
    dims = GridDims(24, 20, 1.0)
    bits = (rng.random(dims.shape) < 0.25).astype(np.uint8)
    for src in [(0, 0), (12, 7), (23, 19), (5, 19)]:
        bits[src] = 0
        s = open_scene(dims, [Transmitter(*src)], bits)
        fast = wall_crossing_map(bits, src)
        for r in range(dims.rows):
            for c in range(dims.cols):
                assert fast[r, c] == count_wall_crossings(s, src, (r, c))


# -- ground truth ----------------------------------------------------------------


def test_free_space_600m_is_0p1():
    dims = GridDims(8, 128, 10.0)
    s = open_scene(dims, [Transmitter(0, 0, 120.0)])
    g = generate_ground_truth(s)
    # cells 60 apart at 10 m per cell
    assert abs(g.values[0, 60] - 0.1) <= 1e-12
    assert math.sqrt(30 * 120) / 600 == pytest.approx(0.1, abs=1e-15)


def test_60m_is_1vm_and_walls_attenuate():
    dims = GridDims(8, 16, 10.0)
    bits = np.zeros(dims.shape, dtype=np.uint8)
    s = open_scene(dims, [Transmitter(0, 0, 120.0)], bits)
    assert abs(generate_ground_truth(s).values[0, 6] - 1.0) <= 1e-12
    bits[0, 2] = 1
    bits[0, 4] = 1
    s2 = open_scene(dims, [Transmitter(0, 0, 120.0)], bits)
    assert count_wall_crossings(s2, (0, 0), (0, 6)) == 2
    g = generate_ground_truth(s2, PropagationConfig(wall_loss_db=10.0))
    assert abs(g.values[0, 6] - 0.1) <= 1e-12
    assert g.values[0, 2] == 0.0 and g.values[0, 4] == 0.0


def test_distance_clamp():
    dims = GridDims(8, 8, 10.0)
    s = open_scene(dims, [Transmitter(3, 3, 120.0)])
    g = generate_ground_truth(s, PropagationConfig(min_distance_cells=2.0))
    assert g.values[3, 3] == pytest.approx(60 / 20.0, rel=1e-12)
    assert g.values[3, 4] == pytest.approx(60 / 20.0, rel=1e-12)


def test_open_space_monotone_in_distance():
    dims = GridDims(32, 32, 5.0)
    s = open_scene(dims, [Transmitter(10, 12)])
    g = generate_ground_truth(s).values
    rr, cc = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    d = np.hypot(rr - 10, cc - 12).ravel()
    v = g.ravel()
    order = np.argsort(d, kind="stable")
    d, v = d[order], v[order]
    beyond = d > 1.0
    for i in range(1, len(d)):
        if beyond[i] and d[i] > d[i - 1]:
            assert v[i] < v[i - 1]


def test_doubling_power_scales_by_sqrt2():
    dims = GridDims(16, 16, 7.0)
    bits = np.zeros(dims.shape, dtype=np.uint8)
    bits[5:8, 2:12] = 1
    a = generate_ground_truth(open_scene(dims, [Transmitter(1, 1, 60.0)], bits)).values
    b = generate_ground_truth(open_scene(dims, [Transmitter(1, 1, 120.0)], bits)).values
    np.testing.assert_allclose(b, a * math.sqrt(2), rtol=1e-12, atol=0)


def test_two_transmitters_root_sum_square():
    dims = GridDims(16, 16, 7.0)
    t1, t2 = Transmitter(2, 2), Transmitter(12, 9, 50.0)
    g1 = generate_ground_truth(open_scene(dims, [t1])).values
    g2 = generate_ground_truth(open_scene(dims, [t2])).values
    g = generate_ground_truth(open_scene(dims, [t1, t2])).values
    np.testing.assert_allclose(g, np.sqrt(g1 ** 2 + g2 ** 2), rtol=1e-12)


def test_scene_validation():
    dims = GridDims(8, 8, 1.0)
    bits = np.zeros(dims.shape, dtype=np.uint8)
    bits[2, 2] = 1
    with pytest.raises(ValidationError, match="inside a building"):
        open_scene(dims, [Transmitter(2, 2)], bits)
    with pytest.raises(ValidationError):
        open_scene(dims, [])
    with pytest.raises(ValidationError):
        open_scene(dims, [Transmitter(0, i) for i in range(8)] + [Transmitter(1, 0)])
    with pytest.raises(ValidationError):
        Transmitter(0, 0, 0.0)


def test_ground_truth_deterministic():
    s = random_scene(GridDims.square_km(32), seed=4)
    a = generate_ground_truth(s).values
    b = generate_ground_truth(random_scene(GridDims.square_km(32), seed=4)).values
    assert a.tobytes() == b.tobytes()


# -- sensors ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def scene32():
    return random_scene(GridDims.square_km(32), seed=3)


def test_place_zero(scene32):
    assert len(place_sensors(scene32, 0, 0)) == 0


def test_place_all_free_cells(scene32):
    n = scene32.free_cells().size
    s = place_sensors(scene32, n, 1)
    cells = s.cells()
    assert len(set(cells)) == n
    assert all(scene32.buildings.bits[r, c] == 0 for r, c in cells)


def test_place_too_many(scene32):
    with pytest.raises(ValidationError):
        place_sensors(scene32, scene32.free_cells().size + 1, 0)


def test_place_seeded(scene32):
    truth = generate_ground_truth(scene32)
    a = place_sensors(scene32, 30, 7, truth=truth)
    assert a == place_sensors(scene32, 30, 7, truth=truth)
    differs = sum(place_sensors(scene32, 30, s, truth=truth) != a for s in range(8, 28))
    assert differs == 20
    for r in a:
        assert r.value_vm == truth.values[r.row, r.col]


def test_scene_round_trip(tmp_path, scene32):
    write_scene(scene32, tmp_path)
    assert read_scene(tmp_path) == scene32
