import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofbench.errors import ParseError, ValidationError
from spoofbench.features import (
    CH_COUNT,
    CH_DIRECTION,
    CH_DISTANCE,
    CH_MAX_HEIGHT,
    CH_MAX_INTENSITY,
    CH_MEAN_HEIGHT,
    CH_MEAN_INTENSITY,
    CH_NONEMPTY,
    DEFAULT_RANGE,
    GRID_SIZE,
    FeatureGrid,
    RoiSpec,
    cell_center,
    extract_features,
    load_grid,
    roi_filter,
    save_grid,
    world_to_cell,
)
from spoofbench.pointcloud import PointCloud

from conftest import random_cloud


def brute_force_features(cloud, range_m=DEFAULT_RANGE, size=GRID_SIZE):
    """Independent per-cell recomputation, one cell at a time."""
    cell = 2.0 * range_m / size
    grid = np.zeros((8, size, size))
    cells = {}
    for x, y, z, i in cloud.data:
        u = int(np.floor((range_m - x) / cell))
        v = int(np.floor((range_m - y) / cell))
        if 0 <= u < size and 0 <= v < size:
            cells.setdefault((u, v), []).append((z, i))
    for (u, v), pts in cells.items():
        zs = np.array([p[0] for p in pts])
        ins = np.array([p[1] for p in pts])
        grid[CH_COUNT, u, v] = len(pts)
        grid[CH_MEAN_HEIGHT, u, v] = zs.mean()
        grid[CH_MEAN_INTENSITY, u, v] = ins.mean()
        grid[CH_MAX_HEIGHT, u, v] = zs.max()
        grid[CH_MAX_INTENSITY, u, v] = ins[zs == zs.max()].max()
        grid[CH_NONEMPTY, u, v] = 1.0
    return grid


def test_roi_all_within_range_drops_far_points():
    cloud = PointCloud(np.array([[70.0, 0.0, 0.0, 0.5], [0.0, 0.0, 0.0, 0.5]]))
    kept = roi_filter(cloud, RoiSpec(range_m=60.0))
    assert len(kept) == 1
    assert kept[0].w_x == 0.0


def test_roi_rectangle_matches_bruteforce():
    rng = np.random.default_rng(0)
    cloud = random_cloud(rng, 500, extent=10.0)
    roi = RoiSpec(mode="rectangle", rectangle=(-5.0, 5.0, -2.0, 2.0))
    kept = roi_filter(cloud, roi)
    x, y = cloud.data[:, 0], cloud.data[:, 1]
    want = cloud.data[
        (x >= -5) & (x <= 5) & (y >= -2) & (y <= 2) & (np.hypot(x, y) <= roi.range_m)
    ]
    assert np.array_equal(kept.data, want)


def test_roi_validation():
    with pytest.raises(ValidationError):
        RoiSpec(mode="hdmap")
    with pytest.raises(ValidationError):
        RoiSpec(mode="rectangle")
    with pytest.raises(ValidationError):
        RoiSpec(mode="rectangle", rectangle=(1.0, -1.0, 0.0, 1.0))


def test_world_to_cell_examples():
    assert world_to_cell(0.0, 0.0) == (256, 256)
    eps = 1e-9
    assert world_to_cell(60.0 - eps, 0.0)[0] == 0
    with pytest.raises(ValidationError):
        world_to_cell(61.0, 0.0)


def test_world_to_cell_round_trip():
    for u, v in [(0, 0), (17, 301), (256, 256), (511, 511)]:
        cx, cy = cell_center(u, v)
        assert world_to_cell(cx, cy) == (u, v)


def test_boundary_points_take_lower_index_cell():
    cell = 2 * DEFAULT_RANGE / GRID_SIZE
    # A point exactly on the boundary between cells 0 and 1.
    x = DEFAULT_RANGE - cell
    u, _ = world_to_cell(x, 0.0)
    assert u == 1


def test_extract_empty_cloud():
    grid = extract_features(PointCloud())
    assert grid.data.shape == (8, 512, 512)
    for ch in (CH_COUNT, CH_MAX_HEIGHT, CH_MEAN_HEIGHT, CH_MAX_INTENSITY, CH_MEAN_INTENSITY, CH_NONEMPTY):
        assert not grid.data[ch].any()
    # Constant channels are present even for empty input.
    assert grid.data[CH_DISTANCE].max() > 0


def test_extract_single_point_cell_stats():
    cloud = PointCloud(np.array([[5.0, 0.0, 1.2, 0.4]]))
    grid = extract_features(cloud)
    u, v = world_to_cell(5.0, 0.0)
    assert grid.data[CH_COUNT, u, v] == 1
    assert grid.data[CH_MEAN_HEIGHT, u, v] == 1.2
    assert grid.data[CH_MAX_HEIGHT, u, v] == 1.2
    assert grid.data[CH_MEAN_INTENSITY, u, v] == pytest.approx(0.4)
    assert grid.data[CH_MAX_INTENSITY, u, v] == pytest.approx(0.4)
    assert grid.data[CH_NONEMPTY, u, v] == 1
    assert grid.data[CH_COUNT].sum() == 1


def test_grid_shape_and_coverage():
    grid = extract_features(PointCloud(), range_m=60.0)
    assert grid.data.shape == (8, 512, 512)
    assert grid.range_m == 60.0
    assert grid.cell_size == pytest.approx(2 * 60.0 / 512)


def test_extract_matches_bruteforce_oracle():
    rng = np.random.default_rng(1)
    cloud = random_cloud(rng, 10_000, extent=70.0)
    grid = extract_features(cloud)
    want = brute_force_features(cloud)
    for ch in (CH_COUNT, CH_MEAN_HEIGHT, CH_MEAN_INTENSITY, CH_MAX_HEIGHT, CH_MAX_INTENSITY, CH_NONEMPTY):
        assert np.allclose(grid.data[ch], want[ch], atol=1e-12), ch


def test_extract_count_conservation():
    rng = np.random.default_rng(2)
    cloud = random_cloud(rng, 5000, extent=59.0)
    grid = extract_features(cloud)
    assert grid.data[CH_COUNT].sum() == len(cloud)


def test_extract_mean_between_min_and_max():
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 3000, extent=30.0)
    grid = extract_features(cloud)
    occ = grid.data[CH_COUNT] > 0
    assert (grid.data[CH_MEAN_HEIGHT][occ] <= grid.data[CH_MAX_HEIGHT][occ] + 1e-12).all()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_extract_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, 200, extent=15.0)
    perm = rng.permutation(len(cloud))
    grid1 = extract_features(cloud)
    grid2 = extract_features(PointCloud(cloud.data[perm]))
    assert np.allclose(grid1.data, grid2.data, atol=1e-12)


def test_constant_channels_depend_only_on_cell_index():
    rng = np.random.default_rng(4)
    a = extract_features(random_cloud(rng, 100))
    b = extract_features(random_cloud(rng, 100))
    assert np.array_equal(a.data[CH_DIRECTION], b.data[CH_DIRECTION])
    assert np.array_equal(a.data[CH_DISTANCE], b.data[CH_DISTANCE])
    cx, cy = cell_center(100, 300)
    assert a.data[CH_DIRECTION, 100, 300] == pytest.approx(np.arctan2(cy, cx))
    assert a.data[CH_DISTANCE, 100, 300] == pytest.approx(np.hypot(cx, cy))


def test_nonempty_iff_count_positive():
    rng = np.random.default_rng(5)
    grid = extract_features(random_cloud(rng, 1000, extent=30.0))
    assert np.array_equal(grid.data[CH_NONEMPTY], (grid.data[CH_COUNT] > 0).astype(float))


def test_grid_io_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    grid = extract_features(random_cloud(rng, 500, extent=30.0))
    save_grid(grid, tmp_path / "grid.afg")
    back = load_grid(tmp_path / "grid.afg")
    assert back.range_m == grid.range_m
    assert back.size == grid.size
    # On-disk values are float32.
    assert np.allclose(back.data, grid.data, atol=1e-5)
    assert np.array_equal(back.data[CH_COUNT], grid.data[CH_COUNT])


def test_grid_io_rejects_corruption(tmp_path):
    path = tmp_path / "bad.afg"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(ParseError):
        load_grid(path)


def test_feature_grid_validation():
    with pytest.raises(ValidationError):
        FeatureGrid(np.zeros((7, 4, 4)))
    with pytest.raises(ValidationError):
        FeatureGrid(np.zeros((8, 4, 5)))
