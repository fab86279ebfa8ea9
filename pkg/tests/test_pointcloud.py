import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofbench.errors import ParseError, ValidationError
from spoofbench.pointcloud import (
    Point,
    PointCloud,
    Pose,
    append,
    load_csv,
    load_binary,
    load_pointcloud,
    save_csv,
    save_binary,
    save_pointcloud,
    transform_pose,
)

from conftest import random_cloud


def test_empty_file_loads_as_empty_cloud(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert len(load_csv(path)) == 0
    binpath = tmp_path / "empty.bin"
    save_binary(PointCloud(), binpath)
    assert len(load_binary(binpath)) == 0


def test_csv_single_row_identity(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("w_x,w_y,w_z,intensity\n1.0,2.0,0.5,0.3\n")
    cloud = load_csv(path)
    assert cloud[0] == Point(1.0, 2.0, 0.5, 0.3)


def test_csv_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(0)
    cloud = random_cloud(rng, 1000)
    path = tmp_path / "rt.csv"
    save_csv(cloud, path)
    back = load_csv(path)
    assert np.array_equal(back.data, cloud.data)


def test_binary_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(1)
    # The packed format stores float32; draw float32-representable values.
    raw = rng.uniform(-50, 50, (1000, 4)).astype(np.float32)
    raw[:, 3] = rng.uniform(0, 1, 1000).astype(np.float32)
    cloud = PointCloud(raw.astype(np.float64))
    path = tmp_path / "rt.bin"
    save_binary(cloud, path)
    back = load_binary(path)
    assert np.array_equal(back.data, cloud.data)


def test_save_load_dispatch(tmp_path):
    rng = np.random.default_rng(2)
    cloud = random_cloud(rng, 10)
    save_pointcloud(cloud, tmp_path / "c.csv", "csv")
    assert len(load_pointcloud(tmp_path / "c.csv")) == 10
    save_pointcloud(cloud, tmp_path / "c.bin", "packed-binary")
    assert len(load_pointcloud(tmp_path / "c.bin")) == 10
    with pytest.raises(ValidationError):
        save_pointcloud(cloud, tmp_path / "c.xyz", "xyz")


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("w_x,w_y,w_z,intensity\n1.0,2.0,0.5,0.3\n1.0,oops,0.5,0.3\n")
    with pytest.raises(ParseError) as err:
        load_csv(path)
    assert err.value.line == 3


def test_nonfinite_value_rejected(tmp_path):
    path = tmp_path / "inf.csv"
    path.write_text("w_x,w_y,w_z,intensity\ninf,0.0,0.0,0.5\n")
    with pytest.raises(ParseError):
        load_csv(path)


def test_binary_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(ParseError):
        load_binary(path)
    path.write_bytes(b"APC1" + (2).to_bytes(8, "little") + b"\x00" * 16)
    with pytest.raises(ParseError):
        load_binary(path)


def test_intensity_bounds_enforced():
    with pytest.raises(ValidationError):
        PointCloud(np.array([[0.0, 0.0, 0.0, 1.5]]))
    with pytest.raises(ValidationError):
        PointCloud(np.array([[np.nan, 0.0, 0.0, 0.5]]))


def test_transform_identity_pose():
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 50)
    out = transform_pose(cloud, Pose.identity())
    assert np.array_equal(out.data, cloud.data)


def test_transform_pure_translation():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0, 0.5]]))
    pose = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
    out = transform_pose(cloud, pose)
    assert out[0] == Point(1.0, 0.0, 0.0, 0.5)


def test_transform_inverse_composition():
    rng = np.random.default_rng(4)
    cloud = random_cloud(rng, 200)
    pose = Pose.from_axis_angle(rng.normal(size=3), 1.1, rng.normal(size=3))
    back = transform_pose(transform_pose(cloud, pose), pose.inverse())
    assert np.abs(back.data - cloud.data).max() < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3.0, 3.0))
def test_transform_preserves_distances(seed, angle):
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, 40)
    pose = Pose.from_axis_angle(rng.normal(size=3) + 1e-3, angle, rng.normal(size=3))
    out = transform_pose(cloud, pose)
    d0 = np.linalg.norm(cloud.xyz[:, None] - cloud.xyz[None, :], axis=-1)
    d1 = np.linalg.norm(out.xyz[:, None] - out.xyz[None, :], axis=-1)
    assert np.abs(d0 - d1).max() < 1e-9


def test_invalid_rotation_rejected():
    bad = np.eye(3)
    bad[0, 0] = 1.1
    with pytest.raises(ValidationError):
        Pose(bad, np.zeros(3))


def test_append_identities_and_cardinality():
    rng = np.random.default_rng(5)
    x = random_cloud(rng, 5)
    t = random_cloud(rng, 3)
    empty = PointCloud()
    assert append(x, empty) is x
    assert append(empty, t) is t
    assert len(append(x, t)) == 8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_append_associative_and_exact(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_cloud(rng, rng.integers(0, 6)) for _ in range(3))
    left = append(append(a, b), c)
    right = append(a, append(b, c))
    assert np.array_equal(left.data, right.data)
    assert np.array_equal(left.data[: len(a)], a.data)
