import numpy as np
import pytest

from spoofbench.detector import (
    DetectionGrid,
    SurrogateDetector,
    SurrogateParams,
    box_mean,
    detect,
    detect_gradient,
    extract_attribute,
    load_params,
    save_params,
)
from spoofbench.errors import ValidationError
from spoofbench.features import (
    CH_COUNT,
    CH_MAX_HEIGHT,
    CH_MEAN_INTENSITY,
    CH_NONEMPTY,
    FeatureGrid,
    extract_features,
)
from spoofbench.kernels import expit
from spoofbench.pointcloud import PointCloud
from spoofbench.transforms import TransformParams

from conftest import random_cloud


def grid_with(count=0.0, height=0.0, intensity=0.0, size=32, block=None):
    data = np.zeros((8, size, size))
    if block is not None:
        u0, u1, v0, v1 = block
        data[CH_COUNT, u0:u1, v0:v1] = count
        data[CH_MAX_HEIGHT, u0:u1, v0:v1] = height
        data[CH_MEAN_INTENSITY, u0:u1, v0:v1] = intensity
        data[CH_NONEMPTY, u0:u1, v0:v1] = 1.0
    return FeatureGrid(data, 60.0)


def test_all_zero_grid_gives_logistic_bias():
    out = detect(grid_with())
    assert np.allclose(out.objectness, expit(-6.0))
    assert out.objectness[0, 0] == pytest.approx(0.0024726, abs=1e-6)


def test_dense_block_interior_crosses_threshold():
    # 6x6 block, count 3, height 1.5: the calibrated default parameters
    # must detect the interior.
    grid = grid_with(count=3.0, height=1.5, intensity=0.5, block=(10, 16, 10, 16))
    out = detect(grid)
    r = SurrogateParams().smoothing_radius
    interior = out.objectness[10 + r : 16 - r, 10 + r : 16 - r]
    assert (interior > 0.5).all()


def test_sparse_spoof_cluster_scores_below_threshold(timing_trace_grid=None):
    from spoofbench.spoof import LidarTimingModel, align_trace, sample_trace_library

    timing = LidarTimingModel.vlp16()
    for budget in (20, 40, 60):
        for seed in range(3):
            trace = align_trace(sample_trace_library(timing, budget, seed=seed))
            grid = extract_features(trace.points)
            out = detect(grid)
            assert out.objectness.max() < 0.5, (budget, seed)


def test_detect_deterministic():
    rng = np.random.default_rng(0)
    grid = extract_features(random_cloud(rng, 2000, extent=30.0))
    a = detect(grid)
    b = detect(grid)
    assert np.array_equal(a.objectness, b.objectness)
    assert np.array_equal(a.positiveness, b.positiveness)
    assert np.array_equal(a.center_offset, b.center_offset)


def test_default_params_frozen():
    p = SurrogateParams()
    assert p.version == "ref-1"
    assert p.smoothing_radius == 1
    assert (p.count_weight, p.height_weight, p.intensity_weight, p.bias) == (1.0, 1.8, 1.2, -6.0)
    assert (p.pos_count_weight, p.pos_height_weight, p.pos_intensity_weight, p.pos_bias) == (
        0.5,
        0.9,
        0.6,
        -3.0,
    )


def test_golden_objectness_values():
    # Freezes the default-parameter response on a fixed input.
    grid = grid_with(count=4.0, height=1.0, intensity=0.8, block=(5, 8, 5, 8))
    out = detect(grid)
    assert out.objectness[6, 6] == pytest.approx(expit(-6 + 4 + 1.8 + 0.96), abs=1e-12)
    assert out.positiveness[6, 6] == pytest.approx(expit(-3 + 2 + 0.9 + 0.48), abs=1e-12)


def test_params_config_round_trip(tmp_path):
    p = SurrogateParams(count_weight=2.5, version="custom-1")
    save_params(p, tmp_path / "det.yaml")
    back = load_params(tmp_path / "det.yaml")
    assert back == p


def test_params_config_rejects_malformed(tmp_path):
    (tmp_path / "bad.yaml").write_text("version: x\n")
    with pytest.raises(ValidationError):
        load_params(tmp_path / "bad.yaml")


def test_detect_rejects_nonfinite():
    data = np.zeros((8, 16, 16))
    data[CH_COUNT, 3, 3] = np.nan
    with pytest.raises(ValidationError):
        detect(FeatureGrid(data, 60.0))


def test_box_mean_zero_padding_constant_divisor():
    plane = np.zeros((5, 5))
    plane[2, 2] = 9.0
    sm = box_mean(plane, 1)
    assert sm[2, 2] == pytest.approx(1.0)
    assert sm[0, 0] == 0.0
    corner = np.ones((3, 3))
    # Edge cells still divide by the full window size.
    assert box_mean(corner, 1)[0, 0] == pytest.approx(4.0 / 9.0)


def test_objectness_monotone_in_count():
    rng = np.random.default_rng(1)
    grid = extract_features(random_cloud(rng, 1000, extent=20.0))
    out = detect(grid)
    bumped = grid.data.copy()
    u, v = 200, 250
    bumped[CH_COUNT, u, v] += 5.0
    out2 = detect(FeatureGrid(bumped, 60.0))
    assert (out2.objectness >= out.objectness - 1e-15).all()
    assert out2.objectness[u, v] > out.objectness[u, v]


def test_detection_grid_invariants_hold_for_random_input():
    rng = np.random.default_rng(2)
    data = rng.uniform(-3, 8, (8, 32, 32))
    out = detect(FeatureGrid(data, 60.0))
    assert out.objectness.min() >= 0 and out.objectness.max() <= 1
    assert out.positiveness.min() >= 0 and out.positiveness.max() <= 1
    assert out.object_height.min() >= 0
    assert np.abs(out.class_probability.sum(axis=0) - 1).max() < 1e-9


def test_extract_attribute_projection_and_purity():
    grid = grid_with(count=2.0, height=1.0, intensity=0.5, block=(4, 8, 4, 8))
    out = detect(grid)
    obj = extract_attribute(out, "objectness")
    pos = extract_attribute(out, "positiveness")
    assert obj is out.objectness
    assert pos is out.positiveness
    assert obj.sum() == out.objectness.sum()
    with pytest.raises(ValidationError):
        extract_attribute(out, "speed")
    # Extracted channels are read-only views.
    with pytest.raises(ValueError):
        obj[0, 0] = 2.0


def test_center_offset_points_to_local_count_maximum():
    data = np.zeros((8, 16, 16))
    data[CH_COUNT, 8, 8] = 50.0
    data[CH_COUNT, 7, 8] = 10.0
    out = detect(FeatureGrid(data, 60.0))
    off = out.center_offset
    # A cell on the mass gradient points toward the heavier side; the
    # nearest of equally-good shifts wins.
    assert off[0, 6, 8] == 1.0 and off[1, 6, 8] == 0.0
    # Far away from any mass the offset is zero.
    assert off[0, 2, 2] == 0.0 and off[1, 2, 2] == 0.0


def test_detect_gradient_constant_loss_is_zero(scene_grid, detector):
    grad = detect_gradient(
        lambda p: scene_grid, detector.params, lambda dg: 7.5, TransformParams()
    )
    assert np.array_equal(grad, np.zeros(3))


def test_pluggable_detector_interface(scene_cloud):
    from spoofbench.features import RoiSpec
    from spoofbench.perception import PerceptionConfig, perceive

    class UniformDetector:
        def detect(self, grid):
            h = grid.size
            obj = np.full((h, h), 0.01)
            return DetectionGrid(
                objectness=obj,
                positiveness=np.full((h, h), 0.02),
                object_height=np.zeros((h, h)),
                class_probability=np.stack([obj, 1 - obj]),
                smoothed_count=np.zeros((h, h)),
            )

    obstacles = perceive(scene_cloud, PerceptionConfig(), RoiSpec(), UniformDetector())
    assert obstacles == []
