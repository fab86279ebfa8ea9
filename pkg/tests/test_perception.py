import numpy as np
import pytest

from spoofbench.detector import DetectionGrid, SurrogateDetector
from spoofbench.errors import ValidationError
from spoofbench.features import CH_COUNT, FeatureGrid, RoiSpec, extract_features
from spoofbench.perception import (
    Obstacle,
    PerceptionConfig,
    build_boxes,
    cluster,
    cluster_mask,
    filter_positiveness,
    load_obstacle_records,
    perceive,
    save_obstacles,
)
from spoofbench.pointcloud import PointCloud
from spoofbench.scene import Scene, SceneConfig, _vehicle_blob


def make_dgrid(objectness, positiveness=None, size=None):
    obj = np.asarray(objectness, dtype=np.float64)
    if positiveness is None:
        positiveness = np.full_like(obj, 0.9)
    pos = np.asarray(positiveness, dtype=np.float64)
    return DetectionGrid(
        objectness=obj,
        positiveness=pos,
        object_height=np.zeros_like(obj),
        class_probability=np.stack([obj, 1 - obj]),
        smoothed_count=obj.copy(),
    )


def flood_fill_oracle(mask, connectivity):
    """Recursive-style flood fill, independent of the BFS implementation."""
    h, w = mask.shape
    labels = -np.ones((h, w), dtype=int)
    neigh = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        neigh += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    comps = []
    for su in range(h):
        for sv in range(w):
            if not mask[su, sv] or labels[su, sv] >= 0:
                continue
            k = len(comps)
            todo = [(su, sv)]
            labels[su, sv] = k
            members = []
            while todo:
                u, v = todo.pop(0)
                members.append((u, v))
                for du, dv in neigh:
                    nu, nv = u + du, v + dv
                    if 0 <= nu < h and 0 <= nv < w and mask[nu, nv] and labels[nu, nv] < 0:
                        labels[nu, nv] = k
                        todo.append((nu, nv))
            comps.append(frozenset(members))
    return set(comps)


def test_perception_config_validation():
    with pytest.raises(ValidationError):
        PerceptionConfig(objectness_threshold=0.0)
    with pytest.raises(ValidationError):
        PerceptionConfig(positiveness_threshold=1.0)
    with pytest.raises(ValidationError):
        PerceptionConfig(connectivity=6)


def test_cluster_all_below_threshold():
    dg = make_dgrid(np.full((8, 8), 0.5))
    assert cluster(dg, PerceptionConfig()) == []


def test_cluster_diagonal_adjacency():
    obj = np.zeros((8, 8))
    obj[2, 2] = 0.9
    obj[3, 3] = 0.9
    dg = make_dgrid(obj)
    assert len(cluster(dg, PerceptionConfig(connectivity=4))) == 2
    assert len(cluster(dg, PerceptionConfig(connectivity=8))) == 1


def test_cluster_matches_flood_fill_oracle():
    rng = np.random.default_rng(0)
    for connectivity in (4, 8):
        for _ in range(20):
            mask = rng.random((32, 32)) < rng.uniform(0.2, 0.6)
            got = {frozenset(c) for c in cluster_mask(mask, connectivity)}
            assert got == flood_fill_oracle(mask, connectivity)


def test_cluster_ordering_deterministic():
    obj = np.zeros((16, 16))
    obj[10:12, 2:4] = 0.9
    obj[2:4, 10:12] = 0.9
    comps = cluster(make_dgrid(obj), PerceptionConfig())
    assert min(c[0] for c in comps[0]) < min(c[0] for c in comps[1])


def test_filter_positiveness_thresholds():
    obj = np.zeros((8, 8))
    obj[1:3, 1:3] = 0.9
    cfg = PerceptionConfig()
    low = make_dgrid(obj, np.full((8, 8), 0.05))
    assert filter_positiveness(cluster(low, cfg), low, cfg) == []
    high = make_dgrid(obj, np.full((8, 8), 0.9))
    assert len(filter_positiveness(cluster(high, cfg), high, cfg)) == 1
    exact = make_dgrid(obj, np.full((8, 8), 0.1))
    assert filter_positiveness(cluster(exact, cfg), exact, cfg) == []


def test_build_boxes_empty_cell_cluster_degenerates():
    size = 512
    obj = np.zeros((size, size))
    obj[100:102, 200:202] = 0.9
    dg = make_dgrid(obj)
    grid = extract_features(PointCloud())
    comps = cluster(dg, PerceptionConfig())
    boxes = build_boxes(comps, PointCloud(), grid, dg)
    assert len(boxes) == 1
    obs = boxes[0]
    assert obs.point_count == 0
    assert obs.length == obs.width == obs.height == 0.0


def test_build_boxes_height_from_point_extent():
    from spoofbench.features import world_to_cell

    pts = PointCloud(np.array([[5.0, 0.0, 0.2, 0.5], [5.0, 0.0, 1.4, 0.5]]))
    grid = extract_features(pts)
    u, v = world_to_cell(5.0, 0.0)
    obj = np.zeros((512, 512))
    obj[u, v] = 0.9
    dg = make_dgrid(obj)
    boxes = build_boxes(cluster(dg, PerceptionConfig()), pts, grid, dg)
    assert boxes[0].height == pytest.approx(1.2)
    assert boxes[0].point_count == 2


def test_obstacle_invariants_from_pipeline(scene_cloud, detector, roi):
    cfg = PerceptionConfig()
    from spoofbench.features import roi_filter

    filtered = roi_filter(scene_cloud, roi)
    grid = extract_features(filtered, roi.range_m)
    dg = detector.detect(grid)
    obstacles = perceive(scene_cloud, cfg, roi, detector)
    for obs in obstacles:
        assert obs.avg_positiveness > cfg.positiveness_threshold
        for u, v in obs.cells:
            assert dg.objectness[u, v] > cfg.objectness_threshold


def test_perceive_empty_cloud(detector, roi):
    assert perceive(PointCloud(), PerceptionConfig(), roi, detector) == []


def test_perceive_vehicle_blob_yields_one_obstacle(detector, roi):
    rng = np.random.default_rng(1)
    blob = _vehicle_blob(rng, 7.0, 0.0, -1.73, length=4.0, width=2.0, height=1.5)
    assert len(blob) >= 300
    obstacles = perceive(PointCloud(blob), PerceptionConfig(), roi, detector)
    assert len(obstacles) == 1
    obs = obstacles[0]
    assert obs.label == "vehicle"
    assert 5.0 < obs.center_x < 9.0
    assert abs(obs.center_y) < 1.0


def test_perceive_deterministic(scene_cloud, detector, roi):
    a = perceive(scene_cloud, PerceptionConfig(), roi, detector)
    b = perceive(scene_cloud, PerceptionConfig(), roi, detector)
    assert a == b


def test_obstacle_report_round_trip(tmp_path, scene_cloud, detector, roi):
    obstacles = perceive(scene_cloud, PerceptionConfig(), roi, detector)
    save_obstacles(obstacles, tmp_path / "obs.jsonl")
    records = load_obstacle_records(tmp_path / "obs.jsonl")
    assert len(records) == len(obstacles)
    for rec, obs in zip(records, obstacles):
        assert rec["point_count"] == obs.point_count
        assert rec["label"] == obs.label
