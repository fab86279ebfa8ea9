import numpy as np
import pytest

from spoofbench.detector import SurrogateDetector
from spoofbench.features import RoiSpec, extract_features, roi_filter
from spoofbench.pointcloud import PointCloud
from spoofbench.scene import Scene
from spoofbench.spoof import LidarTimingModel, align_trace, sample_trace_library


@pytest.fixture(scope="session")
def timing():
    return LidarTimingModel.vlp16()


@pytest.fixture(scope="session")
def detector():
    return SurrogateDetector()


@pytest.fixture(scope="session")
def roi():
    return RoiSpec()


@pytest.fixture(scope="session")
def scene_cloud(roi):
    """One ROI-filtered synthetic scene shared by the slower tests."""
    return roi_filter(Scene(3).frame_cloud(0), roi)


@pytest.fixture(scope="session")
def scene_grid(scene_cloud):
    return extract_features(scene_cloud)


@pytest.fixture(scope="session")
def aligned_trace(timing):
    return align_trace(sample_trace_library(timing, 60, seed=2))


@pytest.fixture(scope="session")
def trace_grid(aligned_trace):
    return extract_features(aligned_trace.points)


def random_cloud(rng, n, extent=20.0, z=(-2.0, 2.0)):
    pts = np.column_stack(
        [
            rng.uniform(-extent, extent, n),
            rng.uniform(-extent, extent, n),
            rng.uniform(z[0], z[1], n),
            rng.uniform(0.0, 1.0, n),
        ]
    )
    return PointCloud(pts)
