import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1] / "src"))

from localizer.harness.scene import SceneModel, gen_scene  # noqa: E402
from localizer.io.pointcloud import PointCloud  # noqa: E402
from localizer.maps.voxelmap import build_multires  # noqa: E402
from localizer.search.config import SearchConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def single_point_cloud():
    """Un seul point au centre du voxel (0, 0, 0)"""
    return PointCloud.from_array([[0.5, 0.5, 0.5]])


@pytest.fixture(scope="session")
def small_scene_model():
    """Scène réduite 16 x 16 x 8 m : l'oracle exhaustif reste rapide"""
    return SceneModel(
        size=(16.0, 16.0, 8.0),
        building_count=2,
        building_size=(3.0, 5.0),
        margin=3.0,
        scan_range=12.0,
        scan_points=1500,
    )


@pytest.fixture(scope="session")
def small_scene(small_scene_model):
    return gen_scene(small_scene_model, seed=3)


@pytest.fixture(scope="session")
def small_map(small_scene):
    return build_multires(small_scene.map_cloud, r=1.0, l_max=2, collision_target=0.01)


@pytest.fixture(scope="session")
def narrow_cfg(small_scene):
    """
    Recherche translation seule, lacet restreint autour de la vérité terrain.
    """
    yaw = small_scene.gt_pose.yaw
    return SearchConfig(
        r=1.0,
        l_max=2,
        yaw_range=(yaw - 0.3, yaw + 0.3),
        score_threshold_fraction=0.5,
        batch_size=500,
        strategy="bfs",
        branch_mode="trans",
        downsample_target=300,
    )


@pytest.fixture(scope="session")
def narrow_oracle(small_map, small_scene, narrow_cfg):
    from localizer.harness.oracle import oracle_search

    return oracle_search(small_map, small_scene.scan_cloud, narrow_cfg)
