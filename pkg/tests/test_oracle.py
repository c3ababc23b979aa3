import math

import pytest

from localizer.harness.oracle import oracle_search
from localizer.io.pointcloud import PointCloud
from localizer.search.bnb import BranchAndBoundSearch
from localizer.search.evaluator import batch_evaluate
from localizer.search.node import Node
from localizer.utils.errors import OracleTooLargeError


def test_feuille_voisine_de_la_verite_terrain(small_map, small_scene, narrow_cfg, narrow_oracle):
    gt = small_scene.gt_pose
    prepared = BranchAndBoundSearch(small_map, narrow_cfg).set_source(small_scene.scan_cloud)
    grids = prepared.grids
    # indices de rotation les plus proches de la vérité terrain
    rot = []
    for k, angle in enumerate((gt.roll, gt.pitch, narrow_cfg.yaw_range[0] + 0.3)):
        axis = grids.axis(0, k)
        rot.append(min(int(round((angle - axis.w_min) / axis.step)), int(grids.max_index[0, k])))
    trans = [math.floor(v / narrow_cfg.r) for v in (gt.x, gt.y, gt.z)]
    [leaf] = batch_evaluate([Node(*trans, *rot, 0)], small_map, prepared.cloud, grids)

    assert narrow_oracle.best_score >= leaf.score
    assert leaf.score >= narrow_oracle.threshold
    assert all(m.score == narrow_oracle.best_score for m in narrow_oracle.maximizers)


def test_nombre_de_feuilles(narrow_oracle):
    assert narrow_oracle.leaf_count > 0
    assert 1 <= len(narrow_oracle.maximizers) <= narrow_oracle.leaf_count


def test_trop_de_feuilles(small_map, small_scene, narrow_cfg):
    with pytest.raises(OracleTooLargeError, match="limite"):
        oracle_search(small_map, small_scene.scan_cloud, narrow_cfg, max_leaves=1000)


def test_independant_de_l_ordre_des_points(small_map, small_scene, narrow_cfg, narrow_oracle):
    reversed_scan = PointCloud.from_array(small_scene.scan_cloud.points[::-1])
    other = oracle_search(small_map, reversed_scan, narrow_cfg)
    assert other.best_score == narrow_oracle.best_score
    assert {m[:6] for m in other.maximizers} == {m[:6] for m in narrow_oracle.maximizers}


def test_oracle_deterministe(small_map, small_scene, narrow_cfg, narrow_oracle):
    again = oracle_search(small_map, small_scene.scan_cloud, narrow_cfg.model_copy(update={"workers": 3}))
    assert again.best_score == narrow_oracle.best_score
    assert [m[:6] for m in again.maximizers] == [m[:6] for m in narrow_oracle.maximizers]
