import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from localizer.harness.scene import SCENE_FILES, SceneModel, check_feasibility, gen_scene, load_scene, save_scene
from localizer.utils.errors import InfeasiblePoseError
from localizer.utils.geometry import TWO_PI


def test_scene_deterministe(small_scene_model, tmp_path):
    a = gen_scene(small_scene_model, seed=11)
    b = gen_scene(small_scene_model, seed=11)
    assert a.gt_pose == b.gt_pose
    assert np.array_equal(a.scan_cloud.points, b.scan_cloud.points)
    save_scene(a, tmp_path / "a")
    save_scene(b, tmp_path / "b")
    for name in SCENE_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_graines_differentes(small_scene_model):
    a = gen_scene(small_scene_model, seed=1)
    b = gen_scene(small_scene_model, seed=2)
    assert a.gt_pose != b.gt_pose


def test_realisabilite(small_scene):
    assert check_feasibility(small_scene) >= 0.95
    assert len(small_scene.scan_cloud) >= small_scene.model.min_scan_points
    assert len(small_scene.scan_cloud) <= small_scene.model.scan_points


def test_lacet_uniforme(small_scene_model):
    yaws = []
    for seed in range(20):
        try:
            yaws.append(gen_scene(small_scene_model, seed).gt_pose.yaw)
        except InfeasiblePoseError:
            continue
    counts, _ = np.histogram(yaws, bins=8, range=(0.0, TWO_PI))
    assert stats.chisquare(counts).pvalue > 0.01


def test_bruit_roulis_tangage(small_scene_model):
    model = small_scene_model.model_copy(update={"roll_pitch_noise": 0.01})
    for seed in range(5):
        pose = gen_scene(model, seed).gt_pose
        assert abs(pose.roll) <= 0.01 and abs(pose.pitch) <= 0.01
    assert gen_scene(small_scene_model, 0).gt_pose.roll == 0.0


def test_sauvegarde_relecture(small_scene, tmp_path):
    save_scene(small_scene, tmp_path)
    back = load_scene(tmp_path)
    assert back.gt_pose == small_scene.gt_pose
    assert back.rng_seed == small_scene.rng_seed
    assert back.model == small_scene.model
    assert np.allclose(back.scan_cloud.points, small_scene.scan_cloud.points, atol=1e-8)
    assert len(back.map_cloud) == len(small_scene.map_cloud)


def test_scene_absente(tmp_path):
    with pytest.raises(FileNotFoundError, match="scene.json"):
        load_scene(tmp_path)


def test_pose_irrealisable(small_scene_model):
    # aucun point dans la portée du capteur
    model = small_scene_model.model_copy(update={"min_scan_points": 10**7, "max_attempts": 3})
    with pytest.raises(InfeasiblePoseError, match="graine"):
        gen_scene(model, seed=0)


def test_modele_invalide():
    with pytest.raises(ValidationError, match="Marge"):
        SceneModel(size=(10.0, 10.0, 5.0), margin=6.0)
    with pytest.raises(ValidationError, match="pas d'échantillonnage"):
        SceneModel(spacing=0.0)
    with pytest.raises(ValidationError, match="roulis"):
        SceneModel(roll_pitch_noise=-0.1)
