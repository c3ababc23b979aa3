import math

import numpy as np
import pytest
from pydantic import ValidationError

from localizer.utils.geometry import (
    TWO_PI, Pose6, Transform, euler_to_matrices, normalize_angle, pose_to_transform,
    rotation_error, transform_point, transform_points, translation_error,
)


def test_pose_yaw_normalise():
    assert Pose6(yaw=TWO_PI + 0.5).yaw == pytest.approx(0.5)
    assert Pose6(yaw=-0.5).yaw == pytest.approx(TWO_PI - 0.5)
    assert Pose6(yaw=TWO_PI).yaw == 0.0


def test_pose_non_finie():
    with pytest.raises(ValidationError, match="non finie"):
        Pose6(x=float("nan"))


def test_identity_transform():
    p = np.array([1.0, -2.0, 3.0])
    t = pose_to_transform(Pose6())
    assert np.allclose(transform_point(t, p), p)


def test_yaw_quart_de_tour():
    # lacet pi/2 : x -> y
    t = pose_to_transform(Pose6(yaw=math.pi / 2))
    assert np.allclose(transform_point(t, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)


def test_ordre_des_rotations():
    # R = Rz(yaw) . Ry(pitch) . Rx(roll)
    roll, pitch, yaw = 0.1, -0.2, 0.7
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    expected = rz @ ry @ rx
    assert np.allclose(euler_to_matrices(roll, pitch, yaw)[0], expected, atol=1e-12)


def test_euler_to_matrices_batch():
    roll = np.array([0.0, 0.01, -0.02])
    pitch = np.array([0.0, 0.02, 0.0])
    yaw = np.array([0.0, 1.0, 3.0])
    mats = euler_to_matrices(roll, pitch, yaw)
    assert mats.shape == (3, 3, 3)
    for m in mats:
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(m) == pytest.approx(1.0)


def test_compose_inverse(rng):
    for _ in range(100):
        pose = Pose6(
            x=rng.uniform(-50, 50), y=rng.uniform(-50, 50), z=rng.uniform(-5, 5),
            roll=rng.uniform(-0.1, 0.1), pitch=rng.uniform(-0.1, 0.1), yaw=rng.uniform(0, TWO_PI),
        )
        t = pose_to_transform(pose)
        composed = t.compose(t.inverse())
        assert np.allclose(composed.as_matrix(), np.eye(4), atol=1e-9)


def test_compose_order():
    a = Transform(np.eye(3), np.array([1.0, 0.0, 0.0]))
    b = pose_to_transform(Pose6(yaw=math.pi / 2))
    # a o b : rotation puis translation
    assert np.allclose(transform_point(a.compose(b), [1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-12)


def test_transform_points_matches_single():
    t = pose_to_transform(Pose6(x=1, y=2, z=3, roll=0.01, pitch=-0.01, yaw=2.0))
    pts = np.array([[1.0, 2.0, 3.0], [-4.0, 0.5, 2.0]])
    out = transform_points(t, pts)
    for p, q in zip(pts, out):
        assert np.allclose(transform_point(t, p), q)


def test_normalize_angle():
    assert normalize_angle(-TWO_PI) == 0.0
    assert normalize_angle(3 * math.pi) == pytest.approx(math.pi)


def test_erreurs_de_pose():
    a = Pose6(x=0, y=0, z=0, yaw=0.1)
    b = Pose6(x=3, y=4, z=0, yaw=0.2)
    assert translation_error(a, b) == pytest.approx(5.0)
    assert rotation_error(a, b) == pytest.approx(0.1)
    # 2pi - 0.01 et 0.01 sont à 0.02 rad l'un de l'autre
    assert rotation_error(Pose6(yaw=TWO_PI - 0.01), Pose6(yaw=0.01)) == pytest.approx(0.02)


def _random_pose(rng):
    return Pose6(
        x=rng.uniform(-50, 50), y=rng.uniform(-50, 50), z=rng.uniform(-5, 5),
        roll=rng.uniform(-0.5, 0.5), pitch=rng.uniform(-0.5, 0.5), yaw=rng.uniform(0, TWO_PI),
    )


def test_matrices_orthonormees_directes(rng):
    n = 100_000
    mats = euler_to_matrices(rng.uniform(-math.pi, math.pi, n), rng.uniform(-1.5, 1.5, n), rng.uniform(0, TWO_PI, n))
    gram = np.einsum("nji,njk->nik", mats, mats)
    assert np.abs(gram - np.eye(3)).max() < 1e-12
    assert np.abs(np.linalg.det(mats) - 1.0).max() < 1e-12


def test_origine_envoyee_sur_la_translation(rng):
    for _ in range(100):
        pose = _random_pose(rng)
        out = transform_point(pose_to_transform(pose), np.zeros(3))
        assert np.array_equal(out, pose.xyz)


def test_erreur_de_rotation_symetrique_et_triangulaire(rng):
    for _ in range(500):
        a, b, c = _random_pose(rng), _random_pose(rng), _random_pose(rng)
        ab, ba = rotation_error(a, b), rotation_error(b, a)
        assert ab == pytest.approx(ba, abs=1e-12)
        assert 0.0 <= ab <= math.pi + 1e-12
        assert rotation_error(a, c) <= ab + rotation_error(b, c) + 1e-9
        assert rotation_error(a, a) == pytest.approx(0.0, abs=1e-12)


def test_erreur_de_rotation_formule_de_la_trace(rng):
    for _ in range(500):
        a, b = _random_pose(rng), _random_pose(rng)
        ra = pose_to_transform(a).rotation
        rb = pose_to_transform(b).rotation
        cos = (np.trace(ra.T @ rb) - 1.0) / 2.0
        expected = math.acos(min(1.0, max(-1.0, cos)))
        # arccos perd en précision près de 0 et pi
        assert rotation_error(a, b) == pytest.approx(expected, abs=1e-6)
