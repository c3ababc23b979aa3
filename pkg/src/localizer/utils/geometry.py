import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * math.pi


class Pose6(BaseModel):
    """
    Pose 6DoF continue du capteur : position (m) et angles d'Euler (rad).

    Convention : R = Rz(yaw) . Ry(pitch) . Rx(roll), appliquée à des vecteurs colonnes.
    Le lacet est ramené dans [0, 2pi).
    """
    model_config = ConfigDict(frozen=True)

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    @model_validator(mode="before")
    def check_finite(cls, values):
        if isinstance(values, dict):
            for name, value in values.items():
                if value is not None and not math.isfinite(float(value)):
                    raise ValueError(f"Composante de pose non finie : {name}={value}")
        return values

    @field_validator("yaw")
    def normalize_yaw(cls, yaw: float) -> float:
        return normalize_angle(yaw)

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def rpy(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])


@dataclass(frozen=True)
class Transform:
    """Transformation rigide : p' = R.p + t."""
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Transform") -> "Transform":
        # self o other : on applique d'abord other
        return Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def normalize_angle(angle: float) -> float:
    """Ramène un angle dans [0, 2pi)."""
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    if a >= TWO_PI:
        a = 0.0
    return a


def euler_to_matrices(roll: np.ndarray, pitch: np.ndarray, yaw: np.ndarray) -> np.ndarray:
    """
    Matrices de rotation (N, 3, 3) pour des tableaux d'angles.

    Args:
        roll, pitch, yaw: angles (rad), tableaux de même taille.

    Returns:
        np.ndarray: Rz(yaw) . Ry(pitch) . Rx(roll) pour chaque triplet, contigu en mémoire.
    """
    angles = np.column_stack([np.atleast_1d(yaw), np.atleast_1d(pitch), np.atleast_1d(roll)])
    # "ZYX" majuscule = rotations intrinsèques, soit Rz . Ry . Rx
    return np.ascontiguousarray(Rotation.from_euler("ZYX", angles).as_matrix())


def pose_to_transform(p: Pose6) -> Transform:
    rotation = euler_to_matrices(p.roll, p.pitch, p.yaw)[0]
    return Transform(rotation, p.xyz)


def transform_point(t: Transform, p: np.ndarray) -> np.ndarray:
    return t.rotation @ np.asarray(p, dtype=float) + t.translation


def transform_points(t: Transform, points: np.ndarray) -> np.ndarray:
    """Applique la transformation à un tableau (N, 3) de points."""
    return np.asarray(points, dtype=float) @ t.rotation.T + t.translation


def rotation_error(a: Pose6, b: Pose6) -> float:
    """
    Angle géodésique (rad) de R_a^-1 . R_b, dans [0, pi].

    Passe par le vecteur de rotation de scipy, plus précis que arccos((tr(R) - 1) / 2)
    pour les petits angles.
    """
    ra = Rotation.from_matrix(pose_to_transform(a).rotation)
    rb = Rotation.from_matrix(pose_to_transform(b).rotation)
    return float((ra.inv() * rb).magnitude())


def translation_error(a: Pose6, b: Pose6) -> float:
    return float(np.linalg.norm(a.xyz - b.xyz))
