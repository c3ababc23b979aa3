"""
Scènes synthétiques : bâtiments en forme de boîtes posés sur un sol plan, pose vérité terrain
et scan exprimé dans le repère capteur.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from pydantic import BaseModel, model_validator
from scipy.spatial import cKDTree

from localizer.io.pointcloud import PointCloud, load_cloud, save_xyz
from localizer.utils.errors import InfeasiblePoseError
from localizer.utils.geometry import TWO_PI, Pose6, pose_to_transform, transform_points

logger = logging.getLogger(__name__)

SCENE_FILES = ("map.xyz", "scan.xyz", "scene.json")


class SceneModel(BaseModel):
    """
    Paramètres du générateur de scènes.
    """
    size: Tuple[float, float, float] = (64.0, 64.0, 16.0)  # emprise de la carte (m)
    spacing: float = 0.5  # pas d'échantillonnage des surfaces (m)
    building_count: int = 8
    building_size: Tuple[float, float] = (4.0, 14.0)  # côté min / max d'un bâtiment (m)
    margin: float = 4.0  # distance aux bords pour les bâtiments et la pose
    sensor_height: float = 1.8
    scan_range: float = 30.0  # d_max du capteur simulé (m)
    scan_points: int = 4000  # taille maximale du scan avant sous-échantillonnage
    roll_pitch_noise: float = 0.0  # bruit uniforme sur roulis/tangage (0.01 rad dans les essais)
    jitter: float = 0.0  # bruit gaussien additif sur les points du scan (m)
    yaw_range: Tuple[float, float] = (0.0, TWO_PI)
    feasibility_radius: float = 1.0  # r de la carte
    feasibility_fraction: float = 0.95
    min_scan_points: int = 100
    max_attempts: int = 50

    @model_validator(mode="before")
    def validate_all(cls, values):
        size = values.get("size")
        if size is not None and any(s <= 0 for s in size):
            raise ValueError("Les dimensions de la scène doivent être strictement positives")

        spacing = values.get("spacing")
        if spacing is not None and spacing <= 0:
            raise ValueError("Le pas d'échantillonnage doit être strictement positif")

        scan_range = values.get("scan_range")
        if scan_range is not None and scan_range <= 0:
            raise ValueError("La portée du capteur doit être strictement positive")

        noise = values.get("roll_pitch_noise")
        if noise is not None and noise < 0:
            raise ValueError("Le bruit de roulis/tangage doit être >= 0")

        jitter = values.get("jitter")
        if jitter is not None and jitter < 0:
            raise ValueError("Le bruit sur les points doit être >= 0")
        return values

    @model_validator(mode="after")
    def check_layout(self):
        sx, sy, _ = self.size
        if 2 * self.margin >= min(sx, sy):
            raise ValueError(f"Marge {self.margin} m trop grande pour une scène {sx} x {sy} m")
        if self.building_size[0] > self.building_size[1]:
            raise ValueError("Taille de bâtiment : min > max")
        return self


@dataclass(frozen=True)
class Scene:
    map_cloud: PointCloud
    scan_cloud: PointCloud  # repère capteur
    gt_pose: Pose6
    rng_seed: int
    model: SceneModel


def _grid(lo: float, hi: float, spacing: float) -> np.ndarray:
    count = max(int(np.floor((hi - lo) / spacing + 1e-9)) + 1, 2)
    return np.linspace(lo, hi, count)


def _plane(u: np.ndarray, v: np.ndarray, fixed_axis: int, fixed_value: float) -> np.ndarray:
    uu, vv = np.meshgrid(u, v, indexing="ij")
    cols = [uu.ravel(), vv.ravel()]
    cols.insert(fixed_axis, np.full(uu.size, fixed_value))
    return np.column_stack(cols)


def _box_surface(lo: np.ndarray, hi: np.ndarray, spacing: float) -> np.ndarray:
    """Quatre murs et le toit d'une boîte posée au sol."""
    xs, ys, zs = (_grid(lo[k], hi[k], spacing) for k in range(3))
    faces = [
        _plane(ys, zs, 0, lo[0]), _plane(ys, zs, 0, hi[0]),
        _plane(xs, zs, 1, lo[1]), _plane(xs, zs, 1, hi[1]),
        _plane(xs, ys, 2, hi[2]),
    ]
    return np.vstack(faces)


def _buildings(model: SceneModel, rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray]]:
    sx, sy, sz = model.size
    boxes = []
    for _ in range(model.building_count):
        w, d = rng.uniform(*model.building_size, size=2)
        h = rng.uniform(min(4.0, sz), sz)
        x0 = rng.uniform(model.margin, max(sx - model.margin - w, model.margin))
        y0 = rng.uniform(model.margin, max(sy - model.margin - d, model.margin))
        boxes.append((np.array([x0, y0, 0.0]), np.array([min(x0 + w, sx), min(y0 + d, sy), h])))
    return boxes


def _inside_footprint(xy: np.ndarray, boxes, clearance: float) -> bool:
    return any(
        lo[0] - clearance <= xy[0] <= hi[0] + clearance and lo[1] - clearance <= xy[1] <= hi[1] + clearance
        for lo, hi in boxes
    )


def _feasible_fraction(tree: cKDTree, world_scan: np.ndarray, radius: float) -> float:
    distances, _ = tree.query(world_scan, k=1)
    return float(np.mean(distances <= radius))


def gen_scene(model: SceneModel, seed: int) -> Scene:
    """
    Génère une scène déterministe pour une graine donnée.

    Raises:
        InfeasiblePoseError: aucune pose avec assez de surface visible après max_attempts tirages.
    """
    rng = np.random.default_rng(seed)
    sx, sy, _ = model.size

    boxes = _buildings(model, rng)
    ground = _plane(_grid(0.0, sx, model.spacing), _grid(0.0, sy, model.spacing), 2, 0.0)
    map_points = np.vstack([ground] + [_box_surface(lo, hi, model.spacing) for lo, hi in boxes])
    map_points = np.unique(np.round(map_points, 9), axis=0)
    tree = cKDTree(map_points)

    for attempt in range(1, model.max_attempts + 1):
        xy = rng.uniform([model.margin, model.margin], [sx - model.margin, sy - model.margin])
        yaw = rng.uniform(*model.yaw_range)
        roll, pitch = rng.uniform(-model.roll_pitch_noise, model.roll_pitch_noise, size=2)
        if _inside_footprint(xy, boxes, clearance=1.0):
            continue

        gt = Pose6(x=xy[0], y=xy[1], z=model.sensor_height, roll=roll, pitch=pitch, yaw=yaw)
        t_gt = pose_to_transform(gt)
        visible = map_points[np.linalg.norm(map_points - t_gt.translation, axis=1) <= model.scan_range]
        if visible.shape[0] < model.min_scan_points:
            continue
        if visible.shape[0] > model.scan_points:
            keep = np.sort(rng.choice(visible.shape[0], model.scan_points, replace=False))
            visible = visible[keep]

        scan = transform_points(t_gt.inverse(), visible)
        if model.jitter > 0:
            scan = scan + rng.normal(0.0, model.jitter, size=scan.shape)

        fraction = _feasible_fraction(tree, transform_points(t_gt, scan), model.feasibility_radius)
        if fraction < model.feasibility_fraction:
            logger.debug("Tirage %d rejeté : %.3f des points à moins de r", attempt, fraction)
            continue

        logger.info("Scène %d : %d points de carte, %d points de scan, pose %s",
                    seed, map_points.shape[0], scan.shape[0], gt)
        return Scene(PointCloud.from_array(map_points), PointCloud.from_array(scan), gt, seed, model)

    raise InfeasiblePoseError(f"Aucune pose réalisable après {model.max_attempts} tirages (graine {seed})")


def check_feasibility(scene: Scene) -> float:
    """Part des points du scan, replacés par la vérité terrain, à moins de r de la carte."""
    tree = cKDTree(scene.map_cloud.points)
    world_scan = transform_points(pose_to_transform(scene.gt_pose), scene.scan_cloud.points)
    return _feasible_fraction(tree, world_scan, scene.model.feasibility_radius)


def save_scene(scene: Scene, directory: Union[str, Path]) -> Path:
    """Écrit map.xyz, scan.xyz et scene.json (pose vérité terrain, graine, paramètres)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_xyz(scene.map_cloud, directory / "map.xyz")
    save_xyz(scene.scan_cloud, directory / "scan.xyz")
    meta = {
        "gt_pose": scene.gt_pose.model_dump(),
        "seed": scene.rng_seed,
        "params": scene.model.model_dump(mode="json"),
    }
    (directory / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def load_scene(directory: Union[str, Path]) -> Scene:
    directory = Path(directory)
    meta_path = directory / "scene.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"Fichier introuvable : {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    return Scene(
        map_cloud=load_cloud(directory / "map.xyz", format="xyz"),
        scan_cloud=load_cloud(directory / "scan.xyz", format="xyz"),
        gt_pose=Pose6(**meta["gt_pose"]),
        rng_seed=int(meta["seed"]),
        model=SceneModel(**meta["params"]),
    )
