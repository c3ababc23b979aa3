import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
from pydantic import BaseModel, model_validator

from localizer.io.pointcloud import Aabb, PointCloud, bounding_box, voxel_coords
from localizer.maps.hashing import (
    collision_floor, contains_coords, insert_coords, next_power_of_two, score_poses,
)
from localizer.utils.errors import CapacityExceededError, EmptyCloudError, MapFormatError
from localizer.utils.geometry import Transform

logger = logging.getLogger(__name__)

MAP_MAGIC = b"3DBBS\x01"
MAP_VERSION = 1
_HEADER = struct.Struct("<6sIdI6d")
_LEVEL_HEADER = struct.Struct("<IQ")

# Au-delà, la table d'un niveau pèse plusieurs dizaines de Mo
LARGE_BUCKET_COUNT = 1 << 22

# Plafond par défaut : 2^23 cases, environ 110 Mo par niveau
DEFAULT_MAX_BUCKETS = 1 << 23

# Doublements consécutifs sans gain relatif d'au moins STALL_RATIO avant arrêt
STALL_RATIO = 0.1
STALL_ROUNDS = 3

# Décalages j de {0,1}^3 : un voxel v occupe aussi v - j
_INFLATION_OFFSETS = np.array(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64
)


class VoxelMapModel(BaseModel):
    """
    Paramètres de construction de la carte multi-résolution.
    """
    r: float = 1.0  # résolution la plus fine (m)
    l_max: int = 6  # niveau le plus grossier, r_lmax = 2^l_max . r
    collision_target: float = 0.001  # taux de collisions primaires visé par niveau
    max_buckets: int = DEFAULT_MAX_BUCKETS  # plafond mémoire : nombre de cases par niveau

    @model_validator(mode="before")
    def validate_all(cls, values):
        r = values.get("r")
        if r is not None and r <= 0:
            raise ValueError("La résolution r doit être strictement positive")

        l_max = values.get("l_max")
        if l_max is not None and l_max < 1:
            raise ValueError("Le niveau maximal l_max doit être >= 1")

        collision_target = values.get("collision_target")
        if collision_target is not None and not (0 < collision_target < 1):
            raise ValueError("Le taux de collision visé doit être entre 0 et 1 (ex: 0.001 pour 0.1%)")

        max_buckets = values.get("max_buckets")
        if max_buckets is not None and max_buckets < 1:
            raise ValueError("Le nombre maximal de cases doit être >= 1")
        return values


@dataclass(frozen=True)
class LevelMap:
    """
    Table de hachage d'un niveau : clés (T, 3) int32 + drapeau d'occupation par case.

    Immuable une fois construite : partageable entre threads en lecture.
    """
    level: int
    resolution: float
    bucket_count: int
    keys: np.ndarray
    used: np.ndarray
    occupied_count: int
    collision_rate: float
    collision_floor: float = 0.0  # part de f(v) en double, incompressible
    target_met: bool = True

    @property
    def load_factor(self) -> float:
        return self.occupied_count / self.bucket_count

    def occupied(self) -> np.ndarray:
        """Coordonnées stockées, triées lexicographiquement (indépendant de la disposition)."""
        coords = self.keys[self.used.astype(bool)].astype(np.int64)
        if coords.shape[0] == 0:
            return coords.reshape(0, 3)
        return np.unique(coords, axis=0)

    def contains(self, coords: np.ndarray) -> np.ndarray:
        coords = np.ascontiguousarray(np.asarray(coords, dtype=np.int64).reshape(-1, 3))
        return contains_coords(self.keys, self.used, coords).astype(bool)


def _level_resolution(r: float, level: int) -> float:
    # multiplication par une puissance de deux : exacte en flottant
    return float(np.ldexp(r, level))


def _inflate(coords: np.ndarray) -> np.ndarray:
    """V_add = { v - j : v in V, j in {0,1}^3 }, sans doublon."""
    inflated = (coords[:, None, :] - _INFLATION_OFFSETS[None, :, :]).reshape(-1, 3)
    return np.unique(inflated, axis=0)


def _to_int32(coords: np.ndarray) -> np.ndarray:
    info = np.iinfo(np.int32)
    if coords.size and (coords.min() < info.min or coords.max() > info.max):
        raise CapacityExceededError("Coordonnées de voxel hors de la plage int32 : carte trop étendue pour r")
    return np.ascontiguousarray(coords, dtype=np.int32)


def _build_table(level: int, resolution: float, coords: np.ndarray,
                 collision_target: float, max_buckets: int) -> LevelMap:
    """
    Insère des coordonnées distinctes, en doublant T depuis next_pow2(4n).

    Le taux visé porte sur les collisions au-delà du plancher collision_floor (valeurs f(v)
    identiques, indépendantes de T). Le doublement s'arrête aussi après STALL_ROUNDS essais
    sans gain d'au moins STALL_RATIO, ou au plafond max_buckets : la meilleure table est
    alors gardée avec un WARNING.

    Raises:
        CapacityExceededError: la table initiale dépasse déjà max_buckets.
    """
    coords = _to_int32(coords)
    n = int(coords.shape[0])
    floor = collision_floor(coords)
    bucket_count = next_power_of_two(max(4 * n, 1))
    if bucket_count > max_buckets:
        raise CapacityExceededError(
            f"Niveau {level} : {bucket_count} cases nécessaires, plafond {max_buckets}"
        )

    best = None
    reason = None
    stalled = 0
    while True:
        keys = np.zeros((bucket_count, 3), dtype=np.int32)
        used = np.zeros(bucket_count, dtype=np.uint8)
        rate = insert_coords(keys, used, coords) / n if n else 0.0
        stalled = 0 if best is None or rate <= best[3] * (1.0 - STALL_RATIO) else stalled + 1
        if best is None or rate < best[3]:
            best = (bucket_count, keys, used, rate)
        if rate - floor <= collision_target:
            break
        if stalled >= STALL_ROUNDS:
            reason = "stagnation"
            break
        if bucket_count * 2 > max_buckets:
            reason = "plafond"
            break
        bucket_count *= 2

    bucket_count, keys, used, rate = best
    if reason is not None:
        logger.warning(
            "Niveau %d : taux visé %.5f non atteint (%s), collisions=%.5f dont plancher %.5f, T=%d",
            level, collision_target, reason, rate, floor, bucket_count,
        )
    if bucket_count >= LARGE_BUCKET_COUNT:
        logger.warning("Niveau %d : table de %d cases (%.0f Mo)", level, bucket_count,
                       (keys.nbytes + used.nbytes) / 1e6)
    logger.info(
        "Niveau %d : r=%.3f m, %d voxels occupés, T=%d, collisions=%.5f (plancher %.5f)",
        level, resolution, n, bucket_count, rate, floor,
    )
    return LevelMap(level, resolution, bucket_count, keys, used, n, rate, floor, reason is None)


def build_level(points: PointCloud, level: int, r: float, collision_target: float = 0.001,
                max_buckets: int = DEFAULT_MAX_BUCKETS) -> LevelMap:
    """
    Construit le niveau l : voxels floor(m / r_l) de tous les points, gonflés vers
    v - j (j dans {0,1}^3), puis insérés par sondage linéaire.

    Raises:
        EmptyCloudError, CapacityExceededError.
    """
    if len(points) == 0:
        raise EmptyCloudError("La carte est vide")
    if level < 0:
        raise ValueError(f"Niveau négatif : {level}")
    resolution = _level_resolution(r, level)
    source = np.unique(voxel_coords(points.points, resolution), axis=0)
    return _build_table(level, resolution, _inflate(source), collision_target, max_buckets)


def lookup(m: LevelMap, p) -> int:
    """Occupation binaire du voxel contenant p au niveau de m."""
    coords = voxel_coords(np.asarray(p, dtype=np.float64).reshape(1, 3), m.resolution)
    return int(m.contains(coords)[0])


def score(m: LevelMap, t: Transform, scan: PointCloud) -> int:
    """Nombre de points du scan, transformés par t, tombant dans un voxel occupé de m."""
    if len(scan) == 0:
        raise EmptyCloudError("Le scan est vide")
    rotations = np.ascontiguousarray(np.asarray(t.rotation, dtype=np.float64).reshape(1, 3, 3))
    offsets = np.ascontiguousarray(np.asarray(t.translation, dtype=np.float64).reshape(1, 3) / m.resolution)
    return int(score_poses(m.keys, m.used, m.resolution, rotations, offsets, scan.points)[0])


class MultiResVoxelMap:
    """
    Pile de cartes H^0 .. H^l_max, résolutions r . 2^l.
    """

    def __init__(self, r: float, l_max: int, levels: List[LevelMap], bbox: Aabb):
        if len(levels) != l_max + 1:
            raise ValueError(f"{len(levels)} niveaux fournis, {l_max + 1} attendus")
        self.r = r
        self.l_max = l_max
        self.levels = levels
        self.bbox = bbox

    def level(self, l: int) -> LevelMap:
        return self.levels[l]

    def resolution(self, l: int) -> float:
        return self.levels[l].resolution

    @classmethod
    def from_model(cls, points: PointCloud, model: VoxelMapModel) -> "MultiResVoxelMap":
        return build_multires(points, model.r, model.l_max, model.collision_target, model.max_buckets)


def build_multires(map_points: PointCloud, r: float, l_max: int, collision_target: float = 0.001,
                   max_buckets: int = DEFAULT_MAX_BUCKETS) -> MultiResVoxelMap:
    if len(map_points) == 0:
        raise EmptyCloudError("La carte est vide")
    if l_max < 1:
        raise ValueError("Le niveau maximal l_max doit être >= 1")
    levels = [build_level(map_points, l, r, collision_target, max_buckets) for l in range(l_max + 1)]
    return MultiResVoxelMap(r, l_max, levels, bounding_box(map_points))


def save_map(m: MultiResVoxelMap, path: Union[str, Path]) -> None:
    """
    Écrit la carte au format binaire little-endian :
    magic, version, r, l_max, bbox, puis pour chaque niveau (l, count, count x 3 int32).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(_HEADER.pack(MAP_MAGIC, MAP_VERSION, m.r, m.l_max, *m.bbox.min, *m.bbox.max))
        for lvl in m.levels:
            coords = lvl.occupied().astype("<i4")
            f.write(_LEVEL_HEADER.pack(lvl.level, coords.shape[0]))
            f.write(coords.tobytes())
    logger.info("Carte écrite : %s (%d niveaux)", path, m.l_max + 1)


def is_map_file(path: Union[str, Path]) -> bool:
    """Vrai si le fichier commence par le magic des cartes."""
    path = Path(path)
    if not path.is_file():
        return False
    with path.open("rb") as f:
        return f.read(len(MAP_MAGIC)) == MAP_MAGIC


def load_map(path: Union[str, Path], collision_target: float = 0.001,
             max_buckets: int = DEFAULT_MAX_BUCKETS) -> MultiResVoxelMap:
    """
    Relit une carte ; les tables de hachage sont reconstruites à partir des voxels stockés.

    Raises:
        FileNotFoundError, MapFormatError.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Fichier introuvable : {path}")
    data = path.read_bytes()

    if len(data) < _HEADER.size:
        raise MapFormatError(f"{path} : en-tête tronqué")
    magic, version, r, l_max, *bbox = _HEADER.unpack_from(data, 0)
    if magic != MAP_MAGIC:
        raise MapFormatError(f"{path} : magic invalide {magic!r}")
    if version != MAP_VERSION:
        raise MapFormatError(f"{path} : version {version} non supportée (attendu {MAP_VERSION})")
    if not r > 0 or l_max < 1:
        raise MapFormatError(f"{path} : paramètres invalides r={r}, l_max={l_max}")

    offset = _HEADER.size
    levels = []
    for expected in range(l_max + 1):
        if offset + _LEVEL_HEADER.size > len(data):
            raise MapFormatError(f"{path} : niveau {expected} manquant")
        level, count = _LEVEL_HEADER.unpack_from(data, offset)
        offset += _LEVEL_HEADER.size
        if level != expected:
            raise MapFormatError(f"{path} : niveau {level} lu, {expected} attendu")
        size = count * 3 * 4
        if offset + size > len(data):
            raise MapFormatError(f"{path} : niveau {level} tronqué")
        coords = np.frombuffer(data, dtype="<i4", count=count * 3, offset=offset).reshape(-1, 3)
        offset += size
        levels.append(_build_table(level, _level_resolution(r, level), coords.astype(np.int64),
                                   collision_target, max_buckets))

    if offset != len(data):
        raise MapFormatError(f"{path} : {len(data) - offset} octet(s) en trop")
    bbox_arr = np.array(bbox, dtype=np.float64)
    return MultiResVoxelMap(r, l_max, levels, Aabb(bbox_arr[:3], bbox_arr[3:]))
