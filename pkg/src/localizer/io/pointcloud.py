import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from plyfile import PlyData, PlyElementParseError, PlyHeaderParseError

from localizer.utils.errors import CloudParseError, EmptyCloudError
from localizer.utils.mappings import CLOUD_FORMAT_MAP, CLOUD_SUFFIX_MAP

logger = logging.getLogger(__name__)

MAX_LEAF_ITERATIONS = 32


@dataclass(frozen=True)
class PointCloud:
    """
    Nuage de points ordonné, tableau (N, 3) en mètres.

    dropped_count : nombre de points non finis écartés au chargement.
    """
    points: np.ndarray
    dropped_count: int = 0

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def from_array(cls, points, dropped_count: int = 0) -> "PointCloud":
        arr = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return cls(arr, dropped_count)


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def as_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}


@dataclass(frozen=True)
class LeafSearch:
    """Résultat de auto_leaf : taille de voxel retenue et drapeau de non-convergence."""
    leaf: float
    count: int
    converged: bool


def _require_points(c: PointCloud) -> None:
    if len(c) == 0:
        raise EmptyCloudError("Le nuage de points est vide")


def _finite_rows(rows: np.ndarray) -> Tuple[np.ndarray, int]:
    mask = np.all(np.isfinite(rows), axis=1)
    dropped = int(rows.shape[0] - mask.sum())
    return rows[mask], dropped


def _read_lines(path: Path) -> List[str]:
    return path.read_text(encoding="utf-8", errors="replace").splitlines()


def _parse_float_row(tokens: List[str], columns: List[int], line_no: int) -> List[float]:
    try:
        return [float(tokens[i]) for i in columns]
    except (IndexError, ValueError) as exc:
        raise CloudParseError(line_no, f"ligne de données invalide ({exc})")


def _ply_header_lines(path: Path) -> int:
    """Nombre de lignes d'en-tête PLY, 'end_header' compris (0 si absent)."""
    with path.open("rb") as f:
        for i, raw in enumerate(f, start=1):
            if raw.strip() == b"end_header":
                return i
    return 0


def _read_ply(path: Path) -> np.ndarray:
    """PLY ASCII ou binaire lu par plyfile ; seules les propriétés x, y, z de 'vertex' servent."""
    try:
        ply = PlyData.read(str(path))
    except PlyHeaderParseError as exc:
        raise CloudParseError(exc.line or 1, f"en-tête PLY invalide ({exc.message})")
    except PlyElementParseError as exc:
        row = exc.row or 0
        raise CloudParseError(_ply_header_lines(path) + row + 1, f"données PLY invalides ({exc.message})")

    header_end = _ply_header_lines(path)
    if "vertex" not in [e.name for e in ply.elements]:
        raise CloudParseError(header_end, "élément 'vertex' absent")
    vertex = ply["vertex"]
    names = [p.name for p in vertex.properties]
    if not all(axis in names for axis in ("x", "y", "z")):
        raise CloudParseError(header_end, "propriétés x, y, z absentes")
    return np.column_stack([np.asarray(vertex[axis], dtype=np.float64) for axis in ("x", "y", "z")])


def _read_pcd(path: Path) -> np.ndarray:
    lines = _read_lines(path)
    fields: List[str] = []
    counts: List[int] = []
    data_start = None
    for i, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        key = tokens[0].upper()
        if key == "FIELDS":
            fields = tokens[1:]
        elif key == "COUNT":
            try:
                counts = [int(t) for t in tokens[1:]]
            except ValueError as exc:
                raise CloudParseError(i, f"COUNT invalide ({exc})")
        elif key == "DATA":
            if len(tokens) < 2 or tokens[1].lower() != "ascii":
                raise CloudParseError(i, f"DATA {' '.join(tokens[1:])} non supporté (ascii uniquement)")
            data_start = i
            break

    if data_start is None:
        raise CloudParseError(len(lines), "ligne 'DATA ascii' introuvable")
    if not all(axis in fields for axis in ("x", "y", "z")):
        raise CloudParseError(data_start, "FIELDS ne contient pas x y z")

    # Position de colonne de chaque champ, en tenant compte de COUNT
    counts = counts or [1] * len(fields)
    offsets, col = {}, 0
    for name, count in zip(fields, counts):
        offsets[name] = col
        col += count
    columns = [offsets[axis] for axis in ("x", "y", "z")]

    rows = []
    for line_no, raw in enumerate(lines[data_start:], start=data_start + 1):
        tokens = raw.split()
        if not tokens:
            continue
        rows.append(_parse_float_row(tokens, columns, line_no))
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _read_xyz(path: Path) -> np.ndarray:
    lines = _read_lines(path)
    rows = []
    for line_no, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rows.append(_parse_float_row(stripped.split(), [0, 1, 2], line_no))
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


_READERS = {
    "ply": _read_ply,
    "pcd": _read_pcd,
    "xyz": _read_xyz,
}


def load_cloud(path: Union[str, Path], format: str = "auto") -> PointCloud:
    """
    Charge un nuage de points : PLY (ASCII ou binaire), PCD ASCII ou XYZ.

    Args:
        path: chemin du fichier.
        format: "auto" (déduit de l'extension), "ply", "pcd" ou "xyz".

    Returns:
        PointCloud: points finis dans l'ordre du fichier ; les lignes NaN/Inf sont écartées
        et comptées dans dropped_count.

    Raises:
        FileNotFoundError, CloudParseError, EmptyCloudError, ValueError (format inconnu).
    """
    path = Path(path)
    if format not in CLOUD_FORMAT_MAP:
        raise ValueError(f"Format '{format}' non supporté. Choisir parmi {list(CLOUD_FORMAT_MAP.keys())}")
    fmt = CLOUD_FORMAT_MAP[format] or CLOUD_SUFFIX_MAP.get(path.suffix.lower(), "xyz")

    if not path.is_file():
        raise FileNotFoundError(f"Fichier introuvable : {path}")

    rows = _READERS[fmt](path)
    points, dropped = _finite_rows(rows)
    if dropped:
        logger.warning("%s : %d point(s) non fini(s) écarté(s)", path, dropped)
    if points.shape[0] == 0:
        raise EmptyCloudError(f"Aucun point exploitable dans {path}")
    return PointCloud.from_array(points, dropped)


def save_xyz(c: PointCloud, path: Union[str, Path]) -> None:
    """Écrit le nuage au format texte 'x y z' (une ligne par point)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, c.points, fmt="%.9f")


def voxel_coords(points: np.ndarray, leaf: float) -> np.ndarray:
    """Indices de voxel floor(p / leaf), vraie partie entière inférieure (négatifs compris)."""
    return np.floor(points / leaf).astype(np.int64)


def voxel_grid_downsample(c: PointCloud, leaf: float) -> PointCloud:
    """
    Filtre par grille de voxels : un point par voxel occupé, le barycentre de ses membres.

    La sortie est triée par coordonnée de voxel croissante (ordre lexicographique x, y, z),
    ce qui rend le résultat indépendant de l'ordre d'entrée.
    """
    if leaf <= 0:
        raise ValueError(f"La taille de voxel doit être strictement positive : {leaf}")
    _require_points(c)

    coords = voxel_coords(c.points, leaf)
    # np.unique(axis=0) trie les lignes lexicographiquement
    _, inverse, counts = np.unique(coords, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((counts.shape[0], 3))
    np.add.at(sums, inverse, c.points)
    centroids = sums / counts[:, None]
    return PointCloud.from_array(centroids)


def auto_leaf(c: PointCloud, target_points: int) -> LeafSearch:
    """
    Cherche par dichotomie une taille de voxel donnant entre 0.5 et 2 fois target_points points.

    Si le nuage a déjà au plus target_points points, la plus petite taille sondée est retenue
    (le nombre de points est inchangé). Après MAX_LEAF_ITERATIONS essais sans atteindre
    l'intervalle, la meilleure taille trouvée est renvoyée avec converged=False.
    """
    if target_points < 1:
        raise ValueError(f"Le nombre de points visé doit être >= 1 : {target_points}")
    _require_points(c)

    low_bound, high_bound = 0.5 * target_points, 2.0 * target_points
    n = len(c)

    if n <= target_points:
        # Plus petit pas distinguant tous les points : voxels bien plus petits que l'écart minimal
        extent = float(np.max(np.ptp(c.points, axis=0)))
        leaf = max(extent, 1.0) * 1e-6
        count = len(voxel_grid_downsample(c, leaf))
        converged = low_bound <= count <= high_bound or count == n
        if not converged:
            logger.warning("auto_leaf : %d points distincts seulement pour %d visés", count, target_points)
        return LeafSearch(leaf, count, converged)

    extent = max(float(np.max(np.ptp(c.points, axis=0))), 1e-3)
    lo = extent * 1e-6  # un voxel par point, ou presque
    hi = extent * 2.0   # un seul voxel
    best_leaf, best_count, best_gap = hi, 1, math.inf

    for _ in range(MAX_LEAF_ITERATIONS):
        leaf = math.sqrt(lo * hi)  # dichotomie géométrique
        count = len(voxel_grid_downsample(c, leaf))
        gap = abs(math.log(count / target_points))
        if gap < best_gap:
            best_leaf, best_count, best_gap = leaf, count, gap
        if low_bound <= count <= high_bound:
            return LeafSearch(leaf, count, True)
        if count > high_bound:
            lo = leaf
        else:
            hi = leaf

    logger.warning(
        "auto_leaf : pas de convergence après %d itérations (leaf=%.4f, %d points)",
        MAX_LEAF_ITERATIONS, best_leaf, best_count,
    )
    return LeafSearch(best_leaf, best_count, False)


def downsample_to_target(c: PointCloud, target_points: int) -> Tuple[PointCloud, LeafSearch]:
    """auto_leaf puis voxel_grid_downsample avec la taille retenue."""
    search = auto_leaf(c, target_points)
    out = voxel_grid_downsample(c, search.leaf)
    logger.info("Sous-échantillonnage : %d -> %d points (leaf=%.4f m)", len(c), len(out), search.leaf)
    return out, search


def bounding_box(c: PointCloud) -> Aabb:
    _require_points(c)
    return Aabb(c.points.min(axis=0).copy(), c.points.max(axis=0).copy())


def max_range(c: PointCloud) -> float:
    """Plus grande norme des points (le scan est exprimé dans le repère capteur)."""
    _require_points(c)
    return float(np.max(np.linalg.norm(c.points, axis=1)))
