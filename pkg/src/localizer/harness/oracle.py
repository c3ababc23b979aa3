import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from localizer.io.pointcloud import PointCloud
from localizer.maps.voxelmap import MultiResVoxelMap
from localizer.search.bnb import BranchAndBoundSearch
from localizer.search.config import SearchConfig
from localizer.search.evaluator import make_evaluator
from localizer.search.node import Node, translation_indices
from localizer.utils.errors import EmptySearchSpaceError, OracleTooLargeError

logger = logging.getLogger(__name__)

MAX_ORACLE_LEAVES = 10 ** 8
ORACLE_CHUNK = 200_000


@dataclass
class OracleResult:
    best_score: int
    maximizers: List[Node] = field(default_factory=list)
    leaf_count: int = 0
    threshold: int = 0


def _leaf_axis(lo: float, hi: float, r: float, l_max: int) -> np.ndarray:
    """Indices de feuille couverts par les nœuds initiaux de l'axe."""
    top = translation_indices(lo, hi, math.ldexp(r, l_max))
    scale = 1 << l_max
    return np.arange(top.start * scale, top.stop * scale, dtype=np.int64)


def oracle_search(voxel_map: MultiResVoxelMap, scan: PointCloud, cfg: SearchConfig,
                  max_leaves: int = MAX_ORACLE_LEAVES) -> OracleResult:
    """
    Évalue toutes les feuilles (niveau 0) descendant des nœuds initiaux de la recherche.

    Même préparation du scan et mêmes grilles que search : le maximum renvoyé est la valeur
    exacte que doit atteindre le branch-and-bound quand ses bornes sont admissibles.

    Raises:
        OracleTooLargeError: plus de max_leaves feuilles.
    """
    searcher = BranchAndBoundSearch(voxel_map, cfg)
    prepared = searcher.set_source(scan)
    grids = prepared.grids

    if cfg.trans_range is not None:
        lo, hi = (np.asarray(v, dtype=np.float64) for v in cfg.trans_range)
    else:
        lo, hi = voxel_map.bbox.min, voxel_map.bbox.max
    trans_axes = [_leaf_axis(float(lo[k]), float(hi[k]), cfg.r, cfg.l_max) for k in range(3)]
    rot_axes = [np.arange(int(grids.max_index[0, k]) + 1, dtype=np.int64) for k in range(3)]

    leaf_count = math.prod(len(a) for a in trans_axes + rot_axes)
    if leaf_count == 0:
        raise EmptySearchSpaceError("Grille de feuilles vide")
    if leaf_count > max_leaves:
        raise OracleTooLargeError(f"{leaf_count} feuilles à évaluer, limite {max_leaves}")
    logger.info("Oracle : %d feuilles", leaf_count)

    shape = tuple(len(a) for a in trans_axes + rot_axes)
    axes = trans_axes + rot_axes
    best = -1
    best_flat: List[np.ndarray] = []
    with make_evaluator(voxel_map, prepared.cloud, grids, cfg.workers) as evaluator:
        for start in range(0, leaf_count, ORACLE_CHUNK):
            flat = np.arange(start, min(start + ORACLE_CHUNK, leaf_count), dtype=np.int64)
            multi = np.unravel_index(flat, shape)
            table = np.zeros((flat.shape[0], 7), dtype=np.int64)
            for k in range(6):
                table[:, k] = axes[k][multi[k]]
            scores = evaluator.score_array(table)
            chunk_best = int(scores.max())
            if chunk_best > best:
                best, best_flat = chunk_best, []
            if chunk_best == best:
                best_flat.append(table[scores == best])

    rows = np.vstack(best_flat)
    maximizers = [Node(*(int(v) for v in row[:6]), 0, best) for row in rows]
    threshold = math.floor(cfg.score_threshold_fraction * len(prepared.cloud))
    return OracleResult(best, maximizers, leaf_count, threshold)
