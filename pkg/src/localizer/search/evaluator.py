import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence

import numpy as np

from localizer.io.pointcloud import PointCloud
from localizer.maps.hashing import score_poses
from localizer.maps.voxelmap import MultiResVoxelMap
from localizer.search.node import AngularGrid, Node
from localizer.utils.geometry import euler_to_matrices

logger = logging.getLogger(__name__)


def nodes_to_array(nodes: Sequence[Node]) -> np.ndarray:
    """(N, 7) int64 : cx, cy, cz, ca, cb, cg, level."""
    if not nodes:
        return np.zeros((0, 7), dtype=np.int64)
    return np.array([n[:7] for n in nodes], dtype=np.int64)


def score_node_array(table: np.ndarray, voxel_map: MultiResVoxelMap, scan: np.ndarray,
                     grids: AngularGrid) -> np.ndarray:
    """
    Scores d'un tableau de nœuds, niveau par niveau.

    La translation est passée en unités de voxel du niveau (les indices entiers eux-mêmes) :
    floor(R.s / r_l + c) ne dépend d'aucun arrondi sur r_l . c.
    """
    scores = np.zeros(table.shape[0], dtype=np.int64)
    for level in np.unique(table[:, 6]):
        rows = np.flatnonzero(table[:, 6] == level)
        sub = table[rows]
        angles = grids.angles(int(level), sub[:, 3:6])
        rotations = euler_to_matrices(angles[:, 0], angles[:, 1], angles[:, 2])
        offsets = np.ascontiguousarray(sub[:, 0:3], dtype=np.float64)
        lvl = voxel_map.level(int(level))
        scores[rows] = score_poses(lvl.keys, lvl.used, lvl.resolution, rotations, offsets, scan)
    return scores


class BaseBatchEvaluator(ABC):
    """
    Évalue un lot de nœuds ; la sortie suit l'ordre d'entrée et ne dépend pas
    du nombre de workers.
    """

    def __init__(self, voxel_map: MultiResVoxelMap, scan: PointCloud, grids: AngularGrid):
        self.voxel_map = voxel_map
        self.scan = np.ascontiguousarray(scan.points, dtype=np.float64)
        self.grids = grids

    @abstractmethod
    def score_array(self, table: np.ndarray) -> np.ndarray:
        pass

    def evaluate(self, nodes: Sequence[Node]) -> List[Node]:
        if not nodes:
            return []
        scores = self.score_array(nodes_to_array(nodes))
        return [n.with_score(s) for n, s in zip(nodes, scores.tolist())]

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


class SingleWorkerEvaluator(BaseBatchEvaluator):
    def score_array(self, table: np.ndarray) -> np.ndarray:
        return score_node_array(table, self.voxel_map, self.scan, self.grids)


class ThreadPoolEvaluator(BaseBatchEvaluator):
    """
    Répartit le lot en `workers` tranches contiguës sur un pool de threads ;
    les noyaux numba relâchent le GIL.
    """

    def __init__(self, voxel_map: MultiResVoxelMap, scan: PointCloud, grids: AngularGrid, workers: int):
        super().__init__(voxel_map, scan, grids)
        self.workers = workers
        self._executor = ThreadPoolExecutor(max_workers=workers)

    def _score_chunk(self, table: np.ndarray) -> np.ndarray:
        return score_node_array(table, self.voxel_map, self.scan, self.grids)

    def score_array(self, table: np.ndarray) -> np.ndarray:
        if table.shape[0] < 2 * self.workers:
            return self._score_chunk(table)
        chunks = np.array_split(table, self.workers)
        return np.concatenate(list(self._executor.map(self._score_chunk, chunks)))

    def close(self) -> None:
        self._executor.shutdown(wait=True)


def make_evaluator(voxel_map: MultiResVoxelMap, scan: PointCloud, grids: AngularGrid,
                   workers: int = 1) -> BaseBatchEvaluator:
    if workers < 1:
        raise ValueError(f"Le nombre de workers doit être >= 1 : {workers}")
    if workers == 1:
        return SingleWorkerEvaluator(voxel_map, scan, grids)
    logger.info("Évaluation sur %d threads", workers)
    return ThreadPoolEvaluator(voxel_map, scan, grids, workers)


def batch_evaluate(nodes: Sequence[Node], voxel_map: MultiResVoxelMap, scan: PointCloud,
                   grids: AngularGrid, workers: int = 1) -> List[Node]:
    """Annote chaque nœud de son score au niveau c.level ; ordre de sortie = ordre d'entrée."""
    with make_evaluator(voxel_map, scan, grids, workers) as evaluator:
        return evaluator.evaluate(nodes)
