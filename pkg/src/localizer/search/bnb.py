import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional

from localizer.io.pointcloud import LeafSearch, PointCloud, downsample_to_target, max_range
from localizer.maps.voxelmap import MultiResVoxelMap
from localizer.search.config import SearchConfig
from localizer.search.evaluator import BaseBatchEvaluator, make_evaluator
from localizer.search.node import AngularGrid, Node, branch, build_angular_grid, initial_nodes, node_pose
from localizer.search.queue import make_queue
from localizer.utils.errors import DegenerateScanError, EmptyCloudError
from localizer.utils.geometry import Pose6

logger = logging.getLogger(__name__)

# Noms des étapes tels qu'affichés dans les rapports
PHASE_NAMES = {
    "create_voxel_maps_ms": "Create voxel maps",
    "set_source_ms": "Set source point cloud",
    "initial_nodes_ms": "Initial nodes calculation",
    "find_best_score_ms": "Find best score",
    "pop_remaining_queue_ms": "Pop remaining queue",
}
PREPROCESSING_PHASES = ("create_voxel_maps_ms", "set_source_ms")
LOCALIZATION_PHASES = ("initial_nodes_ms", "find_best_score_ms", "pop_remaining_queue_ms")


def _elapsed_ms(start: float, end: Optional[float] = None) -> float:
    return max(0.0, ((end if end is not None else time.perf_counter()) - start) * 1000.0)


@dataclass
class Stats:
    nodes_generated: int = 0
    nodes_pruned: int = 0
    batches_flushed: int = 0
    create_voxel_maps_ms: float = 0.0
    set_source_ms: float = 0.0
    initial_nodes_ms: float = 0.0
    find_best_score_ms: float = 0.0
    pop_remaining_queue_ms: float = 0.0

    @property
    def preprocessing_ms(self) -> float:
        return sum(getattr(self, name) for name in PREPROCESSING_PHASES)

    @property
    def localization_ms(self) -> float:
        return sum(getattr(self, name) for name in LOCALIZATION_PHASES)

    def phases(self) -> dict:
        return {label: getattr(self, name) for name, label in PHASE_NAMES.items()}

    def as_dict(self) -> dict:
        out = asdict(self)
        out["preprocessing_ms"] = self.preprocessing_ms
        out["localization_ms"] = self.localization_ms
        return out


class AuditEvent(NamedTuple):
    kind: str  # "prune", "incumbent" ou "branch"
    node: Node
    best_score: int  # meilleur score au moment de l'événement


@dataclass
class SearchResult:
    best_pose: Optional[Pose6]
    best_score: int
    matched: bool
    threshold: int
    stats: Stats
    best_node: Optional[Node] = None
    scan_points: int = 0
    d_max: float = 0.0
    leaf: Optional[LeafSearch] = None
    audit_log: List[AuditEvent] = field(default_factory=list)


@dataclass(frozen=True)
class PreparedScan:
    """Scan prêt pour la recherche : points sous-échantillonnés, portée, grilles."""
    cloud: PointCloud
    d_max: float
    grids: AngularGrid
    leaf: Optional[LeafSearch]


class BranchAndBoundSearch:
    """
    Branch-and-bound par lots sur une carte multi-résolution.

    Les enfants s'accumulent dans un tampon ; dès qu'il dépasse b nœuds, le tampon est
    évalué d'un bloc, élagué sous le meilleur score courant, et les survivants empilés.
    """

    def __init__(self, voxel_map: MultiResVoxelMap, cfg: SearchConfig):
        if not math.isclose(voxel_map.r, cfg.r) or voxel_map.l_max != cfg.l_max:
            raise ValueError(
                f"Carte construite avec r={voxel_map.r}, l_max={voxel_map.l_max} ; "
                f"configuration r={cfg.r}, l_max={cfg.l_max}"
            )
        self.voxel_map = voxel_map
        self.cfg = cfg

    def set_source(self, scan: PointCloud) -> PreparedScan:
        """Sous-échantillonne le scan, fixe d_max et construit les grilles angulaires."""
        if len(scan) == 0:
            raise EmptyCloudError("Le scan est vide")
        leaf = None
        cloud = scan
        if self.cfg.downsample_target is not None:
            cloud, leaf = downsample_to_target(scan, self.cfg.downsample_target)
        d_max = self.cfg.d_max if self.cfg.d_max is not None else max_range(cloud)
        if not d_max > 0:
            raise DegenerateScanError("Tous les points du scan sont à l'origine du capteur (d_max = 0)")
        grids = build_angular_grid(self.cfg, d_max)
        return PreparedScan(cloud, d_max, grids, leaf)

    def run(self, scan: PointCloud, stats: Optional[Stats] = None) -> SearchResult:
        stats = stats or Stats()

        t0 = time.perf_counter()
        prepared = self.set_source(scan)
        stats.set_source_ms = _elapsed_ms(t0)

        with make_evaluator(self.voxel_map, prepared.cloud, prepared.grids, self.cfg.workers) as evaluator:
            return self._search(prepared, evaluator, stats)

    def _search(self, prepared: PreparedScan, evaluator: BaseBatchEvaluator, stats: Stats) -> SearchResult:
        cfg = self.cfg
        b = cfg.batch_size
        k = len(prepared.cloud)
        threshold = math.floor(cfg.score_threshold_fraction * k)
        best_score = threshold
        match: Optional[Node] = None
        audit: List[AuditEvent] = []

        def prune(node: Node) -> None:
            stats.nodes_pruned += 1
            if cfg.audit:
                audit.append(AuditEvent("prune", node, best_score))

        # Nœuds initiaux : évalués par tranches de b, filtrés sous le seuil
        t0 = time.perf_counter()
        queue = make_queue(cfg.search_strategy)
        start_nodes = initial_nodes(cfg, prepared.grids, self.voxel_map.bbox)
        stats.nodes_generated += len(start_nodes)
        for i in range(0, len(start_nodes), b):
            for node in evaluator.evaluate(start_nodes[i:i + b]):
                if node.score < best_score:
                    prune(node)
                else:
                    queue.push(node)
        logger.info("%d nœuds initiaux, %d conservés (seuil %d / %d)",
                    len(start_nodes), len(queue), threshold, k)
        stats.initial_nodes_ms = _elapsed_ms(t0)

        pending: List[Node] = []

        def flush() -> None:
            scored = evaluator.evaluate(pending)
            pending.clear()
            stats.batches_flushed += 1
            kept = 0
            for node in scored:
                if node.score < best_score:
                    prune(node)
                else:
                    queue.push(node)
                    kept += 1
            logger.debug("Lot %d : %d nœuds évalués, %d conservés, meilleur score %d",
                         stats.batches_flushed, len(scored), kept, best_score)

        loop_start = time.perf_counter()
        last_improvement = loop_start
        while queue or pending:
            if not queue:
                flush()
                continue
            c = queue.pop()
            if c.score < best_score:
                prune(c)
                continue
            if c.level == 0:
                # égalité acceptée : la dernière feuille de meilleur score est retenue
                match = c
                best_score = c.score
                last_improvement = time.perf_counter()
                if cfg.audit:
                    audit.append(AuditEvent("incumbent", c, best_score))
                continue
            if cfg.audit:
                audit.append(AuditEvent("branch", c, best_score))
            children = branch(c, prepared.grids, cfg.branch)
            stats.nodes_generated += len(children)
            pending.extend(children)
            if len(pending) > b:
                flush()
        loop_end = time.perf_counter()
        stats.find_best_score_ms = _elapsed_ms(loop_start, last_improvement)
        stats.pop_remaining_queue_ms = _elapsed_ms(last_improvement, loop_end)

        pose = node_pose(match, prepared.grids, cfg.r) if match is not None else None
        if match is None:
            logger.info("Aucune correspondance au-dessus du seuil %d", threshold)
        else:
            logger.info("Meilleur score %d / %d, pose %s", best_score, k, pose)
        return SearchResult(
            best_pose=pose,
            best_score=best_score,
            matched=match is not None,
            threshold=threshold,
            stats=stats,
            best_node=match,
            scan_points=k,
            d_max=prepared.d_max,
            leaf=prepared.leaf,
            audit_log=audit,
        )


def search(voxel_map: MultiResVoxelMap, scan: PointCloud, cfg: SearchConfig,
           create_voxel_maps_ms: float = 0.0) -> SearchResult:
    """
    Localisation globale du scan dans la carte.

    Args:
        create_voxel_maps_ms: durée de construction de la carte, reportée dans les statistiques.

    Raises:
        DegenerateScanError, EmptySearchSpaceError, EmptyCloudError.
    """
    stats = Stats(create_voxel_maps_ms=create_voxel_maps_ms)
    return BranchAndBoundSearch(voxel_map, cfg).run(scan, stats)

