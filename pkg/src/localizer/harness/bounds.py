import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np

from localizer.io.pointcloud import PointCloud
from localizer.maps.voxelmap import MultiResVoxelMap
from localizer.search.bnb import BranchAndBoundSearch
from localizer.search.config import SearchConfig
from localizer.search.evaluator import make_evaluator, nodes_to_array
from localizer.search.node import Node, branch, translation_indices

logger = logging.getLogger(__name__)

PARENT_BATCH = 2000

# Tirages aléatoires consécutifs sans parent au-dessus du seuil avant abandon
MAX_EMPTY_ROUNDS = 20


@dataclass
class BoundAudit:
    """
    Contrôle des bornes : une violation est un enfant de score strictement supérieur
    à celui de son parent. mean_exceedance : moyenne de (enfant - parent) / parent
    sur les violations.

    Les parents sont d'abord les nœuds branchés par la recherche (branched_parents),
    complétés par des nœuds tirés au hasard dont le score atteint le seuil (sampled_parents).
    """
    pairs: int
    violations: int
    violation_rate: float
    mean_exceedance: float
    branch_mode: str
    branched_parents: int = 0
    sampled_parents: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _sample_parents(rng: np.random.Generator, count: int, cfg: SearchConfig, grids,
                    lo: np.ndarray, hi: np.ndarray) -> List[Node]:
    """Parents tirés uniformément : niveau 1..l_max, translation dans la plage, rotation valide."""
    levels = rng.integers(1, cfg.l_max + 1, size=count)
    parents = []
    for level in levels.tolist():
        r_l = math.ldexp(cfg.r, level)
        trans = []
        for k in range(3):
            idx = translation_indices(float(lo[k]), float(hi[k]), r_l)
            trans.append(int(rng.integers(idx.start, idx.stop)))
        rot = [int(rng.integers(0, grids.max_index[level, k] + 1)) for k in range(3)]
        parents.append(Node(*trans, *rot, level))
    return parents


def branched_nodes(voxel_map: MultiResVoxelMap, scan: PointCloud, cfg: SearchConfig) -> List[Node]:
    """Nœuds évalués puis branchés par une recherche complète, dans l'ordre de branchement."""
    audited = cfg.model_copy(update={"audit": True})
    result = BranchAndBoundSearch(voxel_map, audited).run(scan)
    return [e.node for e in result.audit_log if e.kind == "branch"]


def audit_bounds(voxel_map: MultiResVoxelMap, scan: PointCloud, cfg: SearchConfig,
                 pairs: int = 1_000_000, seed: int = 0,
                 parents: Optional[List[Node]] = None) -> BoundAudit:
    """
    Branche des parents selon le mode de cfg et compte les enfants dont le score dépasse
    celui du parent.

    Args:
        parents: nœuds branchés par la recherche ; recalculés par branched_nodes si absents.

    En mode translation seule la borne est exacte : aucune violation attendue.
    """
    rng = np.random.default_rng(seed)
    if parents is None:
        parents = branched_nodes(voxel_map, scan, cfg)
    prepared = BranchAndBoundSearch(voxel_map, cfg).set_source(scan)
    grids = prepared.grids
    threshold = math.floor(cfg.score_threshold_fraction * len(prepared.cloud))
    if cfg.trans_range is not None:
        lo, hi = (np.asarray(v, dtype=np.float64) for v in cfg.trans_range)
    else:
        lo, hi = voxel_map.bbox.min, voxel_map.bbox.max

    seen = violations = 0
    exceedance = 0.0
    used_branched = sampled = 0
    empty_rounds = 0
    with make_evaluator(voxel_map, prepared.cloud, grids, cfg.workers) as evaluator:
        while seen < pairs:
            if used_branched < len(parents):
                batch = parents[used_branched:used_branched + PARENT_BATCH]
                used_branched += len(batch)
                parent_scores = np.array([p.score for p in batch], dtype=np.int64)
            else:
                drawn = _sample_parents(rng, PARENT_BATCH, cfg, grids, lo, hi)
                drawn_scores = evaluator.score_array(nodes_to_array(drawn))
                keep = drawn_scores >= max(threshold, 1)
                if not keep.any():
                    empty_rounds += 1
                    if empty_rounds >= MAX_EMPTY_ROUNDS:
                        logger.warning("Audit des bornes arrêté à %d couples : aucun parent au-dessus du seuil %d",
                                       seen, threshold)
                        break
                    continue
                empty_rounds = 0
                batch = [p for p, k in zip(drawn, keep) if k]
                parent_scores = drawn_scores[keep]
                sampled += len(batch)

            children_per_parent = [branch(p, grids, cfg.branch) for p in batch]
            flat_children = [c for children in children_per_parent for c in children]
            child_scores = evaluator.score_array(nodes_to_array(flat_children))

            counts = np.array([len(c) for c in children_per_parent])
            owner_scores = np.repeat(parent_scores, counts)
            diff = child_scores - owner_scores
            bad = diff > 0
            violations += int(bad.sum())
            exceedance += float(np.sum(diff[bad] / np.maximum(owner_scores[bad], 1)))
            seen += int(child_scores.shape[0])

    rate = violations / seen if seen else 0.0
    mean = exceedance / violations if violations else 0.0
    logger.info("Audit des bornes (%s) : %d couples (%d parents branchés, %d tirés), %d violations "
                "(%.5f %%), dépassement moyen %.3f %%",
                cfg.branch_mode, seen, used_branched, sampled, violations, 100 * rate, 100 * mean)
    return BoundAudit(seen, violations, rate, mean, cfg.branch_mode, used_branched, sampled)
