"""
Nœuds du branch-and-bound et grilles angulaires par niveau.

Un nœud c = (cx, cy, cz, ca, cb, cg, level) désigne la translation r_l . (cx, cy, cz)
et les angles W_min + δ'(r_l) . (ca, cb, cg) pour (roulis, tangage, lacet).
"""
import itertools
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from localizer.io.pointcloud import Aabb
from localizer.search.config import SearchConfig
from localizer.utils.errors import DegenerateScanError, EmptySearchSpaceError, LeafNodeError
from localizer.utils.geometry import TWO_PI, Pose6
from localizer.utils.mappings import BranchMode

# Tolérance sur les quotients flottants avant un ceil (0.04 / 0.02 = 2.0000000000000004)
_CEIL_EPS = 1e-9

_TRANSLATION_OFFSETS = list(itertools.product((0, 1), repeat=3))


class Node(NamedTuple):
    cx: int
    cy: int
    cz: int
    ca: int
    cb: int
    cg: int
    level: int
    score: Optional[int] = None

    @property
    def rotation_index(self) -> Tuple[int, int, int]:
        return self.ca, self.cb, self.cg

    def with_score(self, score: int) -> "Node":
        return self._replace(score=int(score))


@dataclass(frozen=True)
class AxisGrid:
    """Découpage d'un axe angulaire à un niveau donné."""
    w_min: float
    w_max: float
    step: float
    index_count: int  # nombre de segments
    periodic: bool

    @property
    def max_index(self) -> int:
        # lacet périodique : l'extrémité 2pi est confondue avec 0
        return self.index_count - 1 if self.periodic else self.index_count


def _safe_ceil(x: float) -> int:
    return max(1, math.ceil(x - _CEIL_EPS))


def angular_step(r_l: float, d_max: float) -> float:
    """
    Pas angulaire δ tel qu'un point à distance d_max ne se déplace pas de plus de r_l :
    δ = arccos(1 - r_l^2 / (2 d_max^2)), ramené à pi si r_l >= 2 d_max.

    Calculé sous la forme équivalente 2 asin(r_l / (2 d_max)), sans perte de précision
    quand δ est petit.
    """
    if not d_max > 0:
        raise DegenerateScanError(f"Portée du scan nulle ou invalide : d_max={d_max}")
    if r_l >= 2.0 * d_max:
        return math.pi
    return 2.0 * math.asin(r_l / (2.0 * d_max))


def adjusted_step(width: float, delta: float) -> Tuple[float, int]:
    """Découpe [W_min, W_max] en segments égaux de taille <= δ : (δ', segments)."""
    if not width > 0 or not delta > 0:
        raise ValueError(f"Intervalle ({width}) et pas ({delta}) doivent être strictement positifs")
    segments = _safe_ceil(width / delta)
    return width / segments, segments


class AngularGrid:
    """
    Grilles angulaires de tous les niveaux (indice d'axe : 0 roulis, 1 tangage, 2 lacet).

    factors[l, k] : nombre de divisions de l'axe k quand un nœud du niveau l est branché.
    """

    def __init__(self, axes: List[Tuple[AxisGrid, AxisGrid, AxisGrid]], mode: BranchMode):
        self.axes = axes
        self.mode = mode
        self.l_max = len(axes) - 1
        self.w_min = np.array([a.w_min for a in axes[0]])
        self.steps = np.array([[a.step for a in level] for level in axes])
        self.max_index = np.array([[a.max_index for a in level] for level in axes], dtype=np.int64)
        self.factors = np.ones((self.l_max + 1, 3), dtype=np.int64)
        if mode is BranchMode.ROTO_TRANS:
            for l in range(1, self.l_max + 1):
                for k in range(3):
                    coarse, fine = axes[l][k], axes[l - 1][k]
                    if fine.step < (fine.w_max - fine.w_min) * (1.0 - _CEIL_EPS):
                        self.factors[l, k] = _safe_ceil(coarse.step / fine.step)

    def axis(self, level: int, k: int) -> AxisGrid:
        return self.axes[level][k]

    def angles(self, level: int, indices: np.ndarray) -> np.ndarray:
        """Angles (N, 3) roulis/tangage/lacet pour des indices (N, 3) d'un même niveau."""
        return self.w_min + self.steps[level] * np.asarray(indices, dtype=np.float64)


def build_angular_grid(cfg: SearchConfig, d_max: float, mode: Optional[BranchMode] = None) -> AngularGrid:
    """
    RotoTrans : δ'(r_l) au niveau l. TransOnly : δ'(r_0) à tous les niveaux,
    la rotation est alors énumérée entièrement dès le niveau initial.
    """
    mode = mode or cfg.branch
    ranges = (cfg.roll_range, cfg.pitch_range, cfg.yaw_range)
    axes = []
    for l in range(cfg.l_max + 1):
        level_for_step = l if mode is BranchMode.ROTO_TRANS else 0
        delta = angular_step(math.ldexp(cfg.r, level_for_step), d_max)
        level_axes = []
        for k, (lo, hi) in enumerate(ranges):
            width = hi - lo
            periodic = k == 2 and width >= TWO_PI - 1e-12
            step, segments = adjusted_step(width, delta)
            level_axes.append(AxisGrid(lo, hi, step, segments, periodic))
        axes.append(tuple(level_axes))
    return AngularGrid(axes, mode)


def node_pose(c: Node, grids: AngularGrid, r: float) -> Pose6:
    r_l = math.ldexp(r, c.level)
    roll, pitch, yaw = grids.angles(c.level, np.array(c.rotation_index))
    return Pose6(
        x=r_l * c.cx, y=r_l * c.cy, z=r_l * c.cz,
        roll=float(roll), pitch=float(pitch), yaw=float(yaw),
    )


def translation_indices(lo: float, hi: float, r_top: float) -> range:
    """Indices floor(W_min / r_top) .. ceil(W_max / r_top) inclus."""
    return range(math.floor(lo / r_top), math.ceil(hi / r_top) + 1)


def initial_nodes(cfg: SearchConfig, grids: AngularGrid, bbox: Optional[Aabb] = None) -> List[Node]:
    """
    Produit cartésien des indices de translation et de rotation au niveau l_max.

    La plage de translation est cfg.trans_range, ou à défaut la boîte englobante bbox.

    Raises:
        EmptySearchSpaceError: aucune plage de translation ou plage vide.
    """
    if cfg.trans_range is not None:
        lo, hi = (np.asarray(v, dtype=np.float64) for v in cfg.trans_range)
    elif bbox is not None:
        lo, hi = bbox.min, bbox.max
    else:
        raise EmptySearchSpaceError("Aucune plage de translation (ni trans_range ni boîte de la carte)")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(lo > hi):
        raise EmptySearchSpaceError(f"Plage de translation invalide : min={lo}, max={hi}")

    top = grids.l_max
    r_top = math.ldexp(cfg.r, top)
    trans = [translation_indices(float(lo[k]), float(hi[k]), r_top) for k in range(3)]
    rots = [range(int(grids.max_index[top, k]) + 1) for k in range(3)]

    nodes = [
        Node(cx, cy, cz, ca, cb, cg, top)
        for cx, cy, cz in itertools.product(*trans)
        for ca, cb, cg in itertools.product(*rots)
    ]
    if not nodes:
        raise EmptySearchSpaceError("Ensemble initial de nœuds vide")
    return nodes


def branch(c: Node, grids: AngularGrid, mode: Optional[BranchMode] = None) -> List[Node]:
    """
    Enfants au niveau c.level - 1 : translation 2c + j (j dans {0,1}^3), rotation a.c + j
    (j dans 0..a-1) par axe ; les indices de rotation hors plage sont écartés.

    Raises:
        LeafNodeError: c est une feuille.
    """
    if c.level == 0:
        raise LeafNodeError("Impossible de brancher une feuille (niveau 0)")
    mode = mode or grids.mode
    child_level = c.level - 1

    rot_children = []
    for k, idx in enumerate(c.rotation_index):
        a = int(grids.factors[c.level, k]) if mode is BranchMode.ROTO_TRANS else 1
        limit = int(grids.max_index[child_level, k])
        rot_children.append([a * idx + j for j in range(a) if a * idx + j <= limit])

    children = []
    for jx, jy, jz in _TRANSLATION_OFFSETS:
        cx, cy, cz = 2 * c.cx + jx, 2 * c.cy + jy, 2 * c.cz + jz
        for ca, cb, cg in itertools.product(*rot_children):
            children.append(Node(cx, cy, cz, ca, cb, cg, child_level))
    return children
