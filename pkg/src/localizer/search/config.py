from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from localizer.utils.geometry import TWO_PI
from localizer.utils.mappings import BRANCH_MODE_MAP, STRATEGY_MAP, BranchMode, SearchStrategy

Vec3 = Tuple[float, float, float]


class SearchConfig(BaseModel):
    """
    Modèle Pydantic des paramètres du branch-and-bound.

    trans_range vaut None pour « boîte englobante de la carte ».
    d_max vaut None pour « portée recalculée sur le scan sous-échantillonné ».
    """
    model_config = ConfigDict(frozen=True)

    r: float = 1.0
    l_max: int = 6
    trans_range: Optional[Tuple[Vec3, Vec3]] = None  # (min, max) en mètres
    roll_range: Tuple[float, float] = (-0.02, 0.02)
    pitch_range: Tuple[float, float] = (-0.02, 0.02)
    yaw_range: Tuple[float, float] = (0.0, TWO_PI)
    score_threshold_fraction: float = 0.95
    batch_size: int = 10_000
    strategy: str = "bfs"
    branch_mode: str = "roto"
    workers: int = 1
    downsample_target: Optional[int] = 1000
    d_max: Optional[float] = None
    audit: bool = False  # journal des élagages, branchements et mises à jour du meilleur score

    @model_validator(mode="before")
    def validate_all(cls, values):
        """
        Valide les valeurs brutes avant création de l'objet.
        """
        r = values.get("r")
        if r is not None and r <= 0:
            raise ValueError("La résolution r doit être strictement positive")

        l_max = values.get("l_max")
        if l_max is not None and l_max < 1:
            raise ValueError("Le niveau maximal l_max doit être >= 1")

        fraction = values.get("score_threshold_fraction")
        if fraction is not None and not (0 < fraction <= 1):
            raise ValueError("La fraction de seuil doit être dans ]0, 1] (ex: 0.95 pour 95%)")

        batch_size = values.get("batch_size")
        if batch_size is not None and batch_size < 1:
            raise ValueError("La taille de lot b doit être >= 1")

        workers = values.get("workers")
        if workers is not None and workers < 1:
            raise ValueError("Le nombre de workers doit être >= 1")

        strategy = values.get("strategy", "bfs")
        if strategy not in STRATEGY_MAP:
            raise ValueError(f"Stratégie '{strategy}' non supportée. Choisir parmi {list(STRATEGY_MAP.keys())}")

        branch_mode = values.get("branch_mode", "roto")
        if branch_mode not in BRANCH_MODE_MAP:
            raise ValueError(f"Mode de branchement '{branch_mode}' non supporté. Choisir parmi {list(BRANCH_MODE_MAP.keys())}")

        target = values.get("downsample_target")
        if target is not None and target < 1:
            raise ValueError("Le nombre de points visé doit être >= 1")

        d_max = values.get("d_max")
        if d_max is not None and d_max <= 0:
            raise ValueError("La portée d_max doit être strictement positive")
        return values

    @model_validator(mode="after")
    def check_ranges(self):
        for name in ("roll_range", "pitch_range", "yaw_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"Intervalle {name} vide : [{lo}, {hi}]")
        yaw_lo, yaw_hi = self.yaw_range
        if yaw_hi - yaw_lo > TWO_PI + 1e-12:
            raise ValueError(f"L'intervalle de lacet dépasse 2pi : [{yaw_lo}, {yaw_hi}]")
        if self.trans_range is not None:
            lo, hi = self.trans_range
            if any(a > b for a, b in zip(lo, hi)):
                raise ValueError(f"Intervalle de translation invalide : min={lo}, max={hi}")
        return self

    @property
    def search_strategy(self) -> SearchStrategy:
        return STRATEGY_MAP[self.strategy]

    @property
    def branch(self) -> BranchMode:
        return BRANCH_MODE_MAP[self.branch_mode]
