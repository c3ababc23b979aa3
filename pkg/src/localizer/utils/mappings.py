from enum import Enum


class SearchStrategy(Enum):
    DFS = "dfs"
    BFS = "bfs"


class BranchMode(Enum):
    TRANS_ONLY = "trans"
    ROTO_TRANS = "roto"


# --- Stratégies de recherche supportées ---
# Discipline de la file de nœuds pendant le branch-and-bound.
# DFS : on dépile d'abord les nœuds du niveau le plus bas (le plus fin), meilleur score d'abord.
# BFS : "best-first", on dépile toujours le nœud de meilleur score, tous niveaux confondus.
STRATEGY_MAP = {
    "dfs": SearchStrategy.DFS,
    "bfs": SearchStrategy.BFS,
}

# --- Modes de branchement ---
# trans : seules les composantes de translation sont branchées (8 enfants),
#         la rotation est énumérée entièrement dès le niveau initial au pas le plus fin.
# roto  : translation + rotation branchées à chaque niveau (pas angulaire adapté au niveau).
BRANCH_MODE_MAP = {
    "trans": BranchMode.TRANS_ONLY,
    "roto": BranchMode.ROTO_TRANS,
}

# --- Formats de nuages de points ---
# Seuls les formats ASCII sont lus ; "auto" déduit le format depuis l'extension du fichier.
CLOUD_FORMAT_MAP = {
    "auto": None,
    "ply": "ply",
    "pcd": "pcd",
    "xyz": "xyz",
}

# Extension de fichier -> format
CLOUD_SUFFIX_MAP = {
    ".ply": "ply",
    ".pcd": "pcd",
    ".xyz": "xyz",
    ".txt": "xyz",
}
