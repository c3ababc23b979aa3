"""
Banc d'essai des configurations (a)-(i) : type de traitement x branchement x stratégie.

Les lignes GPU (c), (f), (i) sont remplacées par l'évaluation par lots sur tous les cœurs.
"""
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, model_validator
from tqdm import tqdm

from localizer.harness.bounds import BoundAudit, audit_bounds
from localizer.harness.scene import Scene, SceneModel, gen_scene
from localizer.maps.voxelmap import build_multires
from localizer.search.bnb import PHASE_NAMES, SearchResult, Stats, search
from localizer.search.config import SearchConfig
from localizer.utils.errors import InfeasiblePoseError
from localizer.utils.geometry import Pose6, rotation_error, translation_error

logger = logging.getLogger(__name__)

# Critères de succès : erreur de translation < 2 m et de rotation < 0.05 rad
TRANS_TOLERANCE = 2.0
ROT_TOLERANCE = 0.05

# --- Matrice des configurations ---
# lettre -> (type de traitement, branchement, stratégie)
# single : 1 thread, b = 1 (enfants évalués dès le branchement)
# multi  : 4 threads, b = 1
# batched: tous les cœurs, b = taille de lot configurée (à la place du GPU)
CONFIG_MATRIX = {
    "a": ("single", "trans", "dfs"),
    "b": ("multi", "trans", "dfs"),
    "c": ("batched", "trans", "dfs"),
    "d": ("single", "trans", "bfs"),
    "e": ("multi", "trans", "bfs"),
    "f": ("batched", "trans", "bfs"),
    "g": ("single", "roto", "bfs"),
    "h": ("multi", "roto", "bfs"),
    "i": ("batched", "roto", "bfs"),
}


class BenchmarkModel(BaseModel):
    """
    Paramètres d'une campagne de mesures.
    """
    scene_count: int = 20
    seed: int = 0
    configs: List[str] = list(CONFIG_MATRIX)
    r: float = 1.0
    l_max: int = 6
    collision_target: float = 0.001
    batch_size: int = 10_000
    score_threshold_fraction: float = 0.95
    downsample_target: Optional[int] = 1000
    multi_workers: int = 4
    batched_workers: int = max(os.cpu_count() or 1, 1)
    audit_pairs: int = 1_000_000  # 0 : pas d'audit des bornes
    scene: SceneModel = SceneModel(roll_pitch_noise=0.01)

    @model_validator(mode="before")
    def validate_all(cls, values):
        configs = values.get("configs")
        if configs is not None:
            unknown = [c for c in configs if c not in CONFIG_MATRIX]
            if unknown:
                raise ValueError(f"Configuration(s) {unknown} non supportée(s). Choisir parmi {list(CONFIG_MATRIX.keys())}")
            if not configs:
                raise ValueError("Au moins une configuration est requise")

        scene_count = values.get("scene_count")
        if scene_count is not None and scene_count < 1:
            raise ValueError("Le nombre de scènes doit être >= 1")

        for name in ("multi_workers", "batched_workers", "batch_size"):
            value = values.get(name)
            if value is not None and value < 1:
                raise ValueError(f"{name} doit être >= 1")

        audit_pairs = values.get("audit_pairs")
        if audit_pairs is not None and audit_pairs < 0:
            raise ValueError("Le nombre de couples audités doit être >= 0")
        return values

    def processing(self, kind: str) -> tuple:
        """(workers, b, libellé) pour un type de traitement."""
        if kind == "single":
            return 1, 1, "Single (1 thread, b=1)"
        if kind == "multi":
            return self.multi_workers, 1, f"Multi ({self.multi_workers} threads, b=1)"
        return (self.batched_workers, self.batch_size,
                f"Batched ({self.batched_workers} threads, b={self.batch_size}, remplace le GPU)")

    def search_config(self, letter: str) -> SearchConfig:
        kind, branch_mode, strategy = CONFIG_MATRIX[letter]
        workers, b, _ = self.processing(kind)
        return SearchConfig(
            r=self.r,
            l_max=self.l_max,
            score_threshold_fraction=self.score_threshold_fraction,
            batch_size=b,
            strategy=strategy,
            branch_mode=branch_mode,
            workers=workers,
            downsample_target=self.downsample_target,
        )


@dataclass
class EvalOutcome:
    trans_err: Optional[float]
    rot_err: Optional[float]
    success: bool
    runtime_ms: float
    stats: Stats


def evaluate_outcome(result: SearchResult, gt: Pose6, runtime_ms: float) -> EvalOutcome:
    if not result.matched:
        return EvalOutcome(None, None, False, runtime_ms, result.stats)
    t_err = translation_error(result.best_pose, gt)
    r_err = rotation_error(result.best_pose, gt)
    success = t_err < TRANS_TOLERANCE and r_err < ROT_TOLERANCE
    return EvalOutcome(t_err, r_err, success, runtime_ms, result.stats)


@dataclass
class BenchmarkReport:
    rows: List[dict] = field(default_factory=list)
    summary: List[dict] = field(default_factory=list)


def make_scenes(model: BenchmarkModel) -> List[Scene]:
    """scene_count scènes réalisables, graines consécutives à partir de model.seed."""
    scenes = []
    seed = model.seed
    while len(scenes) < model.scene_count:
        if seed - model.seed >= 5 * model.scene_count:
            raise InfeasiblePoseError(f"Seulement {len(scenes)} scènes réalisables sur {seed - model.seed} graines")
        try:
            scenes.append(gen_scene(model.scene, seed))
        except InfeasiblePoseError as e:
            logger.warning("Graine %d ignorée : %s", seed, e)
        seed += 1
    return scenes


def _quartiles(values: List[float]) -> Dict[str, float]:
    if not values:
        return {"median": math.nan, "iqr": math.nan}
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    return {"median": float(med), "iqr": float(q3 - q1)}


def _summarize(rows: List[dict], model: BenchmarkModel) -> List[dict]:
    summary = []
    for letter in model.configs:
        subset = [row for row in rows if row["config"] == letter]
        if not subset:
            continue
        runtime = _quartiles([row["runtime_ms"] for row in subset])
        phases = {name: _quartiles([row["phases"][name] for row in subset])["median"]
                  for name in PHASE_NAMES.values()}
        entry = {
            "config": letter,
            "label": subset[0]["label"],
            "runs": len(subset),
            "success": sum(row["success"] for row in subset),
            "runtime_median_ms": runtime["median"],
            "runtime_iqr_ms": runtime["iqr"],
            "phases_median_ms": phases,
        }
        audits = [row["bound_audit"] for row in subset if row.get("bound_audit")]
        if audits:
            entry["bound_violation_rate"] = float(np.mean([a["violation_rate"] for a in audits]))
            entry["bound_mean_exceedance"] = float(np.mean([a["mean_exceedance"] for a in audits]))
        summary.append(entry)
    return summary


def run_benchmark(scenes: List[Scene], model: BenchmarkModel, progress: bool = True) -> BenchmarkReport:
    """
    Exécute chaque configuration sur chaque scène ; la carte d'une scène est construite une fois
    et son temps de construction reporté sur toutes les lignes de la scène.
    """
    report = BenchmarkReport()
    bar = tqdm(total=len(scenes) * len(model.configs), desc="benchmark", disable=not progress)
    for scene in scenes:
        t0 = time.perf_counter()
        voxel_map = build_multires(scene.map_cloud, model.r, model.l_max, model.collision_target)
        build_ms = (time.perf_counter() - t0) * 1000.0

        audit: Optional[BoundAudit] = None
        for letter in model.configs:
            kind, branch_mode, strategy = CONFIG_MATRIX[letter]
            cfg = model.search_config(letter)
            if branch_mode == "roto" and model.audit_pairs and audit is None:
                audit = audit_bounds(voxel_map, scene.scan_cloud, cfg, model.audit_pairs, scene.rng_seed)

            t0 = time.perf_counter()
            result = search(voxel_map, scene.scan_cloud, cfg, create_voxel_maps_ms=build_ms)
            runtime_ms = (time.perf_counter() - t0) * 1000.0
            outcome = evaluate_outcome(result, scene.gt_pose, runtime_ms)

            row = {
                "scene_seed": scene.rng_seed,
                "config": letter,
                "label": model.processing(kind)[2],
                "branch_mode": branch_mode,
                "strategy": strategy,
                "workers": cfg.workers,
                "batch_size": cfg.batch_size,
                "matched": result.matched,
                "score": result.best_score,
                "scan_points": result.scan_points,
                "trans_err": outcome.trans_err,
                "rot_err": outcome.rot_err,
                "success": outcome.success,
                "runtime_ms": outcome.runtime_ms,
                "phases": result.stats.phases(),
                "preprocessing_ms": result.stats.preprocessing_ms,
                "localization_ms": result.stats.localization_ms,
                "nodes_generated": result.stats.nodes_generated,
                "nodes_pruned": result.stats.nodes_pruned,
                "batches_flushed": result.stats.batches_flushed,
                "bound_audit": audit.as_dict() if branch_mode == "roto" and audit else None,
            }
            report.rows.append(row)
            logger.info("Scène %d, configuration (%s) : succès=%s, %.1f ms",
                        scene.rng_seed, letter, outcome.success, runtime_ms)
            bar.update(1)
    bar.close()
    report.summary = _summarize(report.rows, model)
    return report


def write_jsonl(report: BenchmarkReport, path: Union[str, Path]) -> None:
    """Une ligne JSON par couple scène x configuration."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in report.rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def render_table(report: BenchmarkReport) -> str:
    header = f"{'conf':<4}{'traitement':<52}{'succès':>8}{'médiane ms':>12}{'IQR ms':>10}{'violations %':>14}"
    lines = [header, "-" * len(header)]
    for entry in report.summary:
        rate = entry.get("bound_violation_rate")
        rate_txt = f"{100 * rate:.4f}" if rate is not None else "-"
        lines.append(
            f"({entry['config']}) {entry['label']:<52}{entry['success']:>4}/{entry['runs']:<3}"
            f"{entry['runtime_median_ms']:>12.1f}{entry['runtime_iqr_ms']:>10.1f}{rate_txt:>14}"
        )
    phase_names = list(PHASE_NAMES.values())
    lines.append("")
    lines.append("Médiane par étape (ms) : " + " | ".join(phase_names))
    for entry in report.summary:
        values = " | ".join(f"{entry['phases_median_ms'][name]:.1f}" for name in phase_names)
        lines.append(f"({entry['config']}) {values}")
    return "\n".join(lines)
