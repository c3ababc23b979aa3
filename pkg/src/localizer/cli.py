"""
Interface en ligne de commande : build-map, localize, oracle, gen-scene, benchmark.

Codes de sortie : 0 succès, 2 entrée/sortie, 3 pas de correspondance,
4 entrée dégénérée, 5 erreur de configuration.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import ConfigDict, ValidationError, model_validator

from localizer.harness.benchmark import CONFIG_MATRIX, BenchmarkModel, make_scenes, render_table, run_benchmark, write_jsonl
from localizer.harness.oracle import oracle_search
from localizer.harness.scene import SceneModel, gen_scene, load_scene, save_scene
from localizer.io.pointcloud import load_cloud
from localizer.maps.voxelmap import (
    DEFAULT_MAX_BUCKETS, MultiResVoxelMap, build_multires, is_map_file, load_map, save_map,
)
from localizer.search.bnb import SearchResult, search
from localizer.search.config import SearchConfig
from localizer.utils.errors import (
    CapacityExceededError, CloudParseError, DegenerateScanError, EmptyCloudError,
    EmptySearchSpaceError, InfeasiblePoseError, MapFormatError, OracleTooLargeError,
)
from localizer.utils.geometry import pose_to_transform
from localizer.utils.mappings import BRANCH_MODE_MAP, CLOUD_FORMAT_MAP, STRATEGY_MAP

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 2
EXIT_NO_MATCH = 3
EXIT_DEGENERATE = 4
EXIT_CONFIG = 5

# --- Erreurs -> code de sortie ---
# L'ordre compte : la première classe correspondante l'emporte.
ERROR_EXIT_MAP = [
    ((FileNotFoundError, CloudParseError, EmptyCloudError, MapFormatError, CapacityExceededError, OSError), EXIT_IO),
    ((DegenerateScanError, EmptySearchSpaceError, InfeasiblePoseError, OracleTooLargeError), EXIT_DEGENERATE),
    ((ValidationError, json.JSONDecodeError, ValueError), EXIT_CONFIG),
]

# Option de ligne de commande -> champ de RunConfig
FLAG_FIELDS = {
    "map": "map_path",
    "scan": "scan_path",
    "out": "out",
    "r": "r",
    "lmax": "l_max",
    "batch_size": "batch_size",
    "threshold": "score_threshold_fraction",
    "strategy": "strategy",
    "branch": "branch_mode",
    "workers": "workers",
    "seed": "seed",
    "d_max": "d_max",
    "collision_target": "collision_target",
    "format": "cloud_format",
}


class RunConfig(SearchConfig):
    """
    Configuration complète d'une commande : paramètres de recherche, de carte, chemins et graine.
    """
    model_config = ConfigDict(extra="forbid")

    map_path: Optional[str] = None
    scan_path: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    collision_target: float = 0.001
    max_buckets: int = DEFAULT_MAX_BUCKETS
    cloud_format: str = "auto"
    verbosity: int = 0

    @model_validator(mode="before")
    def validate_run(cls, values):
        cloud_format = values.get("cloud_format", "auto")
        if cloud_format not in CLOUD_FORMAT_MAP:
            raise ValueError(f"Format '{cloud_format}' non supporté. Choisir parmi {list(CLOUD_FORMAT_MAP.keys())}")

        collision_target = values.get("collision_target")
        if collision_target is not None and not (0 < collision_target < 1):
            raise ValueError("Le taux de collision visé doit être entre 0 et 1 (ex: 0.001 pour 0.1%)")
        return values

    def search_config(self) -> SearchConfig:
        return SearchConfig(**self.model_dump(include=set(SearchConfig.model_fields)))


def _error_exit_code(exc: BaseException) -> int:
    for classes, code in ERROR_EXIT_MAP:
        if isinstance(exc, classes):
            return code
    raise exc


def _configure_logging(args: argparse.Namespace) -> int:
    if args.quiet:
        level, verbosity = logging.WARNING, -1
    else:
        verbosity = args.verbose
        level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s : %(message)s", stream=sys.stderr)
    return verbosity


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Fichier de configuration JSON, surchargé par les options passées en ligne de commande."""
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"Fichier introuvable : {path}")
        values.update(json.loads(path.read_text(encoding="utf-8")))

    for flag, name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    if getattr(args, "downsample_target", None) is not None:
        values["downsample_target"] = args.downsample_target or None
    if getattr(args, "roll_pitch_range", None) is not None:
        half = abs(args.roll_pitch_range)
        values["roll_range"] = (-half, half)
        values["pitch_range"] = (-half, half)
    if getattr(args, "audit", False):
        values["audit"] = True
    values["verbosity"] = args.verbosity
    return RunConfig(**values)


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise ValueError(f"Option {flag} obligatoire")
    return value


def _explicit_fields(args: argparse.Namespace) -> set:
    """Champs de carte fixés par l'utilisateur (option ou fichier de configuration)."""
    explicit = {FLAG_FIELDS[f] for f in ("r", "lmax") if getattr(args, f, None) is not None}
    if args.config:
        explicit |= set(json.loads(Path(args.config).read_text(encoding="utf-8")))
    return explicit


def _prepare_map(cfg: RunConfig, explicit: set) -> Tuple[MultiResVoxelMap, float, RunConfig]:
    """
    Charge une carte binaire ou construit la carte depuis un nuage de points.

    Une carte binaire impose r et l_max, sauf s'ils ont été donnés explicitement.
    """
    path = Path(_require(cfg.map_path, "--map"))
    t0 = time.perf_counter()
    if is_map_file(path):
        voxel_map = load_map(path, cfg.collision_target, cfg.max_buckets)
        updates = {k: v for k, v in (("r", voxel_map.r), ("l_max", voxel_map.l_max)) if k not in explicit}
        if updates:
            cfg = RunConfig(**{**cfg.model_dump(), **updates})
    else:
        cloud = load_cloud(path, cfg.cloud_format)
        voxel_map = build_multires(cloud, cfg.r, cfg.l_max, cfg.collision_target, cfg.max_buckets)
    return voxel_map, (time.perf_counter() - t0) * 1000.0, cfg


def result_to_dict(result: SearchResult, cfg: RunConfig) -> dict:
    pose = None
    if result.best_pose is not None:
        p = result.best_pose
        pose = {
            "xyz": p.xyz.tolist(),
            "rpy": p.rpy.tolist(),
            "matrix_4x4": pose_to_transform(p).as_matrix().tolist(),
        }
    return {
        "pose": pose,
        "score": result.best_score,
        "threshold": result.threshold,
        "matched": result.matched,
        "scan_points": result.scan_points,
        "d_max": result.d_max,
        "downsample": None if result.leaf is None else {
            "leaf": result.leaf.leaf, "points": result.leaf.count, "converged": result.leaf.converged,
        },
        "stats": result.stats.as_dict(),
        "phases": result.stats.phases(),
        "preprocessing_ms": result.stats.preprocessing_ms,
        "localization_ms": result.stats.localization_ms,
        "config": cfg.model_dump(mode="json"),
    }


def _emit(payload: dict, cfg: RunConfig, as_json: bool, text: str) -> None:
    if cfg.out:
        out = Path(cfg.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(payload, indent=2) if as_json else text)


def cmd_build_map(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    out = Path(_require(cfg.out, "--out"))
    cloud = load_cloud(_require(cfg.map_path, "--map"), cfg.cloud_format)
    t0 = time.perf_counter()
    voxel_map = build_multires(cloud, cfg.r, cfg.l_max, cfg.collision_target, cfg.max_buckets)
    build_ms = (time.perf_counter() - t0) * 1000.0
    save_map(voxel_map, out)

    payload = {
        "out": str(out),
        "levels": len(voxel_map.levels),
        "create_voxel_maps_ms": build_ms,
        "occupied": [lvl.occupied_count for lvl in voxel_map.levels],
        "buckets": [lvl.bucket_count for lvl in voxel_map.levels],
    }
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"Carte écrite : {out} ({payload['levels']} niveaux, {build_ms:.1f} ms)")
    return EXIT_OK


def cmd_localize(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    voxel_map, map_ms, cfg = _prepare_map(cfg, _explicit_fields(args))
    scan = load_cloud(_require(cfg.scan_path, "--scan"), cfg.cloud_format)

    result = search(voxel_map, scan, cfg.search_config(), create_voxel_maps_ms=map_ms)
    _emit(result_to_dict(result, cfg), cfg, True, "")
    return EXIT_OK if result.matched else EXIT_NO_MATCH


def cmd_oracle(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    voxel_map, _, cfg = _prepare_map(cfg, _explicit_fields(args))
    scan = load_cloud(_require(cfg.scan_path, "--scan"), cfg.cloud_format)

    result = oracle_search(voxel_map, scan, cfg.search_config())
    payload = {
        "best_score": result.best_score,
        "threshold": result.threshold,
        "leaf_count": result.leaf_count,
        "maximizers": [list(n[:7]) for n in result.maximizers],
        "config": cfg.model_dump(mode="json"),
    }
    text = (f"Meilleur score {result.best_score} (seuil {result.threshold}), "
            f"{len(result.maximizers)} maximiseur(s) sur {result.leaf_count} feuilles")
    _emit(payload, cfg, args.json, text)
    return EXIT_OK if result.best_score >= result.threshold else EXIT_NO_MATCH


def _scene_model(args: argparse.Namespace) -> SceneModel:
    values = {"roll_pitch_noise": args.noise, "jitter": args.jitter}
    if args.size:
        values["size"] = tuple(args.size)
    return SceneModel(**values)


def cmd_gen_scene(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    out = Path(_require(cfg.out, "--out"))
    scene = gen_scene(_scene_model(args), cfg.seed)
    save_scene(scene, out)
    payload = {
        "out": str(out),
        "seed": scene.rng_seed,
        "gt_pose": scene.gt_pose.model_dump(),
        "map_points": len(scene.map_cloud),
        "scan_points": len(scene.scan_cloud),
    }
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"Scène {scene.rng_seed} écrite dans {out} : pose {scene.gt_pose}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    values = dict(
        scene_count=args.scenes,
        seed=cfg.seed,
        configs=list(args.configs),
        r=cfg.r,
        l_max=cfg.l_max,
        collision_target=cfg.collision_target,
        batch_size=cfg.batch_size,
        score_threshold_fraction=cfg.score_threshold_fraction,
        downsample_target=cfg.downsample_target,
        audit_pairs=args.audit_pairs,
        scene=_scene_model(args),
    )
    if args.workers is not None:
        values["batched_workers"] = args.workers
    model = BenchmarkModel(**values)
    if args.scene_dir:
        scenes = [load_scene(d) for d in sorted(Path(args.scene_dir).iterdir()) if (d / "scene.json").is_file()]
        if not scenes:
            raise FileNotFoundError(f"Aucune scène dans {args.scene_dir}")
    else:
        scenes = make_scenes(model)

    report = run_benchmark(scenes, model, progress=cfg.verbosity >= 0)
    if cfg.out:
        write_jsonl(report, cfg.out)
    if args.json:
        print(json.dumps({"rows": report.rows, "summary": report.summary}, indent=2))
    else:
        print(render_table(report))
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    """Options communes à localize, oracle et benchmark."""
    p.add_argument("--r", type=float, help="résolution la plus fine (m)")
    p.add_argument("--lmax", type=int, help="niveau le plus grossier")
    p.add_argument("--batch-size", type=int, help="taille de lot b")
    p.add_argument("--threshold", type=float, help="fraction de points pour le seuil de score")
    p.add_argument("--workers", type=int)
    p.add_argument("--downsample-target", type=int, help="points visés après sous-échantillonnage (0 : aucun)")


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    """Options propres à une recherche unique : le benchmark les fixe par configuration."""
    _add_run_flags(p)
    p.add_argument("--strategy", choices=list(STRATEGY_MAP))
    p.add_argument("--branch", choices=list(BRANCH_MODE_MAP))
    p.add_argument("--roll-pitch-range", type=float, help="demi-largeur des plages de roulis et tangage (rad)")
    p.add_argument("--d-max", type=float, help="portée du scan imposée (m)")
    p.add_argument("--audit", action="store_true", help="journalise élagages, branchements et mises à jour du meilleur score")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="fichier de configuration JSON")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_true", help="sortie JSON")
    p.add_argument("--format", choices=list(CLOUD_FORMAT_MAP), help="format des nuages de points")
    p.add_argument("--collision-target", type=float)
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--quiet", action="store_true")


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--size", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--noise", type=float, default=0.0, help="bruit de roulis/tangage (rad)")
    p.add_argument("--jitter", type=float, default=0.0, help="bruit gaussien sur les points (m)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="localize", description="Localisation globale de nuages de points par branch-and-bound")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-map", help="construit et sauvegarde la carte multi-résolution")
    p.add_argument("--map", help="nuage de points de la carte")
    p.add_argument("--r", type=float)
    p.add_argument("--lmax", type=int)
    _add_common_flags(p)
    p.set_defaults(func=cmd_build_map)

    for name, func, helptext in (
        ("localize", cmd_localize, "localise un scan dans la carte"),
        ("oracle", cmd_oracle, "évalue exhaustivement toutes les feuilles"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--map", help="carte binaire ou nuage de points")
        p.add_argument("--scan")
        _add_search_flags(p)
        _add_common_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("gen-scene", help="génère une scène synthétique")
    _add_common_flags(p)
    _add_scene_flags(p)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("benchmark", help="exécute les configurations (a)-(i)")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--configs", default="".join(CONFIG_MATRIX), help="lettres des configurations, ex. 'adgi'")
    p.add_argument("--scene-dir", help="répertoire de scènes sauvegardées (un sous-répertoire par scène)")
    p.add_argument("--audit-pairs", type=int, default=1_000_000)
    _add_run_flags(p)
    _add_common_flags(p)
    _add_scene_flags(p)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.verbosity = _configure_logging(args)
    try:
        return args.func(args)
    except Exception as e:
        code = _error_exit_code(e)
        print(f"Erreur : {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
