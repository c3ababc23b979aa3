from localizer.harness.bounds import audit_bounds, branched_nodes
from localizer.search.bnb import search
from localizer.search.config import SearchConfig


def test_translation_seule_sans_violation(small_map, small_scene, narrow_cfg):
    audit = audit_bounds(small_map, small_scene.scan_cloud, narrow_cfg, pairs=5000, seed=1)
    assert audit.pairs > 0
    assert audit.branched_parents > 0
    assert audit.violations == 0
    assert audit.violation_rate == 0.0
    assert audit.mean_exceedance == 0.0
    assert audit.branch_mode == "trans"


def test_roto_translation_taux_de_violation_faible(small_map, small_scene):
    cfg = SearchConfig(r=1.0, l_max=2, branch_mode="roto", downsample_target=300,
                       score_threshold_fraction=0.7)
    audit = audit_bounds(small_map, small_scene.scan_cloud, cfg, pairs=20_000, seed=2)
    assert audit.pairs > 0
    assert audit.violation_rate < 0.01
    assert audit.mean_exceedance >= 0.0
    assert set(audit.as_dict()) == {
        "pairs", "violations", "violation_rate", "mean_exceedance", "branch_mode",
        "branched_parents", "sampled_parents",
    }


def test_parents_issus_de_la_recherche(small_map, small_scene, narrow_cfg):
    parents = branched_nodes(small_map, small_scene.scan_cloud, narrow_cfg)
    assert parents
    assert all(p.level >= 1 and p.score is not None for p in parents)
    # un nœud n'est branché que si son score atteint le meilleur score courant
    threshold = search(small_map, small_scene.scan_cloud, narrow_cfg).threshold
    assert min(p.score for p in parents) >= max(threshold, 1)

    audit = audit_bounds(small_map, small_scene.scan_cloud, narrow_cfg, pairs=1, parents=parents[:3])
    assert audit.branched_parents == 3
    assert audit.sampled_parents == 0
    assert audit.pairs == 3 * 8


def test_complement_par_tirage_au_dessus_du_seuil(small_map, small_scene, narrow_cfg):
    audit = audit_bounds(small_map, small_scene.scan_cloud, narrow_cfg, pairs=2000, seed=3, parents=[])
    assert audit.branched_parents == 0
    assert audit.sampled_parents > 0
    assert audit.violations == 0


def test_audit_reproductible(small_map, small_scene, narrow_cfg):
    a = audit_bounds(small_map, small_scene.scan_cloud, narrow_cfg, pairs=500, seed=7)
    b = audit_bounds(small_map, small_scene.scan_cloud, narrow_cfg, pairs=500, seed=7)
    assert a == b
