"""Turn an allocation plan into the final K-primitive set.

Each view's pixel-aligned Gaussians are scored by a heuristic importance
strategy and the top K_i are kept. Merge mode additionally folds the
unselected low-variation Gaussians into patch-level merged Gaussians that
displace the lowest-ranked selections, so the output count stays exactly K.
"""

import time
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from engine.importance import (
    assign_to_keys,
    build_importance_selection,
    compute_variation_maps,
    merge_clusters,
)
from errors import BudgetError, MissingMapsError, PlanMismatchError
from models import (
    AllocationPlan,
    CompactionMode,
    CompactionReport,
    GaussianSet,
    ImportanceConfig,
    ImportanceSelection,
    Scene,
    SceneView,
    ScoreVector,
    Strategy,
    VariationMaps,
    ViewCompaction,
)
from utils.helpers import get_logger, parallel_map
from utils.ply_io import ply_bytes

logger = get_logger(__name__)

MAP_STRATEGIES = {Strategy.VARIATION, Strategy.VARIATION_X_OPACITY}


def score_gaussians(
    view: SceneView,
    strategy: Strategy,
    maps: Optional[VariationMaps] = None,
    mask: Optional[np.ndarray] = None,
) -> ScoreVector:
    """Per-primitive importance scores for one pixel-aligned view.

    Args:
        view (SceneView): The view whose Gaussians are scored.
        strategy (Strategy): Scoring rule.
        maps (Optional[VariationMaps]): Needed by ``variation`` and ``variation_x_opacity``.
        mask (Optional[np.ndarray]): Binary H x W importance mask, needed by ``mask_then_opacity``.

    Returns:
        ScoreVector: One non-negative score per primitive.
    """
    strategy = Strategy(strategy)
    alpha = view.gaussians.opacities
    if strategy is Strategy.OPACITY:
        scores = alpha
    elif strategy in MAP_STRATEGIES:
        if maps is None:
            raise MissingMapsError(f"strategy '{strategy}' needs variation maps for view {view.view_id}")
        g = maps.combined.reshape(-1)
        if g.shape[0] != alpha.shape[0]:
            raise PlanMismatchError(f"view {view.view_id}: {g.shape[0]} map pixels for {alpha.shape[0]} primitives")
        scores = g if strategy is Strategy.VARIATION else alpha * g
    else:
        if mask is None:
            raise MissingMapsError(f"strategy '{strategy}' needs an importance mask for view {view.view_id}")
        omega = np.asarray(mask, dtype=np.float64).reshape(-1)
        if omega.shape[0] != alpha.shape[0]:
            raise PlanMismatchError(f"view {view.view_id}: {omega.shape[0]} mask pixels for {alpha.shape[0]} primitives")
        # alpha <= 1, so every mask member outranks every non-member
        scores = alpha + omega
    return ScoreVector(scores=scores, strategy=strategy)


def _ranking(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, lower index first on ties."""
    return np.lexsort((np.arange(scores.shape[0]), -scores))


def select_top_k(scores: ScoreVector, budget: int) -> np.ndarray:
    """The ``budget`` highest-scoring indices, returned in ascending index order."""
    if not 0 <= budget <= len(scores):
        raise BudgetError(f"budget {budget} outside [0, {len(scores)}]")
    return np.sort(_ranking(scores.scores)[:budget])


def _check_plan(scene: Scene, plan: AllocationPlan) -> None:
    if len(plan.views) != scene.n_views:
        raise PlanMismatchError(f"plan covers {len(plan.views)} views, scene has {scene.n_views}")
    for allocation, view in zip(plan.views, scene.views):
        if allocation.view_id != view.view_id:
            raise PlanMismatchError(f"plan view {allocation.view_id} does not match scene view {view.view_id}")
        if allocation.capacity != view.capacity:
            raise PlanMismatchError(
                f"view {view.view_id}: plan capacity {allocation.capacity} but the view holds {view.capacity} pixels"
            )
        if len(view.gaussians) != view.capacity:
            raise PlanMismatchError(f"view {view.view_id}: expected {view.capacity} pixel-aligned primitives")
    if sum(plan.budgets) != plan.total:
        raise PlanMismatchError(f"plan budgets sum to {sum(plan.budgets)}, not K={plan.total}")


def _map_rho(rho: float, capacity: int) -> float:
    return min(max(rho, 1.0 / capacity), 1.0)


def _needs_selection(strategy: Strategy, mode: CompactionMode) -> bool:
    return strategy is Strategy.MASK_THEN_OPACITY or mode is CompactionMode.SELECT_MERGE


class _ViewScoring(NamedTuple):
    view: SceneView
    scores: ScoreVector
    selection: Optional[ImportanceSelection]


def _score_view(
    view: SceneView,
    rho: float,
    strategy: Strategy,
    mode: CompactionMode,
    config: ImportanceConfig,
) -> _ViewScoring:
    selection = None
    maps = None
    if _needs_selection(strategy, mode):
        selection = build_importance_selection(view, _map_rho(rho, view.capacity), config)
        maps = selection.maps
    elif strategy in MAP_STRATEGIES:
        maps = compute_variation_maps(view, _map_rho(rho, view.capacity), config.quantile_mode)
    mask = selection.mask if selection is not None else None
    return _ViewScoring(view, score_gaussians(view, strategy, maps, mask), selection)


def _global_selection(scorings: List[_ViewScoring], total: int) -> List[np.ndarray]:
    """Top-K over the pooled scores, split back into per-view index arrays."""
    pooled = np.concatenate([s.scores.scores for s in scorings])
    if not 0 <= total <= pooled.shape[0]:
        raise BudgetError(f"budget {total} outside [0, {pooled.shape[0]}]")
    chosen = np.sort(_ranking(pooled)[:total])
    offsets = np.cumsum([0] + [len(s.scores) for s in scorings])
    return [chosen[(chosen >= lo) & (chosen < hi)] - lo for lo, hi in zip(offsets[:-1], offsets[1:])]


def _merge_into(
    scoring: _ViewScoring,
    selected: np.ndarray,
    patch: int,
) -> Tuple[GaussianSet, int, Optional[float]]:
    """Build the view's output under merge mode; returns (set, merged count, mean merged score)."""
    view = scoring.view
    gaussians = view.gaussians
    budget = selected.size
    low = scoring.selection.low_indices
    leftover = low[~np.isin(low, selected)]
    if leftover.size == 0 or budget == 0:
        return gaussians.subset(selected), 0, None

    members = gaussians.subset(leftover)
    key_pos, labels = assign_to_keys(members, view.camera.width, patch)
    n_clusters = key_pos.size if key_pos.size else len(members)
    if n_clusters > budget:
        logger.warning(
            f"View {view.view_id}: {n_clusters} merged Gaussians exceed the budget of {budget}; keeping the plain selection"
        )
        return gaussians.subset(selected), 0, None

    merged = merge_clusters(members, labels, n_clusters) if key_pos.size else members
    member_scores = scoring.scores.scores[leftover]
    cluster_scores = np.bincount(labels, weights=member_scores, minlength=n_clusters) / np.bincount(
        labels, minlength=n_clusters
    )
    # displace the lowest-ranked selections
    ranked = selected[_ranking(scoring.scores.scores[selected])]
    kept = np.sort(ranked[: budget - n_clusters])
    output = GaussianSet.concatenate([gaussians.subset(kept), merged])
    return output, n_clusters, float(cluster_scores.mean())


def compact_scene(
    scene: Scene,
    plan: AllocationPlan,
    strategy: Strategy = Strategy.VARIATION_X_OPACITY,
    mode: CompactionMode = CompactionMode.SELECT,
    global_topk: bool = False,
    config: ImportanceConfig = ImportanceConfig(),
    threads: Optional[int] = None,
) -> Tuple[GaussianSet, CompactionReport]:
    """Select (and optionally merge) primitives so the output holds exactly K Gaussians.

    Args:
        scene (Scene): Pixel-aligned scene.
        plan (AllocationPlan): Per-view budgets from the allocator.
        strategy (Strategy): Importance scoring rule.
        mode (CompactionMode): ``select`` or ``select+merge``.
        global_topk (bool): Rank the pooled scores instead of enforcing per-view budgets.
        config (ImportanceConfig): Patch size and quantile mode for maps and merging.
        threads (Optional[int]): Worker threads for per-view scoring.

    Returns:
        Tuple[GaussianSet, CompactionReport]: The compacted set in view order and its report.
    """
    start = time.perf_counter()
    strategy, mode = Strategy(strategy), CompactionMode(mode)
    _check_plan(scene, plan)

    pairs = list(zip(scene.views, plan.views))
    scorings = parallel_map(
        lambda pair: _score_view(pair[0], pair[1].rho, strategy, mode, config),
        pairs,
        threads,
    )

    if global_topk:
        selections = _global_selection(scorings, plan.total)
    else:
        selections = [select_top_k(s.scores, a.budget) for s, a in zip(scorings, plan.views)]

    outputs: List[GaussianSet] = []
    per_view: List[ViewCompaction] = []
    for scoring, allocation, selected in zip(scorings, plan.views, selections):
        merged_added, merged_score = 0, None
        if mode is CompactionMode.SELECT_MERGE:
            output, merged_added, merged_score = _merge_into(scoring, selected, config.patch_size)
        else:
            output = scoring.view.gaussians.subset(selected)
        outputs.append(output)
        per_view.append(
            ViewCompaction(
                view_id=scoring.view.view_id,
                budget=allocation.budget,
                selected=int(selected.size) - merged_added,
                merged_added=merged_added,
                merged_score_mean=merged_score,
                kept_opacity_mean=float(output.opacities.mean()) if len(output) else None,
            )
        )
        logger.debug(
            f"View {scoring.view.view_id}: kept {len(output)} of {scoring.view.capacity} "
            f"(budget {allocation.budget}, merged {merged_added})"
        )

    compacted = GaussianSet.concatenate(outputs) if outputs else GaussianSet.empty()
    report = CompactionReport(
        total=plan.total,
        rho_global=plan.rho_global,
        strategy=strategy,
        mode=mode,
        global_topk=global_topk,
        input_count=scene.total_pool,
        output_count=len(compacted),
        per_view=per_view,
        storage_bytes=len(ply_bytes(compacted)),
        wall_time_s=time.perf_counter() - start,
    )
    logger.info(f"Compacted {scene.total_pool} primitives to {len(compacted)} ({strategy}, {mode})")
    return compacted, report
