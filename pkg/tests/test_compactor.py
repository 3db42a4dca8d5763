import numpy as np
import pytest

from engine.allocator import make_allocation_plan
from engine.compactor import compact_scene, score_gaussians, select_top_k
from engine.importance import build_importance_selection, compute_variation_maps
from errors import BudgetError, MissingMapsError, PlanMismatchError
from models import CompactionMode, ImportanceConfig, ScoreVector, Strategy
from utils.ply_io import ply_bytes


def _view_slices(report):
    """Output offsets of each view's block in the concatenated result."""
    sizes = [v.selected + v.merged_added for v in report.per_view]
    offsets = np.cumsum([0] + sizes)
    return [slice(lo, hi) for lo, hi in zip(offsets[:-1], offsets[1:])]


class TestSelectTopK:
    def test_highest_scores_in_index_order(self):
        scores = ScoreVector(scores=[0.1, 0.9, 0.5, 0.7], strategy=Strategy.OPACITY)
        np.testing.assert_array_equal(select_top_k(scores, 2), [1, 3])

    def test_ties_prefer_lower_index(self):
        scores = ScoreVector(scores=[0.5, 0.5, 0.5, 0.5], strategy=Strategy.OPACITY)
        np.testing.assert_array_equal(select_top_k(scores, 3), [0, 1, 2])

    @pytest.mark.parametrize("budget", [0, 4])
    def test_bounds(self, budget):
        scores = ScoreVector(scores=[0.3, 0.1, 0.2, 0.4], strategy=Strategy.OPACITY)
        assert select_top_k(scores, budget).size == budget

    def test_raising_a_score_keeps_it_selected(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 40))
            # coarse values so ties occur
            raw = rng.integers(0, 5, n) / 4.0
            budget = int(rng.integers(0, n + 1))
            selected = select_top_k(ScoreVector(scores=raw, strategy=Strategy.OPACITY), budget)
            for i in selected:
                raised = raw.copy()
                raised[i] += rng.choice([0.0, 0.25, 1.0])
                again = select_top_k(ScoreVector(scores=raised, strategy=Strategy.OPACITY), budget)
                assert i in again

    @pytest.mark.parametrize("budget", [-1, 5])
    def test_out_of_range(self, budget):
        scores = ScoreVector(scores=[0.3, 0.1, 0.2, 0.4], strategy=Strategy.OPACITY)
        with pytest.raises(BudgetError):
            select_top_k(scores, budget)

    def test_rejects_negative_scores(self):
        with pytest.raises(ValueError):
            ScoreVector(scores=[0.1, -0.2], strategy=Strategy.OPACITY)


class TestScoring:
    def test_opacity_scores(self, small_scene):
        view = small_scene.views[0]
        scores = score_gaussians(view, Strategy.OPACITY)
        np.testing.assert_array_equal(scores.scores, view.gaussians.opacities)

    def test_variation_times_opacity(self, small_scene):
        view = small_scene.views[0]
        maps = compute_variation_maps(view, 0.5)
        scores = score_gaussians(view, Strategy.VARIATION_X_OPACITY, maps=maps)
        np.testing.assert_allclose(scores.scores, view.gaussians.opacities * maps.combined.reshape(-1))

    @pytest.mark.parametrize("strategy", [Strategy.VARIATION, Strategy.VARIATION_X_OPACITY, Strategy.MASK_THEN_OPACITY])
    def test_missing_inputs(self, small_scene, strategy):
        with pytest.raises(MissingMapsError):
            score_gaussians(small_scene.views[0], strategy)

    def test_mask_members_outrank_the_rest(self, small_scene):
        view = small_scene.views[0]
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[0, :3] = 1
        scores = score_gaussians(view, Strategy.MASK_THEN_OPACITY, mask=mask)
        np.testing.assert_array_equal(select_top_k(scores, 3), [0, 1, 2])

    def test_mask_size_mismatch(self, small_scene):
        with pytest.raises(PlanMismatchError):
            score_gaussians(small_scene.views[0], Strategy.MASK_THEN_OPACITY, mask=np.ones((4, 4)))


class TestCompactScene:
    @pytest.mark.parametrize("strategy", list(Strategy))
    @pytest.mark.parametrize("mode", list(CompactionMode))
    @pytest.mark.parametrize("budget", [0, 1, 40, 128])
    def test_output_holds_exactly_k(self, small_scene, strategy, mode, budget):
        plan = make_allocation_plan(small_scene, budget=budget)
        compacted, report = compact_scene(small_scene, plan, strategy=strategy, mode=mode)
        assert len(compacted) == budget
        assert report.output_count == budget
        assert report.input_count == 128
        for view, allocation in zip(report.per_view, plan.views):
            assert view.selected + view.merged_added == allocation.budget

    def test_opacity_selection_per_view(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=40)
        compacted, report = compact_scene(small_scene, plan, strategy=Strategy.OPACITY)
        for view, allocation, block in zip(small_scene.views, plan.views, _view_slices(report)):
            expected = np.sort(np.argsort(-view.gaussians.opacities, kind="stable")[: allocation.budget])
            np.testing.assert_array_equal(compacted.centers[block], view.gaussians.centers[expected])

    def test_full_budget_keeps_everything(self, small_scene):
        plan = make_allocation_plan(small_scene, ratio=1.0)
        compacted, _ = compact_scene(small_scene, plan)
        np.testing.assert_array_equal(compacted.centers, small_scene.pooled_gaussians().centers)

    def test_deterministic(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=40)
        first, _ = compact_scene(small_scene, plan, mode=CompactionMode.SELECT_MERGE)
        second, _ = compact_scene(small_scene, plan, mode=CompactionMode.SELECT_MERGE, threads=1)
        np.testing.assert_array_equal(first.centers, second.centers)
        np.testing.assert_array_equal(first.opacities, second.opacities)

    def test_global_topk_ranks_the_pool(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=40)
        compacted, report = compact_scene(small_scene, plan, strategy=Strategy.OPACITY, global_topk=True)
        pooled = small_scene.pooled_gaussians()
        expected = np.sort(np.argsort(-pooled.opacities, kind="stable")[:40])
        np.testing.assert_array_equal(np.sort(compacted.opacities), np.sort(pooled.opacities[expected]))
        assert report.global_topk
        assert sum(v.selected for v in report.per_view) == 40

    def test_mask_strategy_keeps_mask_pixels_first(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=64)
        compacted, report = compact_scene(small_scene, plan, strategy=Strategy.MASK_THEN_OPACITY)
        for view, allocation, block in zip(small_scene.views, plan.views, _view_slices(report)):
            rho = min(max(allocation.rho, 1.0 / view.capacity), 1.0)
            mask = build_importance_selection(view, rho).mask.reshape(-1)
            members = np.flatnonzero(mask)
            if members.size <= allocation.budget:
                kept = {tuple(c) for c in compacted.centers[block]}
                assert all(tuple(view.gaussians.centers[i]) in kept for i in members)

    def test_merge_reports_merged_counts(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=40)
        config = ImportanceConfig(patch_size=2)
        _, report = compact_scene(small_scene, plan, mode=CompactionMode.SELECT_MERGE, config=config)
        for view in report.per_view:
            assert 0 <= view.merged_added <= view.budget
            if view.merged_added:
                assert view.merged_score_mean is not None

    def test_storage_matches_serialized_size(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=10)
        compacted, report = compact_scene(small_scene, plan)
        assert report.storage_bytes == len(ply_bytes(compacted))
        assert report.wall_time_s >= 0

    def test_plan_from_another_scene(self, small_scene, medium_scene):
        plan = make_allocation_plan(medium_scene, budget=10)
        with pytest.raises(PlanMismatchError):
            compact_scene(small_scene, plan)

    def test_plan_with_inconsistent_budgets(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=10)
        broken = plan.model_copy(update={"total": 11})
        with pytest.raises(PlanMismatchError):
            compact_scene(small_scene, broken)
