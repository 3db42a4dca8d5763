import numpy as np
import pytest

from engine.allocator import (
    allocate_budgets,
    high_frequency_score,
    largest_remainder,
    lowfreq_window,
    make_allocation_plan,
    resolve_budget,
    view_importance,
)
from errors import BudgetError
from models import ImageView


class TestBudgetArithmetic:
    @pytest.mark.parametrize(
        "n_views, ratio, expected",
        [
            (24, 0.05, 78643),
            (24, 0.10, 157286),
            (24, 0.40, 629145),
            (24, 0.70, 1101004),
            (16, 0.05, 52428),
            (16, 0.40, 419430),
        ],
    )
    def test_ratio_counts_at_256(self, n_views, ratio, expected):
        assert resolve_budget(n_views * 256 * 256, ratio=ratio) == expected

    def test_absolute_budget_passes_through(self):
        assert resolve_budget(128, budget=40) == 40

    @pytest.mark.parametrize("kwargs", [{}, {"budget": 3, "ratio": 0.5}])
    def test_exactly_one_of_budget_and_ratio(self, kwargs):
        with pytest.raises(BudgetError):
            resolve_budget(128, **kwargs)

    @pytest.mark.parametrize("kwargs", [{"budget": -1}, {"budget": 129}, {"ratio": 1.5}, {"ratio": -0.1}])
    def test_out_of_range(self, kwargs):
        with pytest.raises(BudgetError):
            resolve_budget(128, **kwargs)


class TestViewImportance:
    def test_softmax_example(self):
        psi, kappa = view_importance([0.3, 0.1], 0.2)
        np.testing.assert_allclose(kappa, [1.462117, 0.537883], atol=1e-6)
        assert psi.sum() == pytest.approx(1.0)

    def test_kappa_has_mean_one(self, rng):
        for _ in range(20):
            _, kappa = view_importance(rng.random(rng.integers(1, 30)), rng.uniform(0.05, 2.0))
            assert abs(kappa.mean() - 1.0) < 1e-9

    def test_equal_scores_give_unit_kappa(self):
        _, kappa = view_importance([0.4, 0.4, 0.4], 0.2)
        np.testing.assert_allclose(kappa, 1.0)

    @pytest.mark.parametrize("temperature", [0.0, -1.0])
    def test_temperature_must_be_positive(self, temperature):
        with pytest.raises(BudgetError):
            view_importance([0.1, 0.2], temperature)


    def test_shifted_scores_give_the_same_plan(self, rng):
        caps = [4096] * 6
        for _ in range(30):
            etas = rng.uniform(0.0, 1.0, 6)
            total = int(rng.integers(0, sum(caps) + 1))
            _, kappa = view_importance(etas, 0.2)
            _, shifted = view_importance(etas + 0.37, 0.2)
            np.testing.assert_allclose(shifted, kappa, rtol=1e-12)
            assert allocate_budgets(shifted, caps, total)[0] == allocate_budgets(kappa, caps, total)[0]

    def test_higher_score_never_gets_less(self, rng):
        caps = [4096] * 8
        for _ in range(30):
            etas = rng.uniform(0.0, 1.0, 8)
            _, kappa = view_importance(etas, 0.2)
            budgets, targets = allocate_budgets(kappa, caps, int(0.1 * sum(caps)))
            order = np.argsort(etas)
            assert np.all(np.diff(targets[order]) >= 0)
            assert np.all(np.diff(np.asarray(budgets)[order]) >= 0)


class TestHighFrequencyScore:
    def test_constant_image_scores_zero(self):
        assert high_frequency_score(ImageView(pixels=np.full((16, 16, 3), 0.7)), 4) == pytest.approx(0.0, abs=1e-12)

    def test_black_image_scores_zero(self):
        assert high_frequency_score(ImageView(pixels=np.zeros((8, 8, 3))), 4) == 0.0

    def test_checkerboard_splits_energy_with_dc(self):
        rows, cols = np.indices((16, 16))
        board = np.repeat(((rows + cols) % 2).astype(float)[..., None], 3, axis=2)
        assert high_frequency_score(ImageView(pixels=board), 2) == pytest.approx(0.5, abs=1e-9)

    def test_invariant_to_intensity_scale(self, rng):
        pixels = rng.random((16, 16, 3))
        a = high_frequency_score(ImageView(pixels=pixels), 4)
        b = high_frequency_score(ImageView(pixels=0.5 * pixels), 4)
        assert a == pytest.approx(b, abs=1e-12)

    def test_window_wider_than_image_is_clamped(self, rng):
        image = ImageView(pixels=rng.random((8, 8, 3)))
        assert high_frequency_score(image, 64) == pytest.approx(0.0, abs=1e-12)

    def test_window_bounds(self):
        assert lowfreq_window(8, 8, 4) == (slice(2, 6), slice(2, 6))
        assert lowfreq_window(9, 7, 3) == (slice(3, 6), slice(2, 5))


class TestLargestRemainder:
    def test_ties_go_to_lower_index(self):
        assert largest_remainder([1.5, 1.5], 3, [10, 10]) == [2, 1]

    def test_largest_fraction_first(self):
        assert largest_remainder([1.2, 0.9, 0.9], 3, [5, 5, 5]) == [1, 1, 1]
        assert largest_remainder([1.1, 1.6, 0.3], 3, [5, 5, 5]) == [1, 2, 0]

    def test_capacity_respected(self):
        budgets, _ = allocate_budgets([2.5, 0.25, 0.25], [4, 4, 4], 9)
        assert sum(budgets) == 9
        assert max(budgets) <= 4

    def test_exact_count_on_random_instances(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            cap = int(rng.integers(1, 17)) * int(rng.integers(1, 17))
            total = int(rng.integers(0, n * cap + 1))
            _, kappa = view_importance(rng.random(n), rng.uniform(0.05, 1.0))
            budgets, _ = allocate_budgets(kappa, [cap] * n, total)
            assert sum(budgets) == total
            assert all(0 <= b <= cap for b in budgets)


class TestAllocationPlan:
    def test_budgets_sum_to_k(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=40)
        assert plan.total == 40
        assert sum(plan.budgets) == 40
        assert [v.capacity for v in plan.views] == [64, 64]

    def test_zero_budget(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=0)
        assert plan.budgets == [0, 0]

    def test_full_budget(self, small_scene):
        plan = make_allocation_plan(small_scene, ratio=1.0)
        assert plan.budgets == [64, 64]

    def test_uniform_budgets_differ_by_at_most_one(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=41, uniform=True)
        assert max(plan.budgets) - min(plan.budgets) <= 1
        assert all(v.kappa == 1.0 for v in plan.views)

    def test_rho_matches_targets(self, small_scene):
        plan = make_allocation_plan(small_scene, budget=40)
        assert sum(v.rho * v.capacity for v in plan.views) == pytest.approx(40)

    def test_serializes_k_alias(self, small_scene):
        payload = make_allocation_plan(small_scene, budget=10).model_dump(by_alias=True)
        assert payload["K"] == 10

    def test_invalid_temperature(self, small_scene):
        with pytest.raises(BudgetError):
            make_allocation_plan(small_scene, budget=10, temperature=0.0)
