import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from errors import BudgetError
from models import AllocationPlan, ImageView, Scene, SpectralProfile, ViewAllocation
from utils.helpers import get_logger, parallel_map

logger = get_logger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
DEFAULT_TEMPERATURE = 0.2
DEFAULT_LOWFREQ_SIDE = 64


def lowfreq_window(height: int, width: int, side: int) -> Tuple[slice, slice]:
    """Rows/cols of the centered side x side square around the shifted DC bin.

    The square spans [c - side//2, c - side//2 + side) on each axis, so an even side
    extends one extra bin towards the lower indices.
    """
    cy, cx = height // 2, width // 2
    y0, x0 = cy - side // 2, cx - side // 2
    return slice(max(y0, 0), max(y0 + side, 0)), slice(max(x0, 0), max(x0 + side, 0))


def high_frequency_score(image: ImageView, lowfreq_side: int = DEFAULT_LOWFREQ_SIDE) -> float:
    """Fraction of the luminance spectrum magnitude lying outside the low-frequency square."""
    limit = min(image.height, image.width)
    side = lowfreq_side
    if side < 0 or side > limit:
        side = min(max(side, 0), limit)
        logger.warning(f"Low-frequency side {lowfreq_side} clamped to {side} for a {image.height}x{image.width} image")
    gray = image.pixels @ LUMA_WEIGHTS
    energy = np.abs(np.fft.fftshift(np.fft.fft2(gray)))
    total = energy.sum()
    if total <= 0:
        return 0.0
    rows, cols = lowfreq_window(image.height, image.width, side)
    eta = 1.0 - energy[rows, cols].sum() / total
    return float(min(max(eta, 0.0), 1.0))


def view_importance(etas: Sequence[float], temperature: float = DEFAULT_TEMPERATURE) -> Tuple[np.ndarray, np.ndarray]:
    """Softmax of the scores at temperature T; kappa rescales it to mean one."""
    if temperature <= 0:
        raise BudgetError(f"temperature must be positive, got {temperature}")
    etas = np.asarray(etas, dtype=np.float64).reshape(-1)
    if etas.size == 0:
        raise BudgetError("at least one view is required")
    psi = softmax(etas / temperature)
    return psi, etas.size * psi


def resolve_budget(total_pool: int, budget: Optional[int] = None, ratio: Optional[float] = None) -> int:
    """Turn exactly one of an absolute K or a ratio into K; ratios round down."""
    if (budget is None) == (ratio is None):
        raise BudgetError("give exactly one of budget or ratio")
    if ratio is not None:
        if not 0.0 <= ratio <= 1.0:
            raise BudgetError(f"ratio must lie in [0, 1], got {ratio}")
        budget = math.floor(ratio * total_pool)
    if budget < 0:
        raise BudgetError(f"budget must be non-negative, got {budget}")
    if budget > total_pool:
        raise BudgetError(f"budget {budget} exceeds the pool of {total_pool} primitives")
    return int(budget)


def clamped_targets(kappa: Sequence[float], capacities: Sequence[int], total: int) -> np.ndarray:
    """Real-valued per-view targets kappa_i * rho * capacity_i, capped at capacity.

    Excess from capped views is handed to the uncapped ones in proportion to
    kappa_i * capacity_i until no target exceeds its capacity.
    """
    kappa = np.asarray(kappa, dtype=np.float64)
    caps = np.asarray(capacities, dtype=np.float64)
    pool = caps.sum()
    if pool == 0:
        return np.zeros_like(caps)
    targets = kappa * caps * (total / pool)
    clamped = np.zeros(caps.shape, dtype=bool)
    while True:
        over = (targets > caps) & ~clamped
        if not over.any():
            return targets
        clamped |= over
        targets[clamped] = caps[clamped]
        free = ~clamped
        if not free.any():
            return targets
        remaining = total - caps[clamped].sum()
        weights = kappa[free] * caps[free]
        if weights.sum() <= 0:
            weights = caps[free]
        targets[free] = remaining * weights / weights.sum()


def largest_remainder(targets: Sequence[float], total: int, capacities: Sequence[int]) -> List[int]:
    """Round targets to integers summing exactly to ``total``.

    Floors first, then hands the residual out one unit at a time by descending
    fractional part, lowest index first on ties, skipping views at capacity.
    """
    targets = np.asarray(targets, dtype=np.float64)
    caps = np.asarray(capacities, dtype=np.int64)
    budgets = np.minimum(np.floor(targets).astype(np.int64), caps)
    budgets = np.maximum(budgets, 0)
    residual = int(total - budgets.sum())
    fractions = targets - np.floor(targets)
    order = np.lexsort((np.arange(targets.size), -fractions))
    while residual > 0:
        progressed = False
        for i in order:
            if residual == 0:
                break
            if budgets[i] < caps[i]:
                budgets[i] += 1
                residual -= 1
                progressed = True
        if not progressed:
            raise BudgetError(f"cannot place {residual} remaining primitives within view capacities")
    # float drift can leave the floors above the total
    for i in order[::-1]:
        if residual == 0:
            break
        take = min(int(budgets[i]), -residual)
        budgets[i] -= take
        residual += take
    return [int(b) for b in budgets]


def allocate_budgets(kappa: Sequence[float], capacities: Sequence[int], total: int) -> Tuple[List[int], np.ndarray]:
    """Integer budgets with sum ``total`` and the real targets they round."""
    capacities = [int(c) for c in capacities]
    if total < 0 or total > sum(capacities):
        raise BudgetError(f"budget {total} outside [0, {sum(capacities)}]")
    targets = clamped_targets(kappa, capacities, total)
    return largest_remainder(targets, total, capacities), targets


def spectral_profile(
    scene: Scene,
    temperature: float = DEFAULT_TEMPERATURE,
    lowfreq_side: int = DEFAULT_LOWFREQ_SIDE,
    uniform: bool = False,
    threads: Optional[int] = None,
) -> SpectralProfile:
    etas = parallel_map(lambda view: high_frequency_score(view.image, lowfreq_side), scene.views, threads)
    if uniform:
        n = len(etas)
        psi, kappa = np.full(n, 1.0 / n), np.ones(n)
    else:
        psi, kappa = view_importance(etas, temperature)
    return SpectralProfile(
        eta=[float(e) for e in etas],
        psi=psi.tolist(),
        kappa=kappa.tolist(),
        temperature=temperature,
        lowfreq_side=lowfreq_side,
    )


def make_allocation_plan(
    scene: Scene,
    budget: Optional[int] = None,
    ratio: Optional[float] = None,
    temperature: float = DEFAULT_TEMPERATURE,
    lowfreq_side: int = DEFAULT_LOWFREQ_SIDE,
    uniform: bool = False,
    threads: Optional[int] = None,
) -> AllocationPlan:
    """Split a global primitive budget K across views by spectral view importance.

    Args:
        scene (Scene): The posed views.
        budget (Optional[int]): Absolute K; exclusive with ``ratio``.
        ratio (Optional[float]): Fraction of the pool, K = floor(ratio * NHW).
        temperature (float): Softmax temperature T.
        lowfreq_side (int): Side s of the low-frequency square.
        uniform (bool): Use kappa = 1 for every view (training-time allocation).
        threads (Optional[int]): Worker threads for the per-view scores.

    Returns:
        AllocationPlan: Per-view budgets summing exactly to K.
    """
    if temperature <= 0:
        raise BudgetError(f"temperature must be positive, got {temperature}")
    pool = scene.total_pool
    total = resolve_budget(pool, budget, ratio)
    profile = spectral_profile(scene, temperature, lowfreq_side, uniform, threads)
    budgets, targets = allocate_budgets(profile.kappa, scene.capacities, total)
    views = [
        ViewAllocation(
            view_id=view.view_id,
            eta=profile.eta[i],
            psi=profile.psi[i],
            kappa=profile.kappa[i],
            rho=float(targets[i] / view.capacity) if view.capacity else 0.0,
            budget=budgets[i],
            capacity=view.capacity,
        )
        for i, view in enumerate(scene.views)
    ]
    logger.info(f"Allocated K={total} over {scene.n_views} views (rho={total / pool if pool else 0.0:.4f})")
    return AllocationPlan(
        total=total,
        rho_global=total / pool if pool else 0.0,
        temperature=temperature,
        lowfreq_side=lowfreq_side,
        uniform=uniform,
        views=views,
    )
