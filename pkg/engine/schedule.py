"""Progressive budget-sampling schedule for external training loops.

K_min starts at ``k_start_frac`` of the pool and steps down by ``decay`` every
``interval`` iterations until it reaches ``k_floor_frac``; K is drawn uniformly
from [K_min, K_max]. Draws come from a Philox generator keyed by (seed, t), so
any iteration can be queried in any order.
"""

from typing import Optional

import numpy as np
import pandas as pd

from errors import BudgetError
from models import ScheduleConfig


def _fraction_count(fraction: float, total_pool: int) -> int:
    # Python's round() is round-half-even
    return int(round(fraction * total_pool))


def k_min_at(cfg: ScheduleConfig, t: int) -> int:
    if t < 0:
        raise BudgetError(f"iteration must be non-negative, got {t}")
    fraction = max(cfg.k_start_frac - cfg.decay * (t // cfg.interval), cfg.k_floor_frac)
    return _fraction_count(fraction, cfg.total_pool)


def k_max(cfg: ScheduleConfig) -> int:
    return _fraction_count(cfg.k_max_frac, cfg.total_pool)


def _generator(seed: int, t: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[t, 0, 0, 0]))


def sample_k(cfg: ScheduleConfig, t: int) -> int:
    low = k_min_at(cfg, t)
    high = max(k_max(cfg), low)
    if low == high:
        return low
    return int(_generator(cfg.seed, t).integers(low, high, endpoint=True))


def schedule_table(cfg: ScheduleConfig, t_max: int, step: Optional[int] = None) -> pd.DataFrame:
    """One row per ``step`` iterations (default: the decay interval) up to ``t_max``."""
    if t_max < 0:
        raise BudgetError(f"t_max must be non-negative, got {t_max}")
    step = step or cfg.interval
    rows = [
        {"t": t, "k_min": k_min_at(cfg, t), "k_max": k_max(cfg), "sampled_k": sample_k(cfg, t)}
        for t in range(0, t_max + 1, step)
    ]
    return pd.DataFrame(rows, columns=["t", "k_min", "k_max", "sampled_k"])


def floor_iteration(cfg: ScheduleConfig) -> Optional[int]:
    """First iteration at which K_min reaches the floor, None if it never does."""
    if cfg.decay == 0:
        return 0 if cfg.k_start_frac <= cfg.k_floor_frac else None
    steps = 0
    while cfg.k_start_frac - cfg.decay * steps > cfg.k_floor_frac:
        steps += 1
    return steps * cfg.interval
