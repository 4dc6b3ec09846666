"""Enumeration and seeded sampling of AP subsets.

Subset positioning needs every combination of the visible APs between a
minimum and maximum size; the sampler thins that list to a ratio while always
keeping at least one subset of every size so the mixture retains both small
(sensitive) and large (stable) subsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import TooFewAps
from .model import ApId


@dataclass(frozen=True, slots=True)
class SubsetPlan:
    min_size: int = 3
    max_size: int | None = None  # None: use the full AP count at each timestep
    ratio: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.min_size < 3:
            raise ValueError(f"min_size must be >= 3, got {self.min_size}")
        if self.max_size is not None and self.max_size < self.min_size:
            raise ValueError(f"max_size must be >= min_size, got {self.max_size} < {self.min_size}")
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio must be in (0, 1], got {self.ratio}")


def enumerate_subsets(ap_ids: Sequence[ApId], plan: SubsetPlan) -> list[tuple[ApId, ...]]:
    """All subsets of sizes min..max in lexicographic order of sorted AP ids."""
    ids = sorted(set(ap_ids))
    if len(ids) != len(ap_ids):
        raise ValueError("ap_ids must be unique")
    max_size = plan.max_size if plan.max_size is not None else len(ids)
    max_size = min(max_size, len(ids))
    if len(ids) < plan.min_size:
        raise TooFewAps(f"need at least {plan.min_size} APs, got {len(ids)}")
    out: list[tuple[ApId, ...]] = []
    for k in range(plan.min_size, max_size + 1):
        out.extend(combinations(ids, k))
    return out


def sample_subsets(
    subsets: Sequence[tuple[ApId, ...]],
    plan: SubsetPlan,
    *,
    salt: int | None = None,
) -> list[tuple[ApId, ...]]:
    """Keep ceil(ratio * L) subsets, uniformly without replacement, seeded.

    A repair pass guarantees at least one subset of every size present in the
    input (swapping out a random pick from a size class that keeps one), so the
    returned count is exactly ceil(ratio * L) whenever that is at least the
    number of size classes (the size floor wins otherwise). Enumeration order
    is preserved; ratio=1 returns the input as-is. `salt` folds extra context
    (e.g. a scan's time index) into the RNG stream so per-timestep draws differ
    but stay deterministic.
    """
    if not subsets:
        raise ValueError("subsets must be non-empty")
    n_total = len(subsets)
    if plan.ratio >= 1.0:
        return list(subsets)
    n_keep = math.ceil(plan.ratio * n_total)
    seed = [plan.rng_seed] if salt is None else [plan.rng_seed, salt]
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(n_total, size=n_keep, replace=False).tolist())

    sizes = np.fromiter(map(len, subsets), dtype=np.intp, count=n_total)
    chosen_arr = np.sort(np.fromiter(chosen, dtype=np.intp, count=len(chosen)))
    # repairs never empty a class (removals require >= 2 members and additions
    # target the missing class itself), so presence computed once stays valid
    present = set(np.unique(sizes[chosen_arr]).tolist())
    for k in np.unique(sizes).tolist():
        if k in present:
            continue
        members = np.flatnonzero(sizes == k)
        add = int(members[int(rng.integers(members.size))])
        # drop a random selected subset from a class that retains >= 1 afterwards
        counts = np.bincount(sizes[chosen_arr])
        removable = chosen_arr[counts[sizes[chosen_arr]] >= 2]
        if removable.size:
            chosen.discard(int(removable[int(rng.integers(removable.size))]))
        chosen.add(add)
        chosen_arr = np.sort(np.fromiter(chosen, dtype=np.intp, count=len(chosen)))
    return [subsets[i] for i in sorted(chosen)]


def plan_subsets(
    ap_ids: Sequence[ApId],
    plan: SubsetPlan,
    *,
    salt: int | None = None,
) -> list[tuple[ApId, ...]]:
    """enumerate_subsets + sample_subsets in one call."""
    return sample_subsets(enumerate_subsets(ap_ids, plan), plan, salt=salt)
