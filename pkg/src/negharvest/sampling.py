"""Budget allocation across strata with per-bucket floors, and the draw.

Floors take precedence over the budget: when the floor mass alone exceeds
the budget, the realized sample overshoots and the plan says so. A hard
budget would silently defeat the coverage guarantee the floors exist for.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .simhash import StratumTable


class PlanError(ValueError):
    """Allocation plan inconsistent with the stratum table."""


@dataclass(frozen=True)
class AllocationPlan:
    """Per-bucket sampling quotas for a given budget and floor."""

    budget: int
    floor: int
    quotas: dict[str, int]

    @property
    def realized_total(self) -> int:
        return sum(self.quotas.values())

    @property
    def overshoot(self) -> bool:
        return self.realized_total > self.budget

    def to_json_dict(self) -> dict:
        return {
            "budget": self.budget,
            "floor": self.floor,
            "realized_total": self.realized_total,
            "overshoot": self.overshoot,
            "quotas": dict(sorted(self.quotas.items())),
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))


def largest_remainder(
    weights: dict[str, float], total: int
) -> dict[str, int]:
    """Apportion *total* integer units proportionally to *weights*.

    Hamilton's method: floor every proportional share, then hand the
    leftover units to the largest fractional remainders. Ties break toward
    the lexicographically smaller key so the result is deterministic.
    """
    if total <= 0 or not weights:
        return {key: 0 for key in weights}
    weight_sum = float(sum(weights.values()))
    if weight_sum <= 0:
        return {key: 0 for key in weights}
    shares = {key: total * w / weight_sum for key, w in weights.items()}
    result = {key: int(np.floor(s)) for key, s in shares.items()}
    leftover = total - sum(result.values())
    by_remainder = sorted(
        weights, key=lambda key: (-(shares[key] - result[key]), key)
    )
    for key in by_remainder[:leftover]:
        result[key] += 1
    return result


def allocate(table: StratumTable, budget: int, floor: int) -> AllocationPlan:
    """Build per-bucket quotas: floors first, then proportional top-up.

    Step 1 gives every nonempty bucket min(floor, population). Step 2
    distributes the remaining budget across buckets proportionally to their
    remaining capacity with largest-remainder rounding, never exceeding any
    bucket's population.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if floor < 0:
        raise ValueError(f"floor must be >= 0, got {floor}")
    pops = table.counts
    base = {key: min(floor, pop) for key, pop in pops.items()}
    capacity = {key: pops[key] - base[key] for key in pops}
    remaining = max(0, budget - sum(base.values()))
    # Capacity bounds what step 2 can hand out; with that clamp the
    # largest-remainder shares never exceed any bucket's capacity.
    remaining = min(remaining, sum(capacity.values()))
    extra = largest_remainder(
        {key: float(cap) for key, cap in capacity.items() if cap > 0},
        remaining,
    )
    quotas = {key: base[key] + extra.get(key, 0) for key in pops}
    return AllocationPlan(budget=budget, floor=floor, quotas=quotas)


def _bucket_seed(seed: int, key: str) -> int:
    digest = hashlib.blake2b(key.encode("ascii"), digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "big")) & 0xFFFFFFFFFFFFFFFF


def draw(
    plan: AllocationPlan,
    table: StratumTable,
    ids: Sequence[str],
    seed: int,
) -> list[str]:
    """Draw the planned sample: per-bucket uniform subsets, no replacement.

    Each bucket is seeded independently from (seed, bucket key), so draws do
    not depend on bucket iteration order. The returned ids are sorted.
    """
    drawn: list[str] = []
    for key, quota in plan.quotas.items():
        if key not in table.buckets:
            raise PlanError(f"plan bucket {key!r} missing from table")
        members = table.buckets[key]
        if quota > len(members):
            raise PlanError(
                f"bucket {key!r}: quota {quota} exceeds population {len(members)}"
            )
        if quota == 0:
            continue
        rng = np.random.default_rng(_bucket_seed(seed, key))
        chosen = rng.choice(members, size=quota, replace=False)
        drawn.extend(ids[i] for i in chosen)
    return sorted(drawn)
