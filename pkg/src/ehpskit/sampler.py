"""Per-dataset length planning and deterministic index schedules.

Three strategies:

balanced      every dataset gets floor(total / N); the remainder goes one by
              one to the best-ranked datasets.
weighted      lengths form a descending arithmetic sequence whose first term
              is ``ratio`` times the last and whose sum is exactly ``total``.
concatenated  every dataset keeps its source size.

Weighted lengths are computed in exact rationals and rounded by largest
remainder; ties go to the smaller (lower-ranked) entries first, which keeps
the sequence non-increasing and each entry within one count of its exact value.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidArgument
from .rng import derive_key, random_permutation

STRATEGIES = ("balanced", "weighted", "concatenated")


@dataclass(frozen=True)
class SampleStrategy:
    variant: str = "balanced"
    ratio: Fraction = Fraction(4)

    def __post_init__(self):
        if self.variant not in STRATEGIES:
            raise InvalidArgument(f"unknown strategy {self.variant!r}; expected one of {STRATEGIES}")
        object.__setattr__(self, "ratio", Fraction(self.ratio))
        if self.variant == "weighted" and self.ratio <= 1:
            raise InvalidArgument(f"weighted ratio must exceed 1, got {self.ratio}")


def _as_strategy(strategy) -> SampleStrategy:
    return strategy if isinstance(strategy, SampleStrategy) else SampleStrategy(strategy)


def weighted_targets(n: int, total: int, ratio=4) -> list[Fraction]:
    """Exact (unrounded) arithmetic-sequence lengths, best rank first."""
    ratio = Fraction(ratio)
    if n == 1:
        return [Fraction(total)]
    last = Fraction(2 * total) / ((ratio + 1) * n)
    step = (ratio - 1) * last / (n - 1)
    return [last + (n - 1 - i) * step for i in range(n)]


def plan_lengths(ranked_sizes, strategy, total: int | None = None) -> dict[str, int]:
    """Target length per dataset; ``ranked_sizes`` is ``[(dataset_id, source_size), ...]`` best first."""
    strategy = _as_strategy(strategy)
    ranked_sizes = [(str(d), int(s)) for d, s in ranked_sizes]
    n = len(ranked_sizes)
    if n == 0:
        raise InvalidArgument("no datasets to plan")
    ids = [d for d, _ in ranked_sizes]
    if len(set(ids)) != n:
        raise InvalidArgument("duplicate dataset ids")
    if any(s < 0 for _, s in ranked_sizes):
        raise InvalidArgument("source sizes must be non-negative")

    if strategy.variant == "concatenated":
        return dict(ranked_sizes)
    if total is None or total < n:
        raise InvalidArgument(f"total must be at least the number of datasets ({n}), got {total}")

    if strategy.variant == "balanced":
        base, rem = divmod(total, n)
        return {d: base + (1 if i < rem else 0) for i, d in enumerate(ids)}

    exact = weighted_targets(n, total, strategy.ratio)
    lengths = [int(x) for x in exact]  # floor; all terms are positive
    rem = total - sum(lengths)
    order = sorted(range(n), key=lambda i: (-(exact[i] - lengths[i]), -i))
    for i in order[:rem]:
        lengths[i] += 1
    return dict(zip(ids, lengths))


def sample_indices(target: int, source_size: int, key: int) -> np.ndarray:
    """Index list of length ``target`` drawn from ``range(source_size)``.

    Full passes in source order, then a without-replacement remainder taken
    from the splitmix64-keyed permutation.
    """
    if target < 0:
        raise InvalidArgument(f"negative target length {target}")
    if target == 0:
        return np.zeros(0, dtype=np.int64)
    if source_size <= 0:
        raise InvalidArgument(f"cannot draw {target} samples from an empty source")
    passes, rem = divmod(target, source_size)
    parts = [np.tile(np.arange(source_size, dtype=np.int64), passes)]
    if rem:
        parts.append(random_permutation(key, source_size)[:rem])
    return np.concatenate(parts)


@dataclass
class SampleSchedule:
    strategy: str
    seed: int
    dataset_lengths: dict[str, int]
    index_map: dict[str, np.ndarray]

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "lengths": dict(self.dataset_lengths),
            "index_map": {k: v.tolist() for k, v in self.index_map.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> "SampleSchedule":
        return cls(
            doc["strategy"],
            int(doc["seed"]),
            {k: int(v) for k, v in doc["lengths"].items()},
            {k: np.asarray(v, dtype=np.int64) for k, v in doc["index_map"].items()},
        )

    def __eq__(self, other):
        if not isinstance(other, SampleSchedule):
            return NotImplemented
        return (
            self.strategy == other.strategy
            and self.seed == other.seed
            and self.dataset_lengths == other.dataset_lengths
            and list(self.index_map) == list(other.index_map)
            and all(np.array_equal(v, other.index_map[k]) for k, v in self.index_map.items())
        )


def materialize(plan: dict[str, int], source_sizes: dict[str, int], seed: int,
                strategy: str = "balanced", jobs: int = 1) -> SampleSchedule:
    missing = [d for d in plan if d not in source_sizes]
    if missing:
        raise InvalidArgument(f"plan names unknown dataset(s): {', '.join(missing)}")

    def one(dataset_id):
        return sample_indices(plan[dataset_id], int(source_sizes[dataset_id]), derive_key(seed, dataset_id))

    ids = list(plan)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            maps = list(pool.map(one, ids))
    else:
        maps = [one(d) for d in ids]
    return SampleSchedule(strategy, seed, dict(plan), dict(zip(ids, maps)))


def build_schedule(ranked_sizes, strategy, total: int | None, seed: int, jobs: int = 1) -> SampleSchedule:
    strategy = _as_strategy(strategy)
    plan = plan_lengths(ranked_sizes, strategy, total)
    return materialize(plan, dict((str(d), int(s)) for d, s in ranked_sizes), seed, strategy.variant, jobs)
