"""
Corpus construction: per-dimension balanced single-wise sampling and
rating-difference-stratified, polarity-balanced pairwise sampling.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import CorpusError, InvalidValueError
from ..core.types import (
    APPEARANCE_QUALITY,
    INTRINSIC_CONSISTENCY,
    OVERALL,
    RELATIONSHIP_CONSISTENCY,
    DimensionTag,
    PairEvalTask,
    SingleEvalTask,
)
from ..utils.logging import get_logger

logger = get_logger(__name__)

RATING_LEVELS = (1, 2, 3, 4, 5)
DELTA_LEVELS = (1, 2, 3, 4)


@dataclass(frozen=True)
class RatedItem:
    """One generated item with its human quality level (1 best, 5 worst)."""

    prompt_id: str
    item_id: str
    rating_level: int
    features: Tuple[float, ...]

    def __post_init__(self):
        if isinstance(self.rating_level, bool) or self.rating_level not in RATING_LEVELS:
            raise InvalidValueError(f"rating_level must be one of 1..5, got {self.rating_level!r}")
        features = tuple(float(v) for v in self.features)
        if not features or not all(math.isfinite(v) for v in features):
            raise InvalidValueError("features must be a non-empty vector of finite values")
        object.__setattr__(self, "rating_level", int(self.rating_level))
        object.__setattr__(self, "features", features)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "prompt_id": self.prompt_id,
            "item_id": self.item_id,
            "rating_level": self.rating_level,
            "features": list(self.features),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RatedItem":
        return cls(str(data["prompt_id"]), str(data["item_id"]), data["rating_level"], data["features"])


def _default_dimensions() -> List[DimensionTag]:
    return [APPEARANCE_QUALITY, INTRINSIC_CONSISTENCY, RELATIONSHIP_CONSISTENCY, OVERALL]


@dataclass
class CorpusSpec:
    """
    Sizes and ratios of the two training corpora.

    Defaults reproduce 4 x 9,000 single-wise tasks and about 35,000 pairs with
    rating-difference weights 1:2:2:1 and 1:1 polarity.
    """

    per_dimension: int = 9000
    dimensions: List[DimensionTag] = field(default_factory=_default_dimensions)
    total_single: Optional[int] = None
    total_pairs: int = 35000
    delta_weights: Dict[int, int] = field(default_factory=lambda: {1: 1, 2: 2, 3: 2, 4: 1})
    polarity_ratio: Tuple[float, float] = (1.0, 1.0)
    confidence_mode: str = "discrete"
    replace: bool = False

    def __post_init__(self):
        self.delta_weights = {int(k): int(v) for k, v in self.delta_weights.items()}
        if set(self.delta_weights) - set(DELTA_LEVELS):
            raise InvalidValueError(f"delta_weights keys must be within 1..4, got {sorted(self.delta_weights)}")
        if any(v < 0 for v in self.delta_weights.values()):
            raise InvalidValueError("delta_weights must be non-negative")
        if not any(self.delta_weights.values()):
            raise InvalidValueError("delta_weights must not be all zero")
        if len(self.polarity_ratio) != 2 or min(self.polarity_ratio) <= 0:
            raise InvalidValueError(f"polarity_ratio must be two positive numbers, got {self.polarity_ratio}")
        if self.per_dimension < 0 or self.total_pairs < 0:
            raise InvalidValueError("corpus sizes must be non-negative")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise InvalidValueError(f"dimension names must be unique, got {names}")
        if self.total_single is None:
            self.total_single = self.per_dimension * len(self.dimensions)
        elif self.total_single != self.per_dimension * len(self.dimensions):
            raise InvalidValueError(
                f"total_single {self.total_single} != per_dimension {self.per_dimension} x "
                f"{len(self.dimensions)} dimensions"
            )
        if self.confidence_mode not in ("discrete", "graded"):
            raise InvalidValueError(f"confidence_mode must be 'discrete' or 'graded', got {self.confidence_mode!r}")


def confidence_from_ratings(rating_a: int, rating_b: int, mode: str = "discrete") -> float:
    """
    Reference confidence that side A is better, from two quality levels (1 best).

    discrete: 1.0 if A is rated better, 0.0 if worse, 0.5 if equal.
    graded:   0.5 + 0.5 * (rating_b - rating_a) / 4.
    """
    for rating in (rating_a, rating_b):
        if isinstance(rating, bool) or rating not in RATING_LEVELS:
            raise InvalidValueError(f"rating must be one of 1..5, got {rating!r}")
    if mode == "discrete":
        if rating_a < rating_b:
            return 1.0
        if rating_a > rating_b:
            return 0.0
        return 0.5
    if mode == "graded":
        return 0.5 + 0.5 * (rating_b - rating_a) / 4.0
    raise InvalidValueError(f"mode must be 'discrete' or 'graded', got {mode!r}")


def apportion(total: int, weights: Mapping[Any, float]) -> Dict[Any, int]:
    """
    Largest-remainder apportionment of total over weighted keys.

    Floors of the exact quotas are topped up one by one in order of largest
    fractional part (ties go to the smaller key), so counts sum to total exactly.
    """
    if total < 0:
        raise InvalidValueError(f"total must be >= 0, got {total}")
    keys = sorted(weights)
    weight_sum = float(sum(weights[k] for k in keys))
    if weight_sum <= 0:
        raise InvalidValueError("weights must not be all zero")
    quotas = {k: total * weights[k] / weight_sum for k in keys}
    counts = {k: int(math.floor(quotas[k])) for k in keys}
    remainder = total - sum(counts.values())
    by_fraction = sorted(keys, key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in by_fraction[:remainder]:
        counts[k] += 1
    return counts


def build_single_corpus(source: Sequence[SingleEvalTask], spec: CorpusSpec, seed: int) -> List[SingleEvalTask]:
    """
    Sample exactly spec.per_dimension tasks for each dimension and shuffle them together.

    Args:
        source: Candidate tasks, each tagged with its dimension
        spec: Corpus sizes; spec.replace enables sampling with replacement
        seed: Seed of the sampling and the final shuffle

    Returns:
        The balanced single-wise corpus
    """
    by_dimension: Dict[str, List[SingleEvalTask]] = defaultdict(list)
    for task in source:
        by_dimension[task.dimension.name].append(task)

    rng = np.random.default_rng(seed)
    corpus: List[SingleEvalTask] = []
    for dimension in spec.dimensions:
        pool = by_dimension.get(dimension.name, [])
        if not pool or (len(pool) < spec.per_dimension and not spec.replace):
            raise CorpusError(
                f"dimension '{dimension.name}' has {len(pool)} source tasks, "
                f"{spec.per_dimension} required without replacement"
            )
        picks = rng.choice(len(pool), size=spec.per_dimension, replace=spec.replace)
        corpus.extend(pool[i] for i in picks)
        logger.info(f"Sampled {spec.per_dimension} of {len(pool)} tasks for {dimension.name}")

    order = rng.permutation(len(corpus))
    return [corpus[i] for i in order]


def enumerate_pair_candidates(items: Iterable[RatedItem]) -> Dict[int, List[Tuple[RatedItem, RatedItem]]]:
    """
    All within-prompt (better, worse) item pairs, keyed by rating difference.

    Equal-rated pairs are not candidates. Enumeration order is fixed by prompt id
    and item order, so downstream sampling is reproducible.
    """
    by_prompt: Dict[str, List[RatedItem]] = defaultdict(list)
    for item in items:
        by_prompt[item.prompt_id].append(item)

    candidates: Dict[int, List[Tuple[RatedItem, RatedItem]]] = {d: [] for d in DELTA_LEVELS}
    for prompt_id in sorted(by_prompt):
        group = sorted(by_prompt[prompt_id], key=lambda it: it.item_id)
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                a, b = group[i], group[j]
                delta = abs(a.rating_level - b.rating_level)
                if delta == 0:
                    continue
                better, worse = (a, b) if a.rating_level < b.rating_level else (b, a)
                candidates[delta].append((better, worse))
    return candidates


def _pair_task(first: RatedItem, second: RatedItem, mode: str) -> PairEvalTask:
    return PairEvalTask(
        id=f"{first.prompt_id}:{first.item_id}|{second.item_id}",
        features_a=first.features,
        features_b=second.features,
        reference_confidence=confidence_from_ratings(first.rating_level, second.rating_level, mode),
        delta_r=abs(first.rating_level - second.rating_level),
    )


def stratum_targets(spec: CorpusSpec) -> Dict[int, int]:
    weights = {d: spec.delta_weights.get(d, 0) for d in DELTA_LEVELS}
    return apportion(spec.total_pairs, weights)


def build_pair_corpus(items: Sequence[RatedItem], spec: CorpusSpec, seed: int) -> List[PairEvalTask]:
    """
    Stratified, polarity-balanced pairwise corpus.

    Per rating-difference stratum the target count comes from largest-remainder
    apportionment of spec.total_pairs over spec.delta_weights. Each stratum is
    sampled with its own derived seed; within it a seeded random subset (sized by
    spec.polarity_ratio) places the better item on side A and the rest on side B.
    A final seeded shuffle fixes the output order.
    """
    candidates = enumerate_pair_candidates(items)
    targets = stratum_targets(spec)

    empty = [d for d in DELTA_LEVELS if targets[d] > 0 and not candidates[d]]
    if empty:
        attainable = [d for d in DELTA_LEVELS if candidates[d]]
        raise CorpusError(
            f"no candidate pairs for rating difference(s) {empty}; attainable strata: {attainable}"
        )

    stratum_seeds = dict(zip(DELTA_LEVELS, np.random.SeedSequence(seed).spawn(len(DELTA_LEVELS))))
    polarity_weights = {0: spec.polarity_ratio[0], 1: spec.polarity_ratio[1]}
    corpus: List[PairEvalTask] = []
    for delta in DELTA_LEVELS:
        target = targets[delta]
        if target == 0:
            continue
        pool = candidates[delta]
        if len(pool) < target and not spec.replace:
            raise CorpusError(
                f"rating difference {delta} has {len(pool)} candidate pairs, {target} required "
                f"without replacement"
            )
        rng = np.random.default_rng(stratum_seeds[delta])
        picks = rng.choice(len(pool), size=target, replace=spec.replace)
        n_positive = apportion(target, polarity_weights)[0]
        positive = np.zeros(target, dtype=bool)
        positive[rng.permutation(target)[:n_positive]] = True

        for pick, is_positive in zip(picks, positive):
            better, worse = pool[pick]
            first, second = (better, worse) if is_positive else (worse, better)
            corpus.append(_pair_task(first, second, spec.confidence_mode))
        logger.info(f"Stratum delta_r={delta}: {target} pairs ({n_positive} positive) from {len(pool)} candidates")

    order = np.random.default_rng(seed).permutation(len(corpus))
    return [corpus[i] for i in order]


def corpus_statistics(single: Sequence[SingleEvalTask] = (), pairs: Sequence[PairEvalTask] = ()) -> Dict[str, Any]:
    """Realized counts recorded in build manifests."""
    per_dimension: Dict[str, int] = defaultdict(int)
    for task in single:
        per_dimension[task.dimension.name] += 1
    strata: Dict[str, Dict[str, int]] = {}
    for task in pairs:
        key = str(task.delta_r)
        entry = strata.setdefault(key, {"total": 0, "positive": 0, "negative": 0})
        entry["total"] += 1
        if task.reference_confidence > 0.5:
            entry["positive"] += 1
        elif task.reference_confidence < 0.5:
            entry["negative"] += 1
    return {
        "single_total": len(single),
        "single_per_dimension": dict(sorted(per_dimension.items())),
        "pair_total": len(pairs),
        "pair_strata": dict(sorted(strata.items())),
    }
