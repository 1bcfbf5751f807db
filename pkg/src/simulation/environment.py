import numpy as np
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
from scipy.stats import norm

from ..core.errors import InvalidValueError
from ..core.types import (
    OVERALL,
    DimensionTag,
    EvalTask,
    PairEvalTask,
    ScoreRange,
    SingleEvalTask,
)
from ..utils.logging import get_logger

logger = get_logger(__name__)

# Standard-normal cut points splitting latent quality into five equally likely levels.
_LEVEL_CUTS = norm.ppf([0.2, 0.4, 0.6, 0.8])


@dataclass
class SyntheticEnvironment:
    """
    Synthetic graded-evaluation environment.

    Holds the generated tasks together with the hidden linear map that produced
    their references, so diagnostics can compare a learned policy against it.
    Behaves like a read-only list of tasks.
    """

    tasks: List[EvalTask]
    hidden_weights: np.ndarray
    seed: int
    params: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, index):
        return self.tasks[index]

    def split(self, n_eval: int) -> Tuple[List[EvalTask], List[EvalTask]]:
        """Return (train, held-out) with the last n_eval tasks held out."""
        if not 0 <= n_eval < len(self.tasks):
            raise InvalidValueError(f"n_eval must lie in [0, {len(self.tasks)}), got {n_eval}")
        cut = len(self.tasks) - n_eval
        return self.tasks[:cut], self.tasks[cut:]


def _hidden_map(rng: np.random.Generator, feature_dim: int) -> np.ndarray:
    # Unit-norm map so w* . x is standard normal for x ~ N(0, I).
    w = rng.normal(size=feature_dim)
    return w / np.linalg.norm(w)


def latent_to_score(latent: np.ndarray, score_range: ScoreRange) -> np.ndarray:
    """Affine rescale of a standard-normal latent onto the range (about +/-2 sd), clipped."""
    mid = 0.5 * (score_range.min + score_range.max)
    scores = mid + latent * score_range.span / 4.0
    return np.clip(scores, score_range.min, score_range.max)


def latent_to_level(latent: np.ndarray) -> np.ndarray:
    """Five quality levels from a standard-normal latent: 1 best, 5 worst."""
    return 5 - np.searchsorted(_LEVEL_CUTS, latent, side="right")


def make_synthetic_single_env(
    F: int,
    n_tasks: int,
    noise_sd: float,
    range: ScoreRange = ScoreRange(0.0, 10.0),
    seed: int = 0,
    dimension: DimensionTag = OVERALL,
    id_prefix: Optional[str] = None,
) -> SyntheticEnvironment:
    """
    Generate single-wise tasks whose references follow a hidden linear map.

    Args:
        F: Feature dimension
        n_tasks: Number of tasks
        noise_sd: Standard deviation of Gaussian reference noise (score units)
        range: Score range of every task
        seed: Generator seed
        dimension: Dimension tag attached to every task
        id_prefix: Task id prefix (defaults to the dimension name)

    Returns:
        SyntheticEnvironment with tasks and the hidden map w*
    """
    if F < 1 or n_tasks < 1 or noise_sd < 0:
        raise InvalidValueError(f"need F >= 1, n_tasks >= 1, noise_sd >= 0 (got {F}, {n_tasks}, {noise_sd})")
    rng = np.random.default_rng(seed)
    w_star = _hidden_map(rng, F)
    features = rng.normal(size=(n_tasks, F))
    scores = latent_to_score(features @ w_star, range)
    if noise_sd > 0:
        scores = np.clip(scores + rng.normal(0.0, noise_sd, size=n_tasks), range.min, range.max)

    prefix = id_prefix or dimension.name
    tasks = [
        SingleEvalTask(
            id=f"{prefix}-{i:06d}",
            features=tuple(features[i]),
            dimension=dimension,
            range=range,
            reference_score=float(scores[i]),
        )
        for i in np.arange(n_tasks)
    ]
    logger.debug(f"Generated {n_tasks} single-wise tasks for {dimension.name} (F={F}, noise_sd={noise_sd})")
    return SyntheticEnvironment(
        tasks=tasks,
        hidden_weights=w_star,
        seed=seed,
        params={"kind": "single", "F": F, "noise_sd": noise_sd, "range": range.to_dict()},
    )


def make_synthetic_pair_env(
    F: int,
    n_pairs: int,
    seed: int = 0,
    mode: str = "discrete",
    flip_prob: float = 0.0,
    id_prefix: str = "pair",
) -> SyntheticEnvironment:
    """
    Generate pairwise tasks from a hidden latent quality g(x) = w* . x.

    discrete mode: confidence 1 if g(a) > g(b), 0 if g(a) < g(b), 0.5 on a tie.
    graded mode: both sides get quality levels 1..5 and the confidence follows
    confidence_from_ratings(level_a, level_b, "graded").
    flip_prob mirrors a label (p -> 1 - p) with that probability.
    """
    from ..data.corpus import confidence_from_ratings

    if F < 1 or n_pairs < 1:
        raise InvalidValueError(f"need F >= 1 and n_pairs >= 1 (got {F}, {n_pairs})")
    if mode not in ("discrete", "graded"):
        raise InvalidValueError(f"mode must be 'discrete' or 'graded', got {mode!r}")
    if not 0.0 <= flip_prob <= 1.0:
        raise InvalidValueError(f"flip_prob must lie in [0, 1], got {flip_prob}")

    rng = np.random.default_rng(seed)
    w_star = _hidden_map(rng, F)
    features_a = rng.normal(size=(n_pairs, F))
    features_b = rng.normal(size=(n_pairs, F))
    g_a = features_a @ w_star
    g_b = features_b @ w_star
    levels_a = latent_to_level(g_a)
    levels_b = latent_to_level(g_b)
    flips = rng.random(n_pairs) < flip_prob

    tasks = []
    for i in range(n_pairs):
        if mode == "discrete":
            confidence = 1.0 if g_a[i] > g_b[i] else 0.0 if g_a[i] < g_b[i] else 0.5
        else:
            confidence = confidence_from_ratings(int(levels_a[i]), int(levels_b[i]), "graded")
        if flips[i]:
            confidence = 1.0 - confidence
        delta = abs(int(levels_a[i]) - int(levels_b[i]))
        tasks.append(
            PairEvalTask(
                id=f"{id_prefix}-{i:06d}",
                features_a=tuple(features_a[i]),
                features_b=tuple(features_b[i]),
                reference_confidence=confidence,
                delta_r=delta if delta > 0 else None,
            )
        )
    logger.debug(f"Generated {n_pairs} pairwise tasks (F={F}, mode={mode}, flip_prob={flip_prob})")
    return SyntheticEnvironment(
        tasks=tasks,
        hidden_weights=w_star,
        seed=seed,
        params={"kind": "pair", "F": F, "mode": mode, "flip_prob": flip_prob},
    )


def make_synthetic_rated_items(
    F: int,
    n_prompts: int,
    items_per_prompt: int,
    seed: int = 0,
):
    """
    Generate rated items grouped by prompt, standing in for a human preference ranking set.

    Each prompt gets items_per_prompt items; the rating level (1 best, 5 worst)
    is derived from the hidden latent quality of the item's features.
    """
    from ..data.corpus import RatedItem

    if F < 1 or n_prompts < 1 or items_per_prompt < 2:
        raise InvalidValueError(
            f"need F >= 1, n_prompts >= 1, items_per_prompt >= 2 (got {F}, {n_prompts}, {items_per_prompt})"
        )
    rng = np.random.default_rng(seed)
    w_star = _hidden_map(rng, F)
    features = rng.normal(size=(n_prompts, items_per_prompt, F))
    levels = latent_to_level(features @ w_star)

    items = [
        RatedItem(
            prompt_id=f"prompt-{p:05d}",
            item_id=f"item-{p:05d}-{j:02d}",
            rating_level=int(levels[p, j]),
            features=tuple(features[p, j]),
        )
        for p in range(n_prompts)
        for j in range(items_per_prompt)
    ]
    return SyntheticEnvironment(
        tasks=items,
        hidden_weights=w_star,
        seed=seed,
        params={"kind": "rated", "F": F, "n_prompts": n_prompts, "items_per_prompt": items_per_prompt},
    )


def make_dimension_sources(
    F: int,
    per_dimension: int,
    dimensions: Sequence[DimensionTag],
    noise_sd: float,
    range: ScoreRange,
    seed: int,
) -> List[SingleEvalTask]:
    """One synthetic single-wise source per dimension, each with its own hidden map."""
    seeds = np.random.SeedSequence(seed).spawn(len(dimensions))
    source: List[SingleEvalTask] = []
    for dimension, child in zip(dimensions, seeds):
        env = make_synthetic_single_env(
            F, per_dimension, noise_sd, range, int(child.generate_state(1)[0]), dimension=dimension
        )
        source.extend(env.tasks)
    return source
