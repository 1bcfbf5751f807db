import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
from scipy.special import log_softmax, softmax

from ..core.errors import InvalidValueError
from ..core.types import EvalTask, ScoreRange, UNIT_RANGE
from ..rewards.functions import RewardKind, compute_reward


@dataclass(frozen=True)
class BinGrid:
    """Evenly spaced judgment values: bin k is range.min + k * span / (count - 1)."""

    count: int
    range: ScoreRange

    def __post_init__(self):
        if isinstance(self.count, bool) or int(self.count) != self.count or self.count < 2:
            raise InvalidValueError(f"bin count must be an integer >= 2, got {self.count!r}")
        object.__setattr__(self, "count", int(self.count))

    @property
    def step(self) -> float:
        return self.range.span / (self.count - 1)

    @property
    def positions(self) -> np.ndarray:
        """Normalized bin positions k / (count - 1) in [0, 1]."""
        return np.arange(self.count, dtype=float) / (self.count - 1)

    @property
    def values(self) -> np.ndarray:
        return self.range.min + np.arange(self.count, dtype=float) * self.step

    def value(self, k: int) -> float:
        if not 0 <= k < self.count:
            raise InvalidValueError(f"bin index {k} outside [0, {self.count})")
        return float(self.range.min + k * self.step)

    def values_for(self, score_range: ScoreRange) -> np.ndarray:
        """Bin values expressed in another range via the normalized positions."""
        if score_range == self.range:
            return self.values
        return score_range.min + self.positions * score_range.span

    def nearest_bin(self, value: float, score_range: Optional[ScoreRange] = None) -> int:
        """Index of the closest bin; exact midpoints round down."""
        score_range = score_range or self.range
        u = (score_range.clip(value) - score_range.min) / score_range.span
        x = u * (self.count - 1)
        lower = math.floor(x)
        k = lower + 1 if x - lower > 0.5 else lower
        return int(min(max(k, 0), self.count - 1))

    def to_dict(self) -> Dict[str, Any]:
        return {"bin_count": self.count, "range_min": self.range.min, "range_max": self.range.max}


def default_single_grid() -> BinGrid:
    return BinGrid(21, ScoreRange(0.0, 10.0))


def default_pair_grid() -> BinGrid:
    return BinGrid(11, UNIT_RANGE)


def task_range(task: EvalTask) -> ScoreRange:
    return task.range


class PolicyParams:
    """
    Linear-softmax evaluator policy over a bin grid.

    logits(x) = weights @ x + bias; the distribution over bins is softmax(logits).
    Arrays are stored read-only so snapshots can be shared safely.
    """

    def __init__(self, weights: np.ndarray, bias: np.ndarray, grid: BinGrid):
        weights = np.array(weights, dtype=float)
        bias = np.array(bias, dtype=float)
        if weights.ndim != 2 or weights.shape[0] != grid.count:
            raise InvalidValueError(
                f"weights must have shape ({grid.count}, F), got {weights.shape}"
            )
        if bias.shape != (grid.count,):
            raise InvalidValueError(f"bias must have shape ({grid.count},), got {bias.shape}")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise InvalidValueError("policy parameters must be finite")
        weights.setflags(write=False)
        bias.setflags(write=False)
        self.weights = weights
        self.bias = bias
        self.grid = grid

    @property
    def bin_count(self) -> int:
        return self.grid.count

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size

    @classmethod
    def zeros(cls, grid: BinGrid, feature_dim: int) -> "PolicyParams":
        return cls(np.zeros((grid.count, feature_dim)), np.zeros(grid.count), grid)

    @classmethod
    def random(cls, grid: BinGrid, feature_dim: int, scale: float = 0.1, seed: int = 0) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        return cls(
            rng.normal(0.0, scale, size=(grid.count, feature_dim)),
            rng.normal(0.0, scale, size=grid.count),
            grid,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def with_flat(self, vector: np.ndarray) -> "PolicyParams":
        n = self.weights.size
        return PolicyParams(
            np.asarray(vector[:n]).reshape(self.weights.shape), np.asarray(vector[n:]), self.grid
        )

    def updated(self, grad_weights: np.ndarray, grad_bias: np.ndarray, learning_rate: float) -> "PolicyParams":
        return PolicyParams(
            self.weights - learning_rate * grad_weights,
            self.bias - learning_rate * grad_bias,
            self.grid,
        )

    def logits(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != self.feature_dim:
            raise InvalidValueError(
                f"feature dimension mismatch: policy expects {self.feature_dim}, got {features.shape[-1]}"
            )
        return features @ self.weights.T + self.bias

    def to_checkpoint_dict(self) -> Dict[str, Any]:
        return {
            "weights": self.weights.ravel().tolist(),
            "bias": self.bias.tolist(),
            "bin_count": self.grid.count,
            "range_min": self.grid.range.min,
            "range_max": self.grid.range.max,
            "feature_dim": self.feature_dim,
        }

    @classmethod
    def from_checkpoint_dict(cls, data: Dict[str, Any]) -> "PolicyParams":
        grid = BinGrid(data["bin_count"], ScoreRange(data["range_min"], data["range_max"]))
        weights = np.asarray(data["weights"], dtype=float).reshape(grid.count, int(data["feature_dim"]))
        return cls(weights, data["bias"], grid)

    def save(self, filepath: Union[str, Path]):
        """Save the policy as a JSON checkpoint."""
        Path(filepath).write_text(json.dumps(self.to_checkpoint_dict()))

    @classmethod
    def load(cls, filepath: Union[str, Path]) -> "PolicyParams":
        """Load a JSON checkpoint written by save()."""
        return cls.from_checkpoint_dict(json.loads(Path(filepath).read_text()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )

    def __repr__(self) -> str:
        return f"PolicyParams(bins={self.bin_count}, feature_dim={self.feature_dim})"


def policy_distribution(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    """Softmax distribution over bins for one feature vector (or a batch of rows)."""
    return softmax(params.logits(features), axis=-1)


def policy_log_distribution(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    return log_softmax(params.logits(features), axis=-1)


def expected_judgment(params: PolicyParams, task: EvalTask) -> float:
    """Mean of the task-range bin values under the policy."""
    probs = policy_distribution(params, task.feature_array)
    return float(probs @ params.grid.values_for(task_range(task)))


def modal_judgment(params: PolicyParams, task: EvalTask) -> float:
    probs = policy_distribution(params, task.feature_array)
    return float(params.grid.values_for(task_range(task))[int(np.argmax(probs))])


@dataclass(frozen=True, eq=False)
class GroupRollout:
    """
    One GRPO group: G judgments sampled from the old policy for a single task.

    rewards and advantages stay None until fill_rewards_and_advantages runs.
    """

    task_id: str
    bin_indices: np.ndarray
    values: np.ndarray
    old_logprobs: np.ndarray
    rewards: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None

    def __post_init__(self):
        size = len(self.bin_indices)
        if size < 2:
            raise InvalidValueError(f"a group needs at least 2 samples, got {size}")
        vectors = [self.values, self.old_logprobs]
        vectors += [v for v in (self.rewards, self.advantages) if v is not None]
        if any(len(v) != size for v in vectors):
            raise InvalidValueError("all rollout vectors must share the group size")

    @property
    def group_size(self) -> int:
        return len(self.bin_indices)

    @property
    def is_filled(self) -> bool:
        return self.rewards is not None and self.advantages is not None


def sample_group(params_old: PolicyParams, task: EvalTask, G: int, rng_seed: int) -> GroupRollout:
    """
    Draw G i.i.d. judgments for a task from the old policy.

    Args:
        params_old: Frozen policy snapshot to sample from
        task: Task whose features condition the policy
        G: Group size (>= 2)
        rng_seed: Seed of the per-group generator

    Returns:
        GroupRollout with exact old log-probabilities; rewards not yet filled
    """
    if G < 2:
        raise InvalidValueError(f"group size must be >= 2, got {G}")
    probs = policy_distribution(params_old, task.feature_array)
    rng = np.random.default_rng(rng_seed)
    indices = rng.choice(params_old.bin_count, size=G, p=probs)
    values = params_old.grid.values_for(task_range(task))[indices]
    with np.errstate(divide="ignore"):
        old_logprobs = np.log(probs[indices])
    return GroupRollout(
        task_id=task.id,
        bin_indices=indices,
        values=values,
        old_logprobs=old_logprobs,
    )


def group_advantages(rewards: Sequence[float], std_epsilon: float = 1e-8) -> np.ndarray:
    """(r - mean) / (population std + eps); all-equal rewards give zeros."""
    if std_epsilon <= 0:
        raise InvalidValueError(f"std_epsilon must be > 0, got {std_epsilon}")
    rewards = np.asarray(rewards, dtype=float)
    centered = rewards - rewards.mean()
    return centered / (rewards.std() + std_epsilon)


def fill_rewards_and_advantages(
    rollout: GroupRollout, task: EvalTask, kind: RewardKind, std_epsilon: float = 1e-8
) -> GroupRollout:
    """Score every sampled judgment and normalize the rewards within the group."""
    rewards = np.array([compute_reward(float(v), task, kind) for v in rollout.values])
    return replace(rollout, rewards=rewards, advantages=group_advantages(rewards, std_epsilon))
