import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from ..core.errors import ConfigError, InvalidValueError
from ..core.types import EvalTask, PairEvalTask

FeaturePair = Tuple[np.ndarray, np.ndarray]


@dataclass
class RankingConfig:
    margin: float = 0.0
    center_coeff: float = 1.0

    def __post_init__(self):
        for name in ("margin", "center_coeff"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")


class ScalarRewardParams:
    """Linear scalar reward r(x) = weights . x + bias of the pairwise ranking baseline."""

    def __init__(self, weights: np.ndarray, bias: float):
        weights = np.array(weights, dtype=float)
        if weights.ndim != 1 or weights.size == 0:
            raise InvalidValueError(f"weights must be a non-empty vector, got shape {weights.shape}")
        if not (np.all(np.isfinite(weights)) and math.isfinite(bias)):
            raise InvalidValueError("reward parameters must be finite")
        weights.setflags(write=False)
        self.weights = weights
        self.bias = float(bias)

    @property
    def feature_dim(self) -> int:
        return self.weights.size

    @classmethod
    def zeros(cls, feature_dim: int) -> "ScalarRewardParams":
        return cls(np.zeros(feature_dim), 0.0)

    def flat(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def with_flat(self, vector: np.ndarray) -> "ScalarRewardParams":
        return ScalarRewardParams(np.asarray(vector[:-1]), float(vector[-1]))

    def updated(self, grad_weights: np.ndarray, grad_bias: float, learning_rate: float) -> "ScalarRewardParams":
        return ScalarRewardParams(self.weights - learning_rate * grad_weights, self.bias - learning_rate * grad_bias)

    def reward(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != self.feature_dim:
            raise InvalidValueError(
                f"feature dimension mismatch: reward model expects {self.feature_dim}, got {features.shape[-1]}"
            )
        return features @ self.weights + self.bias

    def preference_confidence(self, task: PairEvalTask) -> float:
        """Bradley-Terry probability that side A is preferred."""
        r_a = self.reward(np.asarray(task.features_a))
        r_b = self.reward(np.asarray(task.features_b))
        return float(expit(r_a - r_b))

    def to_checkpoint_dict(self) -> Dict[str, Any]:
        return {"weights": self.weights.tolist(), "bias": self.bias, "feature_dim": self.feature_dim}

    @classmethod
    def from_checkpoint_dict(cls, data: Dict[str, Any]) -> "ScalarRewardParams":
        weights = np.asarray(data["weights"], dtype=float)
        if weights.size != int(data["feature_dim"]):
            raise InvalidValueError(f"checkpoint has {weights.size} weights but feature_dim {data['feature_dim']}")
        return cls(weights, data["bias"])

    def save(self, filepath: Union[str, Path]):
        Path(filepath).write_text(json.dumps(self.to_checkpoint_dict()))

    @classmethod
    def load(cls, filepath: Union[str, Path]) -> "ScalarRewardParams":
        return cls.from_checkpoint_dict(json.loads(Path(filepath).read_text()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScalarRewardParams):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and self.bias == other.bias

    def __repr__(self) -> str:
        return f"ScalarRewardParams(feature_dim={self.feature_dim})"


def ranking_pairs(tasks: Sequence[EvalTask]) -> List[FeaturePair]:
    """(chosen, rejected) feature pairs from pairwise tasks; ties carry no preference and are skipped."""
    pairs = []
    for task in tasks:
        if not isinstance(task, PairEvalTask):
            raise InvalidValueError(f"ranking training needs pairwise tasks, got {type(task).__name__}")
        a = np.asarray(task.features_a, dtype=float)
        b = np.asarray(task.features_b, dtype=float)
        if task.reference_confidence > 0.5:
            pairs.append((a, b))
        elif task.reference_confidence < 0.5:
            pairs.append((b, a))
    return pairs


def ranking_loss_and_gradient(
    params: ScalarRewardParams, pairs: Sequence[FeaturePair], cfg: RankingConfig
) -> Tuple[float, np.ndarray, float]:
    """
    Pairwise ranking loss with margin and centering term.

    loss = mean[ -log sigmoid(r_c - r_r - m) + center_coeff * (r_c + r_r)^2 ]

    Returns:
        (loss, grad_weights, grad_bias)
    """
    if not pairs:
        raise InvalidValueError("at least one (chosen, rejected) pair is required")
    chosen = np.stack([c for c, _ in pairs])
    rejected = np.stack([r for _, r in pairs])
    r_c = params.reward(chosen)
    r_r = params.reward(rejected)
    margin_gap = r_c - r_r - cfg.margin
    total = r_c + r_r

    # -log sigmoid(z) = log(1 + exp(-z))
    loss = float(np.mean(np.logaddexp(0.0, -margin_gap) + cfg.center_coeff * total ** 2))

    n = len(pairs)
    d_gap = -expit(-margin_gap) / n
    d_total = 2.0 * cfg.center_coeff * total / n
    grad_weights = d_gap @ (chosen - rejected) + d_total @ (chosen + rejected)
    grad_bias = float(2.0 * d_total.sum())
    return loss, grad_weights, grad_bias


def ranking_loss(params: ScalarRewardParams, pairs: Sequence[FeaturePair], cfg: RankingConfig) -> float:
    return ranking_loss_and_gradient(params, pairs, cfg)[0]


def ranking_gradient(params: ScalarRewardParams, pairs: Sequence[FeaturePair], cfg: RankingConfig):
    _, grad_weights, grad_bias = ranking_loss_and_gradient(params, pairs, cfg)
    return grad_weights, grad_bias
