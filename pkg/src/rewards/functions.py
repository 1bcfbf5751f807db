import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from ..core.errors import InvalidValueError
from ..core.types import EvalTask, PairEvalTask, ScoreRange, SingleEvalTask


class RewardVariant(Enum):
    CONTINUOUS_SINGLE = "continuous_single"
    CONTINUOUS_PAIR = "continuous_pair"
    BINARY_SINGLE = "binary_single"
    BINARY_PAIR = "binary_pair"

    @property
    def is_binary(self) -> bool:
        return self in (RewardVariant.BINARY_SINGLE, RewardVariant.BINARY_PAIR)


@dataclass(frozen=True)
class RewardKind:
    """Which reward scores a judgment, plus the match tolerance of the binary variants."""

    variant: RewardVariant
    binary_tolerance: float = 0.0

    def __post_init__(self):
        if not isinstance(self.variant, RewardVariant):
            object.__setattr__(self, "variant", RewardVariant(self.variant))
        if not math.isfinite(self.binary_tolerance) or self.binary_tolerance < 0:
            raise InvalidValueError(f"binary_tolerance must be finite and >= 0, got {self.binary_tolerance}")

    @property
    def failure_reward(self) -> float:
        # Unparseable outputs get the minimum of the reward's codomain.
        return 0.0 if self.variant.is_binary else -1.0

    def for_task(self, task: EvalTask) -> "RewardKind":
        """Same family (continuous or binary), protocol matched to the task."""
        is_pair = isinstance(task, PairEvalTask)
        if self.variant.is_binary:
            variant = RewardVariant.BINARY_PAIR if is_pair else RewardVariant.BINARY_SINGLE
        else:
            variant = RewardVariant.CONTINUOUS_PAIR if is_pair else RewardVariant.CONTINUOUS_SINGLE
        if variant is self.variant:
            return self
        return RewardKind(variant, self.binary_tolerance)

    @classmethod
    def continuous(cls) -> "RewardKind":
        return cls(RewardVariant.CONTINUOUS_SINGLE)

    @classmethod
    def binary(cls, tolerance: float = 0.0) -> "RewardKind":
        return cls(RewardVariant.BINARY_SINGLE, tolerance)


def _finite(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidValueError(f"{name} must be finite, got {value}")
    return value


def reward_single(s_pred: float, score_range: ScoreRange, s_ref: float) -> float:
    """
    Continuous single-wise reward.

    1 - 2 * |clip(s_pred) - s_ref| / (s_max - s_min), which lies in [-1, 1] and
    decays linearly with the normalized distance from the reference.
    """
    s_pred = _finite(s_pred, "s_pred")
    s_ref = _finite(s_ref, "s_ref")
    if not score_range.contains(s_ref):
        raise InvalidValueError(
            f"reference score {s_ref} outside range [{score_range.min}, {score_range.max}]"
        )
    clipped = min(max(s_pred, score_range.min), score_range.max)
    return 1.0 - 2.0 * abs(clipped - s_ref) / (score_range.max - score_range.min)


def reward_pair(p_pred: float, p_ref: float) -> float:
    """Continuous pairwise reward: 1 - 2 * |clip(p_pred, 0, 1) - p_ref|."""
    p_pred = _finite(p_pred, "p_pred")
    p_ref = _finite(p_ref, "p_ref")
    if not 0.0 <= p_ref <= 1.0:
        raise InvalidValueError(f"reference confidence {p_ref} outside [0, 1]")
    clipped = min(max(p_pred, 0.0), 1.0)
    return 1.0 - 2.0 * abs(clipped - p_ref)


def reward_binary(s_pred: float, s_ref: float, tolerance: float = 0.0) -> float:
    """1.0 when the judgment lies within tolerance of the reference, else 0.0."""
    s_pred = _finite(s_pred, "s_pred")
    s_ref = _finite(s_ref, "s_ref")
    tolerance = _finite(tolerance, "tolerance")
    if tolerance < 0:
        raise InvalidValueError(f"tolerance must be >= 0, got {tolerance}")
    return 1.0 if abs(s_pred - s_ref) <= tolerance else 0.0


ANSWER_TAG = "answer"
RATIONALE_TAG = "think"

_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?(%?)")


def _numbers(text: str, mode: str):
    values = []
    for match in _NUMBER.finditer(text):
        value = float(match.group(0).rstrip("%"))
        if match.group(1) and mode == "pair":
            value /= 100.0
        values.append(value)
    return values


def parse_tagged_output(text: str, mode: str = "single", tag: str = ANSWER_TAG) -> Optional[float]:
    """
    Extract the final numeric judgment from a model output.

    When the output carries <answer>...</answer> blocks, the last block must hold
    exactly one number. Without tags, rationale blocks (<think>...</think>) are
    dropped and the last number in the remaining text is the judgment.
    In pair mode a trailing percent sign scales the value by 1/100.

    Returns:
        The judgment, or None when it cannot be parsed unambiguously
    """
    if mode not in ("single", "pair"):
        raise InvalidValueError(f"mode must be 'single' or 'pair', got {mode!r}")
    if not text:
        return None

    blocks = re.findall(rf"<{tag}>(.*?)</{tag}>", text, flags=re.DOTALL | re.IGNORECASE)
    if blocks:
        values = _numbers(blocks[-1], mode)
        if len(values) != 1:
            return None
        value = values[0]
    else:
        visible = re.sub(
            rf"<{RATIONALE_TAG}>.*?(</{RATIONALE_TAG}>|$)", " ", text, flags=re.DOTALL | re.IGNORECASE
        )
        values = _numbers(visible, mode)
        if not values:
            return None
        value = values[-1]

    if not math.isfinite(value):
        return None
    return value


def compute_reward(value: Optional[float], task: EvalTask, kind: RewardKind) -> float:
    """
    Score one judgment against a task's reference.

    Args:
        value: Predicted score or confidence; None marks a parse failure
        task: Single-wise or pairwise task holding the reference
        kind: Reward family; its protocol is matched to the task

    Returns:
        Reward value (higher is better)
    """
    kind = kind.for_task(task)
    if value is None:
        return kind.failure_reward

    if isinstance(task, SingleEvalTask):
        if kind.variant is RewardVariant.BINARY_SINGLE:
            return reward_binary(value, task.reference_score, kind.binary_tolerance)
        return reward_single(value, task.range, task.reference_score)

    if kind.variant is RewardVariant.BINARY_PAIR:
        return reward_binary(value, task.reference_confidence, kind.binary_tolerance)
    return reward_pair(value, task.reference_confidence)


def reward_from_text(text: str, task: EvalTask, kind: RewardKind) -> float:
    """Parse a tagged model output and score it; parse failures get the minimum reward."""
    mode = "pair" if isinstance(task, PairEvalTask) else "single"
    return compute_reward(parse_tagged_output(text, mode), task, kind)


def format_tagged_output(value: float, rationale: Optional[str] = None) -> str:
    """Render a judgment in the tagged layout that parse_tagged_output reads."""
    parts = []
    if rationale:
        parts.append(f"<{RATIONALE_TAG}>{rationale}</{RATIONALE_TAG}>")
    parts.append(f"<{ANSWER_TAG}>{float(value)!r}</{ANSWER_TAG}>")
    return "\n".join(parts)
