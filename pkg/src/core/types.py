import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import numpy as np

from ..utils.logging import get_logger
from .errors import InvalidValueError

logger = get_logger(__name__)


def _require_finite(value: float, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise InvalidValueError(f"{name} must be a real number, got {value!r}")
    if not math.isfinite(value):
        raise InvalidValueError(f"{name} must be finite, got {value}")
    return value


def _as_feature_tuple(values: Iterable[float], name: str) -> Tuple[float, ...]:
    features = tuple(float(v) for v in values)
    if not features:
        raise InvalidValueError(f"{name} must not be empty")
    if not all(math.isfinite(v) for v in features):
        raise InvalidValueError(f"{name} must contain only finite values")
    return features


@dataclass(frozen=True)
class ScoreRange:
    """Closed interval [min, max] of valid single-wise scores."""

    min: float
    max: float

    def __post_init__(self):
        lo = _require_finite(self.min, "range.min")
        hi = _require_finite(self.max, "range.max")
        if not hi > lo:
            raise InvalidValueError(f"range.max must exceed range.min, got [{lo}, {hi}]")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def span(self) -> float:
        return self.max - self.min

    def contains(self, value: float) -> bool:
        return self.min <= value <= self.max

    def clip(self, value: float) -> float:
        return min(max(value, self.min), self.max)

    def to_dict(self) -> Dict[str, float]:
        return {"min": self.min, "max": self.max}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScoreRange":
        return cls(data["min"], data["max"])


# Confidence scale used by every pairwise task.
UNIT_RANGE = ScoreRange(0.0, 1.0)


class DimensionKind(Enum):
    PERCEPTUAL = "perceptual"
    SEMANTIC = "semantic"


@dataclass(frozen=True)
class DimensionTag:
    name: str
    kind: DimensionKind

    def __post_init__(self):
        if not self.name or not str(self.name).strip():
            raise InvalidValueError("dimension name must be a non-empty identifier")
        if not isinstance(self.kind, DimensionKind):
            object.__setattr__(self, "kind", DimensionKind(self.kind))

    def to_dict(self) -> Dict[str, str]:
        return {"name": self.name, "kind": self.kind.value}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DimensionTag":
        return cls(data["name"], DimensionKind(data["kind"]))


class DimensionRegistry:
    """Name-unique collection of dimension tags."""

    def __init__(self, tags: Iterable[DimensionTag] = ()):
        self._tags: Dict[str, DimensionTag] = {}
        for tag in tags:
            self.register(tag)

    def register(self, tag: DimensionTag) -> DimensionTag:
        existing = self._tags.get(tag.name)
        if existing is not None and existing != tag:
            raise InvalidValueError(f"dimension '{tag.name}' already registered as {existing.kind.value}")
        self._tags[tag.name] = tag
        return tag

    def get(self, name: str) -> Optional[DimensionTag]:
        return self._tags.get(name)

    def __getitem__(self, name: str) -> DimensionTag:
        tag = self._tags.get(name)
        if tag is None:
            raise KeyError(f"unknown dimension '{name}' (known: {sorted(self._tags)})")
        return tag

    def __contains__(self, name: str) -> bool:
        return name in self._tags

    def __iter__(self):
        return iter(self._tags.values())

    def __len__(self) -> int:
        return len(self._tags)

    def names(self):
        return list(self._tags)


APPEARANCE_QUALITY = DimensionTag("appearance_quality", DimensionKind.PERCEPTUAL)
INTRINSIC_CONSISTENCY = DimensionTag("intrinsic_consistency", DimensionKind.SEMANTIC)
RELATIONSHIP_CONSISTENCY = DimensionTag("relationship_consistency", DimensionKind.SEMANTIC)
OVERALL = DimensionTag("overall", DimensionKind.SEMANTIC)
FAITHFULNESS = DimensionTag("faithfulness", DimensionKind.SEMANTIC)
PREFERENCE = DimensionTag("preference", DimensionKind.SEMANTIC)

BUILTIN_DIMENSIONS = DimensionRegistry([
    APPEARANCE_QUALITY,
    INTRINSIC_CONSISTENCY,
    RELATIONSHIP_CONSISTENCY,
    OVERALL,
    FAITHFULNESS,
    PREFERENCE,
])


_warned_dimensions = set()


def resolve_dimension(name: str, kind: Optional[str] = None) -> DimensionTag:
    """Look up a builtin tag by name, or build a custom one (semantic unless told otherwise)."""
    if kind is not None:
        return DimensionTag(name, DimensionKind(kind))
    builtin = BUILTIN_DIMENSIONS.get(name)
    if builtin is not None:
        return builtin
    if name not in _warned_dimensions:
        _warned_dimensions.add(name)
        logger.warning(f"Unknown dimension {name!r}; treating it as a custom semantic dimension")
    return DimensionTag(name, DimensionKind.SEMANTIC)


@dataclass(frozen=True)
class SingleEvalTask:
    """One single-wise instance: synthetic features, dimension, score range and reference score."""

    id: str
    features: Tuple[float, ...]
    dimension: DimensionTag
    range: ScoreRange
    reference_score: float

    def __post_init__(self):
        object.__setattr__(self, "features", _as_feature_tuple(self.features, "features"))
        score = _require_finite(self.reference_score, "reference_score")
        if not self.range.contains(score):
            raise InvalidValueError(
                f"reference_score {score} outside range [{self.range.min}, {self.range.max}]"
            )
        object.__setattr__(self, "reference_score", score)

    @property
    def feature_dim(self) -> int:
        return len(self.features)

    @property
    def feature_array(self) -> np.ndarray:
        return np.asarray(self.features, dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        row = {
            "id": self.id,
            "features": list(self.features),
            "dimension": self.dimension.name,
            "range_min": self.range.min,
            "range_max": self.range.max,
            "reference_score": self.reference_score,
        }
        if BUILTIN_DIMENSIONS.get(self.dimension.name) != self.dimension:
            row["dimension_kind"] = self.dimension.kind.value
        return row

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SingleEvalTask":
        return cls(
            id=str(data["id"]),
            features=data["features"],
            dimension=resolve_dimension(data["dimension"], data.get("dimension_kind")),
            range=ScoreRange(data["range_min"], data["range_max"]),
            reference_score=data["reference_score"],
        )


@dataclass(frozen=True)
class PairEvalTask:
    """One pairwise instance: features of both sides and the reference confidence that A is better."""

    id: str
    features_a: Tuple[float, ...]
    features_b: Tuple[float, ...]
    reference_confidence: float
    delta_r: Optional[int] = None

    def __post_init__(self):
        a = _as_feature_tuple(self.features_a, "features_a")
        b = _as_feature_tuple(self.features_b, "features_b")
        if len(a) != len(b):
            raise InvalidValueError(f"features_a and features_b differ in length ({len(a)} vs {len(b)})")
        confidence = _require_finite(self.reference_confidence, "reference_confidence")
        if not 0.0 <= confidence <= 1.0:
            raise InvalidValueError(f"reference_confidence {confidence} outside [0, 1]")
        if self.delta_r is not None:
            if isinstance(self.delta_r, bool) or int(self.delta_r) != self.delta_r or self.delta_r not in (1, 2, 3, 4):
                raise InvalidValueError(f"delta_r must be one of 1..4, got {self.delta_r!r}")
            object.__setattr__(self, "delta_r", int(self.delta_r))
        object.__setattr__(self, "features_a", a)
        object.__setattr__(self, "features_b", b)
        object.__setattr__(self, "reference_confidence", confidence)

    @property
    def feature_dim(self) -> int:
        return len(self.features_a)

    @property
    def range(self) -> ScoreRange:
        return UNIT_RANGE

    @property
    def feature_array(self) -> np.ndarray:
        # Pairwise judgments condition on the difference between the two sides.
        return np.asarray(self.features_a, dtype=float) - np.asarray(self.features_b, dtype=float)

    def swapped(self) -> "PairEvalTask":
        return PairEvalTask(
            id=f"{self.id}~swap",
            features_a=self.features_b,
            features_b=self.features_a,
            reference_confidence=1.0 - self.reference_confidence,
            delta_r=self.delta_r,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "features_a": list(self.features_a),
            "features_b": list(self.features_b),
            "reference_confidence": self.reference_confidence,
            "delta_r": self.delta_r,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PairEvalTask":
        return cls(
            id=str(data["id"]),
            features_a=data["features_a"],
            features_b=data["features_b"],
            reference_confidence=data["reference_confidence"],
            delta_r=data.get("delta_r"),
        )


EvalTask = Union[SingleEvalTask, PairEvalTask]


class PreferenceChoice(Enum):
    A = "A"
    B = "B"
    T = "T"

    def swapped(self) -> "PreferenceChoice":
        if self is PreferenceChoice.A:
            return PreferenceChoice.B
        if self is PreferenceChoice.B:
            return PreferenceChoice.A
        return self


@dataclass(frozen=True)
class EvaluationRecord:
    task_id: str
    predicted: float
    reference: float

    def __post_init__(self):
        object.__setattr__(self, "predicted", _require_finite(self.predicted, "predicted"))
        object.__setattr__(self, "reference", _require_finite(self.reference, "reference"))

    def to_dict(self) -> Dict[str, Any]:
        return {"task_id": self.task_id, "predicted": self.predicted, "reference": self.reference}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvaluationRecord":
        return cls(str(data["task_id"]), data["predicted"], data["reference"])


def normalize_score(s: float, score_range: ScoreRange) -> float:
    """Map a score onto [0, 1], clipping to the range first."""
    s = _require_finite(s, "score")
    return (score_range.clip(s) - score_range.min) / score_range.span


def choice_from_confidence(p: float, tie_band: float = 0.0) -> PreferenceChoice:
    """
    Discretize a preference confidence.

    Args:
        p: Confidence that side A is better, in [0, 1]
        tie_band: Half-width of the tie zone around 0.5, in [0, 0.5)

    Returns:
        T inside the tie zone, A above it, B below it
    """
    p = _require_finite(p, "confidence")
    if not 0.0 <= p <= 1.0:
        raise InvalidValueError(f"confidence {p} outside [0, 1]")
    tie_band = _require_finite(tie_band, "tie_band")
    if not 0.0 <= tie_band < 0.5:
        raise InvalidValueError(f"tie_band must lie in [0, 0.5), got {tie_band}")
    if abs(p - 0.5) <= tie_band:
        return PreferenceChoice.T
    if p > 0.5 + tie_band:
        return PreferenceChoice.A
    return PreferenceChoice.B


def task_from_dict(data: Dict[str, Any]) -> EvalTask:
    """Build whichever task type the row describes."""
    if "features_a" in data:
        return PairEvalTask.from_dict(data)
    return SingleEvalTask.from_dict(data)
