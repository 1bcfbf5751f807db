import math
import warnings
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import kendalltau, spearmanr

from ..core.errors import InvalidValueError
from ..core.types import EvaluationRecord, PreferenceChoice, choice_from_confidence
from ..utils.logging import get_logger

logger = get_logger(__name__)


@dataclass
class MetricReport:
    """
    Meta-evaluation result against human references.

    Correlations are None when undefined (fewer than two records or a constant
    side); preference_accuracy is None when no pairwise references were given.
    """

    spearman_rho: Optional[float]
    kendall_tau: Optional[float]
    n: int
    preference_accuracy: Optional[float] = None
    n_unparsed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _columns(records: Sequence[EvaluationRecord]) -> Tuple[np.ndarray, np.ndarray]:
    predicted = np.array([r.predicted for r in records], dtype=float)
    reference = np.array([r.reference for r in records], dtype=float)
    return predicted, reference


def _is_defined(predicted: np.ndarray, reference: np.ndarray) -> bool:
    if len(predicted) < 2:
        return False
    return bool(np.ptp(predicted) > 0 and np.ptp(reference) > 0)


def spearman(records: Sequence[EvaluationRecord]) -> Optional[float]:
    """Spearman's rho with average ranks for ties; None when undefined."""
    predicted, reference = _columns(records)
    if not _is_defined(predicted, reference):
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = spearmanr(predicted, reference).correlation
    return None if not math.isfinite(rho) else float(rho)


def kendall(records: Sequence[EvaluationRecord]) -> Optional[float]:
    """Kendall's tau-b; None when undefined."""
    predicted, reference = _columns(records)
    if not _is_defined(predicted, reference):
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tau = kendalltau(predicted, reference, variant="b").correlation
    return None if not math.isfinite(tau) else float(tau)


def preference_accuracy(
    predicted_conf: Sequence[float],
    reference_choice: Sequence[PreferenceChoice],
    tie_band: float = 0.0,
    exclude_ties: bool = False,
) -> Optional[float]:
    """
    Fraction of pairs whose discretized confidence matches the human choice.

    Args:
        predicted_conf: Predicted confidences that side A is better
        reference_choice: Human choices (A, B or T)
        tie_band: Half-width of the tie zone used to discretize predictions
        exclude_ties: Drop pairs whose reference choice is T

    Returns:
        Accuracy in [0, 1], or None if exclusion leaves nothing to score
    """
    if len(predicted_conf) != len(reference_choice):
        raise InvalidValueError(
            f"length mismatch: {len(predicted_conf)} predictions vs {len(reference_choice)} references"
        )
    if not predicted_conf:
        raise InvalidValueError("preference accuracy needs at least one pair")

    hits = 0
    scored = 0
    for p, reference in zip(predicted_conf, reference_choice):
        reference = PreferenceChoice(reference)
        if exclude_ties and reference is PreferenceChoice.T:
            continue
        scored += 1
        hits += choice_from_confidence(p, tie_band) is reference
    if scored == 0:
        logger.warning("All reference choices are ties; preference accuracy is undefined")
        return None
    return hits / scored


def _average_ranks(values: Sequence[float]) -> List[float]:
    ranks = []
    for v in values:
        below = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        ranks.append(below + (equal + 1) / 2.0)
    return ranks


def _pearson(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return None
    return sxy / math.sqrt(sxx * syy)


def brute_force_rank_oracles(records: Sequence[EvaluationRecord]) -> Tuple[Optional[float], Optional[float]]:
    """
    Definitional rho and tau-b, O(n^2); used as a test oracle.

    rho is the Pearson correlation of explicitly built average ranks; tau-b
    counts concordant/discordant pairs and the pairs tied on each side.
    """
    x = [r.predicted for r in records]
    y = [r.reference for r in records]
    n = len(x)
    if n < 2:
        return None, None

    rho = _pearson(_average_ranks(x), _average_ranks(y))

    concordant = discordant = untied_x = untied_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx != 0:
                untied_x += 1
            if dy != 0:
                untied_y += 1
            if dx * dy > 0:
                concordant += 1
            elif dx * dy < 0:
                discordant += 1
    if untied_x == 0 or untied_y == 0:
        return rho, None
    tau = (concordant - discordant) / math.sqrt(untied_x * untied_y)
    return rho, tau


def metric_report(
    records: Sequence[EvaluationRecord],
    predicted_conf: Optional[Sequence[float]] = None,
    reference_choice: Optional[Sequence[PreferenceChoice]] = None,
    tie_band: float = 0.0,
    exclude_ties: bool = False,
    n_unparsed: int = 0,
) -> MetricReport:
    """Bundle correlations (and preference accuracy when choices are given) into one report."""
    rho = spearman(records)
    tau = kendall(records)
    if records and (rho is None or tau is None):
        logger.warning(f"Rank correlation undefined on {len(records)} records (constant or too few values)")
    accuracy = None
    if reference_choice is not None:
        accuracy = preference_accuracy(predicted_conf or [], reference_choice, tie_band, exclude_ties)
    return MetricReport(
        spearman_rho=rho,
        kendall_tau=tau,
        n=len(records),
        preference_accuracy=accuracy,
        n_unparsed=n_unparsed,
    )
