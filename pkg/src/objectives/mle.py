from typing import Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from ..core.errors import InvalidValueError
from ..core.types import SingleEvalTask
from ..policy.categorical import PolicyParams


def mle_targets(params: PolicyParams, tasks: Sequence[SingleEvalTask]) -> np.ndarray:
    """Nearest bin to each reference score, in the task's own range (midpoints round down)."""
    for task in tasks:
        if not isinstance(task, SingleEvalTask):
            raise InvalidValueError(f"maximum likelihood training needs single-wise tasks, got {type(task).__name__}")
    return np.array([params.grid.nearest_bin(t.reference_score, t.range) for t in tasks], dtype=int)


def mle_loss_and_gradient(
    params: PolicyParams, tasks: Sequence[SingleEvalTask]
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Mean negative log-likelihood of the target bins and its gradient.

    Returns:
        (loss, grad_weights, grad_bias); the logits gradient is the softmax
        cross-entropy residual pi - onehot(target)
    """
    if not tasks:
        raise InvalidValueError("at least one task is required")
    targets = mle_targets(params, tasks)
    features = np.stack([t.feature_array for t in tasks])
    log_probs = log_softmax(params.logits(features), axis=-1)
    n = len(tasks)
    loss = -float(log_probs[np.arange(n), targets].mean())

    residual = np.exp(log_probs)
    residual[np.arange(n), targets] -= 1.0
    residual /= n
    return loss, residual.T @ features, residual.sum(axis=0)


def mle_loss(params: PolicyParams, tasks: Sequence[SingleEvalTask]) -> float:
    return mle_loss_and_gradient(params, tasks)[0]


def mle_gradient(params: PolicyParams, tasks: Sequence[SingleEvalTask]) -> Tuple[np.ndarray, np.ndarray]:
    _, grad_weights, grad_bias = mle_loss_and_gradient(params, tasks)
    return grad_weights, grad_bias
