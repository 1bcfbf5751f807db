"""
Group-relative policy optimization for the categorical evaluator policy.

The objective per group is the clipped surrogate
    mean_i min(ratio_i * A_i, clip(ratio_i, 1 - eps, 1 + eps) * A_i) - beta * KL(pi || pi_ref)
averaged over groups and negated into a loss. Gradients are analytic with
respect to the policy logits and chained to weights and bias.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax

from ..core.errors import ConfigError, InvalidValueError
from ..core.types import EvalTask
from ..policy.categorical import GroupRollout, PolicyParams


@dataclass
class GrpoConfig:
    clip_epsilon: float = 0.2
    kl_beta: float = 0.04
    group_size: int = 8
    std_epsilon: float = 1e-8
    updates_per_batch: int = 1
    ref_sync_period: int = 0  # steps between reference refreshes; 0 keeps the initial policy

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigError(f"clip_epsilon must lie in (0, 1), got {self.clip_epsilon}")
        if not self.kl_beta >= 0.0:
            raise ConfigError(f"kl_beta must be >= 0, got {self.kl_beta}")
        if self.group_size < 2:
            raise ConfigError(f"group_size must be >= 2, got {self.group_size}")
        if not self.std_epsilon > 0.0:
            raise ConfigError(f"std_epsilon must be > 0, got {self.std_epsilon}")
        if self.updates_per_batch < 1:
            raise ConfigError(f"updates_per_batch must be >= 1, got {self.updates_per_batch}")
        if self.ref_sync_period < 0:
            raise ConfigError(f"ref_sync_period must be >= 0, got {self.ref_sync_period}")


@dataclass
class GrpoTerms:
    """Loss, gradient and diagnostics of one evaluation of the GRPO objective."""

    loss: float
    grad_weights: np.ndarray
    grad_bias: np.ndarray
    mean_kl: float
    clip_fraction: float


def categorical_kl(log_p: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    """Exact KL(p || q) over the last axis from log-probabilities."""
    return np.sum(np.exp(log_p) * (log_p - log_q), axis=-1)


def policy_kl(params: PolicyParams, ref: PolicyParams, features: np.ndarray) -> np.ndarray:
    return categorical_kl(
        log_softmax(params.logits(features), axis=-1),
        log_softmax(ref.logits(features), axis=-1),
    )


def _stack(rollouts: Sequence[GroupRollout], tasks: Sequence[EvalTask]):
    if len(rollouts) != len(tasks):
        raise InvalidValueError(f"{len(rollouts)} rollouts but {len(tasks)} tasks")
    if not rollouts:
        raise InvalidValueError("at least one rollout is required")
    sizes = {r.group_size for r in rollouts}
    if len(sizes) != 1:
        raise InvalidValueError(f"all groups must share one size, got {sorted(sizes)}")
    for rollout, task in zip(rollouts, tasks):
        if rollout.task_id != task.id:
            raise InvalidValueError(f"rollout for '{rollout.task_id}' paired with task '{task.id}'")
        if not rollout.is_filled:
            raise InvalidValueError(f"rollout for '{rollout.task_id}' has no advantages yet")

    features = np.stack([task.feature_array for task in tasks])
    indices = np.stack([r.bin_indices for r in rollouts]).astype(int)
    old_logprobs = np.stack([r.old_logprobs for r in rollouts]).astype(float)
    advantages = np.stack([r.advantages for r in rollouts]).astype(float)
    return features, indices, old_logprobs, advantages


def grpo_terms(
    params: PolicyParams,
    rollouts: Sequence[GroupRollout],
    tasks: Sequence[EvalTask],
    ref: PolicyParams,
    cfg: GrpoConfig,
) -> GrpoTerms:
    """
    Evaluate the GRPO loss and its exact gradient.

    Where min() selects the clipped branch the sample contributes no ratio
    gradient; when both branches are equal the unclipped branch is used.

    Args:
        params: Current policy
        rollouts: Filled groups sampled from the old policy, one per task
        tasks: Tasks in rollout order
        ref: Frozen reference policy of the KL penalty
        cfg: Clip range and KL coefficient

    Returns:
        GrpoTerms with the loss, gradients and the mean KL over groups
    """
    features, indices, old_logprobs, advantages = _stack(rollouts, tasks)
    if np.any(indices < 0) or np.any(indices >= params.bin_count):
        raise InvalidValueError(f"bin index outside [0, {params.bin_count})")
    if not np.all(np.isfinite(old_logprobs)):
        raise InvalidValueError("a sampled bin has zero probability under the old policy")

    n_groups, group_size = indices.shape
    log_probs = log_softmax(params.logits(features), axis=-1)
    probs = np.exp(log_probs)
    ref_log_probs = log_softmax(ref.logits(features), axis=-1)

    ratio = np.exp(np.take_along_axis(log_probs, indices, axis=1) - old_logprobs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * advantages
    use_unclipped = unclipped <= clipped
    surrogate = np.where(use_unclipped, unclipped, clipped).mean(axis=1)

    kl = categorical_kl(log_probs, ref_log_probs)
    objective = surrogate - cfg.kl_beta * kl
    loss = -float(objective.mean())

    # d ratio_i / d logits = ratio_i * (onehot(o_i) - pi)
    coeff = np.where(use_unclipped, ratio * advantages, 0.0)
    onehot = indices[:, :, None] == np.arange(params.bin_count)[None, None, :]
    surrogate_grad = (
        np.einsum("bg,bgk->bk", coeff, onehot) - coeff.sum(axis=1, keepdims=True) * probs
    ) / group_size
    kl_grad = probs * (log_probs - ref_log_probs - kl[:, None])
    logits_grad = -(surrogate_grad - cfg.kl_beta * kl_grad) / n_groups

    clip_fraction = float(np.mean(~use_unclipped & (unclipped != clipped)))
    return GrpoTerms(
        loss=loss,
        grad_weights=logits_grad.T @ features,
        grad_bias=logits_grad.sum(axis=0),
        mean_kl=float(kl.mean()),
        clip_fraction=clip_fraction,
    )


def grpo_loss(
    params: PolicyParams,
    rollouts: Sequence[GroupRollout],
    tasks: Sequence[EvalTask],
    ref: PolicyParams,
    cfg: GrpoConfig,
) -> float:
    return grpo_terms(params, rollouts, tasks, ref, cfg).loss


def grpo_gradient(
    params: PolicyParams,
    rollouts: Sequence[GroupRollout],
    tasks: Sequence[EvalTask],
    ref: PolicyParams,
    cfg: GrpoConfig,
):
    """Gradient of grpo_loss as (grad_weights, grad_bias)."""
    terms = grpo_terms(params, rollouts, tasks, ref, cfg)
    return terms.grad_weights, terms.grad_bias
