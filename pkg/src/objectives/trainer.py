"""
First-order training loop shared by the four objectives, plus the
rejection-sampling selector used by the enhancement stage.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..core.errors import ConfigError, CorpusError, DivergenceError, InvalidValueError
from ..core.types import EvalTask, PairEvalTask, ScoreRange, SingleEvalTask, UNIT_RANGE
from ..metrics.rank_correlation import MetricReport
from ..policy.categorical import (
    BinGrid,
    PolicyParams,
    fill_rewards_and_advantages,
    modal_judgment,
    sample_group,
)
from ..rewards.functions import RewardKind, compute_reward, reward_pair
from ..utils.evaluation import (
    evaluate_policy,
    evaluate_policy_by_group,
    evaluate_ranker,
    evaluate_ranker_by_group,
)
from ..utils.logging import get_logger
from .grpo import GrpoConfig, grpo_terms, policy_kl
from .mle import mle_loss_and_gradient
from .ranking import RankingConfig, ScalarRewardParams, ranking_loss_and_gradient, ranking_pairs

logger = get_logger(__name__)

CURVE_COLUMNS = ["step", "loss", "mean_reward", "mean_abs_advantage", "mean_kl"]

Params = Union[PolicyParams, ScalarRewardParams]


class Objective(Enum):
    GRPO_CONTINUOUS = "grpo_continuous"
    GRPO_BINARY = "grpo_binary"
    MLE = "mle"
    RANKING = "ranking"

    @property
    def is_grpo(self) -> bool:
        return self in (Objective.GRPO_CONTINUOUS, Objective.GRPO_BINARY)

    def reward_kind(self, binary_tolerance: float = 0.0) -> RewardKind:
        if self is Objective.GRPO_BINARY:
            return RewardKind.binary(binary_tolerance)
        return RewardKind.continuous()


@dataclass
class TrainingConfig:
    """Optimizer, objective and bookkeeping settings of one training run."""

    learning_rate: float = 0.05
    batch_size: int = 64
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    ranking: RankingConfig = field(default_factory=RankingConfig)
    binary_tolerance: float = 0.0
    single_bins: int = 21
    single_range: ScoreRange = field(default_factory=lambda: ScoreRange(0.0, 10.0))
    pair_bins: int = 11
    init_scale: float = 0.0
    prediction: str = "expected"
    tie_band: float = 0.0
    log_interval: int = 100
    checkpoint_interval: int = 0
    progress: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.init_scale < 0:
            raise ConfigError(f"init_scale must be >= 0, got {self.init_scale}")
        if self.log_interval < 1 or self.checkpoint_interval < 0:
            raise ConfigError("log_interval must be >= 1 and checkpoint_interval >= 0")

    def grid_for(self, tasks: Sequence[EvalTask]) -> BinGrid:
        """Pair grid when every task is pairwise, otherwise the single-wise grid."""
        if tasks and all(isinstance(t, PairEvalTask) for t in tasks):
            return BinGrid(self.pair_bins, UNIT_RANGE)
        return BinGrid(self.single_bins, self.single_range)


@dataclass
class TrainingReport:
    """Loss curve, checkpoints and held-out metrics of one run."""

    objective: Objective
    seed: int
    steps: int
    curve: List[Dict[str, float]]
    initial_params: Params
    final_params: Params
    checkpoints: Dict[int, Params] = field(default_factory=dict)
    initial_metrics: Optional[MetricReport] = None
    final_metrics: Optional[MetricReport] = None
    final_groups: Dict[str, MetricReport] = field(default_factory=dict)

    def curve_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.curve, columns=CURVE_COLUMNS)

    def to_csv(self, path) -> None:
        self.curve_frame().to_csv(path, index=False, float_format="%.12g")

    def summary(self) -> Dict[str, Any]:
        return {
            "objective": self.objective.value,
            "seed": self.seed,
            "steps": self.steps,
            "initial_metrics": self.initial_metrics.to_dict() if self.initial_metrics else None,
            "final_metrics": self.final_metrics.to_dict() if self.final_metrics else None,
            "final_metrics_by_group": {key: m.to_dict() for key, m in self.final_groups.items()},
        }


def derived_seed(*entropy: int) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1)[0])


def batch_indices(n_tasks: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Tasks of one step; depends only on (seed, step) so paired runs see the same batches."""
    rng = np.random.default_rng(derived_seed(seed, step))
    if batch_size >= n_tasks:
        return rng.permutation(n_tasks)
    return rng.choice(n_tasks, size=batch_size, replace=False)


def _check_tasks(objective: Objective, tasks: Sequence[EvalTask]) -> int:
    if not tasks:
        raise ConfigError("training needs at least one task")
    dims = {t.feature_dim for t in tasks}
    if len(dims) != 1:
        raise ConfigError(f"all tasks must share one feature dimension, got {sorted(dims)}")
    if objective is Objective.MLE and any(not isinstance(t, SingleEvalTask) for t in tasks):
        raise ConfigError("the mle objective needs single-wise tasks")
    if objective is Objective.RANKING and any(not isinstance(t, PairEvalTask) for t in tasks):
        raise ConfigError("the ranking objective needs pairwise tasks")
    return dims.pop()


def initial_params(objective: Objective, tasks: Sequence[EvalTask], cfg: TrainingConfig, seed: int) -> Params:
    feature_dim = _check_tasks(objective, tasks)
    if objective is Objective.RANKING:
        return ScalarRewardParams.zeros(feature_dim)
    grid = cfg.grid_for(tasks)
    if cfg.init_scale > 0:
        return PolicyParams.random(grid, feature_dim, cfg.init_scale, seed=derived_seed(seed, 0x1D))
    return PolicyParams.zeros(grid, feature_dim)


def evaluate(params: Params, tasks: Sequence[EvalTask], cfg: TrainingConfig) -> Optional[MetricReport]:
    if not tasks:
        return None
    if isinstance(params, ScalarRewardParams):
        return evaluate_ranker(params, tasks, cfg.tie_band)
    return evaluate_policy(params, tasks, cfg.prediction, cfg.tie_band)


def evaluate_groups(params: Params, tasks: Sequence[EvalTask], cfg: TrainingConfig) -> Dict[str, MetricReport]:
    if not tasks:
        return {}
    if isinstance(params, ScalarRewardParams):
        return evaluate_ranker_by_group(params, tasks, cfg.tie_band)
    return evaluate_policy_by_group(params, tasks, cfg.prediction, cfg.tie_band)


def _finite_update(params: Params, grad_weights, grad_bias, learning_rate: float) -> bool:
    # An overflowing step leaves the loss finite but the next parameters non-finite.
    return bool(
        np.all(np.isfinite(params.weights - learning_rate * np.asarray(grad_weights)))
        and np.all(np.isfinite(params.bias - learning_rate * np.asarray(grad_bias)))
    )


def _grpo_step(
    params: PolicyParams,
    ref: PolicyParams,
    batch: Sequence[EvalTask],
    kind: RewardKind,
    cfg: TrainingConfig,
    seed: int,
    step: int,
):
    old = params
    rollouts = []
    for j, task in enumerate(batch):
        rollout = sample_group(old, task, cfg.grpo.group_size, derived_seed(seed, step, j))
        rollouts.append(fill_rewards_and_advantages(rollout, task, kind, cfg.grpo.std_epsilon))

    first = None
    for _ in range(cfg.grpo.updates_per_batch):
        terms = grpo_terms(params, rollouts, batch, ref, cfg.grpo)
        if not math.isfinite(terms.loss):
            return params, None, terms.loss
        if first is None:
            first = terms
        if not _finite_update(params, terms.grad_weights, terms.grad_bias, cfg.learning_rate):
            return params, None, float("nan")
        params = params.updated(terms.grad_weights, terms.grad_bias, cfg.learning_rate)

    row = {
        "loss": first.loss,
        "mean_reward": float(np.mean([r.rewards.mean() for r in rollouts])),
        "mean_abs_advantage": float(np.mean([np.abs(r.advantages).mean() for r in rollouts])),
        "mean_kl": first.mean_kl,
    }
    return params, row, first.loss


def _mle_step(params: PolicyParams, start: PolicyParams, batch: Sequence[SingleEvalTask], cfg: TrainingConfig):
    loss, grad_weights, grad_bias = mle_loss_and_gradient(params, batch)
    if not math.isfinite(loss) or not _finite_update(params, grad_weights, grad_bias, cfg.learning_rate):
        return params, None, loss
    kind = RewardKind.continuous()
    features = np.stack([t.feature_array for t in batch])
    row = {
        "loss": loss,
        "mean_reward": float(np.mean([compute_reward(modal_judgment(params, t), t, kind) for t in batch])),
        "mean_abs_advantage": 0.0,
        "mean_kl": float(policy_kl(params, start, features).mean()),
    }
    return params.updated(grad_weights, grad_bias, cfg.learning_rate), row, loss


def _ranking_step(params: ScalarRewardParams, batch: Sequence[PairEvalTask], cfg: TrainingConfig):
    pairs = ranking_pairs(batch)
    if not pairs:
        row = {"loss": 0.0, "mean_reward": 0.0, "mean_abs_advantage": 0.0, "mean_kl": 0.0}
        return params, row, 0.0
    loss, grad_weights, grad_bias = ranking_loss_and_gradient(params, pairs, cfg.ranking)
    if not math.isfinite(loss) or not _finite_update(params, grad_weights, grad_bias, cfg.learning_rate):
        return params, None, loss
    row = {
        "loss": loss,
        "mean_reward": float(
            np.mean([reward_pair(params.preference_confidence(t), t.reference_confidence) for t in batch])
        ),
        "mean_abs_advantage": 0.0,
        "mean_kl": 0.0,
    }
    return params.updated(grad_weights, grad_bias, cfg.learning_rate), row, loss


def train(
    objective: Union[Objective, str],
    train_tasks: Sequence[EvalTask],
    cfg: TrainingConfig,
    steps: int,
    seed: int,
    eval_tasks: Sequence[EvalTask] = (),
    init_params: Optional[Params] = None,
) -> TrainingReport:
    """
    Run batched first-order training.

    GRPO steps snapshot the old policy, sample one group per task, fill rewards
    and advantages, then take updates_per_batch gradient steps. The reference
    policy is the initial one unless ref_sync_period refreshes it.

    Args:
        objective: grpo_continuous, grpo_binary, mle or ranking
        train_tasks: Training tasks (single-wise, pairwise or mixed for GRPO)
        cfg: Optimizer and objective settings
        steps: Number of update steps (0 evaluates the initial parameters only)
        seed: Seed of batch selection and group sampling
        eval_tasks: Held-out tasks for the initial and final MetricReports
        init_params: Starting parameters (defaults to a uniform policy / zero reward model)

    Returns:
        TrainingReport with one curve row per step

    Raises:
        DivergenceError: when a loss or parameter update becomes non-finite
    """
    objective = Objective(objective)
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    _check_tasks(objective, train_tasks)
    params = init_params if init_params is not None else initial_params(objective, train_tasks, cfg, seed)
    start = params
    ref = params
    kind = objective.reward_kind(cfg.binary_tolerance)

    report = TrainingReport(
        objective=objective,
        seed=seed,
        steps=steps,
        curve=[],
        initial_params=start,
        final_params=start,
        initial_metrics=evaluate(start, eval_tasks, cfg),
    )
    logger.info(f"Training {objective.value} on {len(train_tasks)} tasks for {steps} steps (seed={seed})")

    last_finite_step = None
    for step in tqdm(range(1, steps + 1), desc=objective.value, disable=not cfg.progress):
        batch = [train_tasks[i] for i in batch_indices(len(train_tasks), cfg.batch_size, seed, step)]
        if objective.is_grpo:
            params, row, loss = _grpo_step(params, ref, batch, kind, cfg, seed, step)
        elif objective is Objective.MLE:
            params, row, loss = _mle_step(params, start, batch, cfg)
        else:
            params, row, loss = _ranking_step(params, batch, cfg)
        if row is None:
            raise DivergenceError(step, last_finite_step, loss)

        last_finite_step = step
        report.curve.append({"step": step, **row})
        if objective.is_grpo and cfg.grpo.ref_sync_period and step % cfg.grpo.ref_sync_period == 0:
            ref = params
        if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            report.checkpoints[step] = params
        if step % cfg.log_interval == 0 or step == steps:
            logger.info(
                f"step {step}: loss={row['loss']:.4f} reward={row['mean_reward']:.4f} "
                f"|A|={row['mean_abs_advantage']:.4f} kl={row['mean_kl']:.5f}"
            )

    report.final_params = params
    report.checkpoints[steps] = params
    report.final_metrics = evaluate(params, eval_tasks, cfg)
    report.final_groups = evaluate_groups(params, eval_tasks, cfg)
    return report


def rejection_sample_enhance(
    trained: PolicyParams,
    tasks: Sequence[EvalTask],
    threshold: float = math.inf,
    budget: Optional[int] = None,
    group_size: int = 8,
    seed: int = 0,
    kind: Optional[RewardKind] = None,
    std_epsilon: float = 1e-8,
) -> List[EvalTask]:
    """
    Select hard tasks for a further training stage.

    A group is sampled per task from the trained policy; tasks whose mean
    group reward is below threshold are kept. With a budget, the lowest-reward
    tasks win (ties by corpus position). Kept tasks retain corpus order.

    Raises:
        CorpusError: when nothing is selected
    """
    if budget is not None and budget < 1:
        raise InvalidValueError(f"budget must be >= 1, got {budget}")
    kind = kind or RewardKind.continuous()
    scored = []
    for position, task in enumerate(tasks):
        rollout = sample_group(trained, task, group_size, derived_seed(seed, position))
        rollout = fill_rewards_and_advantages(rollout, task, kind, std_epsilon)
        mean_reward = float(rollout.rewards.mean())
        if mean_reward < threshold:
            scored.append((mean_reward, position))

    if budget is not None and len(scored) > budget:
        scored = sorted(scored)[:budget]
    if not scored:
        raise CorpusError(
            f"rejection sampling kept no tasks out of {len(tasks)} at threshold {threshold}; raise the threshold"
        )
    kept = [tasks[position] for _, position in sorted(scored, key=lambda item: item[1])]
    logger.info(f"Rejection sampling kept {len(kept)} of {len(tasks)} tasks (threshold={threshold}, budget={budget})")
    return kept
