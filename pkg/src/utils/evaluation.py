import numpy as np
import pandas as pd
from typing import Dict, List, Optional, Any, Sequence, Union
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import seaborn as sns

from ..core.errors import InvalidValueError
from ..core.types import (
    EvalTask,
    EvaluationRecord,
    PairEvalTask,
    choice_from_confidence,
    normalize_score,
)
from ..metrics.rank_correlation import MetricReport, metric_report
from ..objectives.ranking import ScalarRewardParams
from ..policy.categorical import PolicyParams, expected_judgment, modal_judgment
from .logging import get_logger

logger = get_logger(__name__)

PREDICTIONS = ("expected", "modal")


def reference_value(task: EvalTask) -> float:
    if isinstance(task, PairEvalTask):
        return task.reference_confidence
    return task.reference_score


def predict(params: PolicyParams, task: EvalTask, prediction: str = "expected") -> float:
    """Point judgment of the policy: expected bin value, or the most probable bin."""
    if prediction == "expected":
        return expected_judgment(params, task)
    if prediction == "modal":
        return modal_judgment(params, task)
    raise InvalidValueError(f"prediction must be one of {PREDICTIONS}, got {prediction!r}")


def _report(
    tasks: Sequence[EvalTask], predictions: Sequence[float], tie_band: float, normalize: bool = True
) -> MetricReport:
    records = []
    pair_conf, pair_choice = [], []
    for task, value in zip(tasks, predictions):
        reference = reference_value(task)
        if normalize:
            # Normalizing is affine within one range, so ranks survive it.
            value = normalize_score(value, task.range)
            reference = normalize_score(reference, task.range)
        records.append(EvaluationRecord(task.id, value, reference))
        if isinstance(task, PairEvalTask):
            pair_conf.append(min(max(float(value), 0.0), 1.0))
            pair_choice.append(choice_from_confidence(task.reference_confidence))
    return metric_report(
        records,
        predicted_conf=pair_conf or None,
        reference_choice=pair_choice or None,
        tie_band=tie_band,
    )


def task_group(task: EvalTask) -> str:
    """Metric group of a task: 'pair', or 'single:<dimension>'."""
    if isinstance(task, PairEvalTask):
        return "pair"
    return f"single:{task.dimension.name}"


def _grouped_reports(
    tasks: Sequence[EvalTask], predictions: Sequence[float], tie_band: float, normalize: bool = True
) -> Dict[str, MetricReport]:
    groups: Dict[str, tuple] = {}
    for task, value in zip(tasks, predictions):
        members, values = groups.setdefault(task_group(task), ([], []))
        members.append(task)
        values.append(value)
    return {key: _report(members, values, tie_band, normalize) for key, (members, values) in sorted(groups.items())}


def evaluate_policy(
    params: PolicyParams,
    tasks: Sequence[EvalTask],
    prediction: str = "expected",
    tie_band: float = 0.0,
) -> MetricReport:
    """
    Meta-evaluate a categorical policy on held-out tasks.

    Args:
        params: Trained policy
        tasks: Held-out single-wise and/or pairwise tasks
        prediction: 'expected' (mean bin value) or 'modal' (most probable bin)
        tie_band: Tie zone used when discretizing pairwise confidences

    Returns:
        MetricReport; preference accuracy is set when pairwise tasks are present
    """
    predictions = [predict(params, task, prediction) for task in tasks]
    return _report(tasks, predictions, tie_band)


def evaluate_ranker(params: ScalarRewardParams, tasks: Sequence[EvalTask], tie_band: float = 0.0) -> MetricReport:
    """Meta-evaluate a scalar reward model: pairs use sigmoid(r_a - r_b), single tasks use r(x)."""
    predictions = []
    for task in tasks:
        if isinstance(task, PairEvalTask):
            predictions.append(params.preference_confidence(task))
        else:
            predictions.append(float(params.reward(task.feature_array)))
    if any(not isinstance(task, PairEvalTask) for task in tasks):
        return _report(tasks, predictions, tie_band, normalize=False)
    return _report(tasks, predictions, tie_band)


def evaluate_policy_by_group(
    params: PolicyParams,
    tasks: Sequence[EvalTask],
    prediction: str = "expected",
    tie_band: float = 0.0,
) -> Dict[str, MetricReport]:
    """
    Meta-evaluate a policy separately per protocol and per single-wise dimension.

    Groups are the keys of task_group: pairwise tasks together, single-wise
    tasks split by dimension.

    Returns:
        MetricReport per task_group key, in key order
    """
    predictions = [predict(params, task, prediction) for task in tasks]
    return _grouped_reports(tasks, predictions, tie_band)


def evaluate_ranker_by_group(
    params: ScalarRewardParams, tasks: Sequence[EvalTask], tie_band: float = 0.0
) -> Dict[str, MetricReport]:
    predictions = []
    for task in tasks:
        if isinstance(task, PairEvalTask):
            predictions.append(params.preference_confidence(task))
        else:
            predictions.append(float(params.reward(task.feature_array)))
    return _grouped_reports(tasks, predictions, tie_band, normalize=False)


def plot_training_curves(curves: Dict[str, pd.DataFrame], save_path: Optional[str] = None):
    """Loss and mean reward against step, one line per run."""
    sns.set_palette("husl")
    fig, axes = plt.subplots(1, 2, figsize=(14, 5))
    fig.suptitle("Training Curves", fontsize=14, fontweight="bold")
    for name, curve in curves.items():
        if curve.empty:
            continue
        axes[0].plot(curve["step"], curve["loss"], label=name)
        axes[1].plot(curve["step"], curve["mean_reward"], label=name)
    axes[0].set_title("Loss")
    axes[0].set_xlabel("Step")
    axes[1].set_title("Mean Reward")
    axes[1].set_xlabel("Step")
    for ax in axes:
        if ax.get_legend_handles_labels()[0]:
            ax.legend()
    plt.tight_layout()
    if save_path:
        plt.savefig(save_path, dpi=150, bbox_inches="tight")
    plt.close(fig)


class AblationEvaluator:
    """
    Paired comparison of training arms (e.g. continuous vs binary rewards) across seeds.

    Collects one MetricReport per (arm, seed), then builds the per-seed table,
    plot and Markdown report.
    """

    def __init__(self, arms: Sequence[str], metric: str = "spearman_rho"):
        if len(arms) != 2:
            raise InvalidValueError(f"an ablation compares exactly two arms, got {list(arms)}")
        if metric not in ("spearman_rho", "kendall_tau", "preference_accuracy"):
            raise InvalidValueError(f"unknown ablation metric {metric!r}")
        self.arms = list(arms)
        self.metric = metric
        self.evaluation_history: List[Dict[str, Any]] = []

    def add_run(self, arm: str, seed: int, report: MetricReport):
        if arm not in self.arms:
            raise InvalidValueError(f"unknown arm {arm!r} (expected one of {self.arms})")
        self.evaluation_history.append({"arm": arm, "seed": seed, "report": report})

    def compare_arms(self) -> pd.DataFrame:
        """
        Per-seed table of both arms.

        Returns:
            DataFrame with columns seed, <arm>_<metric> for each arm, and delta
            (first arm minus second); undefined metrics appear as NaN
        """
        rows: Dict[int, Dict[str, Any]] = {}
        for entry in self.evaluation_history:
            row = rows.setdefault(entry["seed"], {"seed": entry["seed"]})
            value = getattr(entry["report"], self.metric)
            row[f"{entry['arm']}_{self.metric}"] = np.nan if value is None else value
        columns = ["seed"] + [f"{arm}_{self.metric}" for arm in self.arms]
        df = pd.DataFrame([rows[s] for s in sorted(rows)], columns=columns)
        first, second = columns[1], columns[2]
        df["delta"] = df[first] - df[second]
        return df

    def summarize(self, comparison_df: pd.DataFrame) -> Dict[str, Any]:
        first, second = self.arms
        return {
            "metric": self.metric,
            "seeds": int(len(comparison_df)),
            f"mean_{first}": _nan_to_none(comparison_df[f"{first}_{self.metric}"].mean()),
            f"mean_{second}": _nan_to_none(comparison_df[f"{second}_{self.metric}"].mean()),
            "mean_delta": _nan_to_none(comparison_df["delta"].mean()),
            f"{first}_wins": int((comparison_df["delta"] > 0).sum()),
        }

    def plot_comparison(self, comparison_df: pd.DataFrame, save_path: Optional[str] = None):
        """Grouped bars of the metric per seed for both arms."""
        long = comparison_df.melt(
            id_vars="seed",
            value_vars=[f"{arm}_{self.metric}" for arm in self.arms],
            var_name="arm",
            value_name=self.metric,
        )
        long["arm"] = long["arm"].str.replace(f"_{self.metric}", "", regex=False)

        sns.set_palette("husl")
        fig, ax = plt.subplots(figsize=(10, 5))
        sns.barplot(data=long, x="seed", y=self.metric, hue="arm", ax=ax)
        ax.set_title(f"{self.arms[0]} vs {self.arms[1]}: held-out {self.metric}")
        plt.tight_layout()
        if save_path:
            plt.savefig(save_path, dpi=150, bbox_inches="tight")
        plt.close(fig)

    def generate_report(self, comparison_df: pd.DataFrame, report_path: Optional[str] = None) -> str:
        """Markdown report of the paired comparison."""
        summary = self.summarize(comparison_df)
        first, second = self.arms
        report = f"""# Reward Ablation Report

## Paired Results ({self.metric})

{comparison_df.to_string(index=False, float_format=lambda v: f"{v:.4f}")}

## Summary

- Seeds: {summary['seeds']}
- Mean {first}: {_fmt(summary[f'mean_{first}'])}
- Mean {second}: {_fmt(summary[f'mean_{second}'])}
- Mean delta ({first} - {second}): {_fmt(summary['mean_delta'])}
- Seeds where {first} wins: {summary[f'{first}_wins']} / {summary['seeds']}
"""
        if report_path:
            with open(report_path, "w") as f:
                f.write(report)
        return report


def _nan_to_none(value: float) -> Union[float, None]:
    return None if value is None or np.isnan(value) else float(value)


def _fmt(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{value:.4f}"
