"""
Tests for rank correlations, preference accuracy and the evaluation harness.
"""

import itertools
import math
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.core.errors import InvalidValueError
from src.core.types import FAITHFULNESS, EvaluationRecord, PreferenceChoice
from src.metrics.rank_correlation import (
    MetricReport,
    brute_force_rank_oracles,
    kendall,
    metric_report,
    preference_accuracy,
    spearman,
)
from src.objectives.ranking import ScalarRewardParams
from src.policy.categorical import PolicyParams, default_single_grid
from src.simulation.environment import make_synthetic_pair_env, make_synthetic_single_env
from src.utils.evaluation import (
    AblationEvaluator,
    evaluate_policy,
    evaluate_policy_by_group,
    evaluate_ranker,
    evaluate_ranker_by_group,
    plot_training_curves,
    task_group,
)

A, B, T = PreferenceChoice.A, PreferenceChoice.B, PreferenceChoice.T


def _records(predicted, reference):
    return [EvaluationRecord(str(i), p, r) for i, (p, r) in enumerate(zip(predicted, reference))]


def test_spearman_and_kendall_examples():
    records = _records([1, 2, 3, 4], [1, 3, 2, 4])
    assert spearman(records) == pytest.approx(0.8, abs=1e-12)
    assert kendall(records) == pytest.approx(2 / 3, abs=1e-12)

    identical = _records([1, 2, 3, 4], [1, 2, 3, 4])
    assert spearman(identical) == pytest.approx(1.0)
    assert kendall(identical) == pytest.approx(1.0)
    reversed_ = _records([4, 3, 2, 1], [1, 2, 3, 4])
    assert spearman(reversed_) == pytest.approx(-1.0)


def test_correlations_undefined_cases():
    assert spearman(_records([1], [1])) is None
    assert kendall(_records([2, 2, 2], [1, 2, 3])) is None
    assert spearman(_records([1, 2, 3], [5, 5, 5])) is None
    report = metric_report(_records([2, 2, 2], [1, 2, 3]))
    assert report.spearman_rho is None and report.kendall_tau is None and report.n == 3


def test_rank_metrics_agree_with_oracles_on_permutations():
    for n in range(2, 7):
        reference = list(range(n))
        for perm in itertools.permutations(reference):
            records = _records(list(perm), reference)
            rho, tau = brute_force_rank_oracles(records)
            assert abs(spearman(records) - rho) < 1e-12
            assert abs(kendall(records) - tau) < 1e-12


def test_rank_metrics_agree_with_oracles_on_ties():
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        predicted = rng.integers(0, 4, size=n).astype(float)
        reference = rng.integers(0, 4, size=n).astype(float)
        records = _records(predicted, reference)
        rho, tau = brute_force_rank_oracles(records)
        if np.ptp(predicted) == 0 or np.ptp(reference) == 0:
            assert spearman(records) is None and kendall(records) is None
            continue
        assert abs(spearman(records) - rho) < 1e-12
        assert abs(kendall(records) - tau) < 1e-12
        checked += 1
    assert checked > 500


def test_rank_metrics_invariant_to_monotone_transforms():
    rng = np.random.default_rng(1)
    predicted = rng.normal(size=30)
    reference = rng.normal(size=30)
    base = _records(predicted, reference)
    transformed = _records(np.exp(predicted), 3 * reference + 1)
    assert abs(spearman(base) - spearman(transformed)) < 1e-12
    assert abs(kendall(base) - kendall(transformed)) < 1e-12


def test_oracle_two_concordant_points():
    assert brute_force_rank_oracles(_records([1, 2], [3, 4])) == (pytest.approx(1.0), pytest.approx(1.0))
    assert brute_force_rank_oracles(_records([1], [1])) == (None, None)


def test_preference_accuracy_examples():
    assert preference_accuracy([0.9, 0.1], [A, B]) == 1.0
    assert preference_accuracy([0.5, 0.5], [T, T]) == 1.0
    assert preference_accuracy([0.9, 0.1, 0.5], [A, A, T], 0.0) == pytest.approx(2 / 3)
    assert preference_accuracy([0.9, 0.45, 0.5], [A, T, B], tie_band=0.1, exclude_ties=True) == 0.5
    assert preference_accuracy([0.5], [T], exclude_ties=True) is None
    with pytest.raises(InvalidValueError):
        preference_accuracy([0.9], [A, B])
    with pytest.raises(InvalidValueError):
        preference_accuracy([], [])


def test_metric_report_with_preferences():
    records = _records([0.9, 0.2, 0.6], [1.0, 0.0, 0.5])
    report = metric_report(records, [0.9, 0.2, 0.6], [A, B, T], tie_band=0.15, n_unparsed=2)
    assert report.preference_accuracy == 1.0
    assert report.n_unparsed == 2
    assert set(report.to_dict()) == {"spearman_rho", "kendall_tau", "n", "preference_accuracy", "n_unparsed"}


def test_evaluate_policy_and_ranker():
    tasks = make_synthetic_single_env(3, 40, 0.0, seed=0).tasks
    uniform = PolicyParams.zeros(default_single_grid(), 3)
    report = evaluate_policy(uniform, tasks)
    assert report.n == 40
    assert report.spearman_rho is None

    env = make_synthetic_pair_env(3, 60, seed=0)
    oracle = ScalarRewardParams(env.hidden_weights * 50.0, 0.0)
    ranked = evaluate_ranker(oracle, env.tasks)
    assert ranked.preference_accuracy == pytest.approx(1.0)
    with pytest.raises(InvalidValueError):
        evaluate_policy(uniform, tasks, prediction="median")


def _assert_same_report(a, b):
    assert a.n == b.n
    for name in ("spearman_rho", "kendall_tau", "preference_accuracy"):
        left, right = getattr(a, name), getattr(b, name)
        assert (left is None) == (right is None), name
        if left is not None:
            assert left == pytest.approx(right, abs=1e-12), name


def test_grouped_reports_split_protocols_and_dimensions():
    overall = make_synthetic_single_env(3, 30, 0.0, seed=0).tasks
    faithful = make_synthetic_single_env(3, 20, 0.0, seed=1, dimension=FAITHFULNESS, id_prefix="f").tasks
    pair_env = make_synthetic_pair_env(3, 25, seed=2)
    tasks = overall + faithful + pair_env.tasks
    assert task_group(overall[0]) == "single:overall"
    assert task_group(pair_env.tasks[0]) == "pair"

    params = PolicyParams.random(default_single_grid(), 3, 0.5, seed=0)
    groups = evaluate_policy_by_group(params, tasks)
    assert list(groups) == ["pair", "single:faithfulness", "single:overall"]
    assert [groups[k].n for k in groups] == [25, 20, 30]
    assert groups["pair"].preference_accuracy is not None
    assert groups["single:overall"].preference_accuracy is None
    _assert_same_report(groups["single:overall"], evaluate_policy(params, overall))
    _assert_same_report(groups["pair"], evaluate_policy(params, pair_env.tasks))
    assert evaluate_policy(params, tasks).n == 75

    oracle = ScalarRewardParams(pair_env.hidden_weights * 50.0, 0.0)
    ranked = evaluate_ranker_by_group(oracle, pair_env.tasks + faithful)
    assert ranked["pair"].preference_accuracy == pytest.approx(1.0)
    assert ranked["single:faithfulness"].n == 20
    assert evaluate_policy_by_group(params, []) == {}


def test_ablation_evaluator_tables_and_report(tmp_path):
    evaluator = AblationEvaluator(["grpo_continuous", "grpo_binary"], "spearman_rho")
    for seed, (cont, binary) in enumerate([(0.7, 0.5), (0.6, 0.65), (0.8, None)]):
        evaluator.add_run("grpo_continuous", seed, MetricReport(cont, cont, 10))
        evaluator.add_run("grpo_binary", seed, MetricReport(binary, binary, 10))

    df = evaluator.compare_arms()
    assert list(df.columns) == ["seed", "grpo_continuous_spearman_rho", "grpo_binary_spearman_rho", "delta"]
    assert df["delta"].iloc[0] == pytest.approx(0.2)
    assert math.isnan(df["delta"].iloc[2])

    summary = evaluator.summarize(df)
    assert summary["seeds"] == 3
    assert summary["grpo_continuous_wins"] == 1
    assert summary["mean_delta"] == pytest.approx((0.2 - 0.05) / 2)

    report = evaluator.generate_report(df, str(tmp_path / "report.md"))
    assert report.startswith("# Reward Ablation Report")
    assert (tmp_path / "report.md").exists()
    evaluator.plot_comparison(df, save_path=str(tmp_path / "ablation.png"))
    assert (tmp_path / "ablation.png").exists()

    with pytest.raises(InvalidValueError):
        evaluator.add_run("ranking", 0, MetricReport(0.1, 0.1, 10))
    with pytest.raises(InvalidValueError):
        AblationEvaluator(["only_one"])


def test_plot_training_curves(tmp_path):
    curve = pd.DataFrame(
        {"step": [1, 2, 3], "loss": [1.0, 0.8, 0.7], "mean_reward": [0.1, 0.2, 0.3], "mean_abs_advantage": 0.0, "mean_kl": 0.0}
    )
    path = tmp_path / "curves.png"
    plot_training_curves({"run": curve, "empty": curve.iloc[0:0]}, save_path=str(path))
    assert path.exists()
