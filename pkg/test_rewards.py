"""
Tests for the continuous and binary reward functions and tagged-output parsing.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.core.errors import InvalidValueError
from src.core.types import OVERALL, PairEvalTask, ScoreRange, SingleEvalTask
from src.rewards.functions import (
    RewardKind,
    RewardVariant,
    compute_reward,
    format_tagged_output,
    parse_tagged_output,
    reward_binary,
    reward_from_text,
    reward_pair,
    reward_single,
)

TEN = ScoreRange(0.0, 10.0)


def test_reward_single_examples():
    assert reward_single(7.0, TEN, 7.0) == 1.0
    assert reward_single(8.0, TEN, 7.0) == pytest.approx(0.8)
    assert reward_single(3.0, TEN, 7.0) == pytest.approx(0.2)
    assert reward_single(8.0, TEN, 7.0) > reward_single(3.0, TEN, 7.0)
    assert reward_single(12.0, TEN, 7.0) == pytest.approx(0.4)


def test_reward_single_rejects_bad_reference():
    with pytest.raises(InvalidValueError):
        reward_single(5.0, TEN, 11.0)
    with pytest.raises(InvalidValueError):
        reward_single(float("nan"), TEN, 5.0)


def test_reward_pair_examples():
    assert reward_pair(1.0, 1.0) == 1.0
    assert reward_pair(0.0, 1.0) == -1.0
    assert reward_pair(0.5, 1.0) == 0.0
    assert reward_pair(1.7, 1.0) == 1.0
    with pytest.raises(InvalidValueError):
        reward_pair(0.5, 1.2)


def test_reward_binary_examples():
    assert reward_binary(7.0, 7.0, 0.0) == 1.0
    assert reward_binary(8.0, 7.0, 0.0) == 0.0
    assert reward_binary(3.0, 7.0, 0.0) == 0.0
    assert reward_binary(7.4, 7.0, 0.5) == 1.0
    with pytest.raises(InvalidValueError):
        reward_binary(7.0, 7.0, -0.1)


def test_continuous_rewards_match_straight_line_formula():
    rng = np.random.default_rng(0)
    for _ in range(10000):
        lo = rng.uniform(-5, 5)
        hi = lo + rng.uniform(0.1, 10)
        s_ref = rng.uniform(lo, hi)
        s_pred = rng.uniform(lo - 3, hi + 3)
        clipped = lo if s_pred < lo else hi if s_pred > hi else s_pred
        expected = 1.0 - 2.0 * abs(clipped - s_ref) / (hi - lo)
        assert abs(reward_single(s_pred, ScoreRange(lo, hi), s_ref) - expected) < 1e-12

        p_ref = rng.uniform(0, 1)
        p_pred = rng.uniform(-0.5, 1.5)
        clipped = 0.0 if p_pred < 0 else 1.0 if p_pred > 1 else p_pred
        assert abs(reward_pair(p_pred, p_ref) - (1.0 - 2.0 * abs(clipped - p_ref))) < 1e-12


def test_reward_single_is_invariant_to_affine_rescaling():
    full = reward_single(8.0, TEN, 7.0)
    half = reward_single(4.0, ScoreRange(0.0, 5.0), 3.5)
    assert full == pytest.approx(half, abs=1e-12)


def test_reward_kind_follows_task_protocol():
    single = SingleEvalTask("s", (0.0,), OVERALL, TEN, 7.0)
    pair = PairEvalTask("p", (0.0,), (1.0,), 1.0)
    continuous = RewardKind.continuous()
    binary = RewardKind.binary(0.25)

    assert continuous.for_task(pair).variant is RewardVariant.CONTINUOUS_PAIR
    assert binary.for_task(pair).binary_tolerance == 0.25
    assert compute_reward(8.0, single, continuous) == pytest.approx(0.8)
    assert compute_reward(7.25, single, binary) == 1.0
    assert compute_reward(0.5, pair, continuous) == 0.0
    assert compute_reward(None, single, continuous) == -1.0
    assert compute_reward(None, pair, binary) == 0.0


def test_parse_tagged_output():
    assert parse_tagged_output("The image is fine, score: 7.5", "single") == 7.5
    assert parse_tagged_output("", "single") is None
    assert parse_tagged_output("confidence 0.8 ... final 0.3", "pair") == 0.3
    assert parse_tagged_output("no number here", "single") is None


def test_parse_tagged_output_prefers_answer_block():
    text = "<think>The layout is 3 out of 4 right, maybe 6</think><answer>8</answer>"
    assert parse_tagged_output(text, "single") == 8.0
    assert parse_tagged_output("<answer>7 or 8</answer>", "single") is None
    assert parse_tagged_output("<think>unfinished 9", "single") is None
    assert parse_tagged_output("<answer>80%</answer>", "pair") == pytest.approx(0.8)
    with pytest.raises(InvalidValueError):
        parse_tagged_output("1", "triple")


def test_reward_from_text_and_formatting():
    task = SingleEvalTask("s", (0.0,), OVERALL, TEN, 7.0)
    output = format_tagged_output(8.0, rationale="Colors are off by 2 shades.")
    assert parse_tagged_output(output, "single") == 8.0
    assert reward_from_text(output, task, RewardKind.continuous()) == pytest.approx(0.8)
    assert reward_from_text("garbled", task, RewardKind.continuous()) == -1.0
