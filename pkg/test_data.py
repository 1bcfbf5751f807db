"""
Tests for corpus construction and JSONL persistence.
"""

import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.core.errors import CorpusError, CorpusFormatError, InvalidValueError
from src.core.types import (
    APPEARANCE_QUALITY,
    FAITHFULNESS,
    OVERALL,
    PairEvalTask,
    ScoreRange,
    SingleEvalTask,
)
from src.data.corpus import (
    CorpusSpec,
    RatedItem,
    apportion,
    build_pair_corpus,
    build_single_corpus,
    confidence_from_ratings,
    corpus_statistics,
    enumerate_pair_candidates,
    stratum_targets,
)
from src.data.io import load_corpus, parse_rows, save_corpus
from src.simulation.environment import make_dimension_sources, make_synthetic_rated_items

TEN = ScoreRange(0.0, 10.0)


def test_apportion_largest_remainder():
    assert apportion(35000, {1: 1, 2: 2, 3: 2, 4: 1}) == {1: 5833, 2: 11667, 3: 11667, 4: 5833}
    assert sum(apportion(7, {"a": 1, "b": 1, "c": 1}).values()) == 7
    # Equal remainders go to the smaller key.
    assert apportion(1, {0: 1, 1: 1}) == {0: 1, 1: 0}
    with pytest.raises(InvalidValueError):
        apportion(5, {1: 0})


def test_confidence_from_ratings():
    assert confidence_from_ratings(1, 5, "discrete") == 1.0
    assert confidence_from_ratings(3, 3, "discrete") == 0.5
    assert confidence_from_ratings(3, 3, "graded") == 0.5
    assert confidence_from_ratings(2, 4, "graded") == 0.75
    assert confidence_from_ratings(5, 1, "graded") == 0.0
    with pytest.raises(InvalidValueError):
        confidence_from_ratings(0, 3)
    with pytest.raises(InvalidValueError):
        confidence_from_ratings(1, 2, "fuzzy")


def test_corpus_spec_defaults_and_validation():
    spec = CorpusSpec()
    assert spec.total_single == 36000
    assert stratum_targets(spec) == {1: 5833, 2: 11667, 3: 11667, 4: 5833}
    with pytest.raises(InvalidValueError):
        CorpusSpec(total_single=100)
    with pytest.raises(InvalidValueError):
        CorpusSpec(delta_weights={5: 1})
    with pytest.raises(InvalidValueError):
        CorpusSpec(polarity_ratio=(1.0, 0.0))


def test_build_single_corpus_counts_and_determinism():
    dims = [APPEARANCE_QUALITY, OVERALL]
    source = make_dimension_sources(3, 60, dims, 0.5, TEN, seed=0)
    spec = CorpusSpec(per_dimension=40, dimensions=dims)
    corpus = build_single_corpus(source, spec, seed=1)
    stats = corpus_statistics(single=corpus)
    assert stats["single_total"] == 80
    assert stats["single_per_dimension"] == {"appearance_quality": 40, "overall": 40}
    assert corpus == build_single_corpus(source, spec, seed=1)
    assert corpus != build_single_corpus(source, spec, seed=2)


def test_build_single_corpus_exhaustive_sample_and_deficit():
    dims = [OVERALL]
    source = make_dimension_sources(2, 30, dims, 0.0, TEN, seed=0)
    corpus = build_single_corpus(source, CorpusSpec(per_dimension=30, dimensions=dims), seed=0)
    assert sorted(t.id for t in corpus) == sorted(t.id for t in source)

    with pytest.raises(CorpusError, match="faithfulness"):
        build_single_corpus(source, CorpusSpec(per_dimension=10, dimensions=[OVERALL, FAITHFULNESS]), seed=0)
    with pytest.raises(CorpusError):
        build_single_corpus(source, CorpusSpec(per_dimension=31, dimensions=dims), seed=0)
    padded = build_single_corpus(source, CorpusSpec(per_dimension=31, dimensions=dims, replace=True), seed=0)
    assert len(padded) == 31


def test_enumerate_pair_candidates_single_pair():
    items = [
        RatedItem("p", "a", 1, (0.0,)),
        RatedItem("p", "b", 5, (1.0,)),
    ]
    candidates = enumerate_pair_candidates(items)
    assert [len(candidates[d]) for d in (1, 2, 3, 4)] == [0, 0, 0, 1]
    better, worse = candidates[4][0]
    assert better.item_id == "a" and worse.item_id == "b"


def test_build_pair_corpus_strata_and_polarity():
    items = make_synthetic_rated_items(3, 400, 6, seed=0).tasks
    spec = CorpusSpec(total_pairs=600)
    pairs = build_pair_corpus(items, spec, seed=3)
    targets = stratum_targets(spec)
    stats = corpus_statistics(pairs=pairs)

    assert stats["pair_total"] == 600
    for delta, target in targets.items():
        stratum = stats["pair_strata"][str(delta)]
        assert stratum["total"] == target
        assert abs(stratum["positive"] - stratum["negative"]) <= 1
    assert all(t.delta_r in (1, 2, 3, 4) for t in pairs)
    assert pairs == build_pair_corpus(items, spec, seed=3)


def test_default_spec_stratum_and_polarity_targets():
    spec = CorpusSpec()
    targets = stratum_targets(spec)
    assert targets == {1: 5833, 2: 11667, 3: 11667, 4: 5833}
    assert sum(targets.values()) == 35000
    polarity = {0: spec.polarity_ratio[0], 1: spec.polarity_ratio[1]}
    assert apportion(5833, polarity) == {0: 2917, 1: 2916}
    assert apportion(11667, polarity) == {0: 5834, 1: 5833}


@pytest.mark.slow
def test_build_pair_corpus_at_default_size():
    items = make_synthetic_rated_items(3, 3000, 8, seed=0).tasks
    pairs = build_pair_corpus(items, CorpusSpec(), seed=0)
    stats = corpus_statistics(pairs=pairs)
    assert stats["pair_total"] == 35000
    expected = {"1": (2917, 2916), "2": (5834, 5833), "3": (5834, 5833), "4": (2917, 2916)}
    for delta, (positive, negative) in expected.items():
        stratum = stats["pair_strata"][delta]
        assert (stratum["positive"], stratum["negative"]) == (positive, negative)
        assert stratum["total"] == positive + negative


def test_build_pair_corpus_graded_confidence():
    items = make_synthetic_rated_items(3, 400, 6, seed=1).tasks
    pairs = build_pair_corpus(items, CorpusSpec(total_pairs=120, confidence_mode="graded"), seed=0)
    for task in pairs:
        assert abs(task.reference_confidence - 0.5) == pytest.approx(0.5 * task.delta_r / 4)


def test_build_pair_corpus_missing_stratum():
    items = [RatedItem("p", str(i), level, (float(i),)) for i, level in enumerate([1, 2, 1, 2])]
    with pytest.raises(CorpusError, match="attainable"):
        build_pair_corpus(items, CorpusSpec(total_pairs=10), seed=0)
    only_adjacent = build_pair_corpus(items, CorpusSpec(total_pairs=4, delta_weights={1: 1}), seed=0)
    assert len(only_adjacent) == 4


def test_save_and_load_corpus(tmp_path):
    single = [SingleEvalTask("s1", (0.5, 1.5), FAITHFULNESS, ScoreRange(1, 5), 4.0)]
    pairs = [PairEvalTask("p1", (0.1, 0.2), (0.3, 0.4), 0.75, delta_r=2)]
    save_corpus(single, tmp_path / "out" / "single.jsonl")
    save_corpus(pairs, tmp_path / "out" / "pairs.jsonl")
    assert load_corpus(tmp_path / "out" / "single.jsonl", "single", feature_dim=2) == single
    assert load_corpus(tmp_path / "out" / "pairs.jsonl", "pair") == pairs


def test_load_empty_corpus(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_corpus(path, "single") == []


def test_load_corpus_reports_line_numbers(tmp_path):
    good = {"id": "a", "features": [0.0], "dimension": "overall", "range_min": 0, "range_max": 10, "reference_score": 5}
    bad = dict(good, id="b", reference_score=11)
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(good) + "\n\n" + json.dumps(bad) + "\n")
    with pytest.raises(CorpusFormatError) as info:
        load_corpus(path, "single")
    assert info.value.line_number == 3
    assert info.value.field == "reference_score"


def test_load_corpus_rejects_invalid_utf8(tmp_path):
    good = {"id": "a", "features": [0.0], "dimension": "overall", "range_min": 0, "range_max": 10, "reference_score": 5}
    path = tmp_path / "latin1.jsonl"
    path.write_bytes(json.dumps(good).encode("utf-8") + b"\n" + b'"\xff\xfe"\n')
    with pytest.raises(CorpusFormatError) as info:
        load_corpus(path, "single")
    assert info.value.line_number == 2
    assert "UTF-8" in str(info.value)


def test_parse_rows_errors():
    with pytest.raises(CorpusFormatError) as info:
        parse_rows(["{not json"], "pair")
    assert info.value.line_number == 1

    with pytest.raises(CorpusFormatError) as info:
        parse_rows(['{"id": "x", "features_a": [0], "features_b": [1]}'], "pair")
    assert info.value.field == "reference_confidence"

    with pytest.raises(CorpusFormatError) as info:
        parse_rows(['{"prompt_id": "p", "item_id": "i", "rating_level": 2, "features": [0, 1]}'], "rated", feature_dim=3)
    assert info.value.field == "features"

    with pytest.raises(CorpusFormatError):
        parse_rows(["[1, 2]"], "records")
