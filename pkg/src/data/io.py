import json
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

from ..core.errors import CorpusFormatError, EvalToolkitError
from ..core.types import EvaluationRecord, PairEvalTask, SingleEvalTask
from .corpus import RatedItem

_REQUIRED_FIELDS = {
    "single": ("id", "features", "dimension", "range_min", "range_max", "reference_score"),
    "pair": ("id", "features_a", "features_b", "reference_confidence"),
    "rated": ("prompt_id", "item_id", "rating_level", "features"),
    "records": ("task_id", "predicted", "reference"),
}

_BUILDERS: Dict[str, Callable[[Dict[str, Any]], Any]] = {
    "single": SingleEvalTask.from_dict,
    "pair": PairEvalTask.from_dict,
    "rated": RatedItem.from_dict,
    "records": EvaluationRecord.from_dict,
}

# Validation messages name their field; this maps message fragments back to it.
_FIELD_HINTS = (
    ("reference_score", "reference_score"),
    ("reference_confidence", "reference_confidence"),
    ("range.", "range_min/range_max"),
    ("features_a", "features_a"),
    ("features_b", "features_b"),
    ("features", "features"),
    ("delta_r", "delta_r"),
    ("rating_level", "rating_level"),
    ("dimension", "dimension"),
    ("predicted", "predicted"),
    ("reference", "reference"),
)


def _field_of(message: str) -> Optional[str]:
    for fragment, name in _FIELD_HINTS:
        if fragment in message:
            return name
    return None


def decode_line(line: Union[str, bytes], line_number: int) -> str:
    """Decode one raw line as UTF-8; bad bytes are a format error on that line."""
    if isinstance(line, str):
        return line
    try:
        return line.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusFormatError(
            f"invalid UTF-8 (byte 0x{line[e.start]:02x} at offset {e.start})", line_number=line_number
        )


def parse_rows(lines: Sequence[Union[str, bytes]], kind: str, feature_dim: Optional[int] = None) -> List[Any]:
    """
    Parse JSONL lines into domain objects, validating each one.

    Args:
        lines: Raw lines, text or undecoded bytes; blank lines are skipped
        kind: One of 'single', 'pair', 'rated', 'records'
        feature_dim: Expected feature length, checked when given

    Returns:
        Parsed objects in file order
    """
    if kind not in _BUILDERS:
        raise EvalToolkitError(f"unknown corpus kind {kind!r} (expected one of {sorted(_BUILDERS)})")
    required = _REQUIRED_FIELDS[kind]
    build = _BUILDERS[kind]
    rows = []
    for line_number, raw in enumerate(lines, start=1):
        line = decode_line(raw, line_number)
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"malformed JSON ({e.msg})", line_number=line_number)
        if not isinstance(data, dict):
            raise CorpusFormatError("each line must be a JSON object", line_number=line_number)
        missing = [name for name in required if name not in data]
        if missing:
            raise CorpusFormatError(f"missing field '{missing[0]}'", line_number=line_number, field=missing[0])
        try:
            row = build(data)
        except (EvalToolkitError, TypeError, ValueError, KeyError) as e:
            message = str(e)
            field = _field_of(message)
            raise CorpusFormatError(
                f"invalid {field or 'value'}: {message}", line_number=line_number, field=field
            )
        if feature_dim is not None:
            length = _feature_length(row)
            if length is not None and length != feature_dim:
                raise CorpusFormatError(
                    f"features have length {length}, expected {feature_dim}",
                    line_number=line_number,
                    field="features",
                )
        rows.append(row)
    return rows


def _feature_length(row: Any) -> Optional[int]:
    if isinstance(row, PairEvalTask):
        return len(row.features_a)
    features = getattr(row, "features", None)
    return None if features is None else len(features)


def load_corpus(path: Union[str, Path], kind: str, feature_dim: Optional[int] = None) -> List[Any]:
    """Load a JSONL corpus; an empty file gives an empty corpus."""
    return parse_rows(Path(path).read_bytes().splitlines(), kind, feature_dim)


def save_corpus(rows: Sequence[Any], path: Union[str, Path]):
    """Write one JSON object per line, in the given order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row.to_dict()))
            f.write("\n")
