"""
Four-block prompt assembler.

Templates and the builtin dimension library are JSON data files next to this
module; swapping a dimension or protocol only swaps data.
"""

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from string import Template
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from ..core.errors import InvalidValueError, TemplateError
from ..core.types import UNIT_RANGE, DimensionKind, DimensionTag, ScoreRange

PROMPTS_DIR = Path(__file__).parent
TEMPLATES_DIR = PROMPTS_DIR / "templates"
DIMENSIONS_FILE = PROMPTS_DIR / "dimensions.json"

BLOCK_HEADERS = (
    "# Task Description",
    "# Annotation Input",
    "# Evaluation Guidelines",
    "# Output Format",
)
MODES = ("single", "pair")
TEXT_SLOT = "<text>"
IMAGE_SLOT = "<image>"
TEMPLATE_FIELDS = {"goal", "criteria", "guidelines", "range_min", "range_max"}
GUIDELINE_FIELDS = {"range_min", "range_max"}

_PLACEHOLDER = re.compile(r"\$\{([^}]*)\}")


def _placeholders(text: str) -> List[str]:
    return _PLACEHOLDER.findall(text)


def _format_number(value: float) -> str:
    return str(float(value))


@dataclass(frozen=True)
class DimensionSpec:
    """
    Criteria text of one evaluation dimension.

    goal is the phrase shown in bold in the task description; definition_text
    lists the criteria; guideline_text holds the scoring anchors and may use
    ${range_min} / ${range_max}. range is None for pairwise-only dimensions.
    """

    tag: DimensionTag
    definition_text: str
    guideline_text: str
    range: Optional[ScoreRange] = None
    goal: Optional[str] = None

    def __post_init__(self):
        if not self.definition_text.strip() or not self.guideline_text.strip():
            raise TemplateError(f"dimension '{self.tag.name}' needs non-empty definition and guideline texts")
        unknown = set(_placeholders(self.guideline_text)) - GUIDELINE_FIELDS
        if unknown:
            raise TemplateError(f"dimension '{self.tag.name}' uses unknown placeholder(s) {sorted(unknown)}")
        if self.goal is None:
            object.__setattr__(self, "goal", self.tag.name.replace("_", " "))

    @property
    def name(self) -> str:
        return self.tag.name

    def render_guidelines(self, score_range: ScoreRange) -> str:
        return Template(self.guideline_text).substitute(
            range_min=_format_number(score_range.min), range_max=_format_number(score_range.max)
        )

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DimensionSpec":
        try:
            tag = DimensionTag(data["name"], DimensionKind(data.get("kind", "semantic")))
            bounds = data.get("range")
            score_range = ScoreRange(bounds[0], bounds[1]) if bounds is not None else None
            return cls(
                tag=tag,
                definition_text=data["definition"],
                guideline_text=data["guidelines"],
                range=score_range,
                goal=data.get("goal"),
            )
        except KeyError as e:
            raise TemplateError(f"dimension entry is missing field {e}")
        except (InvalidValueError, TypeError, IndexError) as e:
            raise TemplateError(f"invalid dimension entry {data.get('name')!r}: {e}")


@dataclass(frozen=True)
class PromptTemplate:
    """Ordered quadruple of blocks (task description, annotation input, guidelines, output format)."""

    blocks: Tuple[str, str, str, str]
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise TemplateError(f"template mode must be one of {MODES}, got {self.mode!r}")
        blocks = tuple(self.blocks)
        if len(blocks) != 4:
            raise TemplateError(f"a template has exactly 4 blocks, got {len(blocks)}")
        for block, header in zip(blocks, BLOCK_HEADERS):
            if not block.startswith(header + "\n"):
                raise TemplateError(f"block must start with '{header}', got {block.splitlines()[0]!r}")
        text = "\n".join(blocks)
        if text.count(TEXT_SLOT) != 1:
            raise TemplateError(f"'{TEXT_SLOT}' must appear exactly once, found {text.count(TEXT_SLOT)}")
        expected_images = 1 if self.mode == "single" else 2
        if text.count(IMAGE_SLOT) != expected_images:
            raise TemplateError(
                f"{self.mode} template needs {expected_images} '{IMAGE_SLOT}' slot(s), found {text.count(IMAGE_SLOT)}"
            )
        unknown = set(_placeholders(text)) - TEMPLATE_FIELDS
        if unknown:
            raise TemplateError(f"template uses unknown placeholder(s) {sorted(unknown)}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PromptTemplate":
        if not isinstance(data, dict) or "mode" not in data or "blocks" not in data:
            raise TemplateError("template file must be a JSON object with 'mode' and 'blocks'")
        return cls(tuple(data["blocks"]), data["mode"])


def load_template(source: Union[str, Path]) -> PromptTemplate:
    """Load a template by builtin mode name ('single' / 'pair') or from a JSON file path."""
    path = TEMPLATES_DIR / f"{source}.json" if source in MODES else Path(source)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise TemplateError(f"template file not found: {path}")
    except json.JSONDecodeError as e:
        raise TemplateError(f"template file {path} is not valid JSON: {e.msg}")
    return PromptTemplate.from_dict(data)


@lru_cache(maxsize=None)
def _builtin_specs() -> Tuple[DimensionSpec, ...]:
    entries = json.loads(DIMENSIONS_FILE.read_text(encoding="utf-8"))
    return tuple(DimensionSpec.from_dict(entry) for entry in entries)


def builtin_dimensions() -> Dict[str, DimensionSpec]:
    """The six builtin dimensions keyed by name, in library order."""
    return {spec.name: spec for spec in _builtin_specs()}


def get_dimension(name: str) -> DimensionSpec:
    specs = builtin_dimensions()
    if name not in specs:
        raise TemplateError(f"unknown dimension '{name}' (known: {', '.join(specs)})")
    return specs[name]


def _join_goals(goals: Sequence[str]) -> str:
    if len(goals) == 1:
        return goals[0]
    return ", ".join(goals[:-1]) + " and " + goals[-1]


def _resolve_range(dims: Sequence[DimensionSpec], range_override: Optional[ScoreRange]) -> ScoreRange:
    if range_override is not None:
        return range_override
    ranges = {spec.range for spec in dims if spec.range is not None}
    if not ranges:
        names = [spec.name for spec in dims]
        raise TemplateError(f"dimension(s) {names} define no score range; pass a range override")
    if len(ranges) > 1:
        raise TemplateError(
            f"dimensions disagree on the score range ({sorted((r.min, r.max) for r in ranges)}); "
            "pass a range override"
        )
    return ranges.pop()


def assemble_prompt(
    template: PromptTemplate,
    dims: Sequence[DimensionSpec],
    prompt_text: Optional[str] = None,
    mode: Optional[str] = None,
    range_override: Optional[ScoreRange] = None,
) -> str:
    """
    Render an evaluation prompt.

    Args:
        template: Four-block template
        dims: Active dimensions; their criteria and anchors are concatenated in order
        prompt_text: User input substituted for the <text> slot (kept as a slot when None)
        mode: Expected protocol; must match the template when given
        range_override: Score range replacing the dimensions' own (single-wise only)

    Returns:
        The four rendered blocks separated by blank lines, newline-terminated
    """
    mode = mode or template.mode
    if mode != template.mode:
        raise TemplateError(f"template is for {template.mode}-wise prompts, requested {mode}")
    if not dims:
        raise TemplateError("at least one dimension is required")

    if mode == "single":
        score_range = _resolve_range(dims, range_override)
        anchor_ranges = [score_range] * len(dims)
    else:
        if range_override is not None:
            raise TemplateError("pairwise prompts always use the confidence range [0.0, 1.0]")
        score_range = UNIT_RANGE
        anchor_ranges = [spec.range or UNIT_RANGE for spec in dims]

    values = {
        "goal": _join_goals([spec.goal for spec in dims]),
        "criteria": "\n".join(spec.definition_text for spec in dims),
        "guidelines": "\n".join(spec.render_guidelines(r) for spec, r in zip(dims, anchor_ranges)),
        "range_min": _format_number(score_range.min),
        "range_max": _format_number(score_range.max),
    }
    try:
        rendered = [Template(block).substitute(values) for block in template.blocks]
    except (KeyError, ValueError) as e:
        raise TemplateError(f"placeholder left unfilled: {e}")
    leftover = [name for block in rendered for name in _placeholders(block)]
    if leftover:
        raise TemplateError(f"placeholder(s) left unfilled: {leftover}")

    text = "\n\n".join(rendered) + "\n"
    if prompt_text is not None:
        text = text.replace(TEXT_SLOT, prompt_text, 1)
    return text


def parse_prompt_blocks(rendered: str) -> Tuple[str, str, str, str]:
    """Split a rendered prompt back into its four blocks (headers included)."""
    starts = []
    for header in BLOCK_HEADERS:
        matches = [m.start() for m in re.finditer(rf"^{re.escape(header)}$", rendered, flags=re.MULTILINE)]
        if len(matches) != 1:
            raise TemplateError(f"expected exactly one '{header}' heading, found {len(matches)}")
        starts.append(matches[0])
    if starts != sorted(starts) or starts[0] != 0:
        raise TemplateError("block headings are out of order")
    if not rendered.endswith("\n"):
        raise TemplateError("rendered prompt must end with a newline")

    blocks = []
    ends = starts[1:] + [len(rendered) + 1]
    for start, end in zip(starts, ends):
        chunk = rendered[start:end - 2] if end <= len(rendered) else rendered[start:-1]
        if end <= len(rendered) and rendered[end - 2:end] != "\n\n":
            raise TemplateError("blocks must be separated by a blank line")
        blocks.append(chunk)
    return tuple(blocks)
