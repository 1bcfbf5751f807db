"""
Run configuration: one JSON file per run, parsed into nested dataclasses.

Unknown keys are rejected with the dotted path of the offending key. The only
environment override is the output directory (EVAL_RL_OUTPUT_DIR).
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union, get_type_hints

from ..core.errors import ConfigError, EvalToolkitError
from ..core.types import ScoreRange, resolve_dimension
from ..data.corpus import CorpusSpec
from ..objectives.grpo import GrpoConfig
from ..objectives.ranking import RankingConfig
from ..objectives.trainer import Objective, TrainingConfig

OUTPUT_DIR_ENV = "EVAL_RL_OUTPUT_DIR"
ENV_KINDS = ("single", "pair", "mixed")


@dataclass
class EnvConfig:
    """Synthetic environment and held-out split."""

    kind: str = "single"
    feature_dim: int = 4
    n_tasks: int = 4000
    n_pairs: int = 4000
    n_eval: int = 500
    noise_sd: float = 0.0
    range_min: float = 0.0
    range_max: float = 10.0
    dimension: str = "overall"
    pair_mode: str = "discrete"
    flip_prob: float = 0.0
    single_bins: int = 21
    pair_bins: int = 11
    prediction: str = "expected"
    tie_band: float = 0.0
    seed: Optional[int] = None

    @property
    def range(self) -> ScoreRange:
        return ScoreRange(self.range_min, self.range_max)


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.05
    batch_size: int = 64
    init_scale: float = 0.0
    log_interval: int = 100
    checkpoint_interval: int = 0
    progress: bool = True


@dataclass
class RewardConfig:
    binary_tolerance: float = 0.0


@dataclass
class CorpusConfig:
    """Corpus recipe plus the size of the synthetic sources it samples from."""

    build: List[str] = field(default_factory=lambda: ["single", "pair"])
    per_dimension: int = 9000
    dimensions: List[str] = field(
        default_factory=lambda: ["appearance_quality", "intrinsic_consistency", "relationship_consistency", "overall"]
    )
    total_pairs: int = 35000
    delta_weights: Dict[str, int] = field(default_factory=lambda: {"1": 1, "2": 2, "3": 2, "4": 1})
    polarity_ratio: List[float] = field(default_factory=lambda: [1.0, 1.0])
    confidence_mode: str = "discrete"
    replace: bool = False
    source_per_dimension: int = 9000
    source_noise_sd: float = 0.5
    n_prompts: int = 5000
    items_per_prompt: int = 8

    def to_spec(self) -> CorpusSpec:
        return CorpusSpec(
            per_dimension=self.per_dimension,
            dimensions=[resolve_dimension(name) for name in self.dimensions],
            total_pairs=self.total_pairs,
            delta_weights={int(k): int(v) for k, v in self.delta_weights.items()},
            polarity_ratio=tuple(self.polarity_ratio),
            confidence_mode=self.confidence_mode,
            replace=self.replace,
        )


@dataclass
class CorpusPaths:
    """Optional JSONL inputs; when a train path is set it replaces the synthetic environment."""

    train_single: Optional[str] = None
    train_pairs: Optional[str] = None
    eval_single: Optional[str] = None
    eval_pairs: Optional[str] = None
    rated_items: Optional[str] = None
    single_source: Optional[str] = None

    def provided(self) -> Dict[str, str]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if getattr(self, f.name)}


@dataclass
class EnhanceConfig:
    """Rejection-sampling stage run after the main training."""

    enabled: bool = False
    threshold: float = 0.5
    budget: Optional[int] = None
    group_size: int = 8
    steps: int = 500


@dataclass
class AblationConfig:
    arms: List[str] = field(default_factory=lambda: ["grpo_continuous", "grpo_binary"])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    metric: Optional[str] = None


@dataclass
class PromptConfig:
    dimensions: List[str] = field(default_factory=list)
    mode: str = "single"
    range: Optional[List[float]] = None
    prompt_text: Optional[str] = None
    template: Optional[str] = None


@dataclass
class RunConfig:
    objective: str = "grpo_continuous"
    seed: int = 0
    steps: int = 2000
    output_dir: Optional[str] = None
    env: EnvConfig = field(default_factory=EnvConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    ranking: RankingConfig = field(default_factory=RankingConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    paths: CorpusPaths = field(default_factory=CorpusPaths)
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)

    def validate(self) -> "RunConfig":
        """Check cross-field consistency and that every referenced path exists."""
        try:
            Objective(self.objective)
        except ValueError:
            raise ConfigError(f"objective: unknown value {self.objective!r} (expected one of {[o.value for o in Objective]})")
        for arm in self.ablation.arms:
            if arm not in (Objective.GRPO_CONTINUOUS.value, Objective.GRPO_BINARY.value, Objective.MLE.value):
                raise ConfigError(f"ablation.arms: {arm!r} is not a policy objective")
        if len(self.ablation.arms) != 2:
            raise ConfigError(f"ablation.arms: exactly two arms are compared, got {self.ablation.arms}")
        if not self.ablation.seeds:
            raise ConfigError("ablation.seeds: at least one seed is required")
        if self.env.kind not in ENV_KINDS:
            raise ConfigError(f"env.kind: expected one of {ENV_KINDS}, got {self.env.kind!r}")
        if self.steps < 0:
            raise ConfigError(f"steps: must be >= 0, got {self.steps}")
        if self.env.n_eval < 0:
            raise ConfigError(f"env.n_eval: must be >= 0, got {self.env.n_eval}")
        if self.env.prediction not in ("expected", "modal"):
            raise ConfigError(f"env.prediction: expected 'expected' or 'modal', got {self.env.prediction!r}")
        unknown_builds = set(self.corpus.build) - {"single", "pair"}
        if unknown_builds:
            raise ConfigError(f"corpus.build: unknown corpus kind(s) {sorted(unknown_builds)}")
        if self.enhance.enabled and not Objective(self.objective).is_grpo:
            raise ConfigError("enhance.enabled: the enhancement stage follows a GRPO objective")
        for name, path in self.paths.provided().items():
            if not Path(path).exists():
                raise ConfigError(f"paths.{name}: file not found: {path}")
        try:
            self.env.range
            self.corpus.to_spec()
        except EvalToolkitError as e:
            raise ConfigError(str(e))
        return self

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.optimizer.learning_rate,
            batch_size=self.optimizer.batch_size,
            grpo=self.grpo,
            ranking=self.ranking,
            binary_tolerance=self.reward.binary_tolerance,
            single_bins=self.env.single_bins,
            single_range=self.env.range,
            pair_bins=self.env.pair_bins,
            init_scale=self.optimizer.init_scale,
            prediction=self.env.prediction,
            tie_band=self.env.tie_band,
            log_interval=self.optimizer.log_interval,
            checkpoint_interval=self.optimizer.checkpoint_interval,
            progress=self.optimizer.progress,
        )

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a JSON object, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        key = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"{key}: unknown configuration key")

    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        key = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, key)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as e:
        raise ConfigError(f"{path or 'config'}: {e}")
    except (EvalToolkitError, TypeError) as e:
        raise ConfigError(f"{path or 'config'}: {e}")


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Load and validate a run configuration; None gives the defaults."""
    if path is None:
        return RunConfig().validate()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON (line {e.lineno}): {e.msg}")
    except UnicodeDecodeError as e:
        raise ConfigError(f"config file {path} is not valid UTF-8 (byte offset {e.start})")
    return config_from_dict(data)


def apply_overrides(cfg: RunConfig, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    """Apply --seed / --out; the output directory falls back to EVAL_RL_OUTPUT_DIR."""
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.output_dir = out
    elif os.environ.get(OUTPUT_DIR_ENV):
        cfg.output_dir = os.environ[OUTPUT_DIR_ENV]
    return cfg
