import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.errors import (
    ConfigError,
    CorpusFormatError,
    DivergenceError,
    EvalToolkitError,
    InvalidValueError,
    TemplateError,
)
from ..core.types import (
    EvalTask,
    EvaluationRecord,
    PreferenceChoice,
    ScoreRange,
    resolve_dimension,
)
from ..data.corpus import build_pair_corpus, build_single_corpus, corpus_statistics, stratum_targets
from ..data.io import decode_line, load_corpus, save_corpus
from ..metrics.rank_correlation import metric_report
from ..objectives.trainer import Objective, TrainingReport, rejection_sample_enhance, train
from ..prompts.assembler import assemble_prompt, get_dimension, load_template
from ..rewards.functions import parse_tagged_output
from ..simulation.environment import (
    make_dimension_sources,
    make_synthetic_pair_env,
    make_synthetic_rated_items,
    make_synthetic_single_env,
)
from ..utils.evaluation import AblationEvaluator, plot_training_curves
from ..utils.logging import configure_logging, get_logger
from .config import RunConfig, apply_overrides, load_config

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_DIVERGED = 3

DEFAULT_OUTPUT_DIR = "outputs"


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir or DEFAULT_OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: Dict[str, Any]):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _manifest(cfg: RunConfig, command: str, **extra) -> Dict[str, Any]:
    return {"command": command, "seed": cfg.seed, "config": cfg.to_dict(), **extra}


# ---------------------------------------------------------------- build-corpus


def cmd_build_corpus(cfg: RunConfig) -> Dict[str, Any]:
    """
    Build the single-wise and/or pairwise corpora and write them with a manifest.

    Sources are the JSONL files named in paths when given, otherwise synthetic
    generators seeded from the run seed.
    """
    out = _out_dir(cfg)
    spec = cfg.corpus.to_spec()
    corpus_cfg = cfg.corpus
    single, pairs = [], []
    artifacts = {}

    if "single" in corpus_cfg.build:
        if cfg.paths.single_source:
            source = load_corpus(cfg.paths.single_source, "single", cfg.env.feature_dim)
        else:
            source = make_dimension_sources(
                cfg.env.feature_dim,
                corpus_cfg.source_per_dimension,
                spec.dimensions,
                corpus_cfg.source_noise_sd,
                cfg.env.range,
                cfg.seed,
            )
        single = build_single_corpus(source, spec, cfg.seed)
        save_corpus(single, out / "corpus" / "single.jsonl")
        artifacts["single"] = "corpus/single.jsonl"

    if "pair" in corpus_cfg.build:
        if cfg.paths.rated_items:
            items = load_corpus(cfg.paths.rated_items, "rated", cfg.env.feature_dim)
        else:
            items = make_synthetic_rated_items(
                cfg.env.feature_dim, corpus_cfg.n_prompts, corpus_cfg.items_per_prompt, cfg.seed
            ).tasks
        pairs = build_pair_corpus(items, spec, cfg.seed)
        save_corpus(pairs, out / "corpus" / "pairs.jsonl")
        artifacts["pairs"] = "corpus/pairs.jsonl"

    statistics = corpus_statistics(single, pairs)
    manifest = _manifest(
        cfg,
        "build-corpus",
        artifacts=artifacts,
        statistics=statistics,
        stratum_targets={str(k): v for k, v in stratum_targets(spec).items()},
    )
    _write_json(out / "manifest.json", manifest)
    logger.info(f"Built {statistics['single_total']} single-wise tasks and {statistics['pair_total']} pairs in {out}")
    return manifest


# ---------------------------------------------------------------- train


def _synthetic_tasks(cfg: RunConfig, seed: int) -> Tuple[List[EvalTask], List[EvalTask]]:
    env_cfg = cfg.env
    env_seed = env_cfg.seed if env_cfg.seed is not None else seed
    train_tasks: List[EvalTask] = []
    eval_tasks: List[EvalTask] = []
    if env_cfg.kind in ("single", "mixed"):
        env = make_synthetic_single_env(
            env_cfg.feature_dim,
            env_cfg.n_tasks + env_cfg.n_eval,
            env_cfg.noise_sd,
            env_cfg.range,
            env_seed,
            dimension=resolve_dimension(env_cfg.dimension),
        )
        fit, held_out = env.split(env_cfg.n_eval)
        train_tasks += fit
        eval_tasks += held_out
    if env_cfg.kind in ("pair", "mixed"):
        env = make_synthetic_pair_env(
            env_cfg.feature_dim,
            env_cfg.n_pairs + env_cfg.n_eval,
            seed=env_seed + 1 if env_cfg.kind == "mixed" else env_seed,
            mode=env_cfg.pair_mode,
            flip_prob=env_cfg.flip_prob,
        )
        fit, held_out = env.split(env_cfg.n_eval)
        train_tasks += fit
        eval_tasks += held_out
    return train_tasks, eval_tasks


def _corpus_tasks(cfg: RunConfig) -> Tuple[List[EvalTask], List[EvalTask]]:
    paths = cfg.paths
    train_tasks: List[EvalTask] = []
    eval_tasks: List[EvalTask] = []
    for path, kind, target in (
        (paths.train_single, "single", train_tasks),
        (paths.train_pairs, "pair", train_tasks),
        (paths.eval_single, "single", eval_tasks),
        (paths.eval_pairs, "pair", eval_tasks),
    ):
        if path:
            target.extend(load_corpus(path, kind, cfg.env.feature_dim))
    if not eval_tasks and cfg.env.n_eval and len(train_tasks) > cfg.env.n_eval:
        cut = len(train_tasks) - cfg.env.n_eval
        train_tasks, eval_tasks = train_tasks[:cut], train_tasks[cut:]
    return train_tasks, eval_tasks


def load_tasks(cfg: RunConfig, seed: Optional[int] = None) -> Tuple[List[EvalTask], List[EvalTask]]:
    """Training and held-out tasks: corpus files when configured, else the synthetic environment."""
    if cfg.paths.train_single or cfg.paths.train_pairs:
        return _corpus_tasks(cfg)
    return _synthetic_tasks(cfg, cfg.seed if seed is None else seed)


def _save_checkpoints(report: TrainingReport, out: Path, offset: int = 0) -> List[str]:
    written = []
    for step, params in sorted(report.checkpoints.items()):
        name = f"checkpoints/step_{step + offset:06d}.json"
        params.save(out / name)
        written.append(name)
    return written


def cmd_train(cfg: RunConfig) -> Dict[str, Any]:
    """
    Train one evaluator and persist checkpoints, curve, report and manifest.

    With enhance.enabled the trained policy selects hard tasks by rejection
    sampling and training continues on them; the curve then holds both stages.
    """
    out = _out_dir(cfg)
    (out / "checkpoints").mkdir(exist_ok=True)
    objective = Objective(cfg.objective)
    training_cfg = cfg.training_config()
    train_tasks, eval_tasks = load_tasks(cfg)

    try:
        report = train(objective, train_tasks, training_cfg, cfg.steps, cfg.seed, eval_tasks)
    except DivergenceError as e:
        _write_json(out / "manifest.json", _manifest(cfg, "train", diverged_at=e.step, last_finite_step=e.last_finite_step))
        raise

    curves = {"main": report.curve_frame()}
    checkpoints = _save_checkpoints(report, out)
    stages = [{"stage": "main", "steps": cfg.steps, "tasks": len(train_tasks)}]
    final = report

    if cfg.enhance.enabled:
        kept = rejection_sample_enhance(
            report.final_params,
            train_tasks,
            threshold=cfg.enhance.threshold,
            budget=cfg.enhance.budget,
            group_size=cfg.enhance.group_size,
            seed=cfg.seed,
            kind=objective.reward_kind(training_cfg.binary_tolerance),
            std_epsilon=training_cfg.grpo.std_epsilon,
        )
        save_corpus(kept, out / "corpus" / "enhanced.jsonl")
        try:
            final = train(
                objective, kept, training_cfg, cfg.enhance.steps, cfg.seed + 1, eval_tasks, init_params=report.final_params
            )
        except DivergenceError as e:
            _write_json(
                out / "manifest.json",
                _manifest(cfg, "train", diverged_at=cfg.steps + e.step, last_finite_step=e.last_finite_step),
            )
            raise
        enhanced_curve = final.curve_frame()
        enhanced_curve["step"] += cfg.steps
        curves["enhance"] = enhanced_curve
        checkpoints += _save_checkpoints(final, out, offset=cfg.steps)
        stages.append({"stage": "enhance", "steps": cfg.enhance.steps, "tasks": len(kept)})

    curve = pd.concat(list(curves.values()), ignore_index=True)
    curve.to_csv(out / "curve.csv", index=False, float_format="%.12g")
    final.final_params.save(out / "checkpoints" / "final.json")
    plot_training_curves(curves, save_path=str(out / "training_curves.png"))

    result = {
        "objective": objective.value,
        "seed": cfg.seed,
        "train_tasks": len(train_tasks),
        "eval_tasks": len(eval_tasks),
        "initial_metrics": report.initial_metrics.to_dict() if report.initial_metrics else None,
        "final_metrics": final.final_metrics.to_dict() if final.final_metrics else None,
        "final_metrics_by_group": {key: m.to_dict() for key, m in final.final_groups.items()},
        "stages": stages,
    }
    _write_json(out / "report.json", result)
    _write_json(
        out / "manifest.json",
        _manifest(cfg, "train", artifacts=["curve.csv", "report.json", "checkpoints/final.json"] + checkpoints),
    )
    logger.info(f"Training finished; final metrics: {result['final_metrics']}")
    return result


# ---------------------------------------------------------------- ablate


def cmd_ablate(cfg: RunConfig) -> Dict[str, Any]:
    """
    Train both ablation arms on shared environments and seeds and compare them.

    Each seed builds one environment used by both arms; batch selection and
    group sampling depend only on the seed, so arms see the same tasks per step.
    """
    out = _out_dir(cfg)
    training_cfg = cfg.training_config()
    metric = cfg.ablation.metric or ("preference_accuracy" if cfg.env.kind == "pair" else "spearman_rho")
    evaluator = AblationEvaluator(cfg.ablation.arms, metric)
    runs: Dict[str, Dict[str, Any]] = {arm: {} for arm in cfg.ablation.arms}

    for seed in cfg.ablation.seeds:
        train_tasks, eval_tasks = load_tasks(cfg, seed)
        if not eval_tasks:
            raise ConfigError("ablate compares held-out metrics; set env.n_eval > 0 or provide eval paths")
        for arm in cfg.ablation.arms:
            report = train(Objective(arm), train_tasks, training_cfg, cfg.steps, seed, eval_tasks)
            evaluator.add_run(arm, seed, report.final_metrics)
            runs[arm][str(seed)] = {
                **report.final_metrics.to_dict(),
                "by_group": {key: m.to_dict() for key, m in report.final_groups.items()},
            }
            logger.info(f"seed {seed} {arm}: {metric}={getattr(report.final_metrics, metric)}")

    comparison = evaluator.compare_arms()
    summary = evaluator.summarize(comparison)
    comparison.to_csv(out / "ablation.csv", index=False, float_format="%.12g")
    evaluator.generate_report(comparison, str(out / "ablation_report.md"))
    evaluator.plot_comparison(comparison, save_path=str(out / "ablation.png"))

    mean_delta = summary["mean_delta"]
    if mean_delta is not None and mean_delta < 0:
        if metric == "preference_accuracy" and mean_delta > -0.01:
            logger.warning(f"{cfg.ablation.arms[0]} trails {cfg.ablation.arms[1]} by {-mean_delta:.4f} (< 0.01)")
        else:
            logger.warning(f"{cfg.ablation.arms[0]} does not beat {cfg.ablation.arms[1]} (mean delta {mean_delta:.4f})")

    result = {
        "summary": summary,
        "per_seed": comparison.replace({np.nan: None}).to_dict(orient="records"),
        "runs": runs,
    }
    _write_json(out / "report.json", result)
    _write_json(
        out / "manifest.json",
        _manifest(cfg, "ablate", artifacts=["ablation.csv", "ablation_report.md", "ablation.png", "report.json"]),
    )
    return result


# ---------------------------------------------------------------- metrics


def load_metric_rows(path, mode: str = "single"):
    """
    Read evaluation rows for the metrics command.

    Each row has task_id, reference and either predicted (a number) or
    predicted_text (a raw tagged model output); reference_choice (A/B/T) is
    optional. Unparseable outputs are counted, not raised.

    Returns:
        (records, choices, unparsed) where choices pairs predicted confidences
        with reference choices
    """
    records: List[EvaluationRecord] = []
    conf: List[float] = []
    choices: List[PreferenceChoice] = []
    unparsed = 0
    with open(path, "rb") as f:
        for line_number, raw in enumerate(f, start=1):
            line = decode_line(raw, line_number)
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"malformed JSON ({e.msg})", line_number=line_number)
            if not isinstance(row, dict):
                raise CorpusFormatError("each line must be a JSON object", line_number=line_number)
            for name in ("task_id", "reference"):
                if name not in row:
                    raise CorpusFormatError(f"missing field '{name}'", line_number=line_number, field=name)
            if "predicted" in row:
                predicted = row["predicted"]
            elif "predicted_text" in row:
                predicted = parse_tagged_output(str(row["predicted_text"]), mode)
                if predicted is None:
                    unparsed += 1
                    continue
            else:
                raise CorpusFormatError(
                    "missing field 'predicted' or 'predicted_text'", line_number=line_number, field="predicted"
                )
            try:
                records.append(EvaluationRecord(str(row["task_id"]), predicted, row["reference"]))
                if row.get("reference_choice") is not None:
                    choices.append(PreferenceChoice(row["reference_choice"]))
                    conf.append(min(max(float(predicted), 0.0), 1.0))
            except (EvalToolkitError, ValueError, TypeError) as e:
                raise CorpusFormatError(f"invalid value: {e}", line_number=line_number)
    return records, (conf, choices), unparsed


def cmd_metrics(path, mode: str = "single", tie_band: float = 0.0, exclude_ties: bool = False) -> Dict[str, Any]:
    records, (conf, choices), unparsed = load_metric_rows(path, mode)
    report = metric_report(
        records,
        predicted_conf=conf or None,
        reference_choice=choices or None,
        tie_band=tie_band,
        exclude_ties=exclude_ties,
        n_unparsed=unparsed,
    )
    return report.to_dict()


# ---------------------------------------------------------------- render-prompt


def cmd_render_prompt(
    dimensions: Sequence[str],
    mode: str = "single",
    score_range: Optional[Sequence[float]] = None,
    prompt_text: Optional[str] = None,
    template: Optional[str] = None,
) -> str:
    if not dimensions:
        raise TemplateError("at least one --dimension is required")
    specs = [get_dimension(name) for name in dimensions]
    override = None
    if score_range is not None:
        try:
            override = ScoreRange(score_range[0], score_range[1])
        except InvalidValueError as e:
            raise TemplateError(f"invalid range: {e}")
    return assemble_prompt(load_template(template or mode), specs, prompt_text, mode, override)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py", description="Graded-reward evaluator training toolkit"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", type=str, default=None, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", type=str, default=None, help="output directory")

    run_flags(sub.add_parser("build-corpus", help="build the training corpora"))
    run_flags(sub.add_parser("train", help="train an evaluator policy"))
    run_flags(sub.add_parser("ablate", help="continuous vs binary reward ablation"))

    metrics = sub.add_parser("metrics", help="rank correlations of evaluation records")
    metrics.add_argument("records", type=str, help="JSONL file of evaluation records")
    metrics.add_argument("--mode", choices=["single", "pair"], default="single")
    metrics.add_argument("--tie-band", type=float, default=0.0)
    metrics.add_argument("--exclude-ties", action="store_true")

    render = sub.add_parser("render-prompt", help="render an evaluation prompt")
    render.add_argument("--config", type=str, default=None)
    render.add_argument("--dimension", action="append", default=None, help="dimension name (repeatable)")
    render.add_argument("--mode", choices=["single", "pair"], default=None)
    render.add_argument("--range", type=float, nargs=2, default=None, metavar=("MIN", "MAX"))
    render.add_argument("--prompt-text", type=str, default=None)
    render.add_argument("--template", type=str, default=None, help="template JSON file")
    render.add_argument("--out", type=str, default=None, help="write prompt.txt into this directory")
    return parser


def _render_from_args(args, parser) -> str:
    prompt_cfg = load_config(args.config).prompt if args.config else None
    dimensions = args.dimension or (prompt_cfg.dimensions if prompt_cfg else [])
    if not dimensions:
        parser.error("render-prompt: --dimension is required")
    mode = args.mode or (prompt_cfg.mode if prompt_cfg else "single")
    score_range = args.range or (prompt_cfg.range if prompt_cfg else None)
    prompt_text = args.prompt_text if args.prompt_text is not None else (prompt_cfg.prompt_text if prompt_cfg else None)
    template = args.template or (prompt_cfg.template if prompt_cfg else None)
    return cmd_render_prompt(dimensions, mode, score_range, prompt_text, template)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging("DEBUG" if args.verbose else "INFO")

    try:
        if args.command == "metrics":
            report = cmd_metrics(args.records, args.mode, args.tie_band, args.exclude_ties)
            sys.stdout.write(json.dumps(report, indent=2) + "\n")
        elif args.command == "render-prompt":
            text = _render_from_args(args, parser)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "prompt.txt").write_text(text, encoding="utf-8")
            else:
                sys.stdout.write(text)
        else:
            cfg = apply_overrides(load_config(args.config), args.seed, args.out)
            command = {"build-corpus": cmd_build_corpus, "train": cmd_train, "ablate": cmd_ablate}[args.command]
            command(cfg)
    except DivergenceError as e:
        logger.error(str(e))
        return EXIT_DIVERGED
    except (EvalToolkitError, FileNotFoundError) as e:
        logger.error(str(e))
        return EXIT_INPUT_ERROR
    return EXIT_OK
