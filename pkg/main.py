"""
Graded-Reward Evaluator Training
Entry point: with a subcommand it runs the command-line interface, without
one it walks through a short demonstration of the toolkit.
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli.commands import main as cli_main
from src.core.types import OVERALL, ScoreRange, SingleEvalTask
from src.objectives.trainer import Objective, TrainingConfig, train
from src.prompts.assembler import assemble_prompt, get_dimension, load_template
from src.rewards.functions import RewardKind, compute_reward, reward_pair
from src.simulation.environment import make_synthetic_single_env
from src.utils.evaluation import AblationEvaluator, plot_training_curves


def demonstrate_rewards():
    """Show how graded rewards differ from exact-match rewards."""
    print("=" * 60)
    print("REWARD FUNCTIONS")
    print("=" * 60)

    task = SingleEvalTask("demo", (0.0,), OVERALL, ScoreRange(0.0, 10.0), 7.0)
    continuous = RewardKind.continuous()
    binary = RewardKind.binary(0.0)
    print(f"Reference score {task.reference_score} on {task.range.min}-{task.range.max}:")
    for predicted in (7.0, 6.5, 5.0, 2.0):
        print(
            f"  predicted={predicted:<4}  continuous={compute_reward(predicted, task, continuous):.3f}  "
            f"binary={compute_reward(predicted, task, binary):.0f}"
        )
    print(f"Pairwise: predicted 0.9 vs human 1.0 -> reward {reward_pair(0.9, 1.0):.2f}")
    print()


def demonstrate_prompt():
    """Render the four-block prompt of one dimension."""
    print("=" * 60)
    print("EVALUATION PROMPT")
    print("=" * 60)
    print(assemble_prompt(load_template("single"), [get_dimension("overall")], "a red cube on a blue sphere"))


def run_reward_comparison(steps: int = 300):
    """Train with continuous and binary rewards on the same environment and compare."""
    print("=" * 60)
    print("CONTINUOUS VS BINARY REWARD")
    print("=" * 60)

    env = make_synthetic_single_env(4, 1200, noise_sd=1.0, seed=0)
    train_tasks, eval_tasks = env.split(200)
    cfg = TrainingConfig(binary_tolerance=0.25, log_interval=100)
    evaluator = AblationEvaluator(["grpo_continuous", "grpo_binary"], "spearman_rho")

    curves = {}
    for objective in (Objective.GRPO_CONTINUOUS, Objective.GRPO_BINARY):
        print(f"Training {objective.value} for {steps} steps...")
        report = train(objective, train_tasks, cfg, steps, seed=0, eval_tasks=eval_tasks)
        evaluator.add_run(objective.value, 0, report.final_metrics)
        curves[objective.value] = report.curve_frame()

    comparison = evaluator.compare_arms()
    print(comparison.to_string(index=False))

    os.makedirs("results", exist_ok=True)
    plot_training_curves(curves, save_path=os.path.join("results", "training_curves.png"))
    evaluator.generate_report(comparison, os.path.join("results", "ablation_report.md"))
    print("\nFiles generated:")
    print("• results/training_curves.png - Loss and reward curves")
    print("• results/ablation_report.md - Paired comparison report")
    return comparison


def main():
    """Demonstration of the toolkit."""
    print("GRADED-REWARD EVALUATOR TRAINING")
    print("=" * 70)
    print()

    try:
        demonstrate_rewards()
        demonstrate_prompt()
        run_reward_comparison()
    except Exception as e:
        print(f"❌ Error during demonstration: {e}")
        print("Please run: pip install -r requirements.txt")
        return 1

    print("\nFor the full command-line interface run: python main.py --help")
    return 0


if __name__ == "__main__":
    if len(sys.argv) > 1:
        sys.exit(cli_main(sys.argv[1:]))
    sys.exit(main())
