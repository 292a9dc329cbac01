#!/usr/bin/env python3
"""
Run the end-to-end desk experiment.

Collects Arrange demonstrations, trains the desk-profile policy, then evaluates
both an untrained baseline and the trained checkpoint with simulated latency.
Summaries are written next to the run directory.

Run with: poetry run python scripts/run_desk_experiment.py [config.yaml]
"""

import json
import logging
import sys
from pathlib import Path

from labflow.dataset import MANIFEST_FILE, compute_norm_stats, load_dataset
from labflow.errors import LabflowError
from labflow.experiments import cmd_collect, cmd_eval, cmd_train, relabel_prompts, task_vocab
from labflow.models import RunConfig, load_config
from labflow.trainer import Trainer


class DeskExperiment:
    """Collect, train and evaluate one task end to end."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.data_dir = Path(config.paths.data_dir)
        self.out_dir = Path(config.paths.out_dir)

    def collect(self) -> None:
        if (self.data_dir / MANIFEST_FILE).exists():
            print(f"📁 Reusing dataset in {self.data_dir}")
            return
        print(f"\n🤖 Collecting {self.config.collect.count} {self.config.task.task.value} demonstrations...")
        cmd_collect(self.config, out=self.data_dir, progress=True)

    def baseline_checkpoint(self) -> Path:
        """Untrained weights under the same config, stats and vocabulary."""
        _, episodes = load_dataset(self.data_dir, task=self.config.task.task)
        episodes = relabel_prompts(episodes, self.config.task.prompt_variant)
        trainer = Trainer(self.config, episodes, compute_norm_stats(episodes), task_vocab(self.config.task.task))
        return trainer.checkpoint().save(self.out_dir / "baseline.safetensors")

    def evaluate(self, name: str, checkpoint: Path) -> float:
        print(f"\n🎯 Evaluating {name}...")
        report = cmd_eval(self.config, checkpoint, out=self.out_dir / f"eval_{name}.jsonl", progress=True)
        rate = report.summary.success_rate
        print(f"   success {rate:.1%} over {report.summary.episodes} episodes, {report.summary.runtime_stalls} runtime stalls")
        return rate

    def run(self) -> dict[str, float]:
        print("🚀 Desk experiment")
        print("=" * 60)
        self.collect()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        baseline = self.evaluate("baseline", self.baseline_checkpoint())

        print(f"\n🏋️ Training for {self.config.train.total_iterations} iterations...")
        trained = self.evaluate("trained", cmd_train(self.config, self.data_dir, self.out_dir, progress=True))

        summary = {"baseline_success": baseline, "trained_success": trained, "improvement": trained - baseline}
        (self.out_dir / "desk_experiment.json").write_text(json.dumps(summary, indent=2))
        print("\n" + "=" * 60)
        print(f"✅ Trained {trained:.1%} vs untrained {baseline:.1%}")
        return summary


def main() -> int:
    """Main entry point."""
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(sys.argv[1]) if len(sys.argv) > 1 else RunConfig()
        DeskExperiment(config).run()
    except KeyboardInterrupt:
        print("\n⚠️ Experiment interrupted by user")
        return 130
    except LabflowError as e:
        print(f"\n❌ {type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
