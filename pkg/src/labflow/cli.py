"""Command-line entry point: ``labflow collect|train|eval|ablate|inspect``.

Results go to stdout as JSON; failures print one JSON line to stderr and exit with 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from .errors import LabflowError
from .experiments import ABLATION_MODES, cmd_ablate, cmd_collect, cmd_eval, cmd_inspect, cmd_train
from .models.common import PromptVariant, TaskId
from .models.config import PROFILES, RunConfig, load_config

logger = logging.getLogger("labflow")


def _config(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labflow", description="Desk-scale flow-matching imitation learning workbench")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--no-progress", action="store_true", help="Disable progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="Record scripted-expert demonstrations")
    p.add_argument("--config", help="Run config YAML (defaults: desk profile)")
    p.add_argument("--task", choices=[t.value for t in TaskId])
    p.add_argument("--count", type=int)
    p.add_argument("--out", help="Dataset directory (must not hold a dataset yet)")

    p = sub.add_parser("train", help="Train a policy on a dataset")
    p.add_argument("--config")
    p.add_argument("--data", help="Dataset directory")
    p.add_argument("--out", help="Run directory for checkpoints and logs")
    p.add_argument("--resume", help="Checkpoint to continue from")
    p.add_argument("--iterations", type=int, help="Stop after this many micro-batch iterations")

    p = sub.add_parser("eval", help="Closed-loop evaluation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", help="Run config; defaults to the one stored in the checkpoint")
    p.add_argument("--episodes", type=int)
    p.add_argument("--latency", type=int, help="Predictor latency in ticks (simulated mode)")
    p.add_argument("--perturb", action="store_true", help="Jolt the held object mid-episode")
    p.add_argument("--prompt-variant", choices=[v.value for v in PromptVariant])
    p.add_argument("--playback", help="Replay this recorded episode open-loop instead of the policy")
    p.add_argument("--report", help="JSON-lines output, one row per episode")

    p = sub.add_parser("ablate", help="Prompt or encoder ablation")
    p.add_argument("--mode", required=True, choices=list(ABLATION_MODES))
    p.add_argument("--config")
    p.add_argument("--data", help="Shared dataset; collected when missing")
    p.add_argument("--out")
    p.add_argument("--episodes", type=int)
    p.add_argument("--iterations", type=int)

    p = sub.add_parser("inspect", help="Parameter counts per module")
    p.add_argument("--ckpt")
    p.add_argument("--profile", choices=sorted(PROFILES))
    return parser


def run(args: argparse.Namespace) -> object:
    progress = not args.no_progress
    if args.command == "collect":
        task = TaskId(args.task) if args.task else None
        return {"dataset": str(cmd_collect(_config(args.config), out=args.out, task=task, count=args.count, progress=progress))}
    if args.command == "train":
        ckpt = cmd_train(_config(args.config), data_dir=args.data, out_dir=args.out, resume=args.resume, iterations=args.iterations, progress=progress)
        return {"checkpoint": str(ckpt)}
    if args.command == "eval":
        report = cmd_eval(
            load_config(args.config) if args.config else None,
            args.ckpt,
            episodes=args.episodes,
            latency=args.latency,
            perturb=args.perturb,
            prompt_variant=PromptVariant(args.prompt_variant) if args.prompt_variant else None,
            playback=args.playback,
            out=args.report,
            progress=progress,
        )
        return report.summary.model_dump(mode="json")
    if args.command == "ablate":
        rows = cmd_ablate(
            _config(args.config), args.mode, data_dir=args.data, out_dir=args.out, episodes=args.episodes, iterations=args.iterations, progress=progress
        )
        return [row.model_dump(mode="json") for row in rows]
    rows = cmd_inspect(checkpoint=Path(args.ckpt) if args.ckpt else None, profile=args.profile)
    return [row.model_dump(mode="json") for row in rows]


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except LabflowError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
