"""Experiment orchestration behind the CLI: collect, train, eval, ablate and inspect.

Every command is a function of (run config, paths, master seed); none of them
writes into a dataset directory it reads from.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from tqdm import tqdm

from .dataset import (
    MANIFEST_FILE,
    STATS_FILE,
    EpisodeRecord,
    compute_norm_stats,
    load_dataset,
    load_episode,
    save_episode,
    save_norm_stats,
    write_manifest,
)
from .encoders import ObservationEncoder, build_vocab, tokenize_prompt
from .errors import ConfigError, ExpertFailureRateError, LabflowError
from .models.common import EncoderStreams, PromptVariant, TaskId
from .models.config import PROFILES, RunConfig, dump_config
from .models.dataset import DatasetManifest, ManifestEntry
from .models.reports import AblationRow, EpisodeResult, EvalReport, EvalSummary, ModuleStructure, StepRecord
from .models.vocabulary import PromptVocab
from .policy import build_policy
from .runtime import ChunkPredictor, PlaybackPredictor, run_episode
from .simlab import collect_episode, prompt_for, reset
from .simlab.tasks import TUBE_COLORS
from .trainer import LOG_FILE, Checkpoint, Trainer
from .validation import check_checkpoint_compatible, validate_with_warnings

logger = logging.getLogger(__name__)

LAST_CHECKPOINT = Path("checkpoints") / "last.safetensors"
REFERENCE_PARAMS = {"adapter": 33_000_000, "action_expert": 45_000_000}
REFERENCE_TOLERANCE = 0.2

PROMPT_ARMS = (
    ("(a) irrelevant", PromptVariant.IRRELEVANT),
    ("(b) concise", PromptVariant.CONCISE),
    ("(c) detailed", PromptVariant.DETAILED),
)
ENCODER_ARMS = (
    ("(i) geometric", EncoderStreams.GEOMETRIC),
    ("(ii) vision-language", EncoderStreams.VISION_LANGUAGE),
    ("(iii) fused", EncoderStreams.FUSED),
)
ABLATION_MODES = ("prompt", "encoder")


def derive_seed(master_seed: int, task: TaskId, index: int) -> int:
    """Layout seed of the index-th collection attempt for a task."""
    return int(np.random.SeedSequence([master_seed, list(TaskId).index(task), index]).generate_state(1)[0])


def task_vocab(task: TaskId) -> PromptVocab:
    """Vocabulary over every prompt the task can issue, so any variant can be evaluated."""
    return build_vocab(prompt_for(task, variant, color) for variant in PromptVariant for color in TUBE_COLORS)


def relabel_prompts(episodes: Sequence[EpisodeRecord], variant: PromptVariant) -> list[EpisodeRecord]:
    return [dataclasses.replace(ep, prompt_text=prompt_for(ep.task_id, variant, ep.goal)) for ep in episodes]


def with_task(config: RunConfig, **changes: object) -> RunConfig:
    return config.model_copy(update={"task": config.task.model_copy(update=changes)})


def with_observation(config: RunConfig, **changes: object) -> RunConfig:
    return config.model_copy(update={"observation": config.observation.model_copy(update=changes)})


def cmd_collect(
    config: RunConfig,
    out: str | Path | None = None,
    task: TaskId | None = None,
    count: int | None = None,
    progress: bool = False,
) -> Path:
    """Scripted-expert rollouts written as episode directories plus ``dataset.json``."""
    spec = config.task if task is None else config.task.model_copy(update={"task": task})
    count = config.collect.count if count is None else count
    root = Path(out or config.paths.data_dir)
    if (root / MANIFEST_FILE).exists():
        raise LabflowError(f"{root} already holds a dataset; collect into a new directory")
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise LabflowError(f"cannot create dataset directory {root}: {e}") from e

    allowed = int(config.collect.max_failure_rate * count)
    entries: list[ManifestEntry] = []
    discarded: list[int] = []
    attempt = 0
    bar = tqdm(total=count, disable=not progress, desc=f"collect {spec.task.value}")
    while len(entries) < count:
        seed = derive_seed(config.master_seed, spec.task, attempt)
        attempt += 1
        rollout = collect_episode(spec, seed, resolution=config.observation.image_size)
        if rollout.record is None:
            discarded.append(seed)
            logger.debug("discarded seed %d (aborted=%s, metrics=%s)", seed, rollout.aborted, rollout.metrics)
            if len(discarded) > allowed:
                raise ExpertFailureRateError(
                    f"expert failed on {len(discarded)} of {attempt} {spec.task.value} rollouts, above the "
                    f"{config.collect.max_failure_rate:.0%} limit for {count} episodes; last failed seed {seed}, metrics {rollout.metrics}"
                )
            continue
        name = f"{spec.task.value}_{len(entries):05d}"
        try:
            save_episode(rollout.record, root / name)
        except OSError as e:
            raise LabflowError(f"cannot write episode {root / name}: {e}") from e
        entries.append(ManifestEntry(name=name, task_id=spec.task, seed=seed, num_steps=rollout.record.num_steps))
        bar.update(1)
    bar.close()

    manifest = DatasetManifest(
        master_seed=config.master_seed,
        prompt_variant=spec.prompt_variant,
        multi_goal=spec.multi_goal,
        episodes=entries,
        discarded_seeds={spec.task.value: discarded},
    )
    write_manifest(manifest, root)
    logger.info("collected %d %s episodes into %s (%d discarded)", len(entries), spec.task.value, root, len(discarded))
    return root


def cmd_train(
    config: RunConfig,
    data_dir: str | Path | None = None,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    iterations: int | None = None,
    progress: bool = False,
) -> Path:
    """Train on the dataset's episodes of the configured task; returns the last checkpoint path."""
    data = Path(data_dir or config.paths.data_dir)
    out = Path(out_dir or config.paths.out_dir)
    _, episodes = load_dataset(data, task=config.task.task)
    episodes = relabel_prompts(episodes, config.task.prompt_variant)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.yaml")

    if resume is not None:
        ckpt = Checkpoint.load(resume)
        check_checkpoint_compatible(ckpt.config, config)
        trainer = Trainer.resume(ckpt, episodes, out_dir=out)
    else:
        stats = compute_norm_stats(episodes)
        for issue in validate_with_warnings(episodes, stats=stats):
            logger.warning("%s: %s", issue.field_path, issue.message)
        trainer = Trainer(config, episodes, stats, task_vocab(config.task.task), out_dir=out)
    save_norm_stats(trainer.stats, out / STATS_FILE)

    last = None
    for last in trainer.train(iterations, progress=progress):
        pass
    path = out / LAST_CHECKPOINT
    if last is None:
        trainer.checkpoint().save(path)
    logger.info("training finished at iteration %d; checkpoint %s", trainer.iteration, path)
    return path


def summarize(results: Sequence[EpisodeResult], config: RunConfig, variant: PromptVariant, latency: int, perturb: bool) -> EvalSummary:
    keys = sorted({k for r in results for k in r.metrics})
    return EvalSummary(
        task=config.task.task,
        prompt_variant=variant,
        episodes=len(results),
        success_rate=float(np.mean([r.success for r in results])) if results else 0.0,
        latency_ticks=latency,
        perturb=perturb,
        stalled_ticks_total=sum(r.stalled_ticks for r in results),
        stalled_after_first_chunk_total=sum(r.stalled_after_first_chunk for r in results),
        runtime_stalls=sum(r.runtime_stall for r in results),
        metric_means={k: float(np.mean([r.metrics[k] for r in results if k in r.metrics])) for k in keys},
    )


def write_eval_report(report: EvalReport, path: str | Path) -> Path:
    """JSON lines, one per episode; the summary goes next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for row in report.episodes:
            f.write(row.model_dump_json() + "\n")
    path.with_suffix(".summary.json").write_text(report.summary.model_dump_json(indent=2))
    return path


def cmd_eval(
    config: RunConfig | None,
    checkpoint: str | Path,
    episodes: int | None = None,
    latency: int | None = None,
    perturb: bool = False,
    prompt_variant: PromptVariant | None = None,
    playback: str | Path | None = None,
    out: str | Path | None = None,
    progress: bool = False,
) -> EvalReport:
    """Closed-loop evaluation of the checkpoint's EMA weights through the async runtime."""
    ckpt = Checkpoint.load(checkpoint)
    config = config or ckpt.config
    check_checkpoint_compatible(ckpt.config, config)
    runner = ckpt.runner(use_ema=True)
    spec = config.task
    variant = prompt_variant or spec.prompt_variant
    runtime_cfg = config.runtime.model_copy(
        update={
            "perturb": perturb or config.runtime.perturb,
            "latency_ticks": config.runtime.latency_ticks if latency is None else latency,
        }
    )
    predictor: ChunkPredictor = runner
    if playback is not None:
        predictor = PlaybackPredictor(load_episode(playback), ckpt.stats, runner.horizon)

    count = runtime_cfg.eval_episodes if episodes is None else episodes
    if count < 1:
        raise ConfigError(f"evaluation needs at least one episode, got {count}")
    results = []
    for i in tqdm(range(count), disable=not progress, desc=f"eval {spec.task.value}"):
        seed = runtime_cfg.eval_seed_offset + i
        goal = reset(spec, seed).goal
        ids = tokenize_prompt(prompt_for(spec.task, variant, goal), runner.vocab)
        traj = run_episode(
            predictor,
            spec,
            runtime_cfg,
            ckpt.stats,
            ids,
            seed,
            window=config.observation.window,
            resolution=config.observation.image_size,
        )
        results.append(traj.result)
    report = EvalReport(summary=summarize(results, config, variant, runtime_cfg.latency_ticks, runtime_cfg.perturb), episodes=results)
    logger.info(
        "eval %s (%s prompt, latency %d): success %.3f over %d episodes",
        spec.task.value,
        variant.value,
        runtime_cfg.latency_ticks,
        report.summary.success_rate,
        count,
    )
    if out is not None:
        write_eval_report(report, out)
    return report


def final_loss(run_dir: str | Path) -> float | None:
    """Loss of the last optimizer step in a run's training log."""
    log = Path(run_dir) / LOG_FILE
    if not log.is_file():
        return None
    lines = log.read_text().splitlines()
    return StepRecord.model_validate_json(lines[-1]).loss if lines else None


def cmd_ablate(
    config: RunConfig,
    mode: str,
    data_dir: str | Path | None = None,
    out_dir: str | Path | None = None,
    episodes: int | None = None,
    iterations: int | None = None,
    progress: bool = False,
) -> list[AblationRow]:
    """Train and evaluate one model per arm; arms share one dataset.

    ``prompt`` re-labels a multi-goal Arrange dataset with each prompt variant;
    ``encoder`` swaps which frozen vision streams feed the adapter.
    """
    if mode not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")
    base = with_task(config, task=TaskId.ARRANGE, multi_goal=True) if mode == "prompt" else config
    out = Path(out_dir or config.paths.out_dir) / f"ablate_{mode}"
    data = Path(data_dir) if data_dir is not None else out / "data"
    if not (data / MANIFEST_FILE).exists():
        cmd_collect(base, out=data, progress=progress)

    arms = [(label, with_task(base, prompt_variant=v)) for label, v in PROMPT_ARMS] if mode == "prompt" else []
    if mode == "encoder":
        arms = [(label, with_observation(base, streams=s)) for label, s in ENCODER_ARMS]

    rows = []
    for label, arm_cfg in arms:
        arm_dir = out / label.split(" ", 1)[1]
        logger.info("ablation arm %s", label)
        ckpt = cmd_train(arm_cfg, data, arm_dir, iterations=iterations, progress=progress)
        report = cmd_eval(arm_cfg, ckpt, episodes=episodes, out=arm_dir / "eval.jsonl", progress=progress)
        rows.append(AblationRow(label=label, success_rate=report.summary.success_rate, episodes=report.summary.episodes, final_loss=final_loss(arm_dir)))

    with open(out / "ablation.jsonl", "w") as f:
        for row in rows:
            f.write(row.model_dump_json() + "\n")
    return rows


def _within(count: int, reference: int | None) -> bool | None:
    if reference is None:
        return None
    return abs(count - reference) <= REFERENCE_TOLERANCE * reference


def cmd_inspect(checkpoint: str | Path | None = None, profile: str | None = None, config: RunConfig | None = None) -> list[ModuleStructure]:
    """Per-module trainable parameter counts and widths.

    Without a checkpoint an untrained model is built from ``config`` or the named profile.
    Under the paper-dims profile the adapter and action expert are compared to their reference sizes.
    """
    if checkpoint is not None:
        ckpt = Checkpoint.load(checkpoint)
        cfg, vocab = ckpt.config, ckpt.vocab
    else:
        if profile is not None and profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
        cfg = config or PROFILES[profile or "desk"]()
        vocab = task_vocab(cfg.task.task)
    policy = build_policy(cfg)
    if checkpoint is not None:
        policy.load_state_dict(ckpt.ema_state)
    encoder = ObservationEncoder(cfg.observation, vocab)
    counts = policy.parameter_counts()
    obs, model = cfg.observation, cfg.model
    compare = cfg.profile == "paper-dims"

    def reference(name: str) -> int | None:
        return REFERENCE_PARAMS[name] if compare else None

    rows = [
        ModuleStructure(
            name="geometric_encoder",
            trainable_params=encoder.geometric.trainable_params,
            dims={"patch_size": obs.geometric.patch_size, "hidden": obs.geometric.hidden_dim, "out": obs.geometric.out_dim},
        ),
        ModuleStructure(
            name="vision_language_encoder",
            trainable_params=encoder.vision_language.trainable_params,
            dims={"patch_size": obs.vision_language.patch_size, "hidden": obs.vision_language.hidden_dim, "out": obs.vision_language.out_dim},
        ),
        ModuleStructure(name="prompt_embedding", trainable_params=0, dims={"vocab": vocab.size, "out": obs.text_dim}),
        ModuleStructure(
            name="adapter",
            trainable_params=counts["adapter"],
            reference_params=reference("adapter"),
            within_tolerance=_within(counts["adapter"], reference("adapter")),
            dims={"embed": model.embed_dim, "ff": model.ff_dim, "heads": model.num_heads, "blocks": model.adapter_blocks, "image_in": obs.image_dim},
        ),
        ModuleStructure(
            name="action_expert",
            trainable_params=counts["action_expert"],
            reference_params=reference("action_expert"),
            within_tolerance=_within(counts["action_expert"], reference("action_expert")),
            dims={
                "embed": model.embed_dim,
                "ff": model.ff_dim,
                "heads": model.num_heads,
                "blocks": model.expert_blocks,
                "cross_attention_blocks": policy.expert.num_cross_attention,
                "horizon": model.horizon,
            },
        ),
    ]
    for row in rows:
        logger.info("%s: %d trainable parameters", row.name, row.trainable_params)
    return rows


def load_report_rows(path: str | Path) -> list[dict[str, object]]:
    """Parse a JSON-lines report file."""
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
