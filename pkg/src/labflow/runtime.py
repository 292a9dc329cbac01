"""Fixed-rate control loop with asynchronous chunk prediction and temporal ensembling.

One predictor produces chunks; one executor consumes them. The executor ticks the
simulator every control period and never waits: when no buffered chunk covers the
current tick it repeats the last command (a stall).
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .dataset import EpisodeRecord, chunk_indices, denormalize_action, normalize_action, window_indices
from .encoders import ObservationWindow
from .errors import BufferOrderError
from .models.common import ACTION_DIM, LEFT_GRIPPER_DIM, LEFT_JOINT_DIMS, RIGHT_GRIPPER_DIM, RIGHT_JOINT_DIMS, RuntimeMode
from .models.config import EnsembleConfig, RuntimeConfig, TaskSpec
from .models.dataset import NormalizationStats
from .models.reports import EpisodeResult
from .simlab import HOME_JOINTS, SimState, evaluate_state, perturb, render_views, reset, step

logger = logging.getLogger(__name__)


class ChunkPredictor(Protocol):
    @property
    def horizon(self) -> int: ...

    def predict(self, window: ObservationWindow, rng: np.random.Generator) -> np.ndarray: ...


def home_action() -> np.ndarray:
    """Raw command that holds both arms at home with open grippers."""
    action = np.zeros(ACTION_DIM)
    action[list(LEFT_JOINT_DIMS)] = HOME_JOINTS[0]
    action[list(RIGHT_JOINT_DIMS)] = HOME_JOINTS[1]
    action[[LEFT_GRIPPER_DIM, RIGHT_GRIPPER_DIM]] = 1.0
    return action


@dataclass(frozen=True)
class BufferEntry:
    anchor: int
    chunk: np.ndarray  # (H, 14) normalized
    version: int


class ChunkBuffer:
    """Bounded, anchor-ordered chunk store; the oldest entry is evicted at capacity."""

    def __init__(self, capacity: int = 4):
        if capacity < 1:
            raise ValueError("buffer capacity must be at least 1")
        self.capacity = capacity
        self._entries: deque[BufferEntry] = deque(maxlen=capacity)
        self._next_version = 0
        self._lock = threading.Lock()
        self.last_command: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[BufferEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def submit(self, anchor: int, chunk: np.ndarray) -> BufferEntry:
        with self._lock:
            if self._entries and anchor < self._entries[-1].anchor:
                raise BufferOrderError(f"chunk anchored at {anchor} is older than the newest buffered anchor {self._entries[-1].anchor}")
            entry = BufferEntry(anchor, np.asarray(chunk, dtype=np.float64), self._next_version)
            self._next_version += 1
            self._entries.append(entry)
            return entry


def submit_chunk(buffer: ChunkBuffer, anchor_step: int, chunk: np.ndarray) -> ChunkBuffer:
    buffer.submit(anchor_step, chunk)
    return buffer


@dataclass
class TickOutput:
    command: np.ndarray
    stalled: bool
    candidates: np.ndarray  # (k, 14); empty on a stall
    weights: np.ndarray


def ensemble_weights(ages: np.ndarray, cfg: EnsembleConfig) -> np.ndarray:
    """exp(-m * age), newest heaviest; reversed with ``prefer_oldest``."""
    ages = np.asarray(ages, dtype=np.float64)
    if cfg.prefer_oldest:
        return np.exp(-cfg.decay * (cfg.horizon - 1 - ages))
    return np.exp(-cfg.decay * ages)


def control_tick(buffer: ChunkBuffer, step: int, cfg: EnsembleConfig, fallback: np.ndarray | None = None) -> TickOutput:
    """Weighted average of every buffered row that targets ``step``."""
    valid = [e for e in buffer.entries if 0 <= step - e.anchor < min(cfg.horizon, len(e.chunk))]
    if not valid:
        if buffer.last_command is not None:
            command = buffer.last_command.copy()
        elif fallback is not None:
            command = np.asarray(fallback, dtype=np.float64).copy()
        else:
            command = np.zeros(ACTION_DIM)
        buffer.last_command = command
        return TickOutput(command, True, np.zeros((0, ACTION_DIM)), np.zeros(0))
    ages = np.array([step - e.anchor for e in valid])
    candidates = np.stack([e.chunk[a] for e, a in zip(valid, ages, strict=True)])
    weights = ensemble_weights(ages, cfg)
    command = weights @ candidates / weights.sum()
    buffer.last_command = command
    return TickOutput(command, False, candidates, weights)


class PlaybackPredictor:
    """Replays a recorded demonstration open-loop, ignoring the observation."""

    def __init__(self, episode: EpisodeRecord, stats: NormalizationStats, horizon: int = 32):
        self.episode = episode
        self.stats = stats
        self._horizon = horizon

    @property
    def horizon(self) -> int:
        return self._horizon

    def predict(self, window: ObservationWindow, rng: np.random.Generator) -> np.ndarray:
        n = self.episode.num_steps
        rows = chunk_indices(min(window.step, n - 1), self._horizon, n)
        return normalize_action(self.episode.actions[rows], self.stats)


@dataclass
class EpisodeTrajectory:
    result: EpisodeResult
    commands: np.ndarray  # (ticks, 14) normalized
    stalled: np.ndarray  # (ticks,) bool
    candidate_lo: np.ndarray  # (ticks, 14), NaN on stalled ticks
    candidate_hi: np.ndarray
    final_state: SimState
    states: list[SimState] = field(default_factory=list)


class _EpisodeRun:
    """Executor-side state shared by the simulated and wall-clock schedules."""

    def __init__(
        self,
        spec: TaskSpec,
        runtime_cfg: RuntimeConfig,
        stats: NormalizationStats,
        prompt_ids: list[int],
        seed: int,
        window: int,
        resolution: int,
        horizon: int,
        stop_on_success: bool,
        keep_states: bool,
    ):
        self.spec = spec
        self.runtime_cfg = runtime_cfg
        self.ensemble = runtime_cfg.ensemble
        self.stats = stats
        self.prompt_ids = prompt_ids
        self.seed = seed
        self.window = window
        self.resolution = resolution
        self.horizon = horizon
        self.stop_on_success = stop_on_success
        self.keep_states = keep_states

        self.state = reset(spec, seed)
        self.buffer = ChunkBuffer(self.ensemble.capacity)
        self.fallback = normalize_action(home_action(), stats)
        self.frames: list[np.ndarray] = []
        self.states: list[SimState] = [self.state] if keep_states else []
        self.commands: list[np.ndarray] = []
        self.stalls: list[bool] = []
        self.lo: list[np.ndarray] = []
        self.hi: list[np.ndarray] = []
        self.latencies: list[float] = []
        self.predictions = 0
        self.stall_run = 0
        self.max_stall_run = 0
        self.stalled_after_first = 0
        self.perturbed = False
        self.success = False

    def observe(self, t: int) -> None:
        if self.runtime_cfg.perturb and not self.perturbed and t >= self.spec.perturb_step:
            self.state, self.perturbed = perturb(self.state, self.spec.perturb_magnitude)
        self.frames.append(render_views(self.state, self.resolution))

    def snapshot(self, t: int) -> ObservationWindow:
        frames = np.stack([self.frames[s] for s in window_indices(t, self.window)])
        return ObservationWindow(frames=frames, prompt_ids=list(self.prompt_ids), step=t)

    def submit(self, anchor: int, chunk: np.ndarray, latency: float) -> None:
        self.buffer.submit(anchor, chunk)
        self.predictions += 1
        self.latencies.append(latency)

    def execute(self, t: int) -> bool:
        """Run one executor tick; True when the episode should end early."""
        out = control_tick(self.buffer, t, self.ensemble, self.fallback)
        self.commands.append(out.command)
        self.stalls.append(out.stalled)
        if out.stalled:
            self.lo.append(np.full(ACTION_DIM, np.nan))
            self.hi.append(np.full(ACTION_DIM, np.nan))
            if self.predictions:
                self.stalled_after_first += 1
                self.stall_run += 1
                self.max_stall_run = max(self.max_stall_run, self.stall_run)
        else:
            self.lo.append(out.candidates.min(axis=0))
            self.hi.append(out.candidates.max(axis=0))
            self.stall_run = 0
        self.state = step(self.state, denormalize_action(out.command, self.stats), self.spec)
        if self.keep_states:
            self.states.append(self.state)
        self.success, _ = evaluate_state(self.state, self.spec)
        return self.stop_on_success and self.success

    def finish(self) -> EpisodeTrajectory:
        success, metrics = evaluate_state(self.state, self.spec)
        result = EpisodeResult(
            seed=self.seed,
            success=success,
            metrics=metrics,
            ticks=len(self.commands),
            stalled_ticks=int(sum(self.stalls)),
            stalled_after_first_chunk=self.stalled_after_first,
            max_stall_run=self.max_stall_run,
            runtime_stall=self.max_stall_run > self.horizon,
            predictions=self.predictions,
            mean_latency=float(np.mean(self.latencies)) if self.latencies else 0.0,
            perturbed=self.perturbed,
        )
        if result.runtime_stall:
            logger.warning("runtime stall in episode seed %d: %d consecutive ticks without a chunk", self.seed, self.max_stall_run)
        return EpisodeTrajectory(
            result=result,
            commands=np.stack(self.commands) if self.commands else np.zeros((0, ACTION_DIM)),
            stalled=np.array(self.stalls, dtype=bool),
            candidate_lo=np.stack(self.lo) if self.lo else np.zeros((0, ACTION_DIM)),
            candidate_hi=np.stack(self.hi) if self.hi else np.zeros((0, ACTION_DIM)),
            final_state=self.state,
            states=self.states,
        )


def _run_simulated(run: _EpisodeRun, predictor: ChunkPredictor, rng: np.random.Generator, latency: int) -> None:
    """Single-threaded interleaving: a prediction started at tick t lands at t + latency."""
    pending: tuple[int, int, np.ndarray] | None = None  # (ready tick, anchor, chunk)
    for t in range(run.spec.cap):
        run.observe(t)
        if pending is not None and pending[0] <= t:
            run.submit(pending[1], pending[2], latency)
            pending = None
        if pending is None:
            chunk = predictor.predict(run.snapshot(t), rng)
            pending = (t + latency, t, chunk)
            if latency == 0:
                run.submit(t, chunk, 0)
                pending = None
        if run.execute(t):
            break


def _run_wall_clock(run: _EpisodeRun, predictor: ChunkPredictor, rng: np.random.Generator) -> None:
    """The predictor runs on one background worker; the executor only polls it."""
    period = 1.0 / run.spec.rate_hz
    future: Future[np.ndarray] | None = None
    anchor, started = 0, 0.0
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="labflow-predictor") as pool:
        deadline = time.monotonic()
        for t in range(run.spec.cap):
            run.observe(t)
            if future is not None and future.done():
                run.submit(anchor, future.result(), time.monotonic() - started)
                future = None
            if future is None:
                anchor, started = t, time.monotonic()
                future = pool.submit(predictor.predict, run.snapshot(t), rng)
            done = run.execute(t)
            deadline += period
            time.sleep(max(0.0, deadline - time.monotonic()))
            if done:
                break
        if future is not None:
            future.cancel()


def run_episode(
    predictor: ChunkPredictor,
    spec: TaskSpec,
    runtime_cfg: RuntimeConfig,
    stats: NormalizationStats,
    prompt_ids: list[int],
    seed: int,
    *,
    window: int = 2,
    resolution: int = 64,
    latency: int | None = None,
    stop_on_success: bool = True,
    keep_states: bool = False,
) -> EpisodeTrajectory:
    """Roll one episode out under the configured schedule.

    In simulated mode ``latency`` (default: ``runtime_cfg.latency_ticks``) is the number
    of ticks each prediction takes, and the whole rollout is a pure function of
    (seed, latency). The predictor's noise stream is seeded from ``seed``.
    """
    run = _EpisodeRun(spec, runtime_cfg, stats, prompt_ids, seed, window, resolution, predictor.horizon, stop_on_success, keep_states)
    rng = np.random.default_rng([seed, 0xF10])
    if runtime_cfg.mode == RuntimeMode.WALL_CLOCK:
        _run_wall_clock(run, predictor, rng)
    else:
        _run_simulated(run, predictor, rng, runtime_cfg.latency_ticks if latency is None else latency)
    return run.finish()
