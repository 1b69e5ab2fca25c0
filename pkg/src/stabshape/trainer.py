"""Segment-staged training: collect l_s steps, stabilize, finalize rewards,
then run l_s TD updates on uniform replay samples."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import config as cfgmod
from .envs import Env
from .errors import ContractError, InputError, StructuralError, TrainingFault
from .policy import Batch, Planner, WorldModel
from .retarget import MappingTable, bundled_mapping
from .reward import RewardParams, combine_rewards, segment_stabilizing_rewards
from .skeleton import Pose, TrajectorySegment
from .stabilizer import BalanceProjectionReconstructor, IdentityReconstructor, MotionReconstructor

log = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "step",
    "episode",
    "eval_return",
    "train_return",
    "mean_R_S",
    "mean_combined_reward",
    "frac_segments_rewarded",
    "wall_time_s",
    "updates",
    "loss_consistency",
    "loss_reward",
    "loss_value",
    "loss_prior",
]


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    task_reward: float
    s2: np.ndarray
    done: bool  # true termination only; time-limit truncation keeps bootstrapping


@dataclass
class PendingSegment:
    transitions: list
    robot_poses: list  # Pose after each transition
    skeleton: object = None
    finalized: bool = False

    def __len__(self):
        return len(self.transitions)

    def segment(self) -> TrajectorySegment:
        return TrajectorySegment(self.skeleton, tuple(self.robot_poses))


@dataclass
class FinalTransition:
    s: np.ndarray
    a: np.ndarray
    task_reward: float
    stab_reward: float
    reward: float
    s2: np.ndarray
    done: bool


def collect_segment(policy: Callable, env: Env, l_s: int) -> PendingSegment:
    """Step ``env`` with ``policy(obs)`` for up to l_s steps or episode end."""
    if env.done:
        raise ContractError("collect_segment needs a live episode; reset the env first")
    seg = PendingSegment([], [], env.skeleton)
    obs = env.observation()
    for _ in range(l_s):
        a = np.asarray(policy(obs), dtype=float)
        st, r, done = env.step(a)
        terminal = done and env.task.terminated(env.sim)
        seg.transitions.append(Transition(obs, a, float(r), st.observation, bool(terminal)))
        seg.robot_poses.append(st.robot_pose)
        obs = st.observation
        if done:
            break
    return seg


def padded_segment(seg: PendingSegment, min_length: int) -> TrajectorySegment:
    poses = list(seg.robot_poses)
    if len(poses) < min_length:
        poses += [poses[-1]] * (min_length - len(poses))
    return TrajectorySegment(seg.skeleton, tuple(poses))


def stabilizing_rewards(
    seg: PendingSegment,
    mapping: MappingTable | None,
    reconstructor: MotionReconstructor | None,
    params: RewardParams,
) -> np.ndarray:
    """Per-transition R_S; zeros when the stabilizer is bypassed."""
    n = len(seg)
    if reconstructor is None:
        return np.zeros(n)
    padded = padded_segment(seg, reconstructor.min_length)
    return np.asarray(segment_stabilizing_rewards(padded, mapping, reconstructor, params))[:n]


def finalize_segment(
    seg: PendingSegment,
    mapping: MappingTable | None,
    reconstructor: MotionReconstructor | None,
    params: RewardParams,
) -> list:
    """Attach combined rewards; padded frames yield no transitions."""
    if len(seg) < 1:
        raise ValueError("empty segment")
    if seg.finalized:
        raise ContractError("segment already finalized")
    r_s = stabilizing_rewards(seg, mapping, reconstructor, params)
    seg.finalized = True
    out = []
    for tr, rs in zip(seg.transitions, r_s):
        out.append(
            FinalTransition(tr.s, tr.a, tr.task_reward, float(rs), float(combine_rewards(tr.task_reward, rs, params)), tr.s2, tr.done)
        )
    return out


class ReplayBuffer:
    """FIFO store of finalized transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0
        self.on_event: Callable | None = None  # instrumentation hook

    def __len__(self):
        return self.size

    def add(self, transitions) -> None:
        for t in transitions:
            if not isinstance(t, FinalTransition):
                raise ContractError("only finalized transitions can enter the buffer")
            i = self.cursor
            self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = t.s, t.a, t.reward, t.s2, float(t.done)
            self.cursor = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)
        if self.on_event:
            self.on_event("add", len(transitions))

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise ContractError(f"buffer holds {self.size} < {batch_size} transitions")
        idx = rng.integers(0, self.size, batch_size)
        if self.on_event:
            self.on_event("sample", batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx])


@dataclass
class IterationStats:
    updates: int = 0
    skipped: bool = False
    faults: int = 0
    losses: dict = field(default_factory=dict)


def train_iteration(model, buffer: ReplayBuffer, l_s: int, batch_size: int, rng: np.random.Generator, on_fault=None) -> IterationStats:
    """Exactly l_s TD updates on independent uniform samples (none during warm-up)."""
    st = IterationStats()
    if len(buffer) < batch_size:
        st.skipped = True
        log.debug("warm-up: %d < %d transitions, no updates", len(buffer), batch_size)
        return st
    sums: dict = {}
    for _ in range(l_s):
        batch = buffer.sample(batch_size, rng)
        try:
            terms = model.td_update(batch, rng)
        except TrainingFault as e:
            st.faults += 1
            if on_fault:
                on_fault(f"rejected update: {e}")
            continue
        st.updates += 1
        for k, v in terms.items():
            sums[k] = sums.get(k, 0.0) + v
    st.losses = {k: v / max(st.updates, 1) for k, v in sums.items()}
    return st


# ---------------------------------------------------------------- run


def make_reconstructor(cfg: cfgmod.RunConfig) -> MotionReconstructor | None:
    if cfg.reconstructor == "bypass":
        return None
    if cfg.reconstructor == "identity":
        return IdentityReconstructor(cfg.stabilizer.min_length, cfg.stabilizer.max_length)
    return BalanceProjectionReconstructor(cfg.stabilizer)


@dataclass
class RunResult:
    run_dir: Path
    steps: int
    episodes: int
    updates: int
    first_reach_step: int | None
    episode_returns: list
    training_rewards: list  # (task, stab, combined) per finalized transition, when recorded
    dropped_steps: int
    faults: int
    wall_time_s: float
    metrics: list


class _Actor:
    """Uniform-random actions for the first ``seed_steps`` calls, then the planner."""

    def __init__(self, planner: Planner, rng: np.random.Generator, env: Env, seed_steps: int):
        self.planner, self.rng, self.env, self.seed_steps = planner, rng, env, seed_steps
        self.calls = 0

    def __call__(self, obs):
        n = self.calls
        self.calls += 1
        if n < self.seed_steps:
            return self.rng.uniform(self.env.action_low, self.env.action_high)
        return self.planner.act(obs, explore=True)


class _Faults:
    def __init__(self, path: Path):
        self.path = path
        self.count = 0

    def __call__(self, msg: str) -> None:
        self.count += 1
        with open(self.path, "a") as fh:
            fh.write(msg.rstrip() + "\n")
        log.warning(msg)


def evaluate(model, cfg: cfgmod.RunConfig, episodes: int, seed: int) -> list:
    """Unshaped task returns of planner-driven episodes (no exploration noise)."""
    env = Env(cfg.task, max_steps=cfg.trainer.episode_steps)
    planner = Planner(model, cfg.planner, env.action_low, env.action_high, seed=seed)
    out = []
    for ep in range(episodes):
        env.reset(seed * 7919 + ep)
        planner.reset()
        total = 0.0
        while not env.done:
            _, r, _ = env.step(planner.act(env.observation(), explore=False))
            total += r
        out.append(total)
    return out


def run(cfg: cfgmod.RunConfig, record_rewards: bool = False, run_dir: Path | None = None) -> RunResult:
    """Collect -> finalize -> train until the step budget; write artifacts."""
    t0 = time.time()
    tc = cfg.trainer
    run_dir = Path(run_dir) if run_dir else cfg.resolved_output_root() / cfg.run_name()
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "config.cfg").write_text(cfgmod.dump_config(cfg))
    faults = _Faults(run_dir / "faults.log")
    (run_dir / "faults.log").touch()

    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_act = np.random.default_rng(seeds[0])
    rng_update = np.random.default_rng(seeds[1])
    env = Env(cfg.task, max_steps=tc.episode_steps)
    model = WorldModel(cfg.model_config(env.obs_dim, env.act_dim), seed=int(seeds[2].generate_state(1)[0]))
    planner = Planner(model, cfg.planner, env.action_low, env.action_high, seed=int(seeds[3].generate_state(1)[0]))
    reconstructor = make_reconstructor(cfg)
    mapping = bundled_mapping(env.skeleton.name) if reconstructor is not None else None
    buffer = ReplayBuffer(min(tc.buffer_capacity, tc.total_steps), env.obs_dim, env.act_dim)
    target = tc.target_return_fraction * env.task.max_return * tc.episode_steps / env.task.max_steps

    steps = episodes = updates = dropped = 0
    ep_return = 0.0
    returns: list = []
    rewards_log: list = []
    metrics: list = []
    first_reach = None
    window = {"rs": [], "comb": [], "seg_any": [], "losses": []}
    next_eval = tc.eval_interval
    next_ckpt = tc.checkpoint_interval or None

    actor = _Actor(planner, rng_act, env, tc.seed_steps)
    env.reset(cfg.seed * 1_000_003 + episodes)
    planner.reset()
    metrics_path = run_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        csv.writer(fh).writerow(METRIC_COLUMNS)

    def emit_row(at_step):
        nonlocal window
        evals = evaluate(model, cfg, tc.eval_episodes, cfg.seed + len(metrics)) if tc.eval_episodes else []
        row = _metrics_row(at_step, episodes, evals, returns, window, time.time() - t0, updates)
        metrics.append(row)
        with open(metrics_path, "a", newline="") as fh:
            csv.writer(fh).writerow([row[c] for c in METRIC_COLUMNS])
        window = {"rs": [], "comb": [], "seg_any": [], "losses": []}

    stop = False
    while steps < tc.total_steps and not stop:
        seg = collect_segment(actor, env, min(tc.segment_length, tc.total_steps - steps))
        steps += len(seg)
        ep_return += sum(t.task_reward for t in seg.transitions)
        try:
            final = finalize_segment(seg, mapping, reconstructor, cfg.reward)
        except (ContractError, InputError, StructuralError, FloatingPointError, np.linalg.LinAlgError) as e:
            faults(f"step {steps}: dropped segment of {len(seg)} transitions: {e}")
            dropped += len(seg)
            final = []
        buffer.add(final)
        if final:
            rs = np.array([f.stab_reward for f in final])
            window["rs"].extend(rs)
            window["comb"].extend(f.reward for f in final)
            window["seg_any"].append(bool(np.any(rs > 0)))
            if record_rewards:
                rewards_log.extend((f.task_reward, f.stab_reward, f.reward) for f in final)
        if env.done:
            episodes += 1
            returns.append(ep_return)
            log.info("episode %d: return %.2f, %d steps, %.0f s", episodes, ep_return, steps, time.time() - t0)
            if first_reach is None and target > 0 and ep_return >= target:
                first_reach = steps
                stop = True
            ep_return = 0.0
            env.reset(cfg.seed * 1_000_003 + episodes)
            planner.reset()
        if steps >= tc.seed_steps:
            it = train_iteration(model, buffer, tc.segment_length, tc.batch_size, rng_update, faults)
            updates += it.updates
            if it.updates:
                window["losses"].append(it.losses)
        if tc.time_limit_s and time.time() - t0 > tc.time_limit_s:
            stop = True
        while steps >= next_eval:
            emit_row(next_eval)
            next_eval += tc.eval_interval
        if next_ckpt and steps >= next_ckpt:
            model.save(run_dir / "checkpoints" / f"step{steps:08d}.ckpt")
            next_ckpt += tc.checkpoint_interval
    if stop and steps < tc.total_steps and steps > next_eval - tc.eval_interval:
        emit_row(steps)  # closing row for a run that stopped early

    model.save(run_dir / "checkpoints" / "final.ckpt")
    wall = time.time() - t0
    summary = {
        "steps": steps,
        "episodes": episodes,
        "updates": updates,
        "first_reach_step": first_reach,
        "dropped_steps": dropped,
        "faults": faults.count,
        "wall_time_s": wall,
        "episode_returns": returns,
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return RunResult(run_dir, steps, episodes, updates, first_reach, returns, rewards_log, dropped, faults.count, wall, metrics)


def _metrics_row(step, episodes, evals, returns, window, wall, updates) -> dict:
    def mean(xs):
        return float(np.mean(xs)) if len(xs) else float("nan")

    losses = window["losses"]
    row = {
        "step": step,
        "episode": episodes,
        "eval_return": mean(evals),
        "train_return": returns[-1] if returns else float("nan"),
        "mean_R_S": mean(window["rs"]),
        "mean_combined_reward": mean(window["comb"]),
        "frac_segments_rewarded": mean(window["seg_any"]),
        "wall_time_s": round(wall, 3),
        "updates": updates,
    }
    for k in ("consistency", "reward", "value", "prior"):
        row[f"loss_{k}"] = mean([l[k] for l in losses if k in l])
    return row
