"""The experiment loop: collect, smooth, store, train, plan, evaluate.

Per seed, the loop is the standard model-based cycle with exactly one
smoothing line between collection and storage:

    episode = collect(env, planner-policy with annealed epsilon)
    episode = finalize_episode(episode, smoother)      # the added line
    buffer.push(episode)
    <train_ratio/1000 gradient steps per env step>
    <greedy evaluation every eval_every env steps>

Everything that influences the run lives in seeded generators that are
checkpointed at episode boundaries, so a killed run resumed from its
latest checkpoint reproduces the uninterrupted run's metrics bytes.
"""

from __future__ import annotations

import json
import os
import pickle
from collections import deque

import numpy as np

from .. import __version__
from ..collect import collect_episode
from ..envs import action_dim, default_spec, make_env
from ..episodes import (
    EmaParams,
    ReplayBuffer,
    build_history_stack,
    finalize_episode,
    write_episode_log,
)
from ..errors import ConfigError, MetricUndefinedError
from ..kernels import Kernel, RewardSequence, ema_stream, smooth
from ..metrics import PredictionRecord, RunMetrics, arm_csv_rows, prediction_rate, write_metrics_csv
from ..planner import Agent
from ..worldmodel import WorldModel
from .config import ExperimentConfig, make_smoother, serialize_config, set_config_path

ENV_MAX_SUBTASKS = {
    "two_stage_grid": 2,
    "ambiguous_delay": 1,
    "stochastic_bonus": 1,
    "dense_reach": 0,
}

PER_SEED_COLUMNS = (
    "env_steps", "return_raw", "subtasks", "pred_rate", "dyn_mse", "rew_mse"
)


def _smoothed_trace(reward_raw: np.ndarray, smoother) -> np.ndarray:
    if smoother is None:
        return reward_raw.copy()
    if isinstance(smoother, EmaParams):
        return ema_stream(RewardSequence(reward_raw), smoother.alpha)
    if isinstance(smoother, Kernel):
        return smooth(RewardSequence(reward_raw), smoother)
    raise ConfigError(f"bad smoother {smoother!r}")


class SeedRun:
    """State of one seed's training run; checkpointable at episode boundaries."""

    def __init__(self, config: ExperimentConfig, seed: int, seed_dir: str):
        self.config = config
        self.seed = seed
        self.seed_dir = seed_dir
        spec = default_spec(config.env_id, seed=seed)
        self.spec = spec
        self.env = make_env(spec)
        self.smoother = make_smoother(config.smoothing)
        self.model = WorldModel(
            config.model, spec.obs_dim, action_dim(spec.action_space),
            seed=seed * 7919 + 1,
        )
        self.buffer = ReplayBuffer(
            config.buffer_capacity, seed=seed * 7919 + 2,
            sparse_threshold=config.sparse_threshold,
        )
        self.collect_rng = np.random.default_rng([seed, config.planner.seed, 3])
        self.env_steps = 0
        self.episodes_done = 0
        self.grad_budget = 0.0
        self.next_eval = config.eval_every
        self.eval_idx = 0
        self.rows: list[RunMetrics] = []
        self.eval_episodes = []
        self.loss_window = deque(maxlen=100)
        self.steps_to_all_subtasks = None
        self.done = config.total_env_steps == 0

    # ------------------------------------------------------------ persistence

    def checkpoint_path(self) -> str:
        return os.path.join(self.seed_dir, "checkpoint.pkl")

    def save_checkpoint(self):
        state = {
            "version": 1,
            "config": serialize_config(self.config),
            "env_steps": self.env_steps,
            "episodes_done": self.episodes_done,
            "grad_budget": self.grad_budget,
            "next_eval": self.next_eval,
            "eval_idx": self.eval_idx,
            "rows": self.rows,
            "eval_episodes": self.eval_episodes,
            "loss_window": list(self.loss_window),
            "steps_to_all_subtasks": self.steps_to_all_subtasks,
            "done": self.done,
            "model_blob": self.model.save_bytes(),
            "buffer": self.buffer.state_dict(),
            "collect_rng": self.collect_rng.bit_generator.state,
        }
        tmp = self.checkpoint_path() + ".tmp"
        with open(tmp, "wb") as fh:
            pickle.dump(state, fh)
        os.replace(tmp, self.checkpoint_path())

    def load_checkpoint(self) -> bool:
        path = self.checkpoint_path()
        if not os.path.exists(path):
            return False
        with open(path, "rb") as fh:
            state = pickle.load(fh)
        if state["config"] != serialize_config(self.config):
            raise ConfigError("checkpoint was produced by a different config")
        self.env_steps = state["env_steps"]
        self.episodes_done = state["episodes_done"]
        self.grad_budget = state["grad_budget"]
        self.next_eval = state["next_eval"]
        self.eval_idx = state["eval_idx"]
        self.rows = state["rows"]
        self.eval_episodes = state["eval_episodes"]
        self.loss_window = deque(state["loss_window"], maxlen=100)
        self.steps_to_all_subtasks = state["steps_to_all_subtasks"]
        self.done = state["done"]
        self.model = WorldModel.load_bytes(state["model_blob"])
        self.buffer.load_state_dict(state["buffer"])
        self.collect_rng.bit_generator.state = state["collect_rng"]
        return True

    # ----------------------------------------------------------------- pieces

    def _agent(self, epsilon: float, seed: int) -> Agent:
        return Agent(self.model, self.spec.action_space, self.config.planner,
                     seed=seed, epsilon=epsilon)

    def _train(self, n_steps: int):
        cfg = self.config.model
        for _ in range(n_steps):
            if self.config.oversample_p > 0:
                batch = self.buffer.sample_oversampled(
                    cfg.batch, cfg.seq_len, self.config.oversample_p,
                    history_stack=cfg.history_stack,
                )
            else:
                batch = self.buffer.sample_uniform(
                    cfg.batch, cfg.seq_len, history_stack=cfg.history_stack
                )
            losses = self.model.train_step(batch)
            self.loss_window.append((losses["dyn_mse"], losses["rew_mse"]))

    def _evaluate(self) -> RunMetrics:
        eval_seed = self.seed * 1_000_003 + self.eval_idx * 7919 + 13
        env = make_env(default_spec(self.config.env_id, seed=eval_seed))
        agent = self._agent(epsilon=0.0, seed=eval_seed + 1)
        episode = collect_episode(
            env, agent.policy(), ep_seed=eval_seed,
            history_stack=self.config.model.history_stack,
        )
        rate = None
        if episode.event_times:
            smoothed = _smoothed_trace(episode.reward_raw, self.smoother)
            hist = build_history_stack(episode.obs, self.config.model.history_stack)
            targets, preds = [], []
            for t in episode.event_times:
                target = smoothed[t] if self.smoother is not None else episode.reward_raw[t]
                targets.append(float(target))
                preds.append(float(self.model.predict_reward(self.model.encode(hist[t]))))
            try:
                rate = prediction_rate(
                    PredictionRecord(tuple(episode.event_times), tuple(targets), tuple(preds))
                )
            except MetricUndefinedError:
                rate = None
        dyn = float(np.mean([d for d, _ in self.loss_window])) if self.loss_window else np.nan
        rew = float(np.mean([r for _, r in self.loss_window])) if self.loss_window else np.nan
        self.eval_episodes.append(episode)
        return RunMetrics(
            env_steps=self.env_steps,
            episode_return_raw=float(episode.reward_raw.sum()),
            subtasks_done=episode.subtasks_done,
            prediction_rate=rate,
            losses={"dyn_mse": dyn, "rew_mse": rew},
        )

    def run_episode(self):
        """One collect / smooth / push / train / eval cycle."""
        cfg = self.config
        epsilon = cfg.epsilon.at(self.env_steps, cfg.total_env_steps)
        ep_seed = int(self.collect_rng.integers(2**31 - 1))
        agent_seed = int(self.collect_rng.integers(2**31 - 1))
        if cfg.explore_episode_p > 0 and self.collect_rng.random() < cfg.explore_episode_p:
            epsilon = 1.0  # dedicated exploration episode
        agent = self._agent(epsilon, agent_seed)
        episode = collect_episode(
            self.env, agent.policy(), ep_seed=ep_seed,
            history_stack=cfg.model.history_stack,
        )
        episode = finalize_episode(episode, self.smoother)  # the one added line
        self.buffer.push(episode)
        transitions = len(episode) - 1
        self.env_steps += transitions
        self.episodes_done += 1

        self.grad_budget += transitions * cfg.train_ratio / 1000.0
        whole = int(self.grad_budget)
        if whole:
            self.grad_budget -= whole
            self._train(whole)

        while self.next_eval <= self.env_steps:
            self.eval_idx += 1
            metrics = self._evaluate()
            self.rows.append(metrics)
            if (
                self.steps_to_all_subtasks is None
                and metrics.subtasks_done >= ENV_MAX_SUBTASKS[cfg.env_id]
                and ENV_MAX_SUBTASKS[cfg.env_id] > 0
            ):
                self.steps_to_all_subtasks = self.env_steps
                if cfg.stop_on_success:
                    self.done = True
            self.next_eval += cfg.eval_every

        if self.env_steps >= cfg.total_env_steps:
            self.done = True

    # ---------------------------------------------------------------- outputs

    def write_artifacts(self):
        rows = [
            {
                "env_steps": m.env_steps,
                "return_raw": m.episode_return_raw,
                "subtasks": m.subtasks_done,
                "pred_rate": m.prediction_rate,
                "dyn_mse": m.losses.get("dyn_mse"),
                "rew_mse": m.losses.get("rew_mse"),
            }
            for m in self.rows
        ]
        write_metrics_csv(
            os.path.join(self.seed_dir, "metrics.csv"), rows, columns=PER_SEED_COLUMNS
        )
        self.model.save(os.path.join(self.seed_dir, "model.smrl"))
        write_episode_log(os.path.join(self.seed_dir, "eval_episodes.jsonl"),
                          self.eval_episodes)
        summary = {
            "seed": self.seed,
            "env_steps": self.env_steps,
            "episodes": self.episodes_done,
            "steps_to_all_subtasks": self.steps_to_all_subtasks,
            "final_return_raw": self.rows[-1].episode_return_raw if self.rows else None,
            "final_pred_rate": self.rows[-1].prediction_rate if self.rows else None,
        }
        with open(os.path.join(self.seed_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _run_seed(config: ExperimentConfig, seed: int, resume: bool,
              interrupt_after: int | None = None) -> SeedRun:
    seed_dir = os.path.join(config.out_dir, f"seed_{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    state = SeedRun(config, seed, seed_dir)
    if resume:
        state.load_checkpoint()
    episodes_this_call = 0
    while not state.done:
        state.run_episode()
        episodes_this_call += 1
        if state.episodes_done % config.checkpoint_every_episodes == 0:
            state.save_checkpoint()
        if interrupt_after is not None and episodes_this_call >= interrupt_after:
            raise KeyboardInterrupt(f"test interrupt after {episodes_this_call} episodes")
    state.save_checkpoint()
    state.write_artifacts()
    return state


def _write_manifest(config: ExperimentConfig, resume: bool) -> str:
    path = os.path.join(config.out_dir, "manifest.json")
    if os.path.exists(path):
        with open(path) as fh:
            existing = json.load(fh)
        if existing.get("config") != serialize_config(config):
            raise ConfigError(
                f"{config.out_dir!r} already holds a different experiment; "
                "choose a fresh out_dir or pass the original config"
            )
        return path
    manifest = {
        "config": serialize_config(config),
        "code_version": __version__,
        "seeds": {
            str(s): {
                "status_dir": f"seed_{s}",
                "metrics_csv": f"seed_{s}/metrics.csv",
                "checkpoint": f"seed_{s}/checkpoint.pkl",
                "model": f"seed_{s}/model.smrl",
            }
            for s in config.seeds
        },
        "arm_metrics_csv": "metrics.csv",
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def run(config: ExperimentConfig, resume: bool = False,
        interrupt_after: int | None = None) -> dict:
    """Execute every seed of the experiment; returns a results summary.

    ``interrupt_after`` aborts (with KeyboardInterrupt) after that many
    episodes per seed — the hook the resumability tests use to simulate a
    kill at a checkpoint boundary.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    manifest_path = _write_manifest(config, resume)

    seed_states = []
    for seed in config.seeds:
        seed_states.append(_run_seed(config, seed, resume, interrupt_after))

    per_seed_rows = [s.rows for s in seed_states]
    if all(len(r) > 0 for r in per_seed_rows):
        arm_rows = arm_csv_rows(per_seed_rows)
    else:
        arm_rows = []
    write_metrics_csv(os.path.join(config.out_dir, "metrics.csv"), arm_rows)

    return {
        "manifest": manifest_path,
        "out_dir": config.out_dir,
        "seeds": {
            s.seed: {
                "env_steps": s.env_steps,
                "episodes": s.episodes_done,
                "steps_to_all_subtasks": s.steps_to_all_subtasks,
                "final_return_raw": s.rows[-1].episode_return_raw if s.rows else None,
                "final_pred_rate": s.rows[-1].prediction_rate if s.rows else None,
                "final_subtasks": s.rows[-1].subtasks_done if s.rows else None,
            }
            for s in seed_states
        },
    }


def sweep(config: ExperimentConfig, axis: str, values) -> dict:
    """Fan `run` out over one config axis; shared seed list across arms."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    results = {}
    for value in values:
        arm = set_config_path(config, axis, value)
        arm_dir = os.path.join(config.out_dir, f"{axis.replace('.', '_')}={value}")
        arm = set_config_path(arm, "out_dir", arm_dir)
        results[str(value)] = run(arm)
    return results


def roll_episodes(env_id: str, policy_name: str, out_path: str, episodes: int = 3,
                  seed: int = 0, smoothing=None) -> list:
    """`roll` subcommand body: dump scripted/random episodes as JSON lines."""
    from ..collect import make_random_policy, scripted_policy

    env = make_env(default_spec(env_id, seed=seed))
    if policy_name == "scripted":
        policy = scripted_policy
    elif policy_name == "random":
        policy = make_random_policy(seed)
    else:
        raise ConfigError(f"policy must be scripted or random, got {policy_name!r}")
    collected = []
    for k in range(episodes):
        ep = collect_episode(env, policy, ep_seed=seed * 100_003 + k)
        collected.append(finalize_episode(ep, smoothing))
    write_episode_log(out_path, collected)
    return collected
