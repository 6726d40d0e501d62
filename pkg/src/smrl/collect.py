"""Rollout collection: turn one environment episode into an `Episode`.

Index 0 of every episode is the reset state with reward 0 and a dummy
action; index t>0 holds the observation arrived at after t transitions,
the reward received on that arrival, and the action taken from there.
"""

from __future__ import annotations

import numpy as np

from .envs import Env, action_dim, encode_action, random_action, scripted_action
from .episodes import Episode


class HistoryBuffer:
    """Fixed-depth observation history, zero-padded before episode start."""

    def __init__(self, obs_dim: int, stack: int):
        self.obs_dim = obs_dim
        self.stack = stack
        self._buf = np.zeros((stack, obs_dim))

    def reset(self, obs):
        self._buf[:] = 0.0
        self._buf[-1] = obs

    def push(self, obs):
        self._buf[:-1] = self._buf[1:]
        self._buf[-1] = obs

    def flat(self) -> np.ndarray:
        return self._buf.reshape(-1).copy()


def collect_episode(env: Env, action_fn, ep_seed: int, history_stack: int = 1) -> Episode:
    """Roll one episode; ``action_fn(obs_hist, env) -> action`` picks moves."""
    space = env.spec.action_space
    adim = action_dim(space)
    obs = env.reset(ep_seed)
    hist = HistoryBuffer(env.spec.obs_dim, history_stack)
    hist.reset(obs)

    obs_rows = [obs]
    raw_actions = []
    model_actions = []
    rewards = [0.0]
    event_times = []
    subtasks = 0

    done = False
    while not done:
        action = action_fn(hist.flat(), env)
        raw_actions.append(action)
        model_actions.append(encode_action(space, action))
        result = env.step(action)
        obs_rows.append(result.obs)
        rewards.append(result.reward)
        if result.info.get("event_time_true") is not None:
            event_times.append(result.info["event_time_true"])
        subtasks = max(subtasks, result.info.get("subtasks_done", 0))
        hist.push(result.obs)
        done = result.done

    # terminal row gets a null action so all columns share one length
    raw_actions.append(np.zeros_like(np.asarray(raw_actions[-1])) if raw_actions else 0)
    model_actions.append(np.zeros(adim))

    return Episode(
        env_id=env.spec.id,
        seed=ep_seed,
        obs=np.stack(obs_rows),
        actions=np.stack([np.asarray(a) for a in raw_actions]),
        actions_model=np.stack(model_actions),
        reward_raw=np.array(rewards),
        event_times=event_times,
        subtasks_done=subtasks,
    )


def scripted_policy(obs_hist, env):
    return scripted_action(env)


def make_random_policy(seed: int):
    rng = np.random.default_rng(seed)

    def policy(obs_hist, env):
        return random_action(env, rng)

    return policy


def make_noisy_scripted_policy(seed: int, epsilon: float):
    """Scripted oracle with probability-epsilon random moves (dataset diversity)."""
    rng = np.random.default_rng(seed)

    def policy(obs_hist, env):
        if rng.random() < epsilon:
            return random_action(env, rng)
        return scripted_action(env)

    return policy
