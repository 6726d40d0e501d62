"""Episode storage, collection-time reward smoothing, and replay sampling.

An episode keeps both reward streams: ``reward_raw`` for evaluation and
logging, ``reward_smoothed`` as the only reward the learner ever sees.
Smoothing happens exactly once, in `finalize_episode`, right before the
episode enters the replay buffer — the single added line of the training
loop.

Buffer capacity is counted in steps and eviction drops whole episodes,
oldest first. Sequence sampling never crosses an episode boundary.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, InvalidInputError, InvalidStateError
from .kernels import Kernel, RewardSequence, ema_stream, smooth


@dataclass(frozen=True)
class EmaParams:
    """Marker selecting the streaming EMA smoother instead of a kernel."""

    alpha: float


@dataclass(frozen=True)
class Step:
    """Single-transition view into an episode (storage is columnar)."""

    obs: np.ndarray
    action: np.ndarray
    reward_raw: float
    reward_smoothed: float
    done: bool


class Episode:
    """One rollout, stored as columns.

    Index t holds the observation arrived at after t transitions, the
    action taken from it, and the reward received on arrival (so
    ``reward_raw[0]`` is always 0). ``actions_model`` is the model-ready
    encoding (one-hot for discrete spaces); ``actions`` keeps the raw form
    for export.
    """

    def __init__(self, env_id, seed, obs, actions, actions_model, reward_raw,
                 event_times=(), subtasks_done=0):
        obs = np.asarray(obs, dtype=np.float64)
        reward_raw = np.asarray(reward_raw, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[0] == 0:
            raise InvalidInputError("episode needs at least one step of observations")
        n = obs.shape[0]
        if reward_raw.shape != (n,):
            raise InvalidInputError("reward_raw length must match step count")
        self.env_id = str(env_id)
        self.seed = int(seed)
        self.obs = obs
        self.actions = np.asarray(actions)
        self.actions_model = np.asarray(actions_model, dtype=np.float64)
        if self.actions.shape[0] != n or self.actions_model.shape[0] != n:
            raise InvalidInputError("action arrays must match step count")
        self.reward_raw = reward_raw
        self.reward_smoothed = reward_raw.copy()  # mirrors raw until finalized
        self.event_times = tuple(int(t) for t in event_times)
        self.subtasks_done = int(subtasks_done)
        self.finalized = False
        self.reward_raw.setflags(write=False)
        self.obs.setflags(write=False)
        self._hist_cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return int(self.obs.shape[0])

    def step(self, t: int) -> Step:
        return Step(
            obs=self.obs[t],
            action=self.actions[t],
            reward_raw=float(self.reward_raw[t]),
            reward_smoothed=float(self.reward_smoothed[t]),
            done=t == len(self) - 1,
        )

    def history_stack(self, stack: int) -> np.ndarray:
        """Memoized stacked-observation view (episodes are immutable once pushed)."""
        if stack not in self._hist_cache:
            self._hist_cache[stack] = build_history_stack(self.obs, stack)
        return self._hist_cache[stack]

    def to_json(self) -> str:
        """One-line JSON record (episode log schema)."""
        return json.dumps(
            {
                "env_id": self.env_id,
                "seed": self.seed,
                "obs": self.obs.tolist(),
                "action": self.actions.tolist(),
                "reward_raw": self.reward_raw.tolist(),
                "reward_smoothed": self.reward_smoothed.tolist(),
            }
        )


def finalize_episode(episode: Episode, smoother) -> Episode:
    """Apply reward smoothing to a completed episode.

    ``smoother`` is a `Kernel`, an `EmaParams`, or None (no smoothing).
    Raw rewards are kept untouched for evaluation; the smoothed stream is
    what sampling hands to the learner.
    """
    if len(episode) == 0:
        raise InvalidInputError("cannot finalize an empty episode")
    seq = RewardSequence(episode.reward_raw)
    if smoother is None:
        smoothed = episode.reward_raw.copy()
    elif isinstance(smoother, EmaParams):
        smoothed = ema_stream(seq, smoother.alpha)
    elif isinstance(smoother, Kernel):
        smoothed = smooth(seq, smoother)
    else:
        raise InvalidInputError(f"unsupported smoother: {smoother!r}")
    episode.reward_smoothed = smoothed
    episode.reward_smoothed.setflags(write=False)
    episode.finalized = True
    return episode


@dataclass
class SequenceBatch:
    """Training mini-batch of fixed-length step windows.

    ``obs_hist[b, t]`` is the stacked observation history ending at window
    step t (zero-padded before episode start). Raw rewards are deliberately
    not part of the batch: the learner cannot read what is not here.
    """

    obs_hist: np.ndarray         # [B, S, stack*obs_dim]
    actions: np.ndarray          # [B, S, act_dim]
    reward_smoothed: np.ndarray  # [B, S]
    batch_id: int = 0
    sources: list = field(default_factory=list)  # (episode_index, start) pairs


def build_history_stack(obs: np.ndarray, stack: int) -> np.ndarray:
    """Stacked history H[t] = concat(obs[t-stack+1..t]), zero-padded for t < stack-1."""
    n, d = obs.shape
    out = np.zeros((n, stack * d), dtype=np.float64)
    for k in range(stack):
        shift = stack - 1 - k  # slot k holds obs[t - shift]
        out[shift:, k * d:(k + 1) * d] = obs[: n - shift] if shift else obs
    return out


class ReplayBuffer:
    """Bounded FIFO of finalized episodes with seedable sequence sampling.

    Single writer, any number of readers: `push` swaps in a fresh snapshot
    list under the lock, so a sampler iterating an older snapshot never
    observes a half-updated store.
    """

    def __init__(self, capacity: int, seed: int = 0, sparse_threshold: float = 1.0):
        if capacity < 1:
            raise InvalidInputError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.sparse_threshold = float(sparse_threshold)
        self.rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self._episodes: list[Episode] = []
        self._masks: list[np.ndarray] = []
        self._steps = 0
        self.total_pushed = 0
        # (id(episode), seq_len) -> array of window starts containing a sparse step
        self._sparse_starts_cache: dict[tuple[int, int], np.ndarray] = {}

    def __len__(self) -> int:
        return self._steps

    @property
    def n_episodes(self) -> int:
        return len(self._episodes)

    def push(self, episode: Episode) -> None:
        if not episode.finalized:
            raise InvalidStateError("episode must be finalized before push")
        if len(episode) > self.capacity:
            raise InvalidInputError(
                f"episode of {len(episode)} steps exceeds buffer capacity {self.capacity}"
            )
        mask = np.abs(episode.reward_raw) >= self.sparse_threshold
        with self._lock:
            episodes = list(self._episodes)
            masks = list(self._masks)
            episodes.append(episode)
            masks.append(mask)
            steps = self._steps + len(episode)
            while steps > self.capacity:
                evicted = episodes.pop(0)
                masks.pop(0)
                steps -= len(evicted)
                self._drop_cache(evicted)
            self._episodes = episodes
            self._masks = masks
            self._steps = steps
            self.total_pushed += 1

    def sparse_mask(self, index: int) -> np.ndarray:
        return self._masks[index]

    def _drop_cache(self, episode):
        for key in [k for k in self._sparse_starts_cache if k[0] == id(episode)]:
            del self._sparse_starts_cache[key]

    def _snapshot(self):
        with self._lock:
            return self._episodes, self._masks

    @staticmethod
    def _window_counts(episodes, seq_len):
        counts = np.array([max(0, len(ep) - seq_len + 1) for ep in episodes])
        total = int(counts.sum())
        if total == 0:
            raise InsufficientDataError(
                f"no stored episode is at least {seq_len} steps long"
            )
        return counts, total

    def _sparse_starts_for(self, episode, mask, seq_len):
        key = (id(episode), seq_len)
        starts = self._sparse_starts_cache.get(key)
        if starts is None:
            n_windows = len(episode) - seq_len + 1
            if n_windows <= 0:
                starts = np.empty(0, dtype=np.int64)
            else:
                hit = np.zeros(n_windows, dtype=bool)
                for t in np.flatnonzero(mask):
                    lo = max(0, t - seq_len + 1)
                    hi = min(n_windows - 1, t)
                    hit[lo:hi + 1] = True
                starts = np.flatnonzero(hit)
            self._sparse_starts_cache[key] = starts
        return starts

    def _gather(self, episodes, picks, seq_len, history_stack, batch_id):
        obs_hist = np.empty(
            (len(picks), seq_len, episodes[0].obs.shape[1] * history_stack)
        )
        actions = np.empty((len(picks), seq_len, episodes[0].actions_model.shape[1]))
        rewards = np.empty((len(picks), seq_len))
        for b, (ep_idx, start) in enumerate(picks):
            ep = episodes[ep_idx]
            obs_hist[b] = ep.history_stack(history_stack)[start:start + seq_len]
            actions[b] = ep.actions_model[start:start + seq_len]
            rewards[b] = ep.reward_smoothed[start:start + seq_len]
        return SequenceBatch(
            obs_hist=obs_hist,
            actions=actions,
            reward_smoothed=rewards,
            batch_id=batch_id,
            sources=list(picks),
        )

    def sample_uniform(self, batch: int, seq_len: int, history_stack: int = 1) -> SequenceBatch:
        """Windows drawn uniformly over all valid (episode, start) pairs."""
        episodes, _ = self._snapshot()
        counts, total = self._window_counts(episodes, seq_len)
        flat = self.rng.integers(0, total, size=batch)
        picks = self._flat_to_pairs(flat, counts)
        batch_id = int(self.rng.integers(0, 2**31 - 1))
        return self._gather(episodes, picks, seq_len, history_stack, batch_id)

    def sample_oversampled(self, batch: int, seq_len: int, p: float,
                           history_stack: int = 1) -> SequenceBatch:
        """With probability p per draw, pick among windows containing a sparse step.

        Falls back to the uniform distribution when no sparse window exists.
        """
        episodes, masks = self._snapshot()
        counts, total = self._window_counts(episodes, seq_len)
        per_ep_starts = [
            self._sparse_starts_for(ep, mask, seq_len)
            for ep, mask in zip(episodes, masks)
        ]
        sparse_counts = np.array([s.size for s in per_ep_starts])
        n_sparse = int(sparse_counts.sum())

        picks = []
        for _ in range(batch):
            if n_sparse > 0 and p > 0 and self.rng.random() < p:
                j = int(self.rng.integers(0, n_sparse))
                ep_idx = int(np.searchsorted(np.cumsum(sparse_counts), j, side="right"))
                prev = int(np.cumsum(sparse_counts)[ep_idx - 1]) if ep_idx else 0
                picks.append((ep_idx, int(per_ep_starts[ep_idx][j - prev])))
            else:
                flat = int(self.rng.integers(0, total))
                picks.append(self._flat_to_pairs([flat], counts)[0])
        batch_id = int(self.rng.integers(0, 2**31 - 1))
        return self._gather(episodes, picks, seq_len, history_stack, batch_id)

    @staticmethod
    def _flat_to_pairs(flat, counts):
        cum = np.cumsum(counts)
        pairs = []
        for f in np.atleast_1d(flat):
            ep_idx = int(np.searchsorted(cum, f, side="right"))
            prev = int(cum[ep_idx - 1]) if ep_idx else 0
            pairs.append((ep_idx, int(f - prev)))
        return pairs

    def state_dict(self) -> dict:
        """Serializable state for run checkpoints (episodes + rng)."""
        return {
            "episodes": self._episodes,
            "rng_state": self.rng.bit_generator.state,
            "total_pushed": self.total_pushed,
        }

    def load_state_dict(self, state: dict) -> None:
        self._episodes = list(state["episodes"])
        self._masks = [np.abs(ep.reward_raw) >= self.sparse_threshold for ep in self._episodes]
        self._steps = sum(len(ep) for ep in self._episodes)
        self.rng.bit_generator.state = state["rng_state"]
        self.total_pushed = int(state["total_pushed"])
        self._sparse_starts_cache.clear()


def write_episode_log(path, episodes) -> None:
    """Newline-delimited JSON episode log (one object per episode)."""
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(ep.to_json())
            fh.write("\n")


def read_episode_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
