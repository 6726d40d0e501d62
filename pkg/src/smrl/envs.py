"""Deterministic, seedable toy environments.

Each environment isolates one ingredient that makes reward prediction hard:

* ``two_stage_grid`` — two large sparse payouts that must be earned in
  order (push a block into a bin, then press a button), with small dense
  shaping toward the first subtask only. The second payout is the only
  signal pointing at the button.
* ``ambiguous_delay`` — a 1-D push task whose +300 payout fires a hidden
  1-4 steps after a hidden contact threshold, so the payout timestep is
  not recoverable from observations.
* ``stochastic_bonus`` — a 20-state chain whose goal bonus is drawn from
  {150, 300, 450} per episode.
* ``dense_reach`` — a dense-reward 2-D point mass used as the
  no-degradation control task.

All sparse payouts are interior by construction: they cannot occur within
``SPARSE_MARGIN`` steps of either episode end, so sum-preserving smoothing
is exact on these episodes. Episodes end ``SPARSE_MARGIN`` steps after the
final payable event (or at the horizon).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidActionError, InvalidParameterError, InvalidStateError

# no sparse reward may fire within this many steps of either episode end;
# matches the largest smoothing half-width used on environment data
SPARSE_MARGIN = 12

SPARSE_REWARD = 300.0


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Box:
    dim: int
    low: float
    high: float


@dataclass(frozen=True)
class EnvSpec:
    id: str
    obs_dim: int
    action_space: object
    horizon: int
    seed: int = 0


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class Env:
    """Episodic environment base: reset(seed) then step() until done."""

    spec: EnvSpec

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._t = 0
        self._done = True

    def reset(self, seed=None) -> np.ndarray:
        raise NotImplementedError

    def step(self, action) -> StepResult:
        raise NotImplementedError

    def _begin(self, seed):
        self._t = 0
        self._done = False
        return np.random.default_rng(self.spec.seed if seed is None else seed)

    def _check_alive(self):
        if self._done:
            raise InvalidStateError("step() called on a finished episode; reset first")

    def _check_discrete_action(self, action):
        a = int(action)
        n = self.spec.action_space.n
        if not (0 <= a < n) or (np.ndim(action) != 0):
            raise InvalidActionError(f"action {action!r} outside Discrete({n})")
        return a


class TwoStageGridEnv(Env):
    """7x7 grid: push the block into the bin (+300), then press the button (+300).

    Dense distance shaping (|r| <= 0.08 per step) pays only for moving the
    block closer to the bin, and only before the first subtask completes;
    reaching the button afterwards pays nothing but its completion bonus,
    which is what makes the second stage invisible to a reward model that
    omits sparse rewards. The two-leg push path (along the bottom wall,
    then up the right wall) keeps the first payout at least 13 steps into
    the episode for every start.
    """

    SIZE = 7
    BLOCK_START = (1, 1)
    BIN = (6, 6)
    BUTTON = (2, 6)
    AGENT_STARTS = ((0, 0), (2, 0), (0, 2))
    PUSH_PULSE = 0.08
    # 0:+x 1:-x 2:+y 3:-y
    MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1))

    def __init__(self, spec):
        super().__init__(spec)
        self.agent = None
        self.block = None
        self.task1_done = False
        self.task2_done = False
        self._end_t = spec.horizon

    def reset(self, seed=None):
        rng = self._begin(seed)
        self.agent = self.AGENT_STARTS[rng.integers(0, len(self.AGENT_STARTS))]
        self.block = self.BLOCK_START
        self.task1_done = False
        self.task2_done = False
        self._end_t = self.spec.horizon
        return self._obs()

    def _obs(self):
        return np.array(
            [
                self.agent[0] / 6.0,
                self.agent[1] / 6.0,
                self.block[0] / 6.0,
                self.block[1] / 6.0,
                1.0 if self.task1_done else 0.0,
            ]
        )

    def _bin_dist(self, block):
        return abs(block[0] - self.BIN[0]) + abs(block[1] - self.BIN[1])

    def step(self, action):
        self._check_alive()
        a = self._check_discrete_action(action)
        dx, dy = self.MOVES[a]
        nx, ny = self.agent[0] + dx, self.agent[1] + dy
        in_tail = self._t + 1 > self.spec.horizon - SPARSE_MARGIN

        reward = 0.0
        event_time = None
        if 0 <= nx < self.SIZE and 0 <= ny < self.SIZE:
            if (nx, ny) == self.block and not self.task1_done:
                bx, by = self.block[0] + dx, self.block[1] + dy
                block_ok = 0 <= bx < self.SIZE and 0 <= by < self.SIZE
                # completion events are gated out of the horizon tail so
                # sparse rewards stay interior
                if block_ok and (bx, by) == self.BIN and in_tail:
                    block_ok = False
                if block_ok:
                    before = self._bin_dist(self.block)
                    self.block = (bx, by)
                    self.agent = (nx, ny)
                    reward += self.PUSH_PULSE * (before - self._bin_dist(self.block))
                    if self.block == self.BIN:
                        self.task1_done = True
                        reward += SPARSE_REWARD
                        event_time = self._t + 1
            else:
                self.agent = (nx, ny)

        if (
            not self.task2_done
            and self.task1_done
            and self.agent == self.BUTTON
            and not in_tail
        ):
            self.task2_done = True
            reward += SPARSE_REWARD
            event_time = self._t + 1
            self._end_t = min(self.spec.horizon, self._t + 1 + SPARSE_MARGIN)

        self._t += 1
        self._done = self._t >= self._end_t
        return StepResult(
            self._obs(),
            reward,
            self._done,
            {
                "subtasks_done": int(self.task1_done) + int(self.task2_done),
                "event_time_true": event_time,
            },
        )


class AmbiguousDelayEnv(Env):
    """1-D push task with a hidden payout threshold and a hidden payout delay.

    The +300 fires ``delay`` steps after the block first crosses the
    threshold cell; neither the threshold, the contact latch, nor the
    countdown appear in the observation, so the payout timestep is
    ambiguous given the observable history.
    """

    LENGTH = 20
    BLOCK_START = 8
    THRESHOLDS = (13, 14)
    DELAYS = (1, 2, 3, 4)

    def __init__(self, spec):
        super().__init__(spec)
        self.agent = 0
        self.block = self.BLOCK_START
        self._threshold = None
        self._delay = None
        self._payout_t = None
        self._paid = False
        self._credited = False
        self._end_t = spec.horizon

    def reset(self, seed=None, _force_threshold=None, _force_delay=None):
        rng = self._begin(seed)
        self.agent = 0
        self.block = self.BLOCK_START
        self._threshold = int(rng.choice(self.THRESHOLDS))
        self._delay = int(rng.choice(self.DELAYS))
        if _force_threshold is not None:
            self._threshold = int(_force_threshold)
        if _force_delay is not None:
            self._delay = int(_force_delay)
        self._payout_t = None
        self._paid = False
        self._credited = False
        self._end_t = self.spec.horizon
        return self._obs()

    def _obs(self):
        return np.array(
            [
                self.agent / (self.LENGTH - 1.0),
                self.block / (self.LENGTH - 1.0),
                self._t / self.spec.horizon,
            ]
        )

    def step(self, action):
        self._check_alive()
        a = self._check_discrete_action(action)
        move = (-1, 0, 1)[a]
        nx = self.agent + move
        if 0 <= nx < self.LENGTH:
            if nx == self.block and move == 1:
                if self.block + 1 < self.LENGTH:
                    self.block += 1
                    self.agent = nx
            elif nx != self.block:
                self.agent = nx

        self._t += 1
        if (
            self._payout_t is None
            and not self._paid
            and self.block >= self._threshold
        ):
            self._payout_t = self._t + self._delay

        reward = 0.0
        event_time = None
        if self._payout_t is not None and self._t == self._payout_t and not self._paid:
            if self._t <= self.spec.horizon - SPARSE_MARGIN:
                reward = SPARSE_REWARD
                event_time = self._t
                self._credited = True
                self._end_t = min(self.spec.horizon, self._t + SPARSE_MARGIN)
            self._paid = True

        self._done = self._t >= self._end_t
        return StepResult(
            self._obs(),
            reward,
            self._done,
            {"subtasks_done": int(self._credited), "event_time_true": event_time},
        )


class StochasticBonusEnv(Env):
    """Chain of 20 states; first arrival at the far end pays U{150,300,450}."""

    LENGTH = 20
    BONUSES = (150.0, 300.0, 450.0)

    def __init__(self, spec):
        super().__init__(spec)
        self.pos = 0
        self._bonus = 300.0
        self._paid = False
        self._credited = False
        self._end_t = spec.horizon

    def reset(self, seed=None, _force_bonus=None):
        rng = self._begin(seed)
        self.pos = 0
        self._bonus = float(rng.choice(self.BONUSES))
        if _force_bonus is not None:
            self._bonus = float(_force_bonus)
        self._paid = False
        self._credited = False
        self._end_t = self.spec.horizon
        return self._obs()

    def _obs(self):
        return np.array([self.pos / (self.LENGTH - 1.0), self._t / self.spec.horizon])

    def step(self, action):
        self._check_alive()
        a = self._check_discrete_action(action)
        self.pos = int(np.clip(self.pos + (1 if a == 1 else -1), 0, self.LENGTH - 1))
        self._t += 1
        reward = 0.0
        event_time = None
        if not self._paid and self.pos == self.LENGTH - 1:
            if self._t <= self.spec.horizon - SPARSE_MARGIN:
                reward = self._bonus
                event_time = self._t
                self._credited = True
                self._end_t = min(self.spec.horizon, self._t + SPARSE_MARGIN)
            self._paid = True
        self._done = self._t >= self._end_t
        return StepResult(
            self._obs(),
            reward,
            self._done,
            {"subtasks_done": int(self._credited), "event_time_true": event_time},
        )


class DenseReachEnv(Env):
    """2-D point mass, reward = -distance to goal every step. No sparse term."""

    GOAL = np.array([0.85, 0.85])
    STEP = 0.08

    def __init__(self, spec):
        super().__init__(spec)
        self.pos = np.array([0.15, 0.15])

    def reset(self, seed=None):
        rng = self._begin(seed)
        self.pos = np.array([0.15, 0.15]) + 0.05 * rng.random(2)
        return self._obs()

    def _obs(self):
        return self.pos.copy()

    def step(self, action):
        self._check_alive()
        a = np.asarray(action, dtype=np.float64)
        space = self.spec.action_space
        if a.shape != (space.dim,):
            raise InvalidActionError(f"action shape {a.shape} != ({space.dim},)")
        if np.any(a < space.low - 1e-12) or np.any(a > space.high + 1e-12):
            raise InvalidActionError(f"action {a} outside [{space.low}, {space.high}]")
        self.pos = np.clip(self.pos + self.STEP * a, 0.0, 1.0)
        self._t += 1
        reward = -float(np.linalg.norm(self.pos - self.GOAL))
        self._done = self._t >= self.spec.horizon
        return StepResult(
            self._obs(),
            reward,
            self._done,
            {"subtasks_done": 0, "event_time_true": None},
        )


_REGISTRY = {
    "two_stage_grid": (TwoStageGridEnv, 5, Discrete(4), 120),
    "ambiguous_delay": (AmbiguousDelayEnv, 3, Discrete(3), 60),
    "stochastic_bonus": (StochasticBonusEnv, 2, Discrete(2), 50),
    "dense_reach": (DenseReachEnv, 2, Box(2, -1.0, 1.0), 60),
}


def env_ids() -> tuple[str, ...]:
    return tuple(_REGISTRY)


def default_spec(env_id: str, seed: int = 0) -> EnvSpec:
    if env_id not in _REGISTRY:
        raise InvalidParameterError(f"unknown environment id {env_id!r}")
    _, obs_dim, action_space, horizon = _REGISTRY[env_id]
    return EnvSpec(env_id, obs_dim, action_space, horizon, seed)


def make_env(spec: EnvSpec) -> Env:
    """Instantiate and reset the environment named by ``spec.id``."""
    if spec.id not in _REGISTRY:
        raise InvalidParameterError(f"unknown environment id {spec.id!r}")
    cls = _REGISTRY[spec.id][0]
    env = cls(spec)
    env.reset(spec.seed)
    return env


def action_dim(space) -> int:
    """Width of the model-ready action encoding (one-hot for Discrete)."""
    return space.n if isinstance(space, Discrete) else space.dim


def encode_action(space, action) -> np.ndarray:
    if isinstance(space, Discrete):
        out = np.zeros(space.n)
        out[int(action)] = 1.0
        return out
    return np.asarray(action, dtype=np.float64)


# ---------------------------------------------------------------------------
# scripted oracle policies (test fixtures and the `roll` CLI)


def _grid_navigate(env: TwoStageGridEnv, target):
    """First move of a shortest path to ``target`` that avoids the block."""
    from collections import deque

    start = env.agent
    if start == target:
        return None
    frontier = deque([start])
    parent = {start: None}
    while frontier:
        cell = frontier.popleft()
        for a, (dx, dy) in enumerate(env.MOVES):
            nxt = (cell[0] + dx, cell[1] + dy)
            if not (0 <= nxt[0] < env.SIZE and 0 <= nxt[1] < env.SIZE):
                continue
            if nxt == env.block or nxt in parent:
                continue
            parent[nxt] = (cell, a)
            if nxt == target:
                while parent[nxt][0] != start:
                    nxt = parent[nxt][0]
                return parent[nxt][1]
            frontier.append(nxt)
    return 0  # unreachable target; keep moving


def _grid_script(env: TwoStageGridEnv):
    bx, by = env.block
    if not env.task1_done:
        # push the block right along the bottom leg, then up the right wall
        if bx < env.SIZE - 1 and by < env.SIZE - 1:
            pre, push = (bx - 1, by), 0
        elif bx == env.SIZE - 1:
            pre, push = (bx, by - 1), 2
        else:  # by == SIZE-1: finish along the top row
            pre, push = (bx - 1, by), 0
        if env.agent == pre:
            return push
        step = _grid_navigate(env, pre)
        return step if step is not None else push
    step = _grid_navigate(env, env.BUTTON)
    return step if step is not None else 0


def _delay_script(env: AmbiguousDelayEnv):
    return 2


def _chain_script(env: StochasticBonusEnv):
    return 1


def _reach_script(env: DenseReachEnv):
    return np.clip((env.GOAL - env.pos) / env.STEP, -1.0, 1.0)


SCRIPTED_POLICIES = {
    "two_stage_grid": _grid_script,
    "ambiguous_delay": _delay_script,
    "stochastic_bonus": _chain_script,
    "dense_reach": _reach_script,
}


def scripted_action(env: Env):
    """Oracle action for the current state; upper-bounds achievable returns."""
    return SCRIPTED_POLICIES[env.spec.id](env)


def random_action(env: Env, rng: np.random.Generator):
    space = env.spec.action_space
    if isinstance(space, Discrete):
        return int(rng.integers(0, space.n))
    return rng.uniform(space.low, space.high, size=space.dim)
