"""Receding-horizon planning on top of the learned model.

`cem_plan` runs the cross-entropy method over open-loop action sequences,
scoring candidates by the discounted sum of model-predicted rewards. This
is the channel through which reward-prediction quality becomes behaviour:
a reward head that omits a sparse bonus gives the planner nothing to
climb toward.

Candidate 0 of every iteration is the proposal distribution's mode (the
mean for continuous actions), and the best plan found so far is retained,
so the best score is non-decreasing across iterations and a model that
predicts zero reward everywhere yields the prior plan with score exactly
zero.

Discrete action spaces use categorical CEM (elite-frequency refit) with a
probability floor; continuous spaces use Gaussian CEM with a variance
floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import Box, Discrete
from .errors import InvalidParameterError


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 12
    population: int = 64
    elites: int = 8
    iterations: int = 4
    gamma: float = 0.99
    action_noise_floor: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidParameterError("horizon must be >= 1")
        if not (1 <= self.elites < self.population):
            raise InvalidParameterError("need 1 <= elites < population")
        if self.iterations < 1:
            raise InvalidParameterError("iterations must be >= 1")
        if not (0.0 < self.gamma <= 1.0):
            raise InvalidParameterError("gamma must be in (0, 1]")
        if self.action_noise_floor <= 0:
            raise InvalidParameterError("action_noise_floor must be positive")


@dataclass
class Plan:
    actions: np.ndarray  # [H] ints for Discrete, [H, dim] floats for Box
    score: float


def _score(model, z0, model_actions, gamma):
    scorer = getattr(model, "score_actions", None)
    if scorer is not None:
        return scorer(z0, model_actions, gamma)
    rewards = model.imagine_batch(z0, model_actions)
    discounts = gamma ** np.arange(rewards.shape[1])
    return rewards @ discounts


def _onehot(indices, n):
    out = np.zeros(indices.shape + (n,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def cem_plan(model, z0, action_space, config: PlannerConfig,
             rng: np.random.Generator | None = None, return_trace: bool = False,
             init=None):
    """Plan an H-step action sequence maximizing predicted discounted return.

    Deterministic given (model, z0, rng state); with ``rng=None`` a fresh
    generator seeded from ``config.seed`` is used. ``init`` optionally
    warm-starts the proposal distribution (probabilities for Discrete,
    a (mean, std) pair for Box); receding-horizon callers pass the
    previous plan shifted by one step.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if isinstance(action_space, Discrete):
        return _cem_discrete(model, z0, action_space, config, rng, return_trace, init)
    if isinstance(action_space, Box):
        return _cem_continuous(model, z0, action_space, config, rng, return_trace, init)
    raise InvalidParameterError(f"unsupported action space {action_space!r}")


def _cem_discrete(model, z0, space, cfg, rng, return_trace, init=None):
    H, P, n = cfg.horizon, cfg.population, space.n
    probs = np.full((H, n), 1.0 / n) if init is None else np.array(init, dtype=np.float64)
    best_actions = None
    best_score = -np.inf
    trace = {"best_per_iter": [], "candidates": [], "scores": []}

    for _ in range(cfg.iterations):
        cand = np.empty((P, H), dtype=np.int64)
        cand[0] = np.argmax(probs, axis=1)  # proposal mode as anchor candidate
        u = rng.random((P - 1, H))
        for h in range(H):
            cand[1:, h] = np.searchsorted(np.cumsum(probs[h]), u[:, h], side="right")
        np.clip(cand, 0, n - 1, out=cand)

        scores = _score(model, z0, _onehot(cand, n), cfg.gamma)
        order = np.argsort(-scores, kind="stable")
        if scores[order[0]] > best_score:
            best_score = float(scores[order[0]])
            best_actions = cand[order[0]].copy()

        elite = cand[order[: cfg.elites]]
        freq = np.stack([np.bincount(elite[:, h], minlength=n) for h in range(H)])
        probs = np.maximum(freq / cfg.elites, cfg.action_noise_floor)
        probs /= probs.sum(axis=1, keepdims=True)

        if return_trace:
            trace["best_per_iter"].append(best_score)
            trace["candidates"].append(cand.copy())
            trace["scores"].append(scores.copy())

    plan = Plan(actions=best_actions, score=best_score)
    return (plan, trace) if return_trace else plan


def _cem_continuous(model, z0, space, cfg, rng, return_trace, init=None):
    H, P, dim = cfg.horizon, cfg.population, space.dim
    if init is None:
        mean = np.zeros((H, dim))
        std = np.full((H, dim), (space.high - space.low) / 2.0)
    else:
        mean = np.array(init[0], dtype=np.float64)
        std = np.array(init[1], dtype=np.float64)
    best_actions = None
    best_score = -np.inf
    trace = {"best_per_iter": [], "candidates": [], "scores": []}

    for _ in range(cfg.iterations):
        noise = rng.standard_normal((P - 1, H, dim))
        cand = np.concatenate([mean[None], mean[None] + std[None] * noise])
        np.clip(cand, space.low, space.high, out=cand)

        scores = _score(model, z0, cand, cfg.gamma)
        order = np.argsort(-scores, kind="stable")
        if scores[order[0]] > best_score:
            best_score = float(scores[order[0]])
            best_actions = cand[order[0]].copy()

        elite = cand[order[: cfg.elites]]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), cfg.action_noise_floor)

        if return_trace:
            trace["best_per_iter"].append(best_score)
            trace["candidates"].append(cand.copy())
            trace["scores"].append(scores.copy())

    plan = Plan(actions=best_actions, score=best_score)
    return (plan, trace) if return_trace else plan


class Agent:
    """Receding-horizon controller: encode, plan, execute the first action.

    ``epsilon`` mixes in exploration during training rollouts. Exploration
    is sticky (a sampled action persists for 1-8 exploration steps): the
    per-step marginal stays uniform, but the ballistic bursts cover far
    more of the state space than independent draws, which is what lets
    rare compound interactions enter the replay buffer at all. The single
    internal generator drives the exploration coin, the sticky draws, and
    the planner, so behaviour is a deterministic function of (model,
    config, seed, observation stream).
    """

    STICKY_MAX = 8

    def __init__(self, model, action_space, config: PlannerConfig, seed: int = 0,
                 epsilon: float = 0.0):
        self.model = model
        self.action_space = action_space
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.epsilon = float(epsilon)
        self._prev_actions = None  # last plan, for warm-started replanning
        self._sticky_action = None
        self._sticky_left = 0

    def _warm_init(self):
        if self._prev_actions is None:
            return None
        shifted = np.concatenate([self._prev_actions[1:], self._prev_actions[-1:]])
        if isinstance(self.action_space, Discrete):
            n = self.action_space.n
            probs = np.full((self.config.horizon, n), 0.5 / n)
            probs[np.arange(self.config.horizon), shifted] += 0.5
            return probs
        std = np.full(shifted.shape, (self.action_space.high - self.action_space.low) / 2.0)
        return (shifted, std)

    def _explore_action(self):
        if self._sticky_left <= 0:
            if isinstance(self.action_space, Discrete):
                self._sticky_action = int(self.rng.integers(0, self.action_space.n))
            else:
                self._sticky_action = self.rng.uniform(
                    self.action_space.low, self.action_space.high, self.action_space.dim
                )
            self._sticky_left = int(self.rng.integers(1, self.STICKY_MAX + 1))
        self._sticky_left -= 1
        return self._sticky_action

    def act(self, obs_history: np.ndarray):
        if self.epsilon > 0 and self.rng.random() < self.epsilon:
            if self._prev_actions is not None:
                self._prev_actions = np.concatenate(
                    [self._prev_actions[1:], self._prev_actions[-1:]]
                )
            return self._explore_action()
        z0 = self.model.encode(np.asarray(obs_history, dtype=np.float64))
        plan = cem_plan(self.model, z0, self.action_space, self.config,
                        rng=self.rng, init=self._warm_init())
        self._prev_actions = plan.actions
        action = plan.actions[0]
        return int(action) if isinstance(self.action_space, Discrete) else action

    def policy(self):
        """Adapter matching the `collect_episode` action_fn signature."""

        def fn(obs_hist, env):
            return self.act(obs_hist)

        return fn
