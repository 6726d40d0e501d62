"""Experiment configuration: one JSON document, strictly validated.

Unknown keys anywhere in the document are hard errors (reported with
their full path) so a typo in a sweep can never silently fall back to a
default. ``parse(serialize(config))`` round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from ..envs import env_ids
from ..episodes import EmaParams
from ..errors import ConfigError
from ..kernels import make_gaussian_kernel, make_uniform_kernel
from ..planner import PlannerConfig
from ..worldmodel import ModelConfig

SMOOTHING_KINDS = ("none", "gaussian", "uniform", "ema")
_SMOOTHING_PARAM = {"none": None, "gaussian": "sigma", "uniform": "delta", "ema": "alpha"}


@dataclass(frozen=True)
class SmoothingSpec:
    kind: str = "none"
    sigma: float | None = None
    delta: int | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in SMOOTHING_KINDS:
            raise ConfigError(f"smoothing.kind must be one of {SMOOTHING_KINDS}, got {self.kind!r}")
        required = _SMOOTHING_PARAM[self.kind]
        for name in ("sigma", "delta", "alpha"):
            value = getattr(self, name)
            if name == required and value is None:
                raise ConfigError(f"smoothing.{name} is required for kind={self.kind!r}")
            if name != required and value is not None:
                raise ConfigError(f"smoothing.{name} is not a parameter of kind={self.kind!r}")


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear exploration anneal over the first ``anneal_frac`` of training."""

    start: float = 1.0
    final: float = 0.05
    anneal_frac: float = 0.3

    def at(self, env_steps: int, total_env_steps: int) -> float:
        if total_env_steps <= 0:
            return self.final
        horizon = max(1.0, self.anneal_frac * total_env_steps)
        frac = min(1.0, env_steps / horizon)
        return self.start + (self.final - self.start) * frac


@dataclass(frozen=True)
class ExperimentConfig:
    env_id: str
    out_dir: str
    seeds: tuple = (0, 1, 2)
    total_env_steps: int = 10_000
    smoothing: SmoothingSpec = field(default_factory=SmoothingSpec)
    oversample_p: float = 0.0
    model: ModelConfig = field(default_factory=ModelConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    train_ratio: int = 16  # gradient steps per 1000 env steps
    eval_every: int = 1000
    buffer_capacity: int = 100_000
    sparse_threshold: float = 1.0
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    # probability that a training episode is collected purely with the
    # sticky exploration policy instead of the epsilon-greedy planner
    explore_episode_p: float = 0.0
    eval_episodes: int = 1
    checkpoint_every_episodes: int = 25
    stop_on_success: bool = False

    def __post_init__(self):
        if self.env_id not in env_ids():
            raise ConfigError(f"env_id must be one of {sorted(env_ids())}, got {self.env_id!r}")
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if self.total_env_steps < 0:
            raise ConfigError("total_env_steps must be >= 0")
        if not (0.0 <= self.oversample_p <= 1.0):
            raise ConfigError("oversample_p must be in [0, 1]")
        if self.train_ratio < 0:
            raise ConfigError("train_ratio must be >= 0")
        if not (0.0 <= self.explore_episode_p <= 1.0):
            raise ConfigError("explore_episode_p must be in [0, 1]")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


def make_smoother(spec: SmoothingSpec):
    """Kernel / EmaParams / None for `finalize_episode`."""
    if spec.kind == "none":
        return None
    if spec.kind == "gaussian":
        return make_gaussian_kernel(spec.sigma)
    if spec.kind == "uniform":
        return make_uniform_kernel(spec.delta)
    return EmaParams(alpha=spec.alpha)  # streaming recurrence is the normative EMA


def _check_keys(data: dict, allowed: set, path: str):
    unknown = set(data) - allowed
    if unknown:
        where = f"{path}." if path else ""
        names = ", ".join(sorted(f"{where}{k}" for k in unknown))
        raise ConfigError(f"unknown config key(s): {names}")


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    allowed = {f.name for f in fields(cls)}
    _check_keys(data, allowed, path)
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    allowed = {f.name for f in fields(ExperimentConfig)}
    _check_keys(data, allowed, "")
    kwargs = dict(data)
    if "smoothing" in kwargs:
        kwargs["smoothing"] = _build(SmoothingSpec, kwargs["smoothing"], "smoothing")
    if "model" in kwargs:
        kwargs["model"] = _build(ModelConfig, kwargs["model"], "model")
    if "planner" in kwargs:
        kwargs["planner"] = _build(PlannerConfig, kwargs["planner"], "planner")
    if "epsilon" in kwargs:
        kwargs["epsilon"] = _build(EpsilonSchedule, kwargs["epsilon"], "epsilon")
    if "seeds" in kwargs:
        kwargs["seeds"] = tuple(kwargs["seeds"])
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def serialize_config(config: ExperimentConfig) -> dict:
    data = asdict(config)
    data["seeds"] = list(config.seeds)
    data["smoothing"] = {
        k: v for k, v in asdict(config.smoothing).items() if v is not None or k == "kind"
    }
    return data


def load_config(path, seed_offset: int = 0) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    config = parse_config(data)
    if seed_offset:
        config = replace_config(config, seeds=tuple(s + seed_offset for s in config.seeds))
    return config


def replace_config(config: ExperimentConfig, **changes) -> ExperimentConfig:
    data = serialize_config(config)
    for key, value in changes.items():
        data[key] = value
    return parse_config(data)


def set_config_path(config: ExperimentConfig, dotted_key: str, value) -> ExperimentConfig:
    """Return a copy with ``dotted_key`` (e.g. "smoothing.sigma") replaced."""
    data = serialize_config(config)
    node = data
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown sweep axis {dotted_key!r}")
        node = node[part]
    if parts[-1] not in node and parts[-1] not in ("sigma", "delta", "alpha"):
        raise ConfigError(f"unknown sweep axis {dotted_key!r}")
    node[parts[-1]] = value
    if parts[0] == "smoothing":
        # sweeping one smoothing parameter implies clearing the others
        kind = data["smoothing"].get("kind")
        keep = {_SMOOTHING_PARAM.get(kind), "kind"}
        data["smoothing"] = {k: v for k, v in data["smoothing"].items() if k in keep}
    return parse_config(data)
