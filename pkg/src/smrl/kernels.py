"""Temporal reward-smoothing kernels.

A kernel is a finite discrete filter f_{-L..L} with nonnegative weights
summing to one. Smoothing replaces each reward with a weighted sum of
temporally nearby rewards, so the filter spreads sparse reward mass over
neighbouring timesteps while preserving the episode total (up to boundary
effects, see `smooth`).

Three families are supported:

* Gaussian — symmetric bell, truncated at L and renormalized.
* Uniform — equal mass over an odd window of width delta.
* EMA — causal geometric weights; the streaming recurrence
  `ema_stream` is the normative form used by the training pipeline,
  the kernel form exists for shaping-theory checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

GAUSSIAN = "gaussian"
UNIFORM = "uniform"
EMA = "ema"

# |sum(weights) - 1| tolerated after construction
_NORMALIZATION_ATOL = 1e-12


@dataclass(frozen=True)
class Kernel:
    """Discrete smoothing filter with support i in [-half_width, half_width].

    ``weights[k]`` stores f_i for i = k - half_width, so ``weights`` has
    length ``2 * half_width + 1`` and ``weight(0)`` is the centre tap.
    """

    kind: str
    half_width: int
    weights: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.shape != (2 * self.half_width + 1,):
            raise InvalidParameterError(
                f"weights length {w.shape} inconsistent with half_width {self.half_width}"
            )
        if np.any(w < 0):
            raise InvalidParameterError("kernel weights must be nonnegative")
        if abs(w.sum() - 1.0) > _NORMALIZATION_ATOL:
            raise InvalidParameterError(f"kernel weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)

    def weight(self, i: int) -> float:
        """f_i for i in [-half_width, half_width]."""
        return float(self.weights[i + self.half_width])

    @property
    def is_causal(self) -> bool:
        """True when f_i = 0 for every i > 0 (smoothing uses only past rewards)."""
        return bool(np.all(self.weights[self.half_width + 1:] == 0.0))


@dataclass(frozen=True)
class RewardSequence:
    """Episode reward trace r_0..r_T with its discount factor."""

    values: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise InvalidInputError("reward sequence must be a nonempty 1-D vector")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("reward sequence contains NaN or Inf")
        if not (0.0 <= self.gamma <= 1.0):
            raise InvalidParameterError(f"gamma must be in [0, 1], got {self.gamma}")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    def __len__(self) -> int:
        return int(self.values.size)


def make_gaussian_kernel(sigma: float, half_width: int = 0) -> Kernel:
    """Truncated, renormalized Gaussian filter f_i ∝ exp(-i²/(2σ²)).

    ``half_width = 0`` is a sentinel selecting the default truncation
    ceil(4σ), which captures >99.99% of the untruncated mass.
    """
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    if half_width < 0:
        raise InvalidParameterError(f"half_width must be nonnegative, got {half_width}")
    if half_width == 0:
        half_width = max(1, math.ceil(4.0 * sigma))
    i = np.arange(-half_width, half_width + 1, dtype=np.float64)
    w = np.exp(-(i**2) / (2.0 * sigma**2))  # symmetric by construction: i² = (-i)²
    w /= w.sum()
    return Kernel(GAUSSIAN, half_width, w, {"sigma": float(sigma)})


def make_uniform_kernel(delta: int) -> Kernel:
    """Box filter spreading reward equally over ``delta`` consecutive steps."""
    if delta < 1 or delta % 2 == 0:
        raise InvalidParameterError(f"delta must be an odd positive integer, got {delta}")
    half_width = (delta - 1) // 2
    w = np.full(delta, 1.0 / delta, dtype=np.float64)
    return Kernel(UNIFORM, half_width, w, {"delta": int(delta)})


def make_ema_kernel(alpha: float, half_width: int = 20) -> Kernel:
    """Causal geometric filter matching the `ema_stream` recurrence.

    f_{-k} = (1-α)·α^k for k < half_width; the geometric tail beyond the
    truncation is absorbed into f_{-half_width} so the weights sum to 1
    exactly.
    """
    if not (0.0 <= alpha < 1.0):
        raise InvalidParameterError(f"alpha must be in [0, 1), got {alpha}")
    if half_width < 1:
        raise InvalidParameterError(f"half_width must be >= 1, got {half_width}")
    w = np.zeros(2 * half_width + 1, dtype=np.float64)
    k = np.arange(half_width + 1, dtype=np.float64)
    geo = (1.0 - alpha) * alpha**k  # geo[k] multiplies r_{t-k}
    geo[half_width] += alpha ** (half_width + 1)  # absorb the tail
    w[: half_width + 1] = geo[::-1]
    return Kernel(EMA, half_width, w, {"alpha": float(alpha)})


def smooth(rewards: RewardSequence, kernel: Kernel) -> np.ndarray:
    """Smoothed trace r̃_t = Σ_i f_i · r_{clip(t+i, 0, T)}.

    Out-of-range indices are clipped to the nearest edge (the same
    boundary rule as scipy's mode="nearest"), so the filter output has the
    input's length and preserves the total reward whenever the nonzero
    rewards sit at least half_width steps from both ends.
    """
    r = rewards.values
    L = kernel.half_width
    if L == 0:
        return r.copy()
    padded = np.pad(r, L, mode="edge")
    # correlate: out[t] = sum_k padded[t+k] * weights[k], k = i + L
    return np.correlate(padded, kernel.weights, mode="valid")


def smooth_discounted(rewards: RewardSequence, kernel: Kernel) -> np.ndarray:
    """Discount-corrected smoothing r̃_t = Σ_i γ^{clip(i,-t,T-t)} · f_i · r_{clip(t+i,0,T)}.

    With γ=1 this reduces to `smooth`. The correction makes the discounted
    sum Σ γ^t r̃_t equal Σ γ^t r_t exactly on interior-supported sequences.
    γ=0 is rejected for non-identity kernels because the clipped exponent
    goes negative.
    """
    r = rewards.values
    gamma = rewards.gamma
    T = r.size - 1
    L = kernel.half_width
    if L == 0:
        return r.copy()
    if gamma == 1.0:
        return smooth(rewards, kernel)
    if gamma == 0.0:
        raise InvalidParameterError("gamma=0 is singular for discount-corrected smoothing")
    t = np.arange(T + 1)
    out = np.zeros(T + 1, dtype=np.float64)
    for i in range(-L, L + 1):
        f_i = kernel.weights[i + L]
        if f_i == 0.0:
            continue
        idx = np.clip(t + i, 0, T)
        expo = np.clip(i, -t, T - t)
        out += f_i * gamma**expo * r[idx]
    return out


def ema_stream(rewards: RewardSequence, alpha: float) -> np.ndarray:
    """Forward recurrence r̃_t = α·r̃_{t-1} + (1-α)·r_t with r̃_{-1} = 0.

    This is the normative EMA smoother used at episode finalization; the
    kernel form from `make_ema_kernel` matches it on sequences whose first
    reward is zero.
    """
    if not (0.0 <= alpha < 1.0):
        raise InvalidParameterError(f"alpha must be in [0, 1), got {alpha}")
    r = rewards.values
    out = np.empty_like(r)
    prev = 0.0
    for t in range(r.size):
        prev = alpha * prev + (1.0 - alpha) * r[t]
        out[t] = prev
    return out
