"""Quantitative instruments: prediction rate, run aggregation, CSV emission.

The prediction rate counts a sparse-reward event as predicted when the
reward head outputs more than half of the target at the event timestep —
the target being the raw reward for unsmoothed training and the smoothed
reward for smoothed training. Task performance is always reported from
raw rewards, so smoothing can never inflate a learning curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, MetricUndefinedError


@dataclass(frozen=True)
class PredictionRecord:
    """Per-event reward-model outputs at true sparse-event timesteps."""

    event_times: tuple
    target_values: tuple
    predicted_values: tuple

    def __post_init__(self):
        n = len(self.event_times)
        if len(self.target_values) != n or len(self.predicted_values) != n:
            raise InvalidInputError("prediction record lists must share one length")


@dataclass
class RunMetrics:
    """One evaluation point of one training run."""

    env_steps: int
    episode_return_raw: float
    subtasks_done: int
    prediction_rate: float | None
    losses: dict = field(default_factory=dict)


def prediction_rate(record: PredictionRecord) -> float:
    """Fraction of events with prediction > target/2; undefined when empty."""
    if len(record.event_times) == 0:
        raise MetricUndefinedError("prediction rate undefined without events")
    targets = np.asarray(record.target_values, dtype=np.float64)
    preds = np.asarray(record.predicted_values, dtype=np.float64)
    if np.any(targets <= 0):
        raise InvalidInputError("prediction rate requires positive targets")
    return float(np.mean(preds > targets / 2.0))


def aggregate_runs(runs: list[list[RunMetrics]], stat: str = "median") -> dict:
    """Align runs on a common env_steps grid; central curve plus min/max band.

    Runs are linearly interpolated onto the union grid clipped to the range
    every run covers, mirroring the paper-style median-with-extremes plots.
    """
    if not runs or any(len(r) == 0 for r in runs):
        raise InvalidInputError("aggregate_runs needs at least one nonempty run")
    if stat not in ("median", "mean"):
        raise InvalidInputError(f"stat must be median or mean, got {stat!r}")

    grids = [np.array([m.env_steps for m in run], dtype=np.float64) for run in runs]
    lo = max(g[0] for g in grids)
    hi = min(g[-1] for g in grids)
    grid = np.unique(np.concatenate(grids))
    grid = grid[(grid >= lo) & (grid <= hi)]

    def interp(run, g, values):
        return np.interp(grid, g, values)

    returns = np.stack([
        interp(run, g, [m.episode_return_raw for m in run])
        for run, g in zip(runs, grids)
    ])
    subtasks = np.stack([
        interp(run, g, [m.subtasks_done for m in run]) for run, g in zip(runs, grids)
    ])
    center = np.median if stat == "median" else np.mean
    return {
        "env_steps": grid,
        "return_center": center(returns, axis=0),
        "return_min": returns.min(axis=0),
        "return_max": returns.max(axis=0),
        "subtasks_center": center(subtasks, axis=0),
    }


CSV_COLUMNS = (
    "env_steps",
    "return_raw_median",
    "return_raw_min",
    "return_raw_max",
    "subtasks_median",
    "pred_rate_median",
    "dyn_mse",
    "rew_mse",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return ""
    return repr(v)


def arm_csv_rows(per_seed_runs: list[list[RunMetrics]]) -> list[dict]:
    """Cross-seed aggregate rows (median + min/max band) for one experiment arm."""
    if not per_seed_runs or any(len(r) == 0 for r in per_seed_runs):
        raise InvalidInputError("need at least one nonempty run per arm")
    n_points = min(len(r) for r in per_seed_runs)
    rows = []
    for k in range(n_points):
        points = [run[k] for run in per_seed_runs]
        steps = {m.env_steps for m in points}
        if len(steps) != 1:
            raise InvalidInputError("seed runs must share the evaluation grid")
        returns = [m.episode_return_raw for m in points]
        rates = [m.prediction_rate for m in points if m.prediction_rate is not None]
        rows.append(
            {
                "env_steps": points[0].env_steps,
                "return_raw_median": float(np.median(returns)),
                "return_raw_min": float(np.min(returns)),
                "return_raw_max": float(np.max(returns)),
                "subtasks_median": float(np.median([m.subtasks_done for m in points])),
                "pred_rate_median": float(np.median(rates)) if rates else None,
                "dyn_mse": float(np.median([m.losses.get("dyn_mse", np.nan) for m in points])),
                "rew_mse": float(np.median([m.losses.get("rew_mse", np.nan) for m in points])),
            }
        )
    return rows


def write_metrics_csv(path, rows: list[dict], columns=CSV_COLUMNS) -> None:
    """Deterministic CSV bytes: fixed column order, repr-formatted floats."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")


def read_metrics_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise InvalidInputError(f"{path}: empty metrics CSV")
    header = lines[0].split(",")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise InvalidInputError(f"{path}:{lineno}: expected {len(header)} fields")
        row = {}
        for key, raw in zip(header, parts):
            row[key] = None if raw == "" else float(raw)
        rows.append(row)
    return rows
