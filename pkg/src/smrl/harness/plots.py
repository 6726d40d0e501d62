"""Vector-graphic learning curves from arm-level metrics CSVs.

One SVG per metric; each arm contributes a central line plus a shaded
min/max band. SVG output is byte-deterministic for identical inputs
(fixed hash salt, no embedded date).
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "smrl"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from ..errors import InvalidInputError
from ..metrics import read_metrics_csv

_BAND_METRICS = {
    "return": ("return_raw_median", "return_raw_min", "return_raw_max", "episode return (raw)"),
}
_LINE_METRICS = {
    "subtasks": ("subtasks_median", "subtasks completed (median)"),
    "pred_rate": ("pred_rate_median", "prediction rate (median)"),
    "dyn_mse": ("dyn_mse", "dynamics MSE"),
    "rew_mse": ("rew_mse", "reward MSE"),
}


def find_arms(in_dir: str) -> list[tuple[str, str]]:
    """(label, csv_path) pairs: every metrics.csv below ``in_dir``.

    The label comes from the manifest next to the CSV when there is one,
    else from the directory name.
    """
    arms = []
    for root, _dirs, files in sorted(os.walk(in_dir)):
        if "metrics.csv" not in files:
            continue
        if os.path.basename(root).startswith("seed_"):
            continue  # per-seed CSVs have a different schema
        label = os.path.relpath(root, in_dir)
        if label == ".":
            label = os.path.basename(os.path.abspath(in_dir))
        manifest = os.path.join(root, "manifest.json")
        if os.path.exists(manifest):
            with open(manifest) as fh:
                smoothing = json.load(fh).get("config", {}).get("smoothing", {})
            kind = smoothing.get("kind")
            if kind and kind != "none":
                param = {k: v for k, v in smoothing.items() if k != "kind"}
                label = f"{kind} {param}" if param else kind
            elif kind == "none":
                label = "unsmoothed"
        arms.append((label, os.path.join(root, "metrics.csv")))
    if not arms:
        raise InvalidInputError(f"no metrics.csv found under {in_dir!r}")
    return arms


def _plot_metric(arms_rows, out_path, title, extract):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in arms_rows:
        series = extract(rows)
        if series is None:
            continue
        steps, center, lo, hi = series
        ax.plot(steps, center, label=label)
        if lo is not None:
            ax.fill_between(steps, lo, hi, alpha=0.25)
    ax.set_xlabel("environment steps")
    ax.set_ylabel(title)
    if any(extract(rows) is not None for _, rows in arms_rows):
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_metrics(in_dir: str, out_dir: str) -> list[str]:
    """Render every known metric chart; returns the written file paths."""
    arms = find_arms(in_dir)
    arms_rows = [(label, read_metrics_csv(path)) for label, path in arms]
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def band_extract(center_key, lo_key, hi_key):
        def fn(rows):
            pts = [r for r in rows if r.get(center_key) is not None]
            if not pts:
                return None
            return (
                [r["env_steps"] for r in pts],
                [r[center_key] for r in pts],
                [r[lo_key] for r in pts],
                [r[hi_key] for r in pts],
            )

        return fn

    def line_extract(key):
        def fn(rows):
            pts = [r for r in rows if r.get(key) is not None]
            if not pts:
                return None
            return ([r["env_steps"] for r in pts], [r[key] for r in pts], None, None)

        return fn

    for name, (ck, lk, hk, title) in _BAND_METRICS.items():
        path = os.path.join(out_dir, f"{name}.svg")
        _plot_metric(arms_rows, path, title, band_extract(ck, lk, hk))
        written.append(path)
    for name, (key, title) in _LINE_METRICS.items():
        path = os.path.join(out_dir, f"{name}.svg")
        _plot_metric(arms_rows, path, title, line_extract(key))
        written.append(path)
    return written
