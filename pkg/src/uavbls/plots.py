"""Deterministic SVG figures: learning curves, per-algorithm bars, trajectories, sweeps."""
from __future__ import annotations

import zlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SMOOTH_WINDOW = 50

_PALETTE = {
    "sacppv": "#d62728",
    "sac": "#1f77b4",
    "sac+pfam": "#ff7f0e",
    "sac+per": "#2ca02c",
    "sac+vrc": "#9467bd",
    "random": "#7f7f7f",
    "greedy": "#8c564b",
}
_FALLBACK = ["#e377c2", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a"]

_RC = {
    "svg.hashsalt": "uavbls",
    "svg.fonttype": "none",
    "path.simplify": False,
    "figure.dpi": 100,
}


def color_for(label: str) -> str:
    """Same label, same color, in every invocation."""
    if label in _PALETTE:
        return _PALETTE[label]
    return _FALLBACK[zlib.crc32(label.encode()) % len(_FALLBACK)]


def smooth(values, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Trailing moving average; the first points average over what exists so far."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def learning_curves(curves: dict[str, list[float]], path, window: int = SMOOTH_WINDOW):
    """``curves`` maps a label to per-episode returns."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for label in curves:
            y = smooth(curves[label], window)
            ax.plot(np.arange(1, y.size + 1), y, label=label, color=color_for(label), gid=f"curve-{label}")
        ax.set_xlabel("episode")
        ax.set_ylabel(f"return (trailing mean, window {window})")
        ax.legend(loc="best")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        _save(fig, path)


def bars(summary: dict[str, dict[str, float]], path):
    """``summary[label]`` holds fair_data, fair_data_std, energy, energy_std."""
    labels = list(summary)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.6))
        for ax, key, unit in ((axes[0], "fair_data", "fair data [bits]"), (axes[1], "energy", "energy [J]")):
            vals = [summary[k][key] for k in labels]
            errs = [summary[k].get(f"{key}_std", 0.0) for k in labels]
            ax.bar(labels, vals, yerr=errs, color=[color_for(k) for k in labels], capsize=3)
            ax.set_ylabel(unit)
            ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        _save(fig, path)


def trajectory(xs, ys, sensors, path, bounds=None, title: str | None = None):
    """UAV path polyline (one vertex per row of ``xs``/``ys``) over the sensor layout."""
    sensors = np.asarray(sensors, dtype=np.float64).reshape(-1, 2)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 5.0))
        ax.plot(xs, ys, "-", color=color_for("sacppv"), lw=1.2, gid="uav-path", label="UAV path")
        ax.scatter(sensors[:, 0], sensors[:, 1], marker="^", s=40, color="#2ca02c", gid="sensors", label="sensors")
        if bounds is not None:
            ax.set_xlim(bounds[0], bounds[1])
            ax.set_ylim(bounds[2], bounds[3])
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right")
        fig.tight_layout()
        _save(fig, path)


def sweep(rows: list[dict], path):
    """Mean fair data against sensor count, one line per algorithm, seeds as dots."""
    algos = sorted({r["algorithm"] for r in rows})
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for algo in algos:
            sub = [r for r in rows if r["algorithm"] == algo]
            counts = sorted({r["n_sensors"] for r in sub})
            means = [np.mean([r["fair_data"] for r in sub if r["n_sensors"] == n]) for n in counts]
            c = color_for(algo)
            ax.scatter([r["n_sensors"] for r in sub], [r["fair_data"] for r in sub], color=c, alpha=0.35, s=12)
            ax.plot(counts, means, "-o", color=c, label=algo, gid=f"sweep-{algo}")
        ax.set_xlabel("number of sensors")
        ax.set_ylabel("fair data per episode [bits]")
        ax.legend(loc="best")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        _save(fig, path)
