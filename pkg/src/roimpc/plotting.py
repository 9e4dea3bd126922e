"""Static SVG figures: overlaid reward curves and top-down trajectory traces."""
from __future__ import annotations

import math
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .environment import EpisodeLog  # noqa: E402
from .trainer import CurvePoint  # noqa: E402

SCHEME_COLORS = {"RoiGuided": "tab:green", "EndToEnd": "tab:blue", "ShieldingMpc": "tab:orange"}


def plot_curves(curves: dict[str, Sequence[CurvePoint]], path, normalized: bool = True) -> None:
    """One line per labelled curve; normalised reward by default."""
    if not curves:
        raise ValueError("no curves to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, pts in curves.items():
        if not pts:
            continue
        x = [p.env_steps for p in pts]
        y = [p.normalized_reward if normalized else p.mean_eval_reward for p in pts]
        ax.plot(x, y, label=label, color=SCHEME_COLORS.get(label))
    ax.set_xlabel("environment steps")
    ax.set_ylabel("normalised episode reward" if normalized else "episode reward")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_trajectory(log: EpisodeLog, path, r_world: float | None = None, r_obs: float | None = None) -> None:
    """Top-down trace: predator and prey paths, obstacles, and ROI targets."""
    if not log.records:
        raise ValueError("empty episode log")
    meta = log.meta
    R = r_world if r_world is not None else float(meta.get("r_world", 20.0))
    ro = r_obs if r_obs is not None else float(meta.get("r_obs", 2.5))
    preds = np.array([r["predators"] for r in log.records])
    preys = np.array([r["preys"] for r in log.records])
    alive = np.array([r["alive"] for r in log.records])
    fig, ax = plt.subplots(figsize=(5, 5))
    t = np.linspace(0, 2 * math.pi, 200)
    ax.plot(R * np.cos(t), R * np.sin(t), color="black", lw=1)
    for o in meta.get("obstacles", []):
        ax.add_patch(plt.Circle((o[0], o[1]), ro, color="grey", alpha=0.6))
    for i in range(preds.shape[1]):
        ax.plot(preds[:, i, 0], preds[:, i, 1], color="tab:red", lw=1.2, label="predator" if i == 0 else None)
        ax.plot(*preds[-1, i, :2], "o", color="tab:red")
    for j in range(preys.shape[1]):
        live = np.flatnonzero(alive[:, j])
        last = live[-1] + 1 if len(live) else 0
        seg = preys[: min(last + 1, len(preys)), j]
        ax.plot(seg[:, 0], seg[:, 1], color="tab:blue", lw=1, label="prey" if j == 0 else None)
        ax.plot(*seg[-1, :2], "x" if not alive[-1, j] else "o", color="tab:blue")
    tg = [tt for r in log.records if r.get("targets") for tt in r["targets"] if tt is not None]
    if tg:
        tg = np.array(tg)
        ax.scatter(tg[:, 0], tg[:, 1], s=4, color="tab:green", alpha=0.4, label="target")
    ax.set_aspect("equal")
    ax.set_xlim(-1.05 * R, 1.05 * R)
    ax.set_ylim(-1.05 * R, 1.05 * R)
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
