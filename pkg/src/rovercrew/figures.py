"""Matplotlib report figures rendered to files next to the delimited
outputs: a map overview with trajectories, an event timeline, and the
panel verdict table when a rack was inspected."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .navmap import OccupancyGrid, render_grid

AGENT_COLORS = {"lamarr": "tab:blue", "mae": "tab:orange", "eva1": "tab:green"}
VERDICT_COLORS = {"good": "tab:green", "spotted": "tab:orange",
                  "cracked": "tab:red"}


def _color(agent: str) -> str:
    return AGENT_COLORS.get(agent, "tab:purple")


def fig_map(result, path: Path) -> Path:
    """Fused occupancy render with driven trajectories and event markers."""
    fig, ax = plt.subplots(figsize=(7, 7))
    grid = None
    for g in result.grids.values():
        grid = g if grid is None else grid
    if grid is not None:
        res = grid.resolution
        img = render_grid(grid)
        ax.imshow(img, cmap="gray", origin="lower", vmin=0, vmax=255,
                  extent=[grid.origin[0], grid.origin[0] + grid.width * res,
                          grid.origin[1], grid.origin[1] + grid.height * res])
    tracks = defaultdict(list)
    for ev in result.trace:
        if ev["kind"] == "pose":
            tracks[ev["source"]].append((ev["payload"]["x"], ev["payload"]["y"]))
    for agent, pts in sorted(tracks.items()):
        arr = np.array(pts)
        ax.plot(arr[:, 0], arr[:, 1], "-", lw=1.4, color=_color(agent),
                label=agent)
        ax.plot(arr[-1, 0], arr[-1, 1], "o", ms=5, color=_color(agent))
    for ev in result.trace:
        if ev["kind"] == "zone":
            x, y = ev["payload"]["point"]
            ax.plot(x, y, "*", ms=14, color="gold", mec="k", zorder=5)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("map and trajectories")
    if tracks:
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def fig_timeline(result, path: Path) -> Path:
    """Plan, sample, escalation and emergency events against time."""
    fig, ax = plt.subplots(figsize=(9, 4))
    lanes = {"plan": 0, "plan_step": 1, "sample": 2, "perception_event": 3,
             "escalation": 4, "panel_record": 5, "zone": 6}
    dt = 0.1
    for ev in result.trace:
        if ev["kind"] == "start":
            dt = ev["payload"].get("dt", dt)
    for ev in result.trace:
        lane = lanes.get(ev["kind"])
        if lane is None:
            continue
        t = ev["tick"] * dt
        ax.plot(t, lane, "|", ms=12, color=_color(ev["source"]))
    ax.set_yticks(sorted(lanes.values()))
    ax.set_yticklabels([k for k, _ in sorted(lanes.items(), key=lambda i: i[1])])
    ax.set_xlabel("simulated time [s]")
    ax.set_title("mission timeline")
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def fig_panels(result, path: Path) -> Path | None:
    """Verdict bar per inspected panel, or None with nothing inspected."""
    verdicts = result.report.panel_verdicts
    if not verdicts:
        return None
    fig, ax = plt.subplots(figsize=(5, 3))
    tags = sorted(verdicts, key=lambda t: int(t))
    ax.bar(range(len(tags)), [1] * len(tags),
           color=[VERDICT_COLORS.get(verdicts[t], "gray") for t in tags])
    ax.set_xticks(range(len(tags)))
    ax.set_xticklabels([f"tag {t}" for t in tags])
    ax.set_yticks([])
    for i, t in enumerate(tags):
        ax.text(i, 0.5, verdicts[t], ha="center", va="center", rotation=90,
                color="white", fontweight="bold")
    ax.set_title("panel inspection verdicts")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_report_figures(result, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [fig_map(result, out / "map.png"),
               fig_timeline(result, out / "timeline.png")]
    p = fig_panels(result, out / "panels.png")
    if p is not None:
        written.append(p)
    return written


def fig_plan_overlay(grid: OccupancyGrid, speed: np.ndarray, waypoints,
                     start, goal, path: Path) -> Path:
    """Velocity-map overlay with the extracted path, for the plan command."""
    fig, ax = plt.subplots(figsize=(6, 6))
    res = grid.resolution
    ax.imshow(speed, cmap="gray", origin="lower", vmin=0, vmax=1,
              extent=[grid.origin[0], grid.origin[0] + grid.width * res,
                      grid.origin[1], grid.origin[1] + grid.height * res])
    wp = np.asarray(waypoints)
    ax.plot(wp[:, 0], wp[:, 1], "-", color="tab:red", lw=1.6)
    ax.plot(*start, "o", color="tab:blue", label="start")
    ax.plot(*goal, "*", ms=12, color="gold", mec="k", label="goal")
    ax.set_title("velocity map and planned path")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
