"""Command-line interface.

Subcommands: run a scenario end to end, plan on a saved grid, replay a
detection stream through the tracker, inspect a rack, and render saved
grids or traces. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import SimError
from .metrics import load_trace, metrics
from .navmap import load_grid, render_grid
from .perception import LocatedDetection, Tracker, TrackerConfig
from .planner import PlannerConfig, distance_field, plan, velocity_map
from .scenario import builtin_scenario_path, load_scenario
from .simulation import Simulation, save_outputs
from .tasks import inspect_rack
from .world import RawDetection


def _parse_point(text: str) -> tuple[float, float]:
    try:
        x, y = text.split(",")
        return float(x), float(y)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y got {text!r}") from None


def _resolve_scenario(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    builtin = builtin_scenario_path(path)
    if builtin.exists():
        return builtin
    raise SimError(f"scenario {path!r} not found (no file, no builtin)")


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("ROVERCREW_OUT", "out"))


def cmd_run(args) -> int:
    sc = load_scenario(_resolve_scenario(args.scenario))
    if args.operator_reset is not None:
        sc.doc.setdefault("operator_resets", []).append(
            [args.operator_reset, args.operator_reset_target])
    sim = Simulation(sc, seed=args.seed, drop_p=args.message_loss)
    result = sim.run()
    out = _out_dir(args)
    paths = save_outputs(result, out)
    json.dump(result.report.to_json(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    sys.stderr.write(f"outputs in {out}: "
                     f"{', '.join(sorted(p.name for p in paths.values()))}\n")
    return 0


def cmd_plan(args) -> int:
    grid = load_grid(args.grid)
    config = PlannerConfig(d_sat=args.d_sat, p_occ=args.p_occ)
    path = plan(grid, args.start, args.goal, config)
    waypoints = [[round(float(x), 4), round(float(y), 4)]
                 for x, y in path.waypoints]
    json.dump({"waypoints": waypoints, "length": round(path.length, 4),
               "min_clearance": (None if math.isinf(path.min_clearance)
                                 else round(path.min_clearance, 4))},
              sys.stdout, indent=2)
    sys.stdout.write("\n")
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    dist = distance_field(grid, config.p_occ)
    vmap = velocity_map(dist, grid, config)
    # overlay PPM: velocity map as grayscale, path cells in red
    img = (np.clip(vmap.speed, 0, 1) * 255).astype(np.uint8)
    rgb = np.stack([img, img, img], axis=-1)
    for x, y in path.waypoints:
        r, c = grid.cell_of(x, y)
        if 0 <= r < grid.height and 0 <= c < grid.width:
            rgb[r, c] = (220, 40, 40)
    from .imageio import write_ppm
    write_ppm(out / "overlay.ppm", rgb)
    from .figures import fig_plan_overlay
    fig_plan_overlay(grid, vmap.speed, path.waypoints, args.start, args.goal,
                     out / "overlay.png")
    sys.stderr.write(f"overlay written to {out}\n")
    return 0


def cmd_track_replay(args) -> int:
    tracker = Tracker(TrackerConfig(dt=args.dt))
    out_lines = []
    with open(args.detections) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            located = []
            for d in rec.get("detections", []):
                if "position" not in d:
                    raise SimError(
                        f"{args.detections}:{lineno}: detection without a "
                        "position; replay needs located detections")
                raw = RawDetection(d["class"], tuple(d["bbox"]),
                                   d.get("conf", 1.0), d.get("tag_id"))
                located.append(LocatedDetection(
                    raw, np.asarray(d["position"], dtype=float),
                    float(np.linalg.norm(d["position"]))))
            tracks = tracker.step(located, rec["tick"])
            out_lines.append({"tick": rec["tick"],
                              "tracks": [[t.id, t.class_label, t.status.value]
                                         for t in tracks]})
    for line in out_lines:
        sys.stdout.write(json.dumps(line, separators=(",", ":")) + "\n")
    return 0


class _InspectRover:
    """Planner-checked teleporting rover interface for the inspect command."""

    def __init__(self, world, grid, agent_id, config):
        self.world = world
        self.grid = grid
        self.agent_id = agent_id
        self.config = config
        self.tick = 0

    def goto(self, x, y, heading):
        e = self.world.entities[self.agent_id]
        plan(self.grid, e.pose[:2], (x, y), self.config)  # raises if unreachable
        e.pose = (x, y, heading)

    def capture(self):
        self.tick += 1
        from .world import render_frame
        return render_frame(self.world, self.agent_id, self.tick)


def cmd_inspect(args) -> int:
    sc = load_scenario(_resolve_scenario(args.scenario))
    racks = sc.build_racks()
    if args.rack not in racks:
        raise SimError(f"rack {args.rack!r} not in scenario "
                       f"(available: {sorted(racks)})")
    world = sc.build_world()
    rovers = [e.id for e in world.entities.values()
              if e.kind.value.startswith("rover")]
    if not rovers:
        raise SimError("scenario has no rover to inspect with")
    # apply panel damage faults immediately so the inspection sees them
    for f in world.faults:
        if f.action.startswith("damage"):
            world.entities[f.entity_id].damage = f.action.split("_", 1)[1]

    from .navmap import OccupancyGrid
    mapping = sc.mapping_config()
    grid = OccupancyGrid(world.terrain.width, world.terrain.height,
                         mapping.resolution, (0.0, 0.0), "truth")
    for e in world.entities.values():
        if e.kind.value == "rock" and max(e.extent[0], e.extent[1]) > 0.3:
            r, c = grid.cell_of(e.pose[0], e.pose[1])
            grid.logodds[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = grid.l_max

    rover = _InspectRover(world, grid, rovers[0], PlannerConfig())
    records = inspect_rack(racks[args.rack], rover)
    json.dump({"rack_id": args.rack,
               "records": [r.to_json() for r in records]},
              sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_render(args) -> int:
    src = Path(args.input)
    out = Path(args.out)
    if src.suffix == ".jsonl":
        trace = load_trace(src)
        report = metrics(trace)

        class _R:  # minimal shim for the figure helpers
            pass

        shim = _R()
        shim.trace, shim.report, shim.grids = trace, report, {}
        from .figures import render_report_figures
        out.mkdir(parents=True, exist_ok=True)
        written = render_report_figures(shim, out)
        sys.stderr.write(f"wrote {', '.join(p.name for p in written)}\n")
        return 0
    grid = load_grid(src)
    img = render_grid(grid)
    out.parent.mkdir(parents=True, exist_ok=True)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 6))
    res = grid.resolution
    ax.imshow(img, cmap="gray", origin="lower", vmin=0, vmax=255,
              extent=[grid.origin[0], grid.origin[0] + grid.width * res,
                      grid.origin[1], grid.origin[1] + grid.height * res])
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    sys.stderr.write(f"wrote {out}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rovercrew",
        description="multi-agent rover autonomy simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario end to end")
    r.add_argument("scenario", help="scenario JSON path or builtin name "
                                    "(scenario1, scenario2)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory "
                                               "(default $ROVERCREW_OUT or ./out)")
    r.add_argument("--message-loss", type=float, default=None,
                   help="override bus drop probability")
    r.add_argument("--operator-reset", type=int, default=None, metavar="TICK",
                   help="inject an operator escalation reset at TICK")
    r.add_argument("--operator-reset-target", default="lamarr")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plan", help="plan a path on a saved grid")
    pl.add_argument("grid", help="grid PGM (with JSON sidecar)")
    pl.add_argument("--start", type=_parse_point, required=True)
    pl.add_argument("--goal", type=_parse_point, required=True)
    pl.add_argument("--d-sat", type=float, default=1.0)
    pl.add_argument("--p-occ", type=float, default=0.65)
    pl.add_argument("--out", default=None)
    pl.set_defaults(func=cmd_plan)

    tr = sub.add_parser("track-replay",
                        help="re-run the tracker over a detection stream")
    tr.add_argument("detections", help="JSON-lines detection stream")
    tr.add_argument("--dt", type=float, default=0.1)
    tr.set_defaults(func=cmd_track_replay)

    ins = sub.add_parser("inspect", help="run a rack inspection")
    ins.add_argument("scenario")
    ins.add_argument("--rack", required=True)
    ins.set_defaults(func=cmd_inspect)

    re = sub.add_parser("render", help="render a grid or trace to images")
    re.add_argument("input", help="grid .pgm or trace .jsonl")
    re.add_argument("--out", required=True)
    re.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SimError as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
