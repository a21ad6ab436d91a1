"""Episode runner, scene suites, benchmark and ablation drivers.

An episode iterates planning cycles: the global planner fixes goals once
per cycle, then each env step senses, fuses, marks robot bodies, and acts
every robot. Episodes terminate when no frontier is reachable through
known open space (complete map) or at the step cap. Results are
deterministic for a (config, seed) pair; wall-clock timings are kept
separate from the canonical result payload.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .affinity import AffinityNetwork
from .graphs import HistoryBuffer, update_history
from .local_planner import ControllerConfig, GoalInaccessible, plan_waypoint, select_action
from .mapping import OccupancyGrid, apply_dynamic_robot_marks, coverage_ratio, integrate_observation
from .planners import NoAccessibleFrontier, plan_goals
from .scene import (
    Action,
    KinematicsConfig,
    SceneMap,
    generate_maze,
    load_scene_file,
    sense,
    spawn_robots,
    step_robot,
)

__all__ = [
    "EpisodeConfig",
    "EpisodeResult",
    "resolve_scene",
    "run_episode",
    "run_benchmark",
    "run_ablation",
    "training_scene_refs",
    "heldout_scene_refs",
    "render_episode_png",
]

WORKERS_ENV = "ACTIVEMAP_WORKERS"

TRAIN_MAZE_SEEDS = (1, 2, 3)
HELDOUT_MAZE_SEEDS = tuple(range(100, 120))


def training_scene_refs(size: int = 64, n: int = 3) -> list:
    return [f"maze:seed={s},size={size}x{size}" for s in TRAIN_MAZE_SEEDS[:n]]


def heldout_scene_refs(size: int = 64, n: int = 20) -> list:
    return [f"maze:seed={s},size={size}x{size}" for s in HELDOUT_MAZE_SEEDS[:n]]


def resolve_scene(ref: str) -> SceneMap:
    """Scene reference: a file path, or 'maze:seed=S[,size=WxH][,cw=N][,rooms=R]'."""
    if ref.startswith("maze:"):
        params = {"size": "64x64", "cw": "6", "rooms": "0.15"}
        for tok in ref[5:].split(","):
            if "=" in tok:
                k, v = tok.split("=", 1)
                params[k.strip()] = v.strip()
            elif tok:
                params["seed"] = tok
        if "seed" not in params:
            raise ValueError(f"maze reference {ref!r} needs a seed")
        w, h = (int(x) for x in params["size"].split("x"))
        return generate_maze(
            int(params["seed"]), w, h,
            corridor_width=int(params["cw"]), room_density=float(params["rooms"]),
        )
    return load_scene_file(ref)


@dataclass(frozen=True)
class EpisodeConfig:
    scene: str = "maze:seed=1"
    robots: int = 3
    planner: str = "greedy"  # may carry an ablation: "neural:geodesic"
    seed: int = 0
    cycle_horizon: int = 25
    max_steps: int | None = None  # derived from scene area when unset
    motion_noise: bool = True
    resist: bool = True
    frontier_cap: int = 64
    history_cap: int = 8
    lambda_r: float = 3.0
    checkpoint: str | None = None
    kinematics: KinematicsConfig = field(default_factory=KinematicsConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)

    def step_cap(self, scene: SceneMap) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 3000 if scene.walls.size <= 96 * 96 else 10000


@dataclass
class EpisodeResult:
    scene_name: str
    coverage: float
    steps: int
    cycles: int
    termination: str  # "no-accessible-frontier" | "step-cap"
    collisions: int
    per_cycle: list  # dicts: goals, steps_used, open_cells_after, collisions
    trajectories: list  # per robot: list of (x, y, theta)
    timing: dict = field(default_factory=dict)  # wall-clock; not part of the canonical payload

    def canonical_dict(self) -> dict:
        return {
            "scene_name": self.scene_name,
            "coverage": self.coverage,
            "steps": self.steps,
            "cycles": self.cycles,
            "termination": self.termination,
            "collisions": self.collisions,
            "per_cycle": self.per_cycle,
            "trajectories": self.trajectories,
        }

    def to_json(self) -> str:
        return json.dumps(self.canonical_dict(), sort_keys=True)


class _Recovery:
    """Bounded rotation escape for robots wedged against geometry."""

    def __init__(self, n_robots, rng, trigger=10):
        self.consecutive = [0] * n_robots
        self.pending = [0] * n_robots
        self.direction = [Action.TURN_LEFT] * n_robots
        self.rng = rng
        self.trigger = trigger

    def record(self, i, collided):
        if collided:
            self.consecutive[i] += 1
            if self.consecutive[i] >= self.trigger and self.pending[i] == 0:
                self.pending[i] = int(self.rng.integers(4, 9))
                self.direction[i] = (
                    Action.TURN_LEFT if self.rng.integers(2) == 0 else Action.TURN_RIGHT
                )
                self.consecutive[i] = 0
        else:
            self.consecutive[i] = 0

    def override(self, i):
        if self.pending[i] > 0:
            self.pending[i] -= 1
            return self.direction[i]
        return None


def run_episode(
    cfg: EpisodeConfig,
    network: AffinityNetwork | None = None,
    scene: SceneMap | None = None,
) -> EpisodeResult:
    """Run one exploration episode to termination.

    A neural planner needs `network` (or cfg.checkpoint to load one).
    Passing `scene` skips reference resolution, e.g. for preloaded suites.
    """
    scene = scene if scene is not None else resolve_scene(cfg.scene)
    if cfg.planner.startswith("neural") and network is None:
        if cfg.checkpoint is None:
            raise ValueError("neural planner needs a checkpoint or a network")
        network = AffinityNetwork.load(cfg.checkpoint)
    kin = cfg.kinematics
    if not cfg.motion_noise:
        kin = replace(kin, sigma_trans=0.0, sigma_rot=0.0)

    seq = np.random.SeedSequence(cfg.seed)
    spawn_seed, noise_seed, plan_seed_base, recover_seed = (
        int(s.generate_state(1)[0]) for s in seq.spawn(4)
    )
    poses = spawn_robots(scene, cfg.robots, lambda_r=cfg.lambda_r, seed=spawn_seed,
                         radius=kin.radius)
    noise_rng = np.random.default_rng(noise_seed) if cfg.motion_noise else None
    recovery = _Recovery(cfg.robots, np.random.default_rng(recover_seed))

    grid = OccupancyGrid.blank(scene.height, scene.width, scene.cell_size)
    history = HistoryBuffer(cap=cfg.history_cap)
    cap = cfg.step_cap(scene)

    trajectories = [[(p.x, p.y, p.theta)] for p in poses]
    per_cycle = []
    plan_times = []
    steps = 0
    cycles = 0
    collisions = 0
    termination = "step-cap"

    def observe_all():
        for i in range(cfg.robots):
            integrate_observation(grid, sense(scene, poses, i, kin))
        apply_dynamic_robot_marks(grid, poses, radius_m=kin.radius)

    observe_all()
    while steps < cap:
        try:
            t0 = time.perf_counter()
            assignment = plan_goals(
                cfg.planner, grid, poses, history,
                seed=plan_seed_base + cycles, network=network,
            )
            plan_times.append(time.perf_counter() - t0)
        except NoAccessibleFrontier:
            termination = "no-accessible-frontier"
            break
        history = update_history(
            history, cycles, [p.cell for p in poses], assignment.goals
        )
        cycle_record = {
            "cycle": cycles,
            "goals": assignment.goals.tolist(),
            "shared": assignment.shared.tolist(),
            "open_cells_before": int(grid.open_mask.sum()),
            "collisions": 0,
            "steps_used": 0,
        }
        replan = False
        for _ in range(cfg.cycle_horizon):
            if steps >= cap or replan:
                break
            for i in range(cfg.robots):
                goal = tuple(assignment.goals[i])
                forced = recovery.override(i)
                at_goal = (
                    max(abs(poses[i].cell[0] - goal[0]), abs(poses[i].cell[1] - goal[1])) <= 1
                )
                if forced is not None:
                    action = forced
                elif at_goal:
                    action = Action.TURN_LEFT  # close enough: scan in place
                else:
                    try:
                        waypoint = plan_waypoint(
                            grid, poses, i, goal, resist=cfg.resist, cfg=cfg.controller,
                            radius_m=kin.radius,
                        )
                    except GoalInaccessible:
                        replan = True
                        break
                    if waypoint == poses[i].cell:
                        action = Action.TURN_LEFT
                    else:
                        action = select_action(poses[i], waypoint, cfg.controller)
                new_pose, collided = step_robot(scene, poses, i, action, kin, noise_rng)
                poses[i] = new_pose
                trajectories[i].append((new_pose.x, new_pose.y, new_pose.theta))
                recovery.record(i, collided)
                if collided:
                    collisions += 1
                    cycle_record["collisions"] += 1
            if replan:
                break
            steps += 1
            cycle_record["steps_used"] += 1
            observe_all()
        cycle_record["open_cells_after"] = int(grid.open_mask.sum())
        per_cycle.append(cycle_record)
        cycles += 1

    # a step-cap exit can still have completed the map on the last step
    if termination == "step-cap" and steps >= cap:
        try:
            plan_goals("greedy", grid, poses, history, seed=0)
        except NoAccessibleFrontier:
            termination = "no-accessible-frontier"

    return EpisodeResult(
        scene_name=scene.name,
        coverage=coverage_ratio(grid, scene),
        steps=steps,
        cycles=cycles,
        termination=termination,
        collisions=collisions,
        per_cycle=per_cycle,
        trajectories=[[list(map(float, t)) for t in tr] for tr in trajectories],
        timing={
            "plan_seconds_mean": float(np.mean(plan_times)) if plan_times else 0.0,
            "plan_seconds_max": float(np.max(plan_times)) if plan_times else 0.0,
        },
    )


# -- drivers ------------------------------------------------------------------


def _episode_job(args):
    cfg_dict, = args
    cfg = EpisodeConfig(**cfg_dict)
    result = run_episode(cfg)
    return cfg_dict, result


def _run_many(configs: list) -> list:
    """Run episode configs, optionally in parallel; deterministic order."""
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [({**cfg.__dict__, "kinematics": cfg.kinematics, "controller": cfg.controller},)
            for cfg in configs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        results = [_episode_job(j) for j in jobs]
    return results


def _area_bucket(scene_area_m2: float, edges) -> str:
    if scene_area_m2 < edges[0]:
        return "small"
    if scene_area_m2 < edges[1]:
        return "middle"
    return "large"


def run_benchmark(
    scene_refs: list,
    planners: list,
    robot_counts: list,
    seeds: list,
    checkpoint: str | None = None,
    out_csv=None,
    **episode_kwargs,
) -> dict:
    """Grid of episodes; per-run rows plus mean coverage/steps aggregates.

    Rows are keyed (scene, planner, robots, seed) and sorted, so reruns and
    parallel execution produce identical tables. Scene-size buckets split
    the evaluation set by free-area thirds.
    """
    configs = []
    for ref in scene_refs:
        for planner in planners:
            for n in robot_counts:
                for seed in seeds:
                    configs.append(
                        EpisodeConfig(
                            scene=ref, planner=planner, robots=n, seed=seed,
                            checkpoint=checkpoint if planner.startswith("neural") else None,
                            **episode_kwargs,
                        )
                    )
    pairs = _run_many(configs)
    areas = {}
    for ref in scene_refs:
        scene = resolve_scene(ref)
        areas[ref] = float(scene.free_mask.sum()) * scene.cell_size**2
    thirds = np.quantile(sorted(areas.values()), [1 / 3, 2 / 3]) if len(areas) > 1 else [np.inf, np.inf]

    rows = []
    for cfg_dict, res in pairs:
        rows.append(
            {
                "scene": cfg_dict["scene"],
                "bucket": _area_bucket(areas[cfg_dict["scene"]], thirds),
                "planner": cfg_dict["planner"],
                "robots": cfg_dict["robots"],
                "seed": cfg_dict["seed"],
                "coverage_pct": 100.0 * res.coverage,
                "steps": res.steps,
                "cycles": res.cycles,
                "collisions": res.collisions,
                "termination": res.termination,
                "plan_seconds_mean": res.timing["plan_seconds_mean"],
            }
        )
    rows.sort(key=lambda r: (r["scene"], r["planner"], r["robots"], r["seed"]))

    aggregates = {}
    for row in rows:
        key = (row["bucket"], row["planner"], row["robots"])
        aggregates.setdefault(key, []).append(row)
    table = []
    for (bucket, planner, robots), group in sorted(aggregates.items()):
        table.append(
            {
                "bucket": bucket,
                "planner": planner,
                "robots": robots,
                "coverage_pct": float(np.mean([g["coverage_pct"] for g in group])),
                "steps": float(np.mean([g["steps"] for g in group])),
                "episodes": len(group),
            }
        )
    if out_csv:
        out_csv = Path(out_csv)
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        with open(out_csv.with_suffix(".summary.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(table[0].keys()))
            writer.writeheader()
            writer.writerows(table)
    return {"rows": rows, "table": table}


ABLATION_PLANNERS = (
    ("full", "neural:full", True),
    ("affinity: geodesic distance", "neural:geodesic", True),
    ("affinity: node correlation", "neural:correlation", True),
    ("without history nodes", "neural:no_history", True),
    ("without obstacle resistance", "neural:full", False),
)


def run_ablation(
    scene_refs: list,
    seeds: list,
    checkpoint: str,
    robots: int = 3,
    out_csv=None,
    **episode_kwargs,
) -> dict:
    """Evaluate the full model and its four ablated variants under identical
    seeds; collision counts ride along with the step counts."""
    rows = []
    for label, planner, resist in ABLATION_PLANNERS:
        bench = run_benchmark(
            scene_refs, [planner], [robots], seeds,
            checkpoint=checkpoint, resist=resist, **episode_kwargs,
        )
        for t in bench["table"]:
            rows.append(
                {
                    "variant": label,
                    "coverage_pct": t["coverage_pct"],
                    "steps": t["steps"],
                    "collisions": float(np.mean([r["collisions"] for r in bench["rows"]])),
                    "episodes": t["episodes"],
                }
            )
    if out_csv:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return {"rows": rows}


def render_episode_png(scene: SceneMap, result: EpisodeResult, path, scale: int = 6) -> None:
    """Trajectory image: walls black, free space white, one color per robot."""
    from PIL import Image, ImageDraw

    h, w = scene.walls.shape
    img = Image.new("RGB", (w * scale, h * scale), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    for r in range(h):
        for c in range(w):
            if scene.walls[r, c]:
                draw.rectangle([c * scale, r * scale, (c + 1) * scale - 1, (r + 1) * scale - 1],
                               fill=(40, 40, 40))
    colors = [(220, 60, 60), (60, 120, 220), (60, 180, 90), (200, 140, 40), (150, 60, 200)]
    for i, traj in enumerate(result.trajectories):
        color = colors[i % len(colors)]
        pts = [(x * scale, y * scale) for x, y, _ in traj]
        if len(pts) > 1:
            draw.line(pts, fill=color, width=max(1, scale // 3))
        draw.ellipse([pts[-1][0] - scale, pts[-1][1] - scale, pts[-1][0] + scale, pts[-1][1] + scale],
                     outline=color, width=2)
    img.save(path)
