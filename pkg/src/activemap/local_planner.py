"""Per-step local planning: goal-seeded fields, waypoints, action selection.

The goal-seeded fast-marching field is recomputed against the latest grid,
optionally amplified near obstacles, and descended from the robot; the
waypoint a few cells down the path feeds a three-action controller that
drives forward when facing the waypoint and rotates toward it otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import raycast_walls
from .geodesic import (
    ObstacleResistConfig,
    descend_path,
    fmm_field,
    obstacle_distance_field,
    obstacle_resistant_field,
)
from .mapping import OccupancyGrid, disk_covered_cells
from .scene import Action, Pose, wrap_pi

__all__ = [
    "GoalInaccessible",
    "ControllerConfig",
    "traversable_for_robot",
    "plan_waypoint",
    "select_action",
]


class GoalInaccessible(Exception):
    """The goal cell cannot be reached through currently open cells."""


@dataclass(frozen=True)
class ControllerConfig:
    angle_threshold: float = math.radians(12.5)
    lookahead: int = 5  # cells along the descent path
    replan_period: int = 1  # steps between waypoint refreshes

    def __post_init__(self):
        if not 0 < self.angle_threshold < math.pi / 2:
            raise ValueError("angle threshold must lie in (0, pi/2)")
        if self.lookahead < 1 or self.replan_period < 1:
            raise ValueError("lookahead and replan period must be >= 1")


def traversable_for_robot(
    grid: OccupancyGrid, poses, idx: int, radius_m: float = 0.18
) -> np.ndarray:
    """Open cells from robot `idx`'s view: other robots block, its own body
    does not."""
    h, w = grid.shape
    others = np.zeros((h, w), bool)
    radius_c = radius_m / grid.cell_size
    for j, p in enumerate(poses):
        if j == idx:
            continue
        for r, c in disk_covered_cells(p.x, p.y, radius_c):
            if 0 <= r < h and 0 <= c < w:
                others[r, c] = True
    trav = (grid.explored == 1) & (grid.occupied_static == 0) & ~others
    return trav


def plan_waypoint(
    grid: OccupancyGrid,
    poses,
    idx: int,
    goal,
    resist: bool = True,
    cfg: ControllerConfig = ControllerConfig(),
    resist_cfg: ObstacleResistConfig = ObstacleResistConfig(),
    radius_m: float = 0.18,
):
    """Next waypoint cell on the (optionally obstacle-resistant) descent path.

    Computes the goal-seeded field over cells open for this robot; descent
    from the robot follows the resisted field while strictly decreasing the
    plain field, and the waypoint sits `lookahead` cells along (or at the
    goal when nearer). Raises GoalInaccessible when the goal is walled off,
    e.g. by another robot's body.
    """
    trav = traversable_for_robot(grid, poses, idx, radius_m)
    goal = (int(goal[0]), int(goal[1]))
    pose = poses[idx]
    robot_cell = pose.cell
    if not trav[goal]:
        raise GoalInaccessible(f"goal {goal} is not open")
    field = fmm_field(trav, [goal])
    if not np.isfinite(field[robot_cell]):
        raise GoalInaccessible(f"no open route from {robot_cell} to {goal}")
    if resist:
        occupied_view = grid.occupied | (~trav & (grid.explored == 1))
        d_o = obstacle_distance_field(trav, occupied_view)
        resisted = obstacle_resistant_field(field, d_o, resist_cfg)
        path = descend_path(resisted, robot_cell, progress_field=field)
    else:
        path = descend_path(field, robot_cell)
    # clamp the lookahead to line of sight: a waypoint around a corner would
    # steer the straight-driving controller into the wall
    best = path[0]
    blocked = (~trav).astype(np.uint8)
    for k in range(1, min(cfg.lookahead, len(path) - 1) + 1):
        r, c = path[k]
        tx, ty = c + 0.5 - pose.x, r + 0.5 - pose.y
        span = math.hypot(tx, ty)
        if span < 1e-9:
            best = path[k]
            continue
        t_hit, _ = raycast_walls(
            blocked, pose.x, pose.y, np.array([math.atan2(ty, tx)]), span
        )
        if t_hit[0] < span - 1e-9:
            break
        best = path[k]
    if best == path[0] and len(path) > 1:
        best = path[1]
    return best


def select_action(pose: Pose, waypoint, cfg: ControllerConfig = ControllerConfig()) -> Action:
    """Face-or-advance controller toward the waypoint cell center.

    The relative angle is the waypoint bearing minus the heading, wrapped
    to (-pi, pi]; within the threshold the robot drives forward, at or
    beyond it the robot rotates (the boundary goes to rotation).
    """
    wy, wx = float(waypoint[0]) + 0.5, float(waypoint[1]) + 0.5
    theta_a = wrap_pi(math.atan2(wy - pose.y, wx - pose.x) - pose.theta)
    lam = cfg.angle_threshold
    if -lam < theta_a < lam:
        return Action.MOVE_FORWARD
    if theta_a <= -lam:
        return Action.TURN_LEFT
    return Action.TURN_RIGHT
