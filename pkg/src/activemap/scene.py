"""2D grid-world scenes, robot kinematics and raycast range sensing.

Scenes hold a ground-truth wall grid (0.1 m cells by default). Robots are
disks with a heading; they move with forward/turn actions under Gaussian
action noise and collide against walls and each other. Sensing is a 2D
lidar-style raycast that reports the first wall or foreign-robot hit per
ray.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from ._kernels import disk_collides, fmm_kernel, raycast_walls, sweep_move

__all__ = [
    "ParseError",
    "GenerationError",
    "SpawnError",
    "SceneMap",
    "Pose",
    "Action",
    "KinematicsConfig",
    "SensorSweep",
    "load_scene",
    "load_scene_file",
    "save_scene",
    "generate_maze",
    "spawn_robots",
    "step_robot",
    "sense",
    "wrap_2pi",
    "wrap_pi",
]

DEFAULT_CELL_SIZE = 0.1  # meters; one cell covers 0.01 m^2


class ParseError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class SpawnError(RuntimeError):
    pass


def wrap_2pi(theta: float) -> float:
    return theta % (2 * math.pi)


def wrap_pi(a: float) -> float:
    """Wrap into (-pi, pi]."""
    a = (a + math.pi) % (2 * math.pi) - math.pi
    if a == -math.pi:
        a = math.pi
    return a


@dataclass(frozen=True)
class SceneMap:
    """Ground-truth scene: wall grid plus physical cell size."""

    walls: np.ndarray  # uint8 [rows, cols], 1 = wall
    cell_size: float = DEFAULT_CELL_SIZE
    name: str = "scene"

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.walls, dtype=np.uint8))
        object.__setattr__(self, "walls", w)
        if w.ndim != 2 or w.shape[0] < 3 or w.shape[1] < 3:
            raise ParseError("scene must be a 2D grid of at least 3x3 cells")
        border = np.concatenate([w[0], w[-1], w[:, 0], w[:, -1]])
        if not border.all():
            raise ParseError("scene boundary must be sealed with walls")
        if w.all():
            raise ParseError("scene has no free cells")
        w.setflags(write=False)

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    @property
    def free_mask(self) -> np.ndarray:
        return self.walls == 0

    def meters_to_cells(self, m: float) -> float:
        return m / self.cell_size

    def cells_to_meters(self, c: float) -> float:
        return c * self.cell_size


@dataclass(frozen=True)
class Pose:
    """Continuous position in cell coordinates plus heading in [0, 2pi)."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_2pi(self.theta))

    @property
    def cell(self) -> tuple:
        return (int(math.floor(self.y)), int(math.floor(self.x)))


class Action(Enum):
    MOVE_FORWARD = "move_forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"


@dataclass(frozen=True)
class KinematicsConfig:
    """Robot body, motion and sensor parameters. Distances in meters."""

    forward_step: float = 0.065
    turn_step: float = math.radians(12.5)
    sigma_trans: float = 0.005
    sigma_rot: float = math.radians(0.5)
    fov: float = math.radians(90.0)
    n_rays: int = 120
    max_range: float = 5.0
    radius: float = 0.18

    def __post_init__(self):
        if min(self.forward_step, self.turn_step, self.n_rays, self.max_range, self.radius) <= 0:
            raise ParseError("kinematics parameters must be positive")
        if not 0 < self.fov <= 2 * math.pi:
            raise ParseError("sensor FOV must lie in (0, 2pi]")


HIT_WALL = 0
HIT_ROBOT = 1
HIT_MAX_RANGE = 2


@dataclass(frozen=True)
class SensorSweep:
    """One range scan: per-ray hit distance (meters) and hit type."""

    distances: np.ndarray  # meters, in (0, max_range]
    hit_types: np.ndarray  # HIT_WALL | HIT_ROBOT | HIT_MAX_RANGE
    angles: np.ndarray  # absolute ray headings
    pose: Pose
    max_range: float


# -- scene I/O ----------------------------------------------------------------


def load_scene(
    content,
    fmt: str = "ascii",
    cell_size: float = DEFAULT_CELL_SIZE,
    threshold: int = 128,
    name: str = "scene",
) -> SceneMap:
    """Parse a scene from ascii art ('#' wall, '.' free) or a grayscale image.

    The outer ring is forced to wall; free cells declared on the border are
    sealed with a warning.
    """
    if fmt == "ascii":
        rows = [r for r in str(content).splitlines() if r != ""]
        if not rows:
            raise ParseError("empty scene content")
        width = len(rows[0])
        grid = np.zeros((len(rows), width), dtype=np.uint8)
        for i, row in enumerate(rows):
            if len(row) != width:
                raise ParseError(f"ragged row {i}: length {len(row)} != {width}")
            for j, ch in enumerate(row):
                if ch == "#":
                    grid[i, j] = 1
                elif ch == ".":
                    grid[i, j] = 0
                else:
                    raise ParseError(f"unknown symbol {ch!r} at row {i} col {j}")
    elif fmt == "image":
        from PIL import Image

        img = Image.open(content).convert("L")
        arr = np.asarray(img)
        grid = (arr <= threshold).astype(np.uint8)  # bright pixels are free
    else:
        raise ParseError(f"unknown scene format {fmt!r}")

    border = np.zeros_like(grid, dtype=bool)
    border[0] = border[-1] = True
    border[:, 0] = border[:, -1] = True
    leaks = int((grid[border] == 0).sum())
    if leaks:
        warnings.warn(f"{leaks} free cell(s) on the scene border were sealed to wall")
        grid[border] = 1
    return SceneMap(walls=grid, cell_size=cell_size, name=name)


def load_scene_file(path) -> SceneMap:
    """Load a scene file (.txt ascii or image), honoring a JSON sidecar."""
    path = Path(path)
    meta = {}
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    cell_size = float(meta.get("cell_size", DEFAULT_CELL_SIZE))
    name = meta.get("name", path.stem)
    if path.suffix.lower() in (".txt", ".map", ".ascii"):
        return load_scene(path.read_text(), "ascii", cell_size=cell_size, name=name)
    return load_scene(
        path, "image", cell_size=cell_size, threshold=int(meta.get("threshold", 128)), name=name
    )


def save_scene(scene: SceneMap, path) -> None:
    """Write ascii scene plus JSON metadata sidecar."""
    path = Path(path)
    rows = ["".join("#" if c else "." for c in row) for row in scene.walls]
    path.write_text("\n".join(rows) + "\n")
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({"cell_size": scene.cell_size, "name": scene.name}))


# -- procedural mazes -----------------------------------------------------------


def generate_maze(
    seed: int,
    width: int,
    height: int,
    corridor_width: int = 6,
    room_density: float = 0.15,
    cell_size: float = DEFAULT_CELL_SIZE,
) -> SceneMap:
    """Procedural maze: backtracker corridors of fixed width plus carved rooms.

    The free region is a single connected component; identical seeds yield
    identical maps.
    """
    if width < 16 or height < 16:
        raise GenerationError("maze dimensions must be at least 16x16")
    if corridor_width < 1:
        raise GenerationError("corridor width must be >= 1")
    cw = int(corridor_width)
    pitch = cw + 1
    cx = (width - 1) // pitch
    cy = (height - 1) // pitch
    if cx < 2 or cy < 2:
        raise GenerationError("maze too small for the requested corridor width")

    rng = np.random.default_rng(seed)
    walls = np.ones((height, width), dtype=np.uint8)

    def interior(a: int, b: int):
        r0 = 1 + a * pitch
        c0 = 1 + b * pitch
        return slice(r0, r0 + cw), slice(c0, c0 + cw)

    # iterative backtracker over the coarse lattice
    visited = np.zeros((cy, cx), dtype=bool)
    start = (int(rng.integers(cy)), int(rng.integers(cx)))
    stack = [start]
    visited[start] = True
    rs, cs = interior(*start)
    walls[rs, cs] = 0
    while stack:
        a, b = stack[-1]
        neighbors = []
        for da, db in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            na, nb = a + da, b + db
            if 0 <= na < cy and 0 <= nb < cx and not visited[na, nb]:
                neighbors.append((na, nb))
        if not neighbors:
            stack.pop()
            continue
        na, nb = neighbors[int(rng.integers(len(neighbors)))]
        visited[na, nb] = True
        rs, cs = interior(na, nb)
        walls[rs, cs] = 0
        if na == a:  # horizontal passage: carve the wall column between
            col = 1 + max(b, nb) * pitch - 1
            r0 = 1 + a * pitch
            walls[r0 : r0 + cw, col] = 0
        else:  # vertical passage
            row = 1 + max(a, na) * pitch - 1
            c0 = 1 + b * pitch
            walls[row, c0 : c0 + cw] = 0
        stack.append((na, nb))

    # carve rooms (only removes walls, so connectivity is preserved)
    attempts = int(round(room_density * cx * cy))
    for _ in range(attempts):
        ra = int(rng.integers(cy - 1))
        rb = int(rng.integers(cx - 1))
        rh = int(rng.integers(2, min(3, cy - ra) + 1))
        rw = int(rng.integers(2, min(3, cx - rb) + 1))
        r0 = 1 + ra * pitch
        c0 = 1 + rb * pitch
        r1 = 1 + (ra + rh - 1) * pitch + cw
        c1 = 1 + (rb + rw - 1) * pitch + cw
        walls[r0:r1, c0:c1] = 0

    free = walls == 0
    if not free.any():
        raise GenerationError("maze generation produced no free cells")
    from scipy import ndimage

    labels, count = ndimage.label(free)
    if count != 1:
        raise GenerationError("maze free region is not connected")
    name = f"maze-s{seed}-{width}x{height}-cw{cw}-r{room_density:g}"
    return SceneMap(walls=walls, cell_size=cell_size, name=name)


# -- robot placement ---------------------------------------------------------------


def robot_clearance_mask(scene: SceneMap, radius_m: float) -> np.ndarray:
    """Cells whose center admits the robot disk without touching a wall."""
    rad = radius_m / scene.cell_size
    h, w = scene.walls.shape
    ok = np.zeros((h, w), dtype=bool)
    empty = np.empty(0)
    for r in range(h):
        for c in range(w):
            if scene.walls[r, c] == 0:
                ok[r, c] = not disk_collides(
                    scene.walls, c + 0.5, r + 0.5, rad, empty, empty, 0.0
                )
    return ok


def spawn_robots(
    scene: SceneMap,
    n: int,
    lambda_r: float = 3.0,
    seed: int = 0,
    radius: float = 0.18,
    max_attempts: int = 200,
) -> list:
    """Place n robots on clear cells with pairwise geodesic distance < lambda_r.

    lambda_r is in meters; geodesic distances run through the ground-truth
    free region. Raises SpawnError when no placement is found.
    """
    if n < 1:
        raise SpawnError("need at least one robot")
    if lambda_r <= 0:
        raise SpawnError("lambda_r must be positive")
    clear = robot_clearance_mask(scene, radius)
    cand = np.argwhere(clear)
    if len(cand) < n:
        raise SpawnError(f"scene has {len(cand)} clear cells, need {n}")
    rng = np.random.default_rng(seed)
    trav = (scene.walls == 0).astype(np.uint8)
    limit_cells = lambda_r / scene.cell_size
    min_sep = 2 * radius / scene.cell_size

    for _ in range(max_attempts):
        first = cand[int(rng.integers(len(cand)))]
        placed = [tuple(first)]
        fields = [fmm_kernel(trav, np.array([first[0]]), np.array([first[1]]))]
        ok = True
        for _k in range(1, n):
            good = []
            for r, c in cand:
                if all(f[r, c] < limit_cells for f in fields) and all(
                    math.hypot(r - pr, c - pc) >= min_sep for pr, pc in placed
                ):
                    good.append((r, c))
            if not good:
                ok = False
                break
            r, c = good[int(rng.integers(len(good)))]
            placed.append((r, c))
            fields.append(fmm_kernel(trav, np.array([r]), np.array([c])))
        if ok:
            poses = []
            for r, c in placed:
                theta = float(rng.uniform(0, 2 * math.pi))
                poses.append(Pose(c + 0.5, r + 0.5, theta))
            return poses
    raise SpawnError(f"no valid placement for {n} robots after {max_attempts} attempts")


# -- kinematics -----------------------------------------------------------------------


def step_robot(
    scene: SceneMap,
    poses: list,
    idx: int,
    action: Action,
    cfg: KinematicsConfig,
    rng: np.random.Generator | None = None,
) -> tuple:
    """Apply one action to robot `idx`; returns (new pose, collided flag).

    Turns change only the heading. Forward motion sweeps the robot disk and
    stops at the last contact-free position against walls or other robots.
    """
    pose = poses[idx]
    if action in (Action.TURN_LEFT, Action.TURN_RIGHT):
        delta = cfg.turn_step
        if rng is not None:
            delta += rng.normal(0.0, cfg.sigma_rot)
        # heading decreases on left turns: counter-clockwise on the rendered
        # grid, whose y axis points down
        sign = -1.0 if action is Action.TURN_LEFT else 1.0
        return Pose(pose.x, pose.y, wrap_2pi(pose.theta + sign * delta)), False

    length_m = cfg.forward_step
    if rng is not None:
        length_m += rng.normal(0.0, cfg.sigma_trans)
    length = max(0.0, length_m / scene.cell_size)
    rad = cfg.radius / scene.cell_size
    others_x = np.array([p.x for j, p in enumerate(poses) if j != idx])
    others_y = np.array([p.y for j, p in enumerate(poses) if j != idx])
    dx, dy = math.cos(pose.theta), math.sin(pose.theta)
    travelled, collided = sweep_move(
        scene.walls, pose.x, pose.y, dx, dy, length, rad, others_x, others_y, 2 * rad
    )
    return Pose(pose.x + dx * travelled, pose.y + dy * travelled, pose.theta), bool(collided)


def sense(
    scene: SceneMap, poses: list, idx: int, cfg: KinematicsConfig
) -> SensorSweep:
    """Range scan from robot `idx`: first wall or foreign-robot hit per ray."""
    pose = poses[idx]
    n = cfg.n_rays
    angles = pose.theta - cfg.fov / 2 + (np.arange(n) + 0.5) * cfg.fov / n
    max_range_c = cfg.max_range / scene.cell_size
    t_wall, is_wall = raycast_walls(scene.walls, pose.x, pose.y, angles, max_range_c)

    t_hit = t_wall.copy()
    kinds = np.where(is_wall == 1, HIT_WALL, HIT_MAX_RANGE).astype(np.int8)
    rad_c = cfg.radius / scene.cell_size
    dxs = np.cos(angles)
    dys = np.sin(angles)
    for j, other in enumerate(poses):
        if j == idx:
            continue
        ox, oy = other.x - pose.x, other.y - pose.y
        b = dxs * ox + dys * oy
        c = ox * ox + oy * oy - rad_c * rad_c
        disc = b * b - c
        valid = disc > 0
        t = b - np.sqrt(np.where(valid, disc, 0.0))
        hit = valid & (t > 1e-9) & (t < t_hit)
        t_hit = np.where(hit, t, t_hit)
        kinds = np.where(hit, HIT_ROBOT, kinds)

    return SensorSweep(
        distances=t_hit * scene.cell_size,
        hit_types=kinds,
        angles=angles,
        pose=pose,
        max_range=cfg.max_range,
    )
