"""Shared occupancy grid: observation fusion, frontiers, dynamic robot marks.

The grid keeps two latched channels (explored, statically occupied) plus a
dynamic mask for cells currently covered by a robot body. The effective
occupied channel is the union of static occupancy and the dynamic mask, so
cells a robot vacates revert to open automatically while wall knowledge
never decays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import integrate_rays
from .scene import HIT_WALL, Pose, SceneMap, SensorSweep

__all__ = [
    "OccupancyGrid",
    "integrate_observation",
    "extract_frontiers",
    "apply_dynamic_robot_marks",
    "coverage_ratio",
    "export_pgm",
    "disk_covered_cells",
]


@dataclass
class OccupancyGrid:
    explored: np.ndarray  # uint8 [rows, cols], latched
    occupied_static: np.ndarray  # uint8, latched wall evidence
    dynamic_mask: np.ndarray  # bool, cells under an observed robot body
    cell_size: float = 0.1

    @classmethod
    def blank(cls, height: int, width: int, cell_size: float = 0.1) -> "OccupancyGrid":
        return cls(
            explored=np.zeros((height, width), np.uint8),
            occupied_static=np.zeros((height, width), np.uint8),
            dynamic_mask=np.zeros((height, width), bool),
            cell_size=cell_size,
        )

    @property
    def shape(self) -> tuple:
        return self.explored.shape

    @property
    def occupied(self) -> np.ndarray:
        """Effective occupancy: latched walls plus currently covered cells."""
        return (self.occupied_static == 1) | self.dynamic_mask

    @property
    def open_mask(self) -> np.ndarray:
        return (self.explored == 1) & ~self.occupied

    @property
    def unknown_mask(self) -> np.ndarray:
        return self.explored == 0

    def open_area_m2(self) -> float:
        return float(self.open_mask.sum()) * self.cell_size * self.cell_size

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(
            self.explored.copy(),
            self.occupied_static.copy(),
            self.dynamic_mask.copy(),
            self.cell_size,
        )


def integrate_observation(
    grid: OccupancyGrid, sweep: SensorSweep, pose: Pose | None = None
) -> OccupancyGrid:
    """Fuse one range scan into the grid (in place; also returned).

    Cells a ray fully traverses become explored; wall-hit endpoint cells
    latch occupied. Robot hits are left to the dynamic mark pass. Repeated
    integration of the same scan is a no-op (latching).
    """
    p = pose or sweep.pose
    h, w = grid.shape
    if not (0 <= p.x < w and 0 <= p.y < h):
        raise ValueError("sensor pose lies outside the grid")
    t_cells = sweep.distances / grid.cell_size
    is_wall = (sweep.hit_types == HIT_WALL).astype(np.uint8)
    integrate_rays(
        grid.explored, grid.occupied_static, p.x, p.y, sweep.angles, t_cells, is_wall
    )
    # occupied cells are explored by definition
    grid.explored |= grid.occupied_static
    return grid


def extract_frontiers(grid: OccupancyGrid) -> np.ndarray:
    """Open cells 8-adjacent to at least one unknown cell, as (row, col) pairs."""
    unknown = grid.unknown_mask
    near_unknown = np.zeros_like(unknown)
    h, w = unknown.shape
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            src = unknown[
                max(dr, 0) : h + min(dr, 0), max(dc, 0) : w + min(dc, 0)
            ]
            near_unknown[
                max(-dr, 0) : h + min(-dr, 0), max(-dc, 0) : w + min(-dc, 0)
            ] |= src
    return np.argwhere(grid.open_mask & near_unknown)


def disk_covered_cells(x: float, y: float, radius: float) -> list:
    """Cells lying entirely inside the disk at (x, y), as (row, col) pairs."""
    out = []
    r0 = int(math.floor(y - radius))
    r1 = int(math.floor(y + radius))
    c0 = int(math.floor(x - radius))
    c1 = int(math.floor(x + radius))
    rad2 = radius * radius
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            fx = max(abs(c - x), abs(c + 1 - x))
            fy = max(abs(r - y), abs(r + 1 - y))
            if fx * fx + fy * fy <= rad2:
                out.append((r, c))
    return out


def apply_dynamic_robot_marks(
    grid: OccupancyGrid, poses: list, radius_m: float = 0.18
) -> OccupancyGrid:
    """Recompute the dynamic mask from the current robot disks (in place).

    Covered cells read as occupied (and explored: a robot body proves the
    cell); cells no longer covered revert to open unless statically
    occupied.
    """
    h, w = grid.shape
    mask = np.zeros((h, w), bool)
    radius_c = radius_m / grid.cell_size
    for p in poses:
        for r, c in disk_covered_cells(p.x, p.y, radius_c):
            if 0 <= r < h and 0 <= c < w:
                mask[r, c] = True
    grid.dynamic_mask = mask
    grid.explored |= mask.astype(np.uint8)
    return grid


def coverage_ratio(grid: OccupancyGrid, scene: SceneMap) -> float:
    """Explored open fraction of the ground-truth free space."""
    if grid.shape != scene.walls.shape:
        raise ValueError(f"grid shape {grid.shape} != scene shape {scene.walls.shape}")
    free = scene.free_mask
    total = int(free.sum())
    return float((grid.open_mask & free).sum()) / total


def export_pgm(
    grid: OccupancyGrid, path, frontiers: np.ndarray | None = None
) -> None:
    """Write the grid as a portable graymap plus a JSON metadata sidecar.

    Unknown cells are mid-gray, open white, occupied black; frontier cells,
    when given, are highlighted light gray.
    """
    img = np.full(grid.shape, 128, np.uint8)
    img[grid.open_mask] = 255
    img[grid.occupied] = 0
    if frontiers is not None and len(frontiers):
        img[frontiers[:, 0], frontiers[:, 1]] = 200
    h, w = grid.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())
    meta = {
        "cell_size": grid.cell_size,
        "open_cells": int(grid.open_mask.sum()),
        "occupied_cells": int(grid.occupied.sum()),
        "unknown_cells": int(grid.unknown_mask.sum()),
        "palette": {"unknown": 128, "open": 255, "occupied": 0, "frontier": 200},
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta))
