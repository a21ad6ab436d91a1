"""Geodesic distance fields and descent paths on the occupancy grid.

Fields come from a first-order fast-marching solver over a traversable
mask (unit cell spacing, +inf outside). The obstacle-resistant correction
divides a robot/goal field by a clamped obstacle-distance term so descent
paths keep clearance from walls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import fmm_kernel

__all__ = [
    "FieldError",
    "PathError",
    "ObstacleResistConfig",
    "fmm_field",
    "obstacle_sources",
    "obstacle_distance_field",
    "obstacle_resistant_field",
    "descend_path",
    "dump_field_csv",
]


class FieldError(ValueError):
    pass


class PathError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObstacleResistConfig:
    """Constants of the obstacle-resistance division (cell units)."""

    eps: float = 0.001
    tau: float = 4.0
    lambda_o: float = 0.25

    def __post_init__(self):
        if min(self.eps, self.tau, self.lambda_o) <= 0:
            raise FieldError("obstacle-resistance constants must be positive")


def _as_cells(cells) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(cells, dtype=np.int64))
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.shape[-1] != 2:
        raise FieldError("cells must be (row, col) pairs")
    return arr.reshape(-1, 2)


def fmm_field(traversable: np.ndarray, sources) -> np.ndarray:
    """Geodesic distance (cell units) from a source set over traversable cells.

    Non-traversable and unreachable cells are +inf; sources are exactly 0.
    """
    trav = np.ascontiguousarray(np.asarray(traversable) != 0).astype(np.uint8)
    src = _as_cells(sources)
    if len(src) == 0:
        raise FieldError("source set is empty")
    h, w = trav.shape
    for r, c in src:
        if not (0 <= r < h and 0 <= c < w):
            raise FieldError(f"source ({r},{c}) outside the grid")
        if trav[r, c] == 0:
            raise FieldError(f"source ({r},{c}) is not traversable")
    return fmm_kernel(trav, src[:, 0].copy(), src[:, 1].copy())


def obstacle_sources(open_mask: np.ndarray, occupied_mask: np.ndarray) -> np.ndarray:
    """Open cells 8-adjacent to any occupied cell: the zero ring of the
    obstacle field."""
    occ = np.asarray(occupied_mask, dtype=bool)
    h, w = occ.shape
    near = np.zeros_like(occ)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            src = occ[max(dr, 0) : h + min(dr, 0), max(dc, 0) : w + min(dc, 0)]
            near[max(-dr, 0) : h + min(-dr, 0), max(-dc, 0) : w + min(-dc, 0)] |= src
    return np.argwhere(np.asarray(open_mask, dtype=bool) & near)


def obstacle_distance_field(open_mask: np.ndarray, occupied_mask: np.ndarray) -> np.ndarray:
    """Distance into free space from the obstacle boundary (zero on the ring
    of open cells touching occupied ones). All +inf when nothing is occupied
    yet."""
    sources = obstacle_sources(open_mask, occupied_mask)
    if len(sources) == 0:
        return np.full(np.asarray(open_mask).shape, np.inf)
    return fmm_field(open_mask, sources)


def obstacle_resistant_field(
    d_r: np.ndarray, d_o: np.ndarray, cfg: ObstacleResistConfig = ObstacleResistConfig()
) -> np.ndarray:
    """Amplify distance values near obstacles: d / (eps + min(tau, d_o) * lambda)."""
    d_r = np.asarray(d_r, dtype=np.float64)
    d_o = np.asarray(d_o, dtype=np.float64)
    if d_r.shape != d_o.shape:
        raise FieldError(f"field shapes differ: {d_r.shape} vs {d_o.shape}")
    divisor = cfg.eps + np.minimum(cfg.tau, d_o) * cfg.lambda_o
    out = d_r / divisor
    out[np.isinf(d_r)] = np.inf
    return out


_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def descend_path(
    field: np.ndarray,
    start,
    progress_field: np.ndarray | None = None,
) -> list:
    """Steepest-descent cell path from `start` to a zero-distance cell.

    Steps move to the 8-neighbor minimizing `field` among those that
    strictly decrease `progress_field` (the field itself by default), so
    progress is guaranteed whenever the progress field is a fast-marching
    solution. Ties prefer the smallest heading change.
    """
    field = np.asarray(field, dtype=np.float64)
    progress = field if progress_field is None else np.asarray(progress_field, np.float64)
    if field.shape != progress.shape:
        raise FieldError("field and progress field shapes differ")
    h, w = field.shape
    r, c = int(start[0]), int(start[1])
    if not np.isfinite(progress[r, c]):
        raise PathError(f"start cell ({r},{c}) is unreachable")
    path = [(r, c)]
    prev_dir = (0.0, 0.0)
    for _ in range(h * w):
        if progress[r, c] == 0.0:
            return path
        best = None
        for dr, dc in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            if progress[nr, nc] >= progress[r, c]:
                continue
            norm = math.hypot(dr, dc)
            align = (prev_dir[0] * dr + prev_dir[1] * dc) / norm
            key = (field[nr, nc], -align)
            if best is None or key < best[0]:
                best = (key, nr, nc, dr / norm, dc / norm)
        if best is None:
            raise PathError(f"stuck at local minimum ({r},{c})")
        _, r, c, pr, pc = best
        prev_dir = (pr, pc)
        path.append((r, c))
    raise PathError("descent did not terminate")


def dump_field_csv(field: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(field), delimiter=",")
