"""Multiplex exploration graph: robots, frontier nodes, history, distances.

Four node sets (robots, frontier nodes, history robot positions, history
goal positions) with three complete bipartite cross-graphs carrying
geodesic distances: robot-frontier, robot-history-robot and
frontier-history-goal. Distances come from one fast-marching field per
robot and per distinct history goal, computed over the statically open
region (dynamic robot marks ignored so transient bodies cannot disconnect
the graph).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._kernels import fmm_kernel
from .mapping import OccupancyGrid

__all__ = [
    "GraphError",
    "HistoryBuffer",
    "MultiplexGraph",
    "update_history",
    "sample_frontier_nodes",
    "build_graph",
    "graph_debug_dump",
]

LABEL_ROBOT = 0.0
LABEL_FRONTIER = 1.0
LABEL_HISTORY_ROBOT = 2.0
LABEL_HISTORY_GOAL = 3.0


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class HistoryBuffer:
    """Per planning cycle: robot cells at cycle start and assigned goal cells."""

    entries: tuple = ()
    cap: int = 8

    @property
    def robot_cells(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 2), np.int64)
        return np.concatenate([e[1] for e in self.entries])

    @property
    def goal_cells(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 2), np.int64)
        return np.concatenate([e[2] for e in self.entries])


def update_history(buffer: HistoryBuffer, cycle: int, robot_cells, goal_cells) -> HistoryBuffer:
    """Append one planning cycle; evict the oldest beyond the cap."""
    robots = np.atleast_2d(np.asarray(robot_cells, np.int64))
    goals = np.atleast_2d(np.asarray(goal_cells, np.int64))
    if len(robots) != len(goals):
        raise GraphError("robot and goal counts differ")
    entries = buffer.entries + ((cycle, robots, goals),)
    if len(entries) > buffer.cap:
        entries = entries[-buffer.cap :]
    return HistoryBuffer(entries=entries, cap=buffer.cap)


def sample_frontier_nodes(frontiers: np.ndarray, cap: int = 64, seed: int = 0) -> np.ndarray:
    """Reduce frontier cells to at most `cap` representative nodes.

    Under the cap every cell becomes a node. Otherwise cells are grouped
    into 8-connected components; quotas are apportioned proportionally to
    component size (largest remainder, at least one each while the cap
    allows), each component contributes its centroid-nearest cell first and
    fills the rest by seeded sampling.
    """
    if cap < 1:
        raise GraphError("frontier node cap must be >= 1")
    frontiers = np.asarray(frontiers, np.int64).reshape(-1, 2)
    if len(frontiers) == 0:
        return frontiers
    if len(frontiers) <= cap:
        return frontiers[np.lexsort((frontiers[:, 1], frontiers[:, 0]))]

    h = int(frontiers[:, 0].max()) + 2
    w = int(frontiers[:, 1].max()) + 2
    mask = np.zeros((h, w), bool)
    mask[frontiers[:, 0], frontiers[:, 1]] = True
    labels, n_comp = ndimage.label(mask, structure=np.ones((3, 3)))
    comps = []
    for k in range(1, n_comp + 1):
        cells = np.argwhere(labels == k)
        cells = cells[np.lexsort((cells[:, 1], cells[:, 0]))]
        comps.append(cells)
    comps.sort(key=lambda c: (-len(c), tuple(c[0])))

    if n_comp > cap:
        comps = comps[:cap]
        quotas = [1] * cap
    else:
        total = sum(len(c) for c in comps)
        raw = [cap * len(c) / total for c in comps]
        quotas = [int(q) for q in raw]
        rema = cap - sum(quotas)
        order = sorted(range(len(comps)), key=lambda i: (-(raw[i] - quotas[i]), i))
        for i in order[:rema]:
            quotas[i] += 1
        # every component keeps at least one node, stolen from the largest quotas
        for i in range(len(quotas)):
            while quotas[i] == 0:
                j = int(np.argmax(quotas))
                quotas[j] -= 1
                quotas[i] += 1

    rng = np.random.default_rng(seed)
    picked = []
    for cells, quota in zip(comps, quotas):
        centroid = cells.mean(axis=0)
        d2 = ((cells - centroid) ** 2).sum(axis=1)
        first = int(np.lexsort((cells[:, 1], cells[:, 0], d2))[0])
        chosen = [first]
        if quota > 1:
            rest = [i for i in range(len(cells)) if i != first]
            extra = rng.choice(len(rest), size=min(quota - 1, len(rest)), replace=False)
            chosen.extend(rest[i] for i in sorted(extra))
        picked.append(cells[chosen])
    nodes = np.concatenate(picked)
    return nodes[np.lexsort((nodes[:, 1], nodes[:, 0]))]


@dataclass
class MultiplexGraph:
    """Node sets plus cross-graph geodesic distances (cell units)."""

    robot_cells: np.ndarray  # (n_r, 2)
    frontier_cells: np.ndarray  # (n_f, 2)
    history_robot_cells: np.ndarray  # (n_w, 2)
    history_goal_cells: np.ndarray  # (n_g, 2)
    d_rf: np.ndarray  # (n_r, n_f)
    d_rw: np.ndarray  # (n_r, n_w)
    d_fg: np.ndarray  # (n_f, n_g)
    reach_rf: np.ndarray  # bool, same shapes
    reach_rw: np.ndarray
    reach_fg: np.ndarray
    extent: tuple  # (rows, cols) for coordinate normalization

    @property
    def n_robots(self) -> int:
        return len(self.robot_cells)

    @property
    def n_frontiers(self) -> int:
        return len(self.frontier_cells)

    def accessible_frontiers(self) -> np.ndarray:
        """Mask of frontier nodes reachable by at least one robot."""
        if self.n_frontiers == 0:
            return np.zeros(0, bool)
        return self.reach_rf.any(axis=0)

    def without_history(self) -> "MultiplexGraph":
        empty = np.zeros((0, 2), np.int64)
        n_r, n_f = self.n_robots, self.n_frontiers
        return MultiplexGraph(
            self.robot_cells,
            self.frontier_cells,
            empty,
            empty,
            self.d_rf,
            np.zeros((n_r, 0)),
            np.zeros((n_f, 0)),
            self.reach_rf,
            np.zeros((n_r, 0), bool),
            np.zeros((n_f, 0), bool),
            self.extent,
        )


def _sentinel(*fields) -> float:
    finite = [f[np.isfinite(f)] for f in fields if f.size]
    vals = np.concatenate(finite) if finite else np.zeros(1)
    return 2.0 * float(vals.max()) if vals.size and vals.max() > 0 else 1.0


def build_graph(
    robot_poses,
    frontier_cells: np.ndarray,
    history: HistoryBuffer,
    grid: OccupancyGrid,
) -> MultiplexGraph:
    """Assemble the multiplex graph for one planning decision.

    One field per robot covers both robot-frontier and robot-history-robot
    edges; one field per distinct history goal covers frontier-history-goal
    edges. Unreachable pairs are flagged and carry a finite sentinel
    distance (twice the largest finite distance in the graph).
    """
    if len(robot_poses) < 1:
        raise GraphError("need at least one robot")
    trav = (grid.explored == 1) & (grid.occupied_static == 0)
    robot_cells = np.array([p.cell for p in robot_poses], np.int64)
    for r, c in robot_cells:
        if not trav[r, c]:
            raise GraphError(f"robot cell ({r},{c}) is not statically open")
    frontier_cells = np.asarray(frontier_cells, np.int64).reshape(-1, 2)
    w_cells = history.robot_cells
    g_cells = history.goal_cells

    trav8 = trav.astype(np.uint8)
    n_r, n_f = len(robot_cells), len(frontier_cells)
    n_w, n_g = len(w_cells), len(g_cells)
    d_rf = np.full((n_r, n_f), np.inf)
    d_rw = np.full((n_r, n_w), np.inf)
    d_fg = np.full((n_f, n_g), np.inf)

    for i, (r, c) in enumerate(robot_cells):
        f = fmm_kernel(trav8, np.array([r]), np.array([c]))
        if n_f:
            d_rf[i] = f[frontier_cells[:, 0], frontier_cells[:, 1]]
        if n_w:
            d_rw[i] = f[w_cells[:, 0], w_cells[:, 1]]

    goal_fields = {}
    for j, (r, c) in enumerate(g_cells):
        key = (int(r), int(c))
        if key not in goal_fields:
            if trav[r, c]:
                goal_fields[key] = fmm_kernel(trav8, np.array([r]), np.array([c]))
            else:
                goal_fields[key] = np.full(trav.shape, np.inf)
        if n_f:
            d_fg[:, j] = goal_fields[key][frontier_cells[:, 0], frontier_cells[:, 1]]

    reach_rf = np.isfinite(d_rf)
    reach_rw = np.isfinite(d_rw)
    reach_fg = np.isfinite(d_fg)
    sent = _sentinel(d_rf, d_rw, d_fg)
    d_rf = np.where(reach_rf, d_rf, sent)
    d_rw = np.where(reach_rw, d_rw, sent)
    d_fg = np.where(reach_fg, d_fg, sent)
    return MultiplexGraph(
        robot_cells,
        frontier_cells,
        w_cells,
        g_cells,
        d_rf,
        d_rw,
        d_fg,
        reach_rf,
        reach_rw,
        reach_fg,
        extent=grid.shape,
    )


def graph_debug_dump(graph: MultiplexGraph, path) -> None:
    """JSON dump of node lists, labels and the distance matrices."""
    payload = {
        "extent": list(graph.extent),
        "nodes": {
            "robot": graph.robot_cells.tolist(),
            "frontier": graph.frontier_cells.tolist(),
            "history_robot": graph.history_robot_cells.tolist(),
            "history_goal": graph.history_goal_cells.tolist(),
        },
        "labels": {
            "robot": LABEL_ROBOT,
            "frontier": LABEL_FRONTIER,
            "history_robot": LABEL_HISTORY_ROBOT,
            "history_goal": LABEL_HISTORY_GOAL,
        },
        "d_rf": graph.d_rf.tolist(),
        "d_rw": graph.d_rw.tolist(),
        "d_fg": graph.d_fg.tolist(),
        "reach_rf": graph.reach_rf.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
