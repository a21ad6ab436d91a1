"""Global planners: once per planning cycle, pick a goal cell per robot.

Five planners share one interface: a greedy nearest-pair assigner, a
geodesic Voronoi segmentation planner, a cluster-first route-second
multi-tour planner, a k-means + optimal-transport + tour planner, and the
learned affinity-matching planner. All distances are geodesic over the
statically open region. Every returned goal is an accessible frontier
cell; when no frontier is reachable the planners raise
NoAccessibleFrontier, which the episode runner treats as successful
termination.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._kernels import fmm_kernel
from .affinity import AffinityNetwork
from .assignment import decode_goals, hungarian, sinkhorn
from .autodiff import no_grad
from .graphs import HistoryBuffer, build_graph, sample_frontier_nodes
from .mapping import OccupancyGrid, extract_frontiers

__all__ = [
    "PLANNER_KINDS",
    "NoAccessibleFrontier",
    "GoalAssignment",
    "plan_goals",
    "plan_greedy",
    "plan_vorseg",
    "plan_mtsp",
    "plan_coscan",
    "plan_neural",
    "kmeans",
    "two_opt",
]

PLANNER_KINDS = ("greedy", "vorseg", "mtsp", "coscan", "neural")

UNREACHED = 1e18  # cost sentinel for unreachable pairs fed to the exact solver


class NoAccessibleFrontier(Exception):
    """No frontier is reachable through known open space: mapping is done."""


@dataclass
class GoalAssignment:
    goals: np.ndarray  # (n_robots, 2) cells
    provenance: np.ndarray  # index into the planner's frontier candidates, -1 if idle
    shared: np.ndarray  # robots sharing a frontier with someone else
    diagnostics: dict = field(default_factory=dict)


def _static_open(grid: OccupancyGrid) -> np.ndarray:
    return (grid.explored == 1) & (grid.occupied_static == 0)


def _robot_fields(trav8: np.ndarray, robot_cells: np.ndarray) -> np.ndarray:
    return np.stack(
        [fmm_kernel(trav8, np.array([r]), np.array([c])) for r, c in robot_cells]
    )


def _accessible_frontiers(grid: OccupancyGrid, robot_cells: np.ndarray):
    """Frontier cells, robot fields, and the per-robot distance matrix.

    Raises NoAccessibleFrontier when nothing is reachable."""
    trav = _static_open(grid)
    frontiers = extract_frontiers(grid)
    fields = _robot_fields(trav.astype(np.uint8), robot_cells)
    if len(frontiers) == 0:
        raise NoAccessibleFrontier
    dists = fields[:, frontiers[:, 0], frontiers[:, 1]]  # (n_robots, n_frontiers)
    reachable = np.isfinite(dists).any(axis=0)
    if not reachable.any():
        raise NoAccessibleFrontier
    frontiers = frontiers[reachable]
    dists = dists[:, reachable]
    return frontiers, fields, dists


def _fill_unassigned(goal_idx, shared, dists):
    """Give every goal-less robot its nearest reachable frontier (shared)."""
    for i in range(len(goal_idx)):
        if goal_idx[i] < 0:
            row = dists[i]
            if np.isfinite(row).any():
                goal_idx[i] = int(np.argmin(row))
                shared[i] = True
    return goal_idx, shared


def _finish(robot_cells, frontiers, goal_idx, shared, t0, extra=None) -> GoalAssignment:
    goals = np.empty((len(goal_idx), 2), np.int64)
    for i, j in enumerate(goal_idx):
        goals[i] = frontiers[j] if j >= 0 else robot_cells[i]
    # robots whose frontier someone else also targets are flagged shared
    idx = np.asarray(goal_idx)
    for i, j in enumerate(goal_idx):
        if j >= 0 and (idx == j).sum() > 1:
            shared[i] = True
    diag = {"plan_seconds": time.perf_counter() - t0}
    if extra:
        diag.update(extra)
    return GoalAssignment(goals=goals, provenance=idx, shared=shared, diagnostics=diag)


def plan_greedy(grid: OccupancyGrid, poses) -> GoalAssignment:
    """Sweep all (robot, frontier) pairs by distance; first free pair wins."""
    t0 = time.perf_counter()
    robot_cells = np.array([p.cell for p in poses], np.int64)
    frontiers, _, dists = _accessible_frontiers(grid, robot_cells)
    n_r, n_f = dists.shape
    order = np.argsort(dists, axis=None, kind="stable")
    goal_idx = np.full(n_r, -1, np.int64)
    shared = np.zeros(n_r, bool)
    taken = np.zeros(n_f, bool)
    for flat in order:
        i, j = divmod(int(flat), n_f)
        if not np.isfinite(dists[i, j]):
            break
        if goal_idx[i] < 0 and not taken[j]:
            goal_idx[i] = j
            taken[j] = True
    _fill_unassigned(goal_idx, shared, dists)
    return _finish(robot_cells, frontiers, goal_idx, shared, t0)


def _farthest_point_seeds(trav8, frontiers, k):
    """Geodesic farthest-point sampling over frontier cells; returns seed
    indices and the seed-to-everywhere fields."""
    seeds = [0]  # frontiers arrive lexicographically sorted
    fields = [fmm_kernel(trav8, frontiers[0, 0:1].copy(), frontiers[0, 1:2].copy())]
    while len(seeds) < k:
        best = np.full(len(frontiers), np.inf)
        for f in fields:
            best = np.minimum(best, f[frontiers[:, 0], frontiers[:, 1]])
        best[~np.isfinite(best)] = -1.0  # never seed unreachable cells
        nxt = int(np.argmax(best))
        if nxt in seeds or best[nxt] <= 0:
            break
        seeds.append(nxt)
        fields.append(fmm_kernel(trav8, frontiers[nxt, 0:1].copy(), frontiers[nxt, 1:2].copy()))
    return seeds, fields


def plan_vorseg(grid: OccupancyGrid, poses, seed: int = 0) -> GoalAssignment:
    """Geodesic Voronoi segmentation of the frontiers, one region per robot."""
    t0 = time.perf_counter()
    robot_cells = np.array([p.cell for p in poses], np.int64)
    frontiers, robot_fields, dists = _accessible_frontiers(grid, robot_cells)
    k = len(poses)
    if len(frontiers) < k:
        out = plan_greedy(grid, poses)
        out.diagnostics["fallback"] = "greedy"
        return out
    trav8 = _static_open(grid).astype(np.uint8)
    seeds, seed_fields = _farthest_point_seeds(trav8, frontiers, k)
    seed_d = np.stack(
        [f[frontiers[:, 0], frontiers[:, 1]] for f in seed_fields]
    )  # (n_seeds, n_frontiers)
    region = np.argmin(np.where(np.isfinite(seed_d), seed_d, np.inf), axis=0)
    # robots to regions on robot-to-seed geodesic cost
    cost = np.stack([dists[:, s] for s in seeds], axis=1)
    cost = np.where(np.isfinite(cost), cost, UNREACHED)
    rows, cols, _ = hungarian(cost)
    goal_idx = np.full(k, -1, np.int64)
    shared = np.zeros(k, bool)
    for i, s in zip(rows, cols):
        members = np.flatnonzero(region == s)
        if len(members):
            local = dists[i, members]
            if np.isfinite(local).any():
                goal_idx[i] = int(members[np.argmin(np.where(np.isfinite(local), local, np.inf))])
    _fill_unassigned(goal_idx, shared, dists)
    return _finish(
        robot_cells, frontiers, goal_idx, shared, t0, {"regions": region.tolist()}
    )


def two_opt(order, dist, entry):
    """Improve an open tour by 2-opt segment reversal.

    `order` indexes nodes, `dist` is the pairwise node distance matrix and
    `entry[j]` the robot-to-node cost. Returns (order, lengths) where
    lengths logs the tour length after each accepted improvement (never
    increasing)."""
    order = list(order)

    def length(o):
        total = entry[o[0]]
        for a, b in zip(o, o[1:]):
            total += dist[a, b]
        return total

    lengths = [length(order)]
    improved = True
    while improved:
        improved = False
        for a in range(len(order) - 1):
            for b in range(a + 1, len(order)):
                cand = order[:a] + order[a : b + 1][::-1] + order[b + 1 :]
                lc = length(cand)
                if lc < lengths[-1] - 1e-12:
                    order = cand
                    lengths.append(lc)
                    improved = True
    return order, lengths


def _tour_first_stop(trav8, robot_field, member_cells, cap, rng):
    """Nearest-neighbor + 2-opt tour over (subsampled) cells; first stop index."""
    cells = member_cells
    if len(cells) > cap:
        pick = np.sort(rng.choice(len(cells), size=cap, replace=False))
        cells = cells[pick]
    else:
        pick = np.arange(len(cells))
    entry = robot_field[cells[:, 0], cells[:, 1]]
    entry = np.where(np.isfinite(entry), entry, UNREACHED)
    n = len(cells)
    if n == 1:
        return pick[0], [float(entry[0])]
    dist = np.zeros((n, n))
    for a in range(n):
        f = fmm_kernel(trav8, cells[a, 0:1].copy(), cells[a, 1:2].copy())
        row = f[cells[:, 0], cells[:, 1]]
        dist[a] = np.where(np.isfinite(row), row, UNREACHED)
    # nearest-neighbor from the robot, then 2-opt
    order = [int(np.argmin(entry))]
    left = set(range(n)) - set(order)
    while left:
        last = order[-1]
        nxt = min(left, key=lambda j: (dist[last, j], j))
        order.append(nxt)
        left.remove(nxt)
    order, lengths = two_opt(order, dist, entry)
    return pick[order[0]], lengths


def _cluster_and_tour(grid, poses, seed, cluster_fn, diag_key):
    """Common skeleton of the two cluster-then-tour planners."""
    t0 = time.perf_counter()
    robot_cells = np.array([p.cell for p in poses], np.int64)
    frontiers, robot_fields, dists = _accessible_frontiers(grid, robot_cells)
    k = len(poses)
    if len(frontiers) < k:
        out = plan_greedy(grid, poses)
        out.diagnostics["fallback"] = "greedy"
        return out
    trav8 = _static_open(grid).astype(np.uint8)
    rng = np.random.default_rng(seed)
    labels, anchors = cluster_fn(trav8, frontiers, k, rng)
    # robots to clusters by exact assignment on anchor entry cost
    cost = np.empty((k, k))
    for c in range(k):
        cost[:, c] = dists[:, anchors[c]]
    cost = np.where(np.isfinite(cost), cost, UNREACHED)
    rows, cols, _ = hungarian(cost)
    goal_idx = np.full(k, -1, np.int64)
    shared = np.zeros(k, bool)
    tours = {}
    for i, c in zip(rows, cols):
        members = np.flatnonzero(labels == c)
        members = members[np.isfinite(dists[i, members])]
        if len(members) == 0:
            continue
        first, lengths = _tour_first_stop(
            trav8, robot_fields[i], frontiers[members], cap=16, rng=rng
        )
        goal_idx[i] = int(members[first])
        tours[int(i)] = lengths
    _fill_unassigned(goal_idx, shared, dists)
    return _finish(
        robot_cells, frontiers, goal_idx, shared, t0,
        {diag_key: labels.tolist(), "tour_lengths": tours},
    )


def plan_mtsp(grid: OccupancyGrid, poses, seed: int = 0) -> GoalAssignment:
    """Cluster-first route-second multi-tour planner on the frontier graph."""

    def balanced_geodesic_clusters(trav8, frontiers, k, rng):
        seeds, seed_fields = _farthest_point_seeds(trav8, frontiers, k)
        seed_d = np.stack([f[frontiers[:, 0], frontiers[:, 1]] for f in seed_fields])
        seed_d = np.where(np.isfinite(seed_d), seed_d, UNREACHED)
        capacity = math.ceil(len(frontiers) / len(seeds))
        labels = np.full(len(frontiers), -1)
        sizes = [0] * len(seeds)
        for j in np.argsort(seed_d.min(axis=0), kind="stable"):
            for c in np.argsort(seed_d[:, j], kind="stable"):
                if sizes[c] < capacity:
                    labels[j] = c
                    sizes[c] += 1
                    break
        return labels, [seeds[c] for c in range(len(seeds))]

    return _cluster_and_tour(grid, poses, seed, balanced_geodesic_clusters, "clusters")


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iters: int = 50):
    """Plain Euclidean k-means with ++-style seeding; returns (labels, centers)."""
    pts = np.asarray(points, float)
    centers = [pts[int(rng.integers(len(pts)))]]
    while len(centers) < k:
        d2 = np.min(
            [(np.linalg.norm(pts - c, axis=1) ** 2) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(pts[int(rng.integers(len(pts)))])
            continue
        centers.append(pts[int(rng.choice(len(pts), p=d2 / total))])
    centers = np.array(centers)
    labels = np.zeros(len(pts), int)
    for _ in range(iters):
        d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
        new_labels = np.argmin(d, axis=1)
        for c in range(k):
            if not (new_labels == c).any():  # reseed empty cluster at the worst point
                new_labels[int(np.argmax(d.min(axis=1)))] = c
        if np.array_equal(new_labels, labels) and _ > 0:
            break
        labels = new_labels
        for c in range(k):
            centers[c] = pts[labels == c].mean(axis=0)
    return labels, centers


def plan_coscan(grid: OccupancyGrid, poses, seed: int = 0) -> GoalAssignment:
    """k-means frontier clusters, exact robot-cluster transport, then tours."""

    def kmeans_clusters(trav8, frontiers, k, rng):
        labels, centers = kmeans(frontiers.astype(float), k, rng)
        anchors = []
        for c in range(k):
            members = np.flatnonzero(labels == c)
            d2 = ((frontiers[members] - centers[c]) ** 2).sum(axis=1)
            anchors.append(int(members[np.argmin(d2)]))
        return labels, anchors

    return _cluster_and_tour(grid, poses, seed, kmeans_clusters, "clusters")


def plan_neural(
    grid: OccupancyGrid,
    poses,
    history: HistoryBuffer,
    network: AffinityNetwork,
    ablation: str = "full",
    seed: int = 0,
    frontier_cap: int = 64,
    mode: str = "argmax",
    rng: np.random.Generator | None = None,
    sinkhorn_iters: int = 500,
) -> GoalAssignment:
    """Affinity network + differentiable assignment, decoded to goal cells."""
    t0 = time.perf_counter()
    robot_cells = np.array([p.cell for p in poses], np.int64)
    frontiers, _, dists = _accessible_frontiers(grid, robot_cells)
    nodes = sample_frontier_nodes(frontiers, cap=frontier_cap, seed=seed)
    graph = build_graph(poses, nodes, history, grid)
    keep = graph.accessible_frontiers()
    if not keep.any():
        raise NoAccessibleFrontier
    if not keep.all():
        nodes = nodes[keep]
        graph = build_graph(poses, nodes, history, grid)
    with no_grad():
        out = network.forward(graph, ablation=ablation)
        transport = sinkhorn(out.affinity, max_iters=sinkhorn_iters)
    assignment = decode_goals(transport, mode=mode, rng=rng)
    goals = nodes[assignment.goal_indices]
    diag = {
        "plan_seconds": time.perf_counter() - t0,
        "affinity": out.affinity.data.copy(),
        "sinkhorn_iterations": transport.iterations,
        "sinkhorn_residual": transport.residual,
        "log_prob": assignment.log_prob.item(),
    }
    return GoalAssignment(
        goals=goals,
        provenance=assignment.goal_indices,
        shared=assignment.shared,
        diagnostics=diag,
    )


def plan_goals(
    kind: str,
    grid: OccupancyGrid,
    poses,
    history: HistoryBuffer | None = None,
    seed: int = 0,
    network: AffinityNetwork | None = None,
    ablation: str = "full",
    rng: np.random.Generator | None = None,
) -> GoalAssignment:
    """Dispatch on planner kind; `kind` may carry an ablation as
    'neural:geodesic'."""
    if ":" in kind:
        kind, ablation = kind.split(":", 1)
    if kind == "greedy":
        return plan_greedy(grid, poses)
    if kind == "vorseg":
        return plan_vorseg(grid, poses, seed)
    if kind == "mtsp":
        return plan_mtsp(grid, poses, seed)
    if kind == "coscan":
        return plan_coscan(grid, poses, seed)
    if kind == "neural":
        if network is None:
            raise ValueError("neural planner needs a network")
        return plan_neural(
            grid, poses, history or HistoryBuffer(), network, ablation=ablation, seed=seed
        )
    raise ValueError(f"unknown planner kind {kind!r}; pick one of {PLANNER_KINDS}")
