import numpy as np
import pytest

from activemap.geodesic import fmm_field
from activemap.graphs import (
    GraphError,
    HistoryBuffer,
    build_graph,
    graph_debug_dump,
    sample_frontier_nodes,
    update_history,
)
from activemap.mapping import OccupancyGrid, extract_frontiers, integrate_observation
from activemap.scene import KinematicsConfig, Pose, generate_maze, sense, spawn_robots


def explored_grid(scene, poses, n_scans=1):
    cfg = KinematicsConfig(fov=2 * np.pi, n_rays=240)
    grid = OccupancyGrid.blank(*scene.walls.shape)
    for _ in range(n_scans):
        for i in range(len(poses)):
            integrate_observation(grid, sense(scene, poses, i, cfg))
    return grid


# -- frontier node sampling -------------------------------------------------


def test_sampling_under_cap_is_identity():
    cells = np.array([[2, 3], [2, 4], [9, 1], [5, 5], [2, 5]])
    nodes = sample_frontier_nodes(cells, cap=64, seed=0)
    assert {tuple(c) for c in nodes} == {tuple(c) for c in cells}


def test_sampling_proportional_quotas():
    big = np.array([[5, c] for c in range(1, 91)])  # one 90-cell component
    small = np.array([[20, c] for c in range(1, 11)])  # one 10-cell component
    nodes = sample_frontier_nodes(np.concatenate([big, small]), cap=10, seed=1)
    assert len(nodes) == 10
    from_big = sum(1 for r, c in nodes if r == 5)
    from_small = sum(1 for r, c in nodes if r == 20)
    assert (from_big, from_small) == (9, 1)


def test_sampling_every_component_represented():
    comps = [np.array([[10 * k, c] for c in range(1, 30)]) for k in range(1, 5)]
    comps.append(np.array([[90, 1]]))  # singleton component
    nodes = sample_frontier_nodes(np.concatenate(comps), cap=8, seed=3)
    rows = {r for r, _ in nodes}
    assert 90 in rows
    assert len(nodes) == 8


def test_sampling_deterministic():
    rng = np.random.default_rng(0)
    cells = rng.integers(1, 60, size=(200, 2))
    a = sample_frontier_nodes(cells, cap=16, seed=11)
    b = sample_frontier_nodes(cells, cap=16, seed=11)
    assert np.array_equal(a, b)


def test_sampling_empty_set():
    assert len(sample_frontier_nodes(np.zeros((0, 2)), cap=8, seed=0)) == 0


# -- history buffer ------------------------------------------------------------


def test_history_append_and_eviction():
    buf = HistoryBuffer(cap=8)
    for k in range(9):
        buf = update_history(buf, k, [[1 + k, 1]], [[2, 2 + k]])
    assert len(buf.entries) == 8
    assert buf.entries[0][0] == 1  # oldest cycle evicted
    assert len(buf.robot_cells) == 8


def test_history_count_mismatch():
    with pytest.raises(GraphError):
        update_history(HistoryBuffer(), 0, [[1, 1]], [[2, 2], [3, 3]])


# -- graph construction -----------------------------------------------------------


def test_structure_no_history():
    scene = generate_maze(21, 48, 48, corridor_width=5)
    poses = spawn_robots(scene, 2, seed=0)
    grid = explored_grid(scene, poses)
    frontiers = extract_frontiers(grid)
    nodes = sample_frontier_nodes(frontiers, cap=3, seed=0)
    g = build_graph(poses, nodes, HistoryBuffer(), grid)
    assert g.d_rf.shape == (2, 3)  # 6 directed robot-frontier pairs
    assert g.n_robots == 2 and g.n_frontiers == 3
    assert len(g.history_robot_cells) == 0 and len(g.history_goal_cells) == 0
    assert np.all(np.isfinite(g.d_rf))


def test_structure_with_history_cycles():
    scene = generate_maze(22, 48, 48, corridor_width=5)
    poses = spawn_robots(scene, 3, seed=1)
    grid = explored_grid(scene, poses)
    nodes = sample_frontier_nodes(extract_frontiers(grid), cap=4, seed=0)
    buf = HistoryBuffer()
    cells = [p.cell for p in poses]
    buf = update_history(buf, 0, cells, cells)
    buf = update_history(buf, 1, cells, cells)
    g = build_graph(poses, nodes, buf, grid)
    assert len(g.history_robot_cells) == 6  # 3 robots x 2 cycles
    assert len(g.history_goal_cells) == 6
    assert g.d_rw.shape == (3, 6)
    assert g.d_fg.shape == (4, 6)


def test_unreachable_frontier_flagged():
    grid = OccupancyGrid.blank(9, 9)
    grid.explored[:] = 1
    grid.occupied_static[:, 4] = 1  # wall column splits the map
    poses = [Pose(2.5, 2.5, 0.0)]
    nodes = np.array([[2, 2], [2, 7]])  # second node behind the wall
    g = build_graph(poses, nodes, HistoryBuffer(), grid)
    assert g.reach_rf[0, 0]
    assert not g.reach_rf[0, 1]
    assert np.isfinite(g.d_rf[0, 1])  # sentinel, not inf
    assert list(g.accessible_frontiers()) == [True, False]


def test_robot_on_non_open_cell_rejected():
    grid = OccupancyGrid.blank(9, 9)
    with pytest.raises(GraphError):
        build_graph([Pose(4.5, 4.5, 0.0)], np.zeros((0, 2)), HistoryBuffer(), grid)


def test_build_graph_pure():
    scene = generate_maze(23, 48, 48, corridor_width=5)
    poses = spawn_robots(scene, 2, seed=5)
    grid = explored_grid(scene, poses)
    nodes = sample_frontier_nodes(extract_frontiers(grid), cap=8, seed=2)
    a = build_graph(poses, nodes, HistoryBuffer(), grid)
    b = build_graph(poses, nodes, HistoryBuffer(), grid)
    assert np.array_equal(a.d_rf, b.d_rf)
    assert np.array_equal(a.reach_rf, b.reach_rf)


def test_cross_distance_metric_symmetry():
    scene = generate_maze(24, 48, 48, corridor_width=5)
    poses = spawn_robots(scene, 2, seed=3)
    grid = explored_grid(scene, poses, n_scans=1)
    nodes = sample_frontier_nodes(extract_frontiers(grid), cap=6, seed=0)
    g = build_graph(poses, nodes, HistoryBuffer(), grid)
    trav = (grid.explored == 1) & (grid.occupied_static == 0)
    for j, cell in enumerate(nodes):
        f = fmm_field(trav, [cell])
        for i, p in enumerate(poses):
            if g.reach_rf[i, j]:
                back = f[p.cell]
                assert abs(back - g.d_rf[i, j]) <= 0.02 * max(back, g.d_rf[i, j]) + 1e-9


def test_debug_dump(tmp_path):
    import json

    scene = generate_maze(25, 48, 48, corridor_width=5)
    poses = spawn_robots(scene, 2, seed=4)
    grid = explored_grid(scene, poses)
    nodes = sample_frontier_nodes(extract_frontiers(grid), cap=4, seed=0)
    g = build_graph(poses, nodes, HistoryBuffer(), grid)
    p = tmp_path / "graph.json"
    graph_debug_dump(g, p)
    data = json.loads(p.read_text())
    assert len(data["nodes"]["robot"]) == 2
    assert len(data["d_rf"]) == 2
