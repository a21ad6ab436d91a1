"""Numba kernels for the hot loops: fast marching, raycasting, collision sweeps.

Grid convention throughout the package: arrays are indexed [row, col];
continuous coordinates are (x, y) with x along columns and y along rows,
so cell (r, c) spans x in [c, c+1) and y in [r, r+1). Headings are
measured from +x toward +y.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_EPS = 1e-12


@njit(cache=True)
def fmm_kernel(traversable, src_rows, src_cols):
    """First-order fast marching solution of |grad D| = 1, unit cell size.

    Non-traversable cells and unreached cells stay +inf. Sources get 0.
    Uses the two-sided Godunov update with accepted neighbors and a manual
    binary heap with lazy deletion.
    """
    h, w = traversable.shape
    dist = np.full((h, w), np.inf)
    accepted = np.zeros((h, w), np.uint8)

    cap = 5 * h * w + 16
    hd = np.empty(cap)
    hr = np.empty(cap, np.int32)
    hc = np.empty(cap, np.int32)
    hn = 0

    for k in range(src_rows.shape[0]):
        r = src_rows[k]
        c = src_cols[k]
        dist[r, c] = 0.0
        hd[hn] = 0.0
        hr[hn] = r
        hc[hn] = c
        i = hn
        hn += 1
        while i > 0:
            p = (i - 1) // 2
            if hd[p] <= hd[i]:
                break
            hd[p], hd[i] = hd[i], hd[p]
            hr[p], hr[i] = hr[i], hr[p]
            hc[p], hc[i] = hc[i], hc[p]
            i = p

    while hn > 0:
        d0 = hd[0]
        r0 = hr[0]
        c0 = hc[0]
        hn -= 1
        hd[0] = hd[hn]
        hr[0] = hr[hn]
        hc[0] = hc[hn]
        i = 0
        while True:
            l = 2 * i + 1
            rgt = 2 * i + 2
            small = i
            if l < hn and hd[l] < hd[small]:
                small = l
            if rgt < hn and hd[rgt] < hd[small]:
                small = rgt
            if small == i:
                break
            hd[small], hd[i] = hd[i], hd[small]
            hr[small], hr[i] = hr[i], hr[small]
            hc[small], hc[i] = hc[i], hc[small]
            i = small

        if accepted[r0, c0] == 1 or d0 > dist[r0, c0]:
            continue
        accepted[r0, c0] = 1

        for k in range(4):
            if k == 0:
                nr, nc = r0 - 1, c0
            elif k == 1:
                nr, nc = r0 + 1, c0
            elif k == 2:
                nr, nc = r0, c0 - 1
            else:
                nr, nc = r0, c0 + 1
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            if traversable[nr, nc] == 0 or accepted[nr, nc] == 1:
                continue
            a = np.inf
            if nr > 0 and accepted[nr - 1, nc] == 1 and dist[nr - 1, nc] < a:
                a = dist[nr - 1, nc]
            if nr + 1 < h and accepted[nr + 1, nc] == 1 and dist[nr + 1, nc] < a:
                a = dist[nr + 1, nc]
            b = np.inf
            if nc > 0 and accepted[nr, nc - 1] == 1 and dist[nr, nc - 1] < b:
                b = dist[nr, nc - 1]
            if nc + 1 < w and accepted[nr, nc + 1] == 1 and dist[nr, nc + 1] < b:
                b = dist[nr, nc + 1]
            if a > b:
                a, b = b, a
            if b - a >= 1.0 or b == np.inf:
                nd = a + 1.0
            else:
                diff = a - b
                nd = 0.5 * (a + b + math.sqrt(2.0 - diff * diff))
            if nd < dist[nr, nc] - _EPS:
                dist[nr, nc] = nd
                hd[hn] = nd
                hr[hn] = nr
                hc[hn] = nc
                i = hn
                hn += 1
                while i > 0:
                    p = (i - 1) // 2
                    if hd[p] <= hd[i]:
                        break
                    hd[p], hd[i] = hd[i], hd[p]
                    hr[p], hr[i] = hr[i], hr[p]
                    hc[p], hc[i] = hc[i], hc[p]
                    i = p
    return dist


@njit(cache=True)
def raycast_walls(walls, x0, y0, angles, max_range):
    """Cast rays through the cell grid, returning hit distance and wall flag.

    Distances are in cell units along each ray; rays that reach `max_range`
    without touching a wall report (max_range, False).
    """
    n = angles.shape[0]
    h, w = walls.shape
    t_hit = np.empty(n)
    is_wall = np.zeros(n, np.uint8)
    for k in range(n):
        dx = math.cos(angles[k])
        dy = math.sin(angles[k])
        ix = int(math.floor(x0))
        iy = int(math.floor(y0))
        if dx > _EPS:
            step_x = 1
            t_max_x = (ix + 1.0 - x0) / dx
            t_dx = 1.0 / dx
        elif dx < -_EPS:
            step_x = -1
            t_max_x = (ix - x0) / dx
            t_dx = -1.0 / dx
        else:
            step_x = 0
            t_max_x = np.inf
            t_dx = np.inf
        if dy > _EPS:
            step_y = 1
            t_max_y = (iy + 1.0 - y0) / dy
            t_dy = 1.0 / dy
        elif dy < -_EPS:
            step_y = -1
            t_max_y = (iy - y0) / dy
            t_dy = -1.0 / dy
        else:
            step_y = 0
            t_max_y = np.inf
            t_dy = np.inf

        t_hit[k] = max_range
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                ix += step_x
                t_max_x += t_dx
            else:
                t = t_max_y
                iy += step_y
                t_max_y += t_dy
            if t > max_range:
                break
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            if walls[iy, ix] == 1:
                t_hit[k] = t
                is_wall[k] = 1
                break
    return t_hit, is_wall


@njit(cache=True)
def integrate_rays(explored, occupied, x0, y0, angles, t_hit, is_wall):
    """Mark cells fully traversed by each ray explored; wall endpoints occupied.

    A cell counts as seen-through only when the ray exits it no later than
    the hit distance, so partially-visible cells stay unknown. The wall cell
    entered exactly at the hit distance latches occupied.
    """
    n = angles.shape[0]
    h, w = explored.shape
    for k in range(n):
        dx = math.cos(angles[k])
        dy = math.sin(angles[k])
        limit = t_hit[k]
        ix = int(math.floor(x0))
        iy = int(math.floor(y0))
        if dx > _EPS:
            step_x = 1
            t_max_x = (ix + 1.0 - x0) / dx
            t_dx = 1.0 / dx
        elif dx < -_EPS:
            step_x = -1
            t_max_x = (ix - x0) / dx
            t_dx = -1.0 / dx
        else:
            step_x = 0
            t_max_x = np.inf
            t_dx = np.inf
        if dy > _EPS:
            step_y = 1
            t_max_y = (iy + 1.0 - y0) / dy
            t_dy = 1.0 / dy
        elif dy < -_EPS:
            step_y = -1
            t_max_y = (iy - y0) / dy
            t_dy = -1.0 / dy
        else:
            step_y = 0
            t_max_y = np.inf
            t_dy = np.inf

        while True:
            exit_t = t_max_x if t_max_x < t_max_y else t_max_y
            entry_next = exit_t
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            if exit_t <= limit + 1e-9:
                explored[iy, ix] = 1
            else:
                break
            if t_max_x < t_max_y:
                ix += step_x
                t_max_x += t_dx
            else:
                iy += step_y
                t_max_y += t_dy
            if entry_next > limit + 1e-9:
                break
            if is_wall[k] == 1 and abs(entry_next - limit) <= 1e-9:
                if 0 <= ix < w and 0 <= iy < h:
                    explored[iy, ix] = 1
                    occupied[iy, ix] = 1
                break


@njit(cache=True)
def disk_collides(walls, x, y, rad, others_x, others_y, sum_rad):
    r0 = int(math.floor(y - rad))
    r1 = int(math.floor(y + rad))
    c0 = int(math.floor(x - rad))
    c1 = int(math.floor(x + rad))
    h, w = walls.shape
    rad2 = rad * rad
    for r in range(max(r0, 0), min(r1, h - 1) + 1):
        for c in range(max(c0, 0), min(c1, w - 1) + 1):
            if walls[r, c] == 1:
                nx = min(max(x, c), c + 1.0)
                ny = min(max(y, r), r + 1.0)
                ddx = nx - x
                ddy = ny - y
                if ddx * ddx + ddy * ddy < rad2:
                    return True
    for k in range(others_x.shape[0]):
        ddx = others_x[k] - x
        ddy = others_y[k] - y
        if ddx * ddx + ddy * ddy < sum_rad * sum_rad:
            return True
    return False


@njit(cache=True)
def sweep_move(walls, x0, y0, dx, dy, length, rad, others_x, others_y, sum_rad):
    """Advance a disk along a direction, stopping at the last contact-free spot.

    Returns (travelled, collided). Scans in 0.02-cell substeps.
    """
    if length <= 0.0:
        return 0.0, False
    n = int(math.ceil(length / 0.02))
    if n < 1:
        n = 1
    travelled = 0.0
    for i in range(1, n + 1):
        t = length * i / n
        x = x0 + dx * t
        y = y0 + dy * t
        if disk_collides(walls, x, y, rad, others_x, others_y, sum_rad):
            return travelled, True
        travelled = t
    return length, False


def warmup() -> None:
    """Trigger JIT compilation of all kernels on tiny inputs."""
    trav = np.ones((4, 4), np.uint8)
    fmm_kernel(trav, np.array([1], np.int64), np.array([1], np.int64))
    walls = np.zeros((4, 4), np.uint8)
    walls[0, :] = 1
    angles = np.array([0.3])
    t, iw = raycast_walls(walls, 1.5, 1.5, angles, 5.0)
    explored = np.zeros((4, 4), np.uint8)
    occupied = np.zeros((4, 4), np.uint8)
    integrate_rays(explored, occupied, 1.5, 1.5, angles, t, iw)
    sweep_move(walls, 1.5, 1.5, 1.0, 0.0, 0.5, 0.3, np.empty(0), np.empty(0), 0.6)
