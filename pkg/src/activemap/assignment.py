"""Assignment layer: Sinkhorn normalization, exact solver, goal decoding.

Sinkhorn alternately normalizes rows and columns of a positive affinity
matrix (padded square with a small constant) until both marginals are
uniform, staying differentiable end to end. The exact Hungarian solver
(scipy) serves as oracle and for the classical baselines. Decoding turns
the transport matrix into a conflict-free robot-to-frontier assignment,
greedy at inference and sampled (with differentiable log-probabilities)
during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .autodiff import ContractError, Tensor, concat, slice_rows

__all__ = ["SinkhornResult", "Assignment", "sinkhorn", "hungarian", "decode_goals"]

PAD_VALUE = 1e-6


@dataclass
class SinkhornResult:
    transport: Tensor  # (m, n) block for the real robots and frontiers
    padded: Tensor  # (s, s) doubly stochastic system
    iterations: int
    residual: float


@dataclass
class Assignment:
    goal_indices: np.ndarray  # per-robot frontier-node index
    shared: np.ndarray  # True where a surplus robot shares a frontier
    log_prob: Tensor  # joint log-probability of the decoded assignment
    entropy: Tensor  # summed entropy of the per-robot decision distributions

    def __iter__(self):
        return iter(self.goal_indices)


def sinkhorn(
    affinity,
    max_iters: int = 100,
    tol: float = 1e-6,
    pad_value: float = PAD_VALUE,
) -> SinkhornResult:
    """Alternate row/column normalization toward a doubly stochastic matrix.

    Rectangular input is padded square with `pad_value`. Every entry must be
    strictly positive before padding. With tol=0 exactly `max_iters`
    iterations run, which keeps the unrolled computation fixed for
    gradient checks.
    """
    t = affinity if isinstance(affinity, Tensor) else Tensor(affinity)
    if t.data.ndim != 2 or t.data.size == 0:
        raise ContractError("affinity must be a non-empty 2D matrix")
    if np.any(t.data <= 0):
        raise ContractError("affinity entries must be strictly positive")
    m, n = t.data.shape
    s = max(m, n)
    if n < s:
        t = concat([t, Tensor(np.full((m, s - n), pad_value))], axis=1)
    if m < s:
        t = concat([t, Tensor(np.full((s - m, s), pad_value))], axis=0)

    iterations = 0
    residual = np.inf
    for _ in range(max_iters):
        t = t / t.sum(axis=1, keepdims=True)
        t = t / t.sum(axis=0, keepdims=True)
        iterations += 1
        residual = max(
            np.abs(t.data.sum(axis=1) - 1.0).max(),
            np.abs(t.data.sum(axis=0) - 1.0).max(),
        )
        if tol > 0 and residual < tol:
            break
    block = slice_rows(t, 0, m)
    if n < s:
        block = slice_rows(block.T, 0, n).T
    return SinkhornResult(transport=block, padded=t, iterations=iterations, residual=residual)


def hungarian(cost: np.ndarray):
    """Optimal one-to-one assignment minimizing total cost (exact).

    Returns (row indices, col indices, total cost) pairing min(m, n) rows
    with columns.
    """
    cost = np.asarray(cost, np.float64)
    if not np.all(np.isfinite(cost)):
        raise ContractError("costs must be finite; use a large sentinel for unreachable pairs")
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, float(cost[rows, cols].sum())


def _row_terms(transport: Tensor, row: int, col_mask: np.ndarray):
    """Differentiable (selected probability, remaining-row mass, entropy)."""
    m, n = transport.data.shape
    sel = np.zeros((m, n))
    sel[row, col_mask] = 1.0
    masked = transport * sel
    total = masked.sum()
    p = masked / total
    # entries outside the mask are exactly zero; drop them from the entropy
    safe = p + (1.0 - sel)
    entropy = -(p * safe.log()).sum()
    return p, total, entropy


def decode_goals(
    result: SinkhornResult, mode: str = "argmax", rng: np.random.Generator | None = None
) -> Assignment:
    """Decode a transport matrix into a conflict-free assignment.

    argmax mode repeatedly takes the globally largest remaining entry and
    strikes its row and column. sample mode draws a frontier per robot in
    index order from its renormalized remaining row, accumulating
    differentiable log-probabilities and entropies. When robots outnumber
    frontiers the surplus robots take their individually best frontier,
    flagged shared.
    """
    t = result.transport
    values = t.data
    m, n = values.shape
    goal = np.full(m, -1, np.int64)
    shared = np.zeros(m, bool)
    log_prob = Tensor(0.0)
    entropy = Tensor(0.0)
    col_free = np.ones(n, bool)

    if mode == "argmax":
        work = values.copy()
        for _ in range(min(m, n)):
            i, j = np.unravel_index(np.argmax(work), work.shape)
            goal[i] = j
            work[i, :] = -np.inf
            work[:, j] = -np.inf
            col_free[j] = False
        for i in range(m):
            if goal[i] < 0:  # surplus robot: best frontier, possibly shared
                goal[i] = int(np.argmax(values[i]))
                shared[i] = True
    elif mode == "sample":
        if rng is None:
            raise ContractError("sample mode needs an rng")
        for i in range(m):
            if not col_free.any():
                goal[i] = int(np.argmax(values[i]))
                shared[i] = True
                continue
            p, total, h = _row_terms(t, i, col_free)
            probs = values[i] * col_free
            probs = probs / probs.sum()
            j = int(rng.choice(n, p=probs))
            goal[i] = j
            onehot = np.zeros((m, n))
            onehot[i, j] = 1.0
            chosen = (t * onehot).sum()
            log_prob = log_prob + (chosen / total).log()
            entropy = entropy + h
            col_free[j] = False
    else:
        raise ContractError(f"unknown decode mode {mode!r}")
    return Assignment(goal_indices=goal, shared=shared, log_prob=log_prob, entropy=entropy)
