"""Dynamic time warping between two pose sequences.

The accumulated-cost recursion runs in a compiled numba kernel because the
diversity metrics align every pair of samples for every condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

# Traceback codes, listed in tie-break order.
DIAG, UP, LEFT = 0, 1, 2  # (i-1, j-1), (i-1, j), (i, j-1)


@dataclass(frozen=True)
class AlignedPair:
    a: np.ndarray  # (K, T_ij), frames of the first sequence along the path
    b: np.ndarray  # (K, T_ij)
    path: list[tuple[int, int]]  # 0-based (i, j) index pairs
    cost: float  # sum of per-cell distances along the path

    @property
    def length(self) -> int:
        return len(self.path)


@numba.njit(cache=True)
def _accumulate(cost):
    n, m = cost.shape
    acc = np.empty((n, m))
    move = np.zeros((n, m), dtype=np.int8)
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                acc[i, j] = cost[i, j]
                continue
            best = np.inf
            arg = DIAG
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
                arg = UP
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
                arg = LEFT
            acc[i, j] = cost[i, j] + best
            move[i, j] = arg
    return acc, move


def pairwise_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(T_a, T_b) matrix of Euclidean distances between frames of (K, T) arrays."""
    diff = a[:, :, None] - b[:, None, :]
    return np.sqrt(np.sum(diff * diff, axis=0))


def dtw_align(a, b) -> AlignedPair:
    a = np.asarray(getattr(a, "frames", a), dtype=np.float64)
    b = np.asarray(getattr(b, "frames", b), dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"dtw_align needs (K, T) arrays with equal K, got {a.shape} and {b.shape}")
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValueError("dtw_align needs non-empty sequences")
    acc, move = _accumulate(pairwise_cost(a, b))
    i, j = a.shape[1] - 1, b.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        step = move[i, j]
        if step == DIAG:
            i, j = i - 1, j - 1
        elif step == UP:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    path.reverse()
    ii = np.array([p[0] for p in path])
    jj = np.array([p[1] for p in path])
    return AlignedPair(a=a[:, ii], b=b[:, jj], path=path, cost=float(acc[-1, -1]))
