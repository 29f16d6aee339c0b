"""Rectangular maximum-weight linear assignment.

:func:`solve_lap_max` runs a shortest-augmenting-path solver with dual
potentials (the Jonker-Volgenant family) on ``max(S) - S``; every row is
assigned to a distinct column. :func:`brute_force_lap` enumerates all
injective mappings and exists to check the solver on small instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

BRUTE_MAX_ROWS = 8
BRUTE_MAX_COLS = 10


class ShapeError(ValueError):
    """More rows than columns: no injective assignment exists."""


@dataclass(frozen=True)
class Assignment:
    row_to_col: np.ndarray
    total: float

    def __len__(self) -> int:
        return len(self.row_to_col)

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, int(j)) for i, j in enumerate(self.row_to_col)]


def assignment_total(S: np.ndarray, row_to_col: np.ndarray) -> float:
    """Exactly rounded sum of the selected entries, independent of summation order."""
    return math.fsum(float(S[i, j]) for i, j in enumerate(row_to_col))


@numba.njit(cache=True)
def _augmenting_path(cost):
    n_rows, n_cols = cost.shape
    u = np.zeros(n_rows)
    v = np.zeros(n_cols)
    shortest = np.empty(n_cols)
    path = np.full(n_cols, -1, dtype=np.int64)
    col4row = np.full(n_rows, -1, dtype=np.int64)
    row4col = np.full(n_cols, -1, dtype=np.int64)
    remaining = np.empty(n_cols, dtype=np.int64)
    seen_row = np.zeros(n_rows, dtype=np.bool_)
    seen_col = np.zeros(n_cols, dtype=np.bool_)

    for cur in range(n_rows):
        for j in range(n_cols):
            remaining[j] = n_cols - j - 1
            shortest[j] = np.inf
        seen_row[:] = False
        seen_col[:] = False
        n_remaining = n_cols
        min_val = 0.0
        i = cur
        sink = -1
        while sink == -1:
            seen_row[i] = True
            lowest = np.inf
            index = -1
            for it in range(n_remaining):
                j = remaining[it]
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                # among equally short columns prefer a free one, it ends the search
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest = shortest[j]
                    index = it
            min_val = lowest
            if min_val == np.inf:
                return col4row, False
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            seen_col[j] = True
            n_remaining -= 1
            remaining[index] = remaining[n_remaining]

        u[cur] += min_val
        for r in range(n_rows):
            if seen_row[r] and r != cur:
                u[r] += min_val - shortest[col4row[r]]
        for c in range(n_cols):
            if seen_col[c]:
                v[c] -= min_val - shortest[c]

        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            j, col4row[i] = col4row[i], j
            if i == cur:
                break
    return col4row, True


def _check(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise ValueError("similarity matrix must be 2-D")
    n_rows, n_cols = S.shape
    if n_rows > n_cols:
        raise ShapeError(
            f"cannot assign {n_rows} detections injectively to {n_cols} targets; "
            "need at least as many targets as detections"
        )
    if not np.all(np.isfinite(S)):
        raise ValueError("similarity matrix has non-finite entries")
    return S


def solve_lap_max(S: np.ndarray) -> Assignment:
    """Injective row-to-column mapping with maximal total similarity."""
    S = _check(S)
    if S.shape[0] == 0:
        return Assignment(np.zeros(0, dtype=np.int64), 0.0)
    # maximization as minimization; a uniform shift keeps the optimal set
    cost = S.max() - S
    row_to_col, ok = _augmenting_path(cost)
    if not ok:  # cannot happen for finite dense input
        raise RuntimeError("assignment problem reported infeasible")
    return Assignment(row_to_col, assignment_total(S, row_to_col))


@lru_cache(maxsize=32)
def _injections(n_rows: int, n_cols: int) -> np.ndarray:
    perms = itertools.permutations(range(n_cols), n_rows)
    return np.array(list(perms), dtype=np.int64).reshape(-1, n_rows)


def brute_force_lap(S: np.ndarray) -> Assignment:
    """Best assignment by exhaustive enumeration (at most 8 rows, 10 columns)."""
    S = _check(S)
    n_rows, n_cols = S.shape
    if n_rows > BRUTE_MAX_ROWS or n_cols > BRUTE_MAX_COLS:
        raise ValueError(
            f"brute force is limited to {BRUTE_MAX_ROWS}x{BRUTE_MAX_COLS}, got {n_rows}x{n_cols}"
        )
    if n_rows == 0:
        return Assignment(np.zeros(0, dtype=np.int64), 0.0)
    maps = _injections(n_rows, n_cols)
    sums = S[np.arange(n_rows), maps].sum(axis=1)
    # re-rank the near-best mappings by their exactly rounded totals
    near = np.flatnonzero(sums >= sums.max() - 1e-9 * max(1.0, abs(sums.max())))
    best = max(near, key=lambda m: (assignment_total(S, maps[m]), -m))
    return Assignment(maps[best].copy(), assignment_total(S, maps[best]))


def greedy_repair(S: np.ndarray) -> Assignment:
    """Argmax matching made injective: rows in descending order of their best
    score each take their best still-free column."""
    S = _check(S)
    n_rows, n_cols = S.shape
    best = S.max(axis=1) if n_cols else np.zeros(n_rows)
    order = np.lexsort((np.arange(n_rows), -best))
    taken = np.zeros(n_cols, dtype=bool)
    row_to_col = np.empty(n_rows, dtype=np.int64)
    for i in order:
        row = np.where(taken, -np.inf, S[i])
        j = int(np.argmax(row))
        row_to_col[i] = j
        taken[j] = True
    return Assignment(row_to_col, assignment_total(S, row_to_col))
