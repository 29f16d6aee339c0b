"""First-stage scoring: cosine similarity matrices, streamed top-K, argmax matching.

Every score goes through the same per-pair dot-product kernel, so a score
depends only on the two vectors involved and never on how targets were
blocked. That is what makes streamed top-K identical to sorting the dense
row, ties included.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np

DEFAULT_DENSE_LIMIT = 500_000_000


class DenseLimitError(RuntimeError):
    """The requested dense similarity matrix is larger than allowed."""


@dataclass(frozen=True)
class CandidateList:
    """Top candidates for one detection, sorted by (score desc, position asc)."""

    detection: int
    positions: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)

    def pairs(self) -> list[tuple[int, float]]:
        return [(int(p), float(s)) for p, s in zip(self.positions, self.scores)]


TILE = 64
MAX_BLOCK = 4096


@numba.njit(cache=True, fastmath=True, parallel=True)
def _score_block(B, T, out):
    # One compiled routine scores every (detection, target) pair in the
    # package, so a pair's score never depends on the caller's blocking.
    dim = B.shape[1]
    for j0 in range(0, T.shape[0], TILE):
        j1 = min(j0 + TILE, T.shape[0])
        for i in numba.prange(B.shape[0]):
            for j in range(j0, j1):
                acc = 0.0
                for k in range(dim):
                    acc += np.float64(B[i, k]) * np.float64(T[j, k])
                out[i, j] = acc


@numba.njit(cache=True, parallel=True)
def _select_kernel(S, start, top_s, top_p, count):
    K = top_s.shape[1]
    for i in numba.prange(S.shape[0]):
        n = count[i]
        for j in range(S.shape[1]):
            s = S[i, j]
            # positions arrive in ascending order, so an equal score never displaces
            if n == K and not s > top_s[i, K - 1]:
                continue
            k = n if n < K else K - 1
            while k > 0 and s > top_s[i, k - 1]:
                top_s[i, k] = top_s[i, k - 1]
                top_p[i, k] = top_p[i, k - 1]
                k -= 1
            top_s[i, k] = s
            top_p[i, k] = start + j
            if n < K:
                n += 1
        count[i] = n


def _as_rows(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"{name} must be a 2-D embedding matrix")
    if matrix.dtype not in (np.float32, np.float64):
        matrix = matrix.astype(np.float64)
    return np.ascontiguousarray(matrix)


def similarity_matrix(B: np.ndarray, T: np.ndarray,
                      dense_limit: int = DEFAULT_DENSE_LIMIT) -> np.ndarray:
    """``S[i, j] = <B_i, T_j>`` as a float64 ``(N_B, N_T)`` matrix."""
    B = _as_rows(B, "B")
    T = _as_rows(T, "T")
    if B.shape[1] != T.shape[1]:
        raise ValueError(f"dimension mismatch: B has {B.shape[1]}, T has {T.shape[1]}")
    entries = B.shape[0] * T.shape[0]
    if entries > dense_limit:
        raise DenseLimitError(
            f"dense similarity matrix would have {entries:,} entries, above the limit "
            f"of {dense_limit:,}; use streamed top-K candidates instead"
        )
    if T.dtype != B.dtype:
        T = T.astype(B.dtype)
    out = np.empty((B.shape[0], T.shape[0]), dtype=np.float64)
    for j0 in range(0, T.shape[0], MAX_BLOCK):
        j1 = min(j0 + MAX_BLOCK, T.shape[0])
        chunk = np.empty((B.shape[0], j1 - j0), dtype=np.float64)
        _score_block(B, T[j0:j1], chunk)
        out[:, j0:j1] = chunk
    return out


def top_k_candidates(B: np.ndarray, targets: Iterable[tuple[int, np.ndarray]],
                     k: int) -> list[CandidateList]:
    """Exact top-``k`` targets per row of ``B`` from a stream of target blocks.

    ``targets`` yields ``(start_position, block)`` pairs covering positions
    0, 1, 2, ... contiguously and in order.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    B = _as_rows(B, "B")
    n_b = B.shape[0]
    top_s = np.full((n_b, k), -np.inf)
    top_p = np.full((n_b, k), -1, dtype=np.int64)
    count = np.zeros(n_b, dtype=np.int64)
    expected = 0
    for start, block in targets:
        block = _as_rows(block, "target block")
        if start != expected:
            raise ValueError(f"target blocks must be contiguous and ascending; "
                             f"expected start {expected}, got {start}")
        if block.shape[1] != B.shape[1]:
            raise ValueError(f"dimension mismatch: B has {B.shape[1]}, targets have {block.shape[1]}")
        if block.dtype != B.dtype:
            block = block.astype(B.dtype)
        for j0 in range(0, len(block) if n_b else 0, MAX_BLOCK):
            sub = block[j0:j0 + MAX_BLOCK]
            scores = np.empty((n_b, len(sub)), dtype=np.float64)
            _score_block(B, sub, scores)
            _select_kernel(scores, start + j0, top_s, top_p, count)
        expected += len(block)
    if expected == 0:
        raise ValueError("empty target source")
    return [CandidateList(i, top_p[i, :count[i]].copy(), top_s[i, :count[i]].copy())
            for i in range(n_b)]


def matrix_blocks(T: np.ndarray, block_size: int) -> Iterable[tuple[int, np.ndarray]]:
    """Serve an in-memory target matrix as a block stream."""
    if block_size < 1:
        raise ValueError("block size must be >= 1")
    for start in range(0, len(T), block_size):
        yield start, T[start:start + block_size]


def argmax_rows(S: np.ndarray) -> np.ndarray:
    """Column of the maximum in each row; ties go to the lowest column."""
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[1] == 0:
        raise ValueError("need a 2-D score matrix with at least one target")
    return np.argmax(S, axis=1)  # numpy returns the first maximum


def argmax_match(scores: np.ndarray | Sequence[CandidateList]) -> list[tuple[int, float]]:
    """Independent best target per detection as ``(position, score)``.

    Accepts a dense score matrix or candidate lists (whose first entry is
    already the best under the tie rule). Collisions are allowed.
    """
    if isinstance(scores, np.ndarray):
        cols = argmax_rows(scores)
        return [(int(c), float(scores[i, c])) for i, c in enumerate(cols)]
    out = []
    for cand in scores:
        if not len(cand):
            raise ValueError(f"detection {cand.detection} has no candidates")
        out.append((int(cand.positions[0]), float(cand.scores[0])))
    return out
