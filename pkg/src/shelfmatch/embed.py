"""Deterministic hashed character n-gram embeddings and the EMB1 file format.

Each text is padded with one space on both sides, every character n-gram
(for each configured n) is hashed with 64-bit FNV-1a over its UTF-8 bytes,
and the hash modulo ``dim`` selects a counter. Rows are L2-normalized
counts, so they are non-negative and cosine scores land in [0, 1].
Empty text embeds to the zero vector.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numba
import numpy as np

from shelfmatch.corpus import DataFormatError

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1

MAGIC = b"EMB1"
HEADER = struct.Struct("<4sII")
NORM_TOL = 1e-6
RENORM_TOL = 1e-3


class EmbeddingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EmbedConfig:
    dim: int = 1024
    ngram_sizes: tuple[int, ...] = (2, 3, 4)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 8:
            raise ValueError(f"embedding dim must be >= 8, got {self.dim}")
        sizes = tuple(sorted(set(self.ngram_sizes)))
        if not sizes or sizes[0] < 1:
            raise ValueError(f"ngram sizes must be non-empty and >= 1, got {self.ngram_sizes}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("hash seed must fit in 64 bits")
        object.__setattr__(self, "ngram_sizes", sizes)


def fnv1a64(data: bytes, seed: int = 0) -> int:
    h = FNV_OFFSET ^ seed
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def embed_text(text: str, cfg: EmbedConfig = EmbedConfig()) -> np.ndarray:
    """Reference single-text embedding; :func:`embed_batch` must agree bit for bit."""
    counts = np.zeros(cfg.dim, dtype=np.int64)
    if not text:
        return counts.astype(np.float32)
    padded = f" {text} "
    for n in cfg.ngram_sizes:
        for i in range(len(padded) - n + 1):
            counts[fnv1a64(padded[i:i + n].encode("utf-8"), cfg.seed) % cfg.dim] += 1
    sq = int(np.dot(counts, counts))
    if sq == 0:  # shorter than every n-gram size
        return counts.astype(np.float32)
    norm = math.sqrt(sq)
    return (counts / norm).astype(np.float32)


@numba.njit(cache=True, parallel=True)
def _embed_kernel(buf, offsets, sizes, seed, dim, out):
    prime = np.uint64(FNV_PRIME)
    for t in numba.prange(len(offsets) - 1):
        lo = offsets[t]
        hi = offsets[t + 1]
        if hi - lo <= 2:
            continue
        # byte offsets of each character start, plus the end sentinel
        starts = np.empty(hi - lo + 1, dtype=np.int64)
        nchar = 0
        for b in range(lo, hi):
            if (buf[b] & 0xC0) != 0x80:
                starts[nchar] = b
                nchar += 1
        starts[nchar] = hi
        counts = np.zeros(dim, dtype=np.int64)
        for n in sizes:
            for i in range(nchar - n + 1):
                h = np.uint64(seed) ^ np.uint64(FNV_OFFSET)
                for b in range(starts[i], starts[i + n]):
                    h = (h ^ np.uint64(buf[b])) * prime
                counts[h % np.uint64(dim)] += 1
        sq = np.int64(0)
        for k in range(dim):
            sq += counts[k] * counts[k]
        if sq == 0:
            continue
        norm = math.sqrt(sq)
        for k in range(dim):
            if counts[k]:
                out[t, k] = np.float32(counts[k] / norm)


def embed_batch(texts: Sequence[str], cfg: EmbedConfig = EmbedConfig()) -> np.ndarray:
    """Embed many texts into an ``(N, dim)`` float32 matrix, row order = input order."""
    encoded = [f" {t} ".encode("utf-8") if t else b"" for t in texts]
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    np.cumsum([len(e) for e in encoded], out=offsets[1:])
    buf = np.frombuffer(b"".join(encoded), dtype=np.uint8)
    out = np.zeros((len(encoded), cfg.dim), dtype=np.float32)
    if len(encoded):
        _embed_kernel(buf, offsets, np.array(cfg.ngram_sizes, dtype=np.int64),
                      np.uint64(cfg.seed), cfg.dim, out)
    return out


def iter_text_blocks(texts: Sequence[str], cfg: EmbedConfig, block_size: int
                     ) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(start_position, block)`` pairs, embedding catalogue text on the fly."""
    for start in range(0, len(texts), block_size):
        yield start, embed_batch(texts[start:start + block_size], cfg)


# -- EMB1 files ----------------------------------------------------------------


def write_embeddings(matrix: np.ndarray, path: str | Path) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    n, d = matrix.shape
    path = Path(path)
    try:
        with path.open("wb") as fh:
            fh.write(HEADER.pack(MAGIC, n, d))
            fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc.strerror}") from exc


def _read_header(path: Path) -> tuple[int, int]:
    with path.open("rb") as fh:
        head = fh.read(HEADER.size)
    if len(head) < HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, n, d = HEADER.unpack(head)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = HEADER.size + 4 * n * d
    actual = path.stat().st_size
    if actual < expected:
        raise DataFormatError(f"{path}: truncated payload, {actual} bytes for {n}x{d} header")
    if actual > expected:
        raise DataFormatError(f"{path}: {actual - expected} trailing bytes, dim mismatch vs header {n}x{d}")
    return n, d


def validate_rows(matrix: np.ndarray, source: str = "embeddings") -> np.ndarray:
    """Check the unit-norm-or-zero invariant, renormalizing rows that are close.

    Rows within ``RENORM_TOL`` of unit norm are rescaled in place with a
    warning; anything further off raises :class:`DataFormatError`.
    """
    if not np.all(np.isfinite(matrix)):
        raise DataFormatError(f"{source}: non-finite values")
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix, dtype=np.float64))
    off = (norms != 0) & (np.abs(norms - 1.0) > NORM_TOL)
    if not off.any():
        return matrix
    bad = off & (np.abs(norms - 1.0) > RENORM_TOL)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataFormatError(
            f"{source}: row {row} has norm {norms[row]:.6g}; rows must be unit-norm or zero"
        )
    rows = np.flatnonzero(off)
    warnings.warn(f"{source}: renormalized {len(rows)} row(s) with norm off by more than {NORM_TOL}",
                  EmbeddingWarning, stacklevel=2)
    matrix[rows] = (matrix[rows] / norms[rows, None]).astype(matrix.dtype)
    return matrix


def read_embeddings(path: str | Path) -> np.ndarray:
    path = Path(path)
    n, d = _read_header(path)
    data = np.fromfile(path, dtype="<f4", offset=HEADER.size, count=n * d)
    matrix = data.astype(np.float32).reshape(n, d)
    return validate_rows(matrix, str(path))


def iter_file_blocks(path: str | Path, block_size: int) -> Iterator[tuple[int, np.ndarray]]:
    """Stream an EMB1 file in row blocks without loading it whole."""
    path = Path(path)
    n, d = _read_header(path)
    mm = np.memmap(path, dtype="<f4", mode="r", offset=HEADER.size, shape=(n, d))
    for start in range(0, n, block_size):
        block = np.array(mm[start:start + block_size], dtype=np.float32)
        yield start, validate_rows(block, f"{path} rows {start}+")
    del mm


def embedding_dim(path: str | Path) -> tuple[int, int]:
    """``(n_rows, dim)`` from an EMB1 header."""
    return _read_header(Path(path))
