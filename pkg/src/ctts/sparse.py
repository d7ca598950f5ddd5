"""Block-sparse weights and the progressive magnitude-pruning schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError

F32 = np.float32

INDEX_BYTES = 4
SPARSE_HEADER_BYTES = 8
DTYPE_WIDTH = {"f32": 4, "f16": 2, "i8": 1}


@dataclass(frozen=True)
class PruneSchedule:
    t_start: int
    t_end: int
    s_final: float
    exponent: int = 3

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ConfigError(f"t_start ({self.t_start}) must precede t_end ({self.t_end})")
        if not 0.0 <= self.s_final < 1.0:
            raise ConfigError(f"final sparsity must be in [0, 1), got {self.s_final}")


def sparsity_at(sched: PruneSchedule, t: float) -> float:
    """Cubic ramp from 0 at ``t_start`` to ``s_final`` at ``t_end``."""
    if t < 0:
        raise ValueError("step must be non-negative")
    if t <= sched.t_start:
        return 0.0
    if t >= sched.t_end:
        return sched.s_final
    frac = (t - sched.t_start) / (sched.t_end - sched.t_start)
    return sched.s_final * (1.0 - (1.0 - frac) ** sched.exponent)


@dataclass(frozen=True, eq=False)
class BlockSparseMatrix:
    """Output-major ``[rows, cols]`` matrix storing only kept blocks.

    ``kept_rows``/``kept_cols`` index the block grid and are sorted
    lexicographically; ``data[i]`` is the dense ``[br, bc]`` block at
    ``(kept_rows[i], kept_cols[i])``.
    """

    rows: int
    cols: int
    block_shape: tuple[int, int]
    kept_rows: np.ndarray
    kept_cols: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        br, bc = self.block_shape
        if self.rows % br or self.cols % bc:
            raise ConfigError(f"{self.rows}x{self.cols} not divisible by block {br}x{bc}")
        nk = self.kept_rows.shape[0]
        if self.kept_cols.shape != (nk,) or self.data.shape != (nk, br, bc):
            raise ShapeError("kept block indices and data disagree in length")
        if nk > 1:
            lin = self.kept_rows * (self.cols // bc) + self.kept_cols
            if np.any(np.diff(lin) <= 0):
                raise ValueError("kept blocks must be strictly sorted with no duplicates")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def grid(self) -> tuple[int, int]:
        br, bc = self.block_shape
        return (self.rows // br, self.cols // bc)

    @property
    def n_blocks(self) -> int:
        gr, gc = self.grid
        return gr * gc

    @property
    def n_kept(self) -> int:
        return int(self.kept_rows.shape[0])

    @property
    def sparsity(self) -> float:
        return 1.0 - self.n_kept / self.n_blocks

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid, dtype=bool)
        m[self.kept_rows, self.kept_cols] = True
        return m

    def densify(self) -> np.ndarray:
        br, bc = self.block_shape
        gr, gc = self.grid
        blocks = np.zeros((gr, gc, br, bc), dtype=F32)
        blocks[self.kept_rows, self.kept_cols] = self.data
        return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3).reshape(self.rows, self.cols))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return sparse_matvec(self, x)


def _block_view(w: np.ndarray, block: tuple[int, int]) -> np.ndarray:
    br, bc = block
    r, c = w.shape
    if r % br or c % bc:
        raise ConfigError(f"{r}x{c} matrix not divisible by block {br}x{bc}")
    return w.reshape(r // br, br, c // bc, bc).transpose(0, 2, 1, 3)


def block_scores(w: np.ndarray, block: tuple[int, int] = (16, 1)) -> np.ndarray:
    """Mean absolute value of every block, on the block grid."""
    return np.abs(_block_view(np.asarray(w, dtype=np.float64), block)).mean(axis=(2, 3))


def prune(w: np.ndarray, target: float, block: tuple[int, int] = (16, 1)) -> tuple[np.ndarray, np.ndarray]:
    """Zero the ``floor(target * n_blocks)`` weakest blocks of ``w``.

    Returns the boolean keep-mask on the block grid and the masked weights.
    Ties in block score go to the lexicographically smaller block index.
    """
    if not 0.0 <= target < 1.0:
        raise ValueError(f"target sparsity must be in [0, 1), got {target}")
    w = np.asarray(w, dtype=F32)
    scores = block_scores(w, block)
    gr, gc = scores.shape
    n_blocks = gr * gc
    n_prune = int(math.floor(target * n_blocks))
    bi, bj = np.meshgrid(np.arange(gr), np.arange(gc), indexing="ij")
    order = np.lexsort((bj.ravel(), bi.ravel(), scores.ravel()))
    keep = np.ones(n_blocks, dtype=bool)
    keep[order[:n_prune]] = False
    mask = keep.reshape(gr, gc)
    return mask, apply_mask(w, mask, block)


def apply_mask(w: np.ndarray, mask: np.ndarray, block: tuple[int, int]) -> np.ndarray:
    br, bc = block
    full = np.repeat(np.repeat(mask, br, axis=0), bc, axis=1)
    if full.shape != w.shape:
        raise ValueError(f"mask grid {mask.shape} does not cover {w.shape} with block {block}")
    return np.where(full, w, F32(0.0)).astype(F32)


def to_block_sparse(w_masked: np.ndarray, mask: np.ndarray, block: tuple[int, int] = (16, 1)) -> BlockSparseMatrix:
    w = np.asarray(w_masked, dtype=F32)
    view = _block_view(w, block)
    if mask.shape != view.shape[:2] or mask.dtype != bool:
        raise ValueError(f"mask {mask.shape} inconsistent with {w.shape} at block {block}")
    kr, kc = np.nonzero(mask)
    return BlockSparseMatrix(
        rows=w.shape[0],
        cols=w.shape[1],
        block_shape=tuple(block),
        kept_rows=kr.astype(np.int64),
        kept_cols=kc.astype(np.int64),
        data=np.ascontiguousarray(view[kr, kc], dtype=F32),
    )


def sparse_matvec(m: BlockSparseMatrix, x: np.ndarray) -> np.ndarray:
    if x.shape != (m.cols,):
        raise ShapeError(f"sparse_matvec expects ({m.cols},), got {x.shape}")
    return kernels.bsr_matvec(m.data, m.kept_rows, m.kept_cols, m.rows, np.ascontiguousarray(x, dtype=F32))


def sparse_footprint_bytes(m: BlockSparseMatrix, dtype: str = "f16") -> int:
    return SPARSE_HEADER_BYTES + m.n_kept * INDEX_BYTES + m.nnz * DTYPE_WIDTH[dtype]
