import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctts import kernels
from ctts.errors import ConfigError, ShapeError
from ctts.sparse import (
    BlockSparseMatrix,
    PruneSchedule,
    block_scores,
    prune,
    sparse_footprint_bytes,
    sparse_matvec,
    sparsity_at,
    to_block_sparse,
)


def sort_oracle_mask(w, target, block):
    """Full sort of (score, block index) pairs; drop the first floor(target*n)."""
    br, bc = block
    gr, gc = w.shape[0] // br, w.shape[1] // bc
    entries = []
    for i in range(gr):
        for j in range(gc):
            blk = w[i * br : (i + 1) * br, j * bc : (j + 1) * bc].astype(np.float64)
            entries.append((np.abs(blk).mean(), i, j))
    entries.sort()
    mask = np.ones((gr, gc), bool)
    for _, i, j in entries[: int(math.floor(target * gr * gc))]:
        mask[i, j] = False
    return mask


def test_schedule_endpoints_and_shape():
    s = PruneSchedule(100, 1100, 0.9)
    assert sparsity_at(s, 0) == 0.0
    assert sparsity_at(s, 100) == 0.0
    assert sparsity_at(s, 1100) == 0.9
    assert sparsity_at(s, 5000) == 0.9
    mid = sparsity_at(s, 600)
    assert mid == pytest.approx(0.9 * (1 - 0.5**3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 50), st.integers(1, 500), st.floats(0, 0.99))
def test_schedule_monotone(t0, span, s_final):
    s = PruneSchedule(t0, t0 + span, s_final)
    vals = [sparsity_at(s, t) for t in range(0, t0 + span + 5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[0] == 0.0 and vals[-1] == s_final


def test_schedule_validation():
    with pytest.raises(ConfigError):
        PruneSchedule(5, 5, 0.5)
    with pytest.raises(ConfigError):
        PruneSchedule(0, 5, 1.0)
    with pytest.raises(ValueError):
        sparsity_at(PruneSchedule(0, 5, 0.5), -1)


def test_prune_matches_sort_oracle_200_matrices():
    rng = np.random.default_rng(0)
    for i in range(200):
        block = [(16, 1), (4, 2), (1, 1), (2, 4)][i % 4]
        gr, gc = rng.integers(1, 6, size=2)
        w = rng.standard_normal((gr * block[0], gc * block[1])).astype(np.float32)
        if i % 5 == 0:  # ties
            w = np.round(w)
        target = float(rng.uniform(0, 0.99))
        mask, masked = prune(w, target, block)
        assert np.array_equal(mask, sort_oracle_mask(w, target, block))
        assert (~mask).sum() == math.floor(target * mask.size)


def test_prune_zeroes_exactly_the_dropped_blocks(rng):
    w = rng.standard_normal((32, 4)).astype(np.float32)
    mask, masked = prune(w, 0.5)
    full = np.repeat(mask, 16, axis=0)
    assert np.array_equal(masked[full], w[full])
    assert not np.any(masked[~full])
    with pytest.raises(ValueError):
        prune(w, 1.0)
    with pytest.raises(ConfigError):
        prune(w[:15], 0.5)


def test_block_scores_is_mean_abs():
    w = np.array([[1, -3], [-1, 3]], np.float32)
    assert np.array_equal(block_scores(w, (2, 1)), [[1.0, 3.0]])


@pytest.mark.parametrize("block", [(16, 1), (4, 4), (1, 1)])
def test_sparse_matvec_matches_dense(block, rng):
    w = rng.standard_normal((64, 48)).astype(np.float32)
    mask, masked = prune(w, 0.7, block)
    m = to_block_sparse(masked, mask, block)
    x = rng.standard_normal(48).astype(np.float32)
    dense = masked.astype(np.float64) @ x
    assert np.max(np.abs(sparse_matvec(m, x) - dense)) <= 1e-5
    assert np.array_equal(m.densify(), masked)
    # same accumulation order as the dense kernel on the masked matrix
    ref = kernels.matmul(x[None, :], np.ascontiguousarray(masked.T))[0]
    assert np.max(np.abs(sparse_matvec(m, x) - ref)) <= 1e-6


def test_bsr_backends_bit_identical(rng):
    w = rng.standard_normal((96, 40)).astype(np.float32)
    for block in [(16, 1), (8, 4)]:
        mask, masked = prune(w, 0.6, block)
        m = to_block_sparse(masked, mask, block)
        x = rng.standard_normal(40).astype(np.float32)
        a = kernels.numpy_backend.bsr_matvec(m.data, m.kept_rows, m.kept_cols, m.rows, x)
        b = kernels.numba_backend.bsr_matvec(m.data, m.kept_rows, m.kept_cols, m.rows, x)
        assert np.array_equal(a, b)


def test_block_sparse_properties(rng):
    w = rng.standard_normal((32, 8)).astype(np.float32)
    mask, masked = prune(w, 0.75)
    m = to_block_sparse(masked, mask)
    assert m.grid == (2, 8) and m.n_blocks == 16
    assert m.n_kept == 4 and m.sparsity == 0.75 and m.nnz == 64
    assert np.array_equal(m.mask(), mask)
    assert sparse_footprint_bytes(m, "f16") == 8 + 4 * 4 + 64 * 2
    assert sparse_footprint_bytes(m, "f32") == 8 + 4 * 4 + 64 * 4
    with pytest.raises(ShapeError):
        sparse_matvec(m, np.zeros(7, np.float32))


def test_block_sparse_validation():
    z = np.zeros((2, 2, 1), np.float32)
    with pytest.raises(ValueError):
        BlockSparseMatrix(4, 2, (2, 1), np.array([1, 0]), np.array([0, 0]), z)
    with pytest.raises(ConfigError):
        BlockSparseMatrix(3, 2, (2, 1), np.array([0]), np.array([0]), z[:1])
    with pytest.raises(ShapeError):
        BlockSparseMatrix(4, 2, (2, 1), np.array([0]), np.array([0]), z)


def test_full_mask_footprint_is_dense_plus_index_overhead(rng):
    w = rng.standard_normal((32, 16)).astype(np.float32)
    mask, masked = prune(w, 0.0)
    m = to_block_sparse(masked, mask)
    assert sparse_footprint_bytes(m) == w.size * 2 + 8 + 4 * m.n_blocks
