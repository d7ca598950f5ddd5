"""Dense FP32 building blocks shared by all three stages.

Tensors are plain C-contiguous ``float32`` ndarrays. Reductions that feed
equivalence tests (matmul, conv) go through :mod:`ctts.kernels` and sum
left to right in a fixed order, so identical inputs give identical bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError

F32 = np.float32


def as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=F32)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` with the reduction index walked left to right."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return kernels.matmul(as_f32(a), as_f32(b))


def linear(x: np.ndarray, w, b: np.ndarray | None = None) -> np.ndarray:
    """``x @ w + b`` where ``w`` may be dense or an INT8 ``QTensorI8``."""
    if hasattr(w, "scale"):
        from .quant import qmatmul

        y = qmatmul(x, w)
    else:
        y = matmul(x, w)
    if b is not None:
        y += b
    return y


def conv1d(x: np.ndarray, w, b: np.ndarray) -> np.ndarray:
    """'Same'-padded 1-D convolution over time.

    ``x`` is ``[T, C_in]``, ``w`` is ``[K, C_in, C_out]`` (dense or INT8),
    ``b`` is ``[C_out]``. Per output element the sum runs over (tap, in-channel)
    in lexicographic order, then the bias is added.
    """
    scale = None
    if hasattr(w, "scale"):
        scale, w = F32(w.scale), w.data
    elif w.dtype != np.int8:
        w = as_f32(w)
    if w.ndim != 3:
        raise ShapeError(f"conv weight must be [K, C_in, C_out], got {w.shape}")
    ksize, c_in, c_out = w.shape
    if ksize % 2 == 0:
        raise ConfigError(f"conv kernel size must be odd, got {ksize}")
    if x.ndim != 2 or x.shape[1] != c_in:
        raise ShapeError(f"conv input {x.shape} does not match weight {w.shape}")
    if b.shape != (c_out,):
        raise ShapeError(f"conv bias {b.shape} != ({c_out},)")
    if scale is None:
        y = kernels.conv1d(as_f32(x), w)
    else:
        y = kernels.qconv1d(as_f32(x), np.ascontiguousarray(w), scale)
    y += b
    return y


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True, dtype=F32)
    xc = x - mean
    var = (xc * xc).mean(axis=-1, keepdims=True, dtype=F32)
    return (xc / np.sqrt(var + F32(eps))) * gamma + beta


def softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, max-subtracted; fully masked rows give zeros."""
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, F32(0.0))
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True, dtype=F32)
    return (e / np.where(s > 0, s, F32(1.0))).astype(F32, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, F32(0.0))


def sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return F32(1.0) / (F32(1.0) + np.exp(-x))


def embedding_lookup(table: np.ndarray, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        bad = ids[(ids < 0) | (ids >= v)][0]
        raise IndexError(f"token id {bad} outside table of {v} rows")
    return np.ascontiguousarray(table[ids], dtype=F32)


def sinusoid_positions(n: int, d: int, offset: int = 0) -> np.ndarray:
    """Fixed sinusoidal position table for positions ``offset..offset+n-1``."""
    pos = np.arange(offset, offset + n, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(F32)


@dataclass(frozen=True)
class AttentionParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]


class LayerKV:
    """Keys/values for one attention layer.

    Self-attention caches grow by one row per decoded step. Cross-attention
    memory is built once with :meth:`frozen` and never changes afterwards.
    """

    def __init__(self, d_model: int, capacity: int = 16):
        self._k = np.empty((capacity, d_model), dtype=F32)
        self._v = np.empty((capacity, d_model), dtype=F32)
        self.length = 0
        self.is_frozen = False

    @classmethod
    def frozen(cls, k: np.ndarray, v: np.ndarray) -> "LayerKV":
        kv = cls(k.shape[1], capacity=max(1, k.shape[0]))
        kv.append(k, v)
        kv.is_frozen = True
        kv._k.flags.writeable = False
        kv._v.flags.writeable = False
        return kv

    @property
    def k(self) -> np.ndarray:
        return self._k[: self.length]

    @property
    def v(self) -> np.ndarray:
        return self._v[: self.length]

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        if self.is_frozen:
            raise ShapeError("cannot append to frozen cross-attention memory")
        n = k.shape[0]
        need = self.length + n
        if need > self._k.shape[0]:
            cap = max(need, 2 * self._k.shape[0])
            for name in ("_k", "_v"):
                old = getattr(self, name)
                grown = np.empty((cap, old.shape[1]), dtype=F32)
                grown[: self.length] = old[: self.length]
                setattr(self, name, grown)
        self._k[self.length : need] = k
        self._v[self.length : need] = v
        self.length = need


def multi_head_attention(
    q_in: np.ndarray,
    kv_in: np.ndarray | None,
    params: AttentionParams,
    heads: int,
    causal: bool = False,
    cache: LayerKV | None = None,
) -> np.ndarray:
    """Scaled dot-product attention over ``heads`` heads plus output projection.

    With a growing ``cache`` the keys/values of ``kv_in`` are appended first
    and queries attend over everything cached. A frozen cache supplies
    precomputed memory keys/values and ``kv_in`` is ignored.
    """
    d = params.d_model
    if heads < 1 or d % heads:
        raise ConfigError(f"d_model {d} not divisible by {heads} heads")
    if q_in.ndim != 2 or q_in.shape[1] != d:
        raise ShapeError(f"attention query must be [n, {d}], got {q_in.shape}")
    q = linear(q_in, params.wq, params.bq)
    if cache is not None and cache.is_frozen:
        k, v = cache.k, cache.v
    else:
        k_new = linear(kv_in, params.wk, params.bk)
        v_new = linear(kv_in, params.wv, params.bv)
        if cache is not None:
            cache.append(k_new, v_new)
            k, v = cache.k, cache.v
        else:
            k, v = k_new, v_new
    n, m = q.shape[0], k.shape[0]
    dh = d // heads
    scale = F32(1.0 / math.sqrt(dh))
    mask = None
    if causal:
        # query row i sits at absolute position m - n + i
        qpos = np.arange(m - n, m)[:, None]
        mask = np.arange(m)[None, :] > qpos
    ctx = np.empty((n, d), dtype=F32)
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        scores = matmul(q[:, sl], np.ascontiguousarray(k[:, sl].T)) * scale
        if mask is not None:
            scores[mask] = -np.inf
        ctx[:, sl] = matmul(softmax(scores), np.ascontiguousarray(v[:, sl]))
    return linear(ctx, params.wo, params.bo)


def gru_cell(x: np.ndarray, h: np.ndarray, w_ih, w_hh, b: np.ndarray) -> np.ndarray:
    """One GRU update with gates ordered (update, reset, candidate).

    ``w_ih`` is dense ``[in, 3h]``. ``w_hh`` is either a dense ``[h, 3h]``
    array or any object with ``matvec(h) -> [3h]`` (e.g. a block-sparse
    matrix stored output-major). ``b`` is added to the input projection.
    """
    hdim = h.shape[0]
    if w_ih.shape != (x.shape[0], 3 * hdim) or b.shape != (3 * hdim,):
        raise ShapeError(f"GRU input weights {w_ih.shape}/{b.shape} do not fit x={x.shape}, h={h.shape}")
    gx = matmul(x[None, :], w_ih)[0] + b
    if hasattr(w_hh, "matvec"):
        gh = w_hh.matvec(h)
    else:
        if w_hh.shape != (hdim, 3 * hdim):
            raise ShapeError(f"GRU recurrent weights {w_hh.shape} != ({hdim}, {3 * hdim})")
        gh = matmul(h[None, :], w_hh)[0]
    if gh.shape != (3 * hdim,):
        raise ShapeError(f"recurrent provider returned {gh.shape}, expected ({3 * hdim},)")
    z = sigmoid(gx[:hdim] + gh[:hdim])
    r = sigmoid(gx[hdim : 2 * hdim] + gh[hdim : 2 * hdim])
    cand = np.tanh(gx[2 * hdim :] + r * gh[2 * hdim :])
    return ((F32(1.0) - z) * h + z * cand).astype(F32, copy=False)
