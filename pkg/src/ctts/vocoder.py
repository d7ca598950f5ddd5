"""Subscale WaveRNN vocoder: two 8-bit mu-law samples per GRU iteration.

Per iteration the GRU consumes the mel conditioning vector plus embeddings
of the two previous samples. Its recurrent matrix and the four post-net
layers may be block-sparse; the input projection is always dense. Branch A
samples the first class, branch B sees the hidden state plus a projection
of branch A's sample and draws the second.
"""

from __future__ import annotations

import math
import wave
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .acoustic import MelSpectrogram
from .errors import ConfigError, NumericError
from .registry import ParamRegistry, round_to_f16, uniform_init
from .sparse import (
    DTYPE_WIDTH,
    BlockSparseMatrix,
    prune,
    sparse_footprint_bytes,
    to_block_sparse,
)
from .tensor import F32, embedding_lookup, gru_cell, linear, matmul, relu

MU = 255
N_CLASSES = 256
CENTER = 128
SPARSE_MATRICES = ("gru.w_hh", "a1.w", "a2.w", "b1.w", "b2.w")


@dataclass(frozen=True)
class VocoderConfig:
    h: int = 512
    d: int = 256
    n_classes: int = N_CLASSES
    sample_rate: int = 24000
    frame_hop: int = 256
    subscale_factor: int = 2
    n_mels: int = 80
    cond_dim: int = 32
    emb_dim: int = 16
    block_shape: tuple = (16, 1)
    sparsity: dict = field(default_factory=lambda: {m: 0.78 for m in SPARSE_MATRICES})

    def __post_init__(self):
        if self.subscale_factor != 2:
            raise ConfigError("only two samples per iteration are supported")
        if self.frame_hop % self.subscale_factor:
            raise ConfigError(f"frame_hop {self.frame_hop} must be divisible by {self.subscale_factor}")
        if self.n_classes != N_CLASSES:
            raise ConfigError("n_classes must be 256 (8-bit mu-law)")
        object.__setattr__(self, "block_shape", tuple(self.block_shape))
        object.__setattr__(self, "sparsity", dict(self.sparsity))

    @property
    def iters_per_frame(self) -> int:
        return self.frame_hop // self.subscale_factor

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_shape"] = list(self.block_shape)
        return d


# -- mu-law -----------------------------------------------------------------
#
# Companded value y in [-1, 1] sits on a grid centred on class 128:
# y(c) = (c - 128) / 128 for c <= 128 and (c - 128) / 127 above, so class
# 128 decodes to exactly 0 and classes 0 / 255 to -1 / +1.


def mu_law_encode(x) -> np.ndarray | int:
    xa = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    y = np.sign(xa) * np.log1p(MU * np.abs(xa)) / math.log1p(MU)
    c = np.where(y <= 0, CENTER + np.rint(128.0 * y), CENTER + np.rint(127.0 * y)).astype(np.int64)
    c = np.clip(c, 0, N_CLASSES - 1)
    return int(c) if np.ndim(x) == 0 else c


def mu_law_decode(c) -> np.ndarray | float:
    ca = np.asarray(c)
    if np.any((ca < 0) | (ca >= N_CLASSES)):
        raise ValueError(f"mu-law class out of range [0, 256): {c}")
    k = ca.astype(np.float64) - CENTER
    y = np.where(k <= 0, k / 128.0, k / 127.0)
    x = np.sign(y) * np.expm1(np.abs(y) * math.log1p(MU)) / MU
    return float(x) if np.ndim(c) == 0 else x


PCM_TABLE = np.rint(mu_law_decode(np.arange(N_CLASSES)) * 32767).astype(np.int16)


# -- state ------------------------------------------------------------------


class SampleRNG:
    """Seeded uniform source; ``draws`` counts every number handed out."""

    def __init__(self, seed: int):
        self._gen = np.random.default_rng(seed)
        self.draws = 0

    def uniforms(self, n: int) -> np.ndarray:
        self.draws += n
        return self._gen.random(n)


@dataclass
class VocoderState:
    hidden: np.ndarray
    prev_samples: np.ndarray
    rng: SampleRNG

    @classmethod
    def initial(cls, cfg: VocoderConfig, seed: int = 0, rng: SampleRNG | None = None) -> "VocoderState":
        return cls(
            hidden=np.zeros(cfg.h, dtype=F32),
            prev_samples=np.full(2, CENTER, dtype=np.int64),
            rng=rng if rng is not None else SampleRNG(seed),
        )


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


# -- parameters ---------------------------------------------------------------


def dense_shapes(cfg: VocoderConfig) -> dict[str, tuple[tuple, int]]:
    """Dense layout ``name -> (shape, fan_in)``; weights are ``[in, out]``."""
    in_dim = cfg.cond_dim + 2 * cfg.emb_dim
    h, d, c = cfg.h, cfg.d, cfg.n_classes
    return {
        "cond.w": ((cfg.n_mels, cfg.cond_dim), cfg.n_mels),
        "cond.b": ((cfg.cond_dim,), cfg.n_mels),
        "emb": ((c, cfg.emb_dim), cfg.emb_dim),
        "gru.w_ih": ((in_dim, 3 * h), in_dim),
        "gru.b": ((3 * h,), in_dim),
        "gru.w_hh": ((h, 3 * h), h),
        "a1.w": ((h, d), h),
        "a1.b": ((d,), h),
        "a2.w": ((d, c), d),
        "a2.b": ((c,), d),
        "proj_b.w": ((cfg.emb_dim, h), cfg.emb_dim),
        "proj_b.b": ((h,), cfg.emb_dim),
        "b1.w": ((h, d), h),
        "b1.b": ((d,), h),
        "b2.w": ((d, c), d),
        "b2.b": ((c,), d),
    }


def build_params(cfg: VocoderConfig, seed: int) -> ParamRegistry:
    tensors = {
        name: round_to_f16(uniform_init(seed, f"vocoder.{name}", shape, fan_in))
        for name, (shape, fan_in) in dense_shapes(cfg).items()
    }
    return ParamRegistry.identity(tensors)


def dense_weight(t) -> np.ndarray:
    """``[in, out]`` dense view of a weight stored dense or block-sparse."""
    if isinstance(t, BlockSparseMatrix):
        return np.ascontiguousarray(t.densify().T)
    return t


def sparsify(p: ParamRegistry, cfg: VocoderConfig, targets: dict | None = None) -> tuple[ParamRegistry, dict]:
    """Block-prune the sparse-capable matrices; returns new params and achieved sparsity."""
    targets = dict(cfg.sparsity if targets is None else targets)
    out = dict(p.physical)
    achieved = {}
    for name in SPARSE_MATRICES:
        w_out_in = np.ascontiguousarray(dense_weight(p[name]).T)
        mask, masked = prune(w_out_in, targets[name], cfg.block_shape)
        out[name] = to_block_sparse(masked, mask, cfg.block_shape)
        achieved[name] = out[name].sparsity
    return ParamRegistry.identity(out), achieved


def is_sparse(p: ParamRegistry) -> bool:
    return any(isinstance(p[n], BlockSparseMatrix) for n in SPARSE_MATRICES)


# -- inference ----------------------------------------------------------------


def upsample_conditioning(p: ParamRegistry, cfg: VocoderConfig, mel: MelSpectrogram) -> np.ndarray:
    """One conditioning vector per iteration: project each frame, repeat hop/2 times."""
    if mel.n_frames == 0:
        raise ValueError("empty mel spectrogram")
    proj = linear(mel.frames, p["cond.w"], p["cond.b"])
    return np.repeat(proj, cfg.iters_per_frame, axis=0)


def _apply(t, x: np.ndarray) -> np.ndarray:
    if isinstance(t, BlockSparseMatrix):
        return t.matvec(x)
    return matmul(x[None, :], t)[0]


def postnet_logits(p: ParamRegistry, branch: str, x: np.ndarray) -> np.ndarray:
    hid = relu(_apply(p[f"{branch}1.w"], x) + p[f"{branch}1.b"])
    return _apply(p[f"{branch}2.w"], hid) + p[f"{branch}2.b"]


def vocoder_step(p: ParamRegistry, cfg: VocoderConfig, state: VocoderState, cond: np.ndarray):
    """Reference single iteration; returns ``(class_a, class_b, state)`` and
    mutates ``state`` in place. Consumes exactly two uniforms."""
    e = embedding_lookup(p["emb"], state.prev_samples)
    x = np.concatenate([cond, e[0], e[1]]).astype(F32)
    h = gru_cell(x, state.hidden, p["gru.w_ih"], p["gru.w_hh"], p["gru.b"])
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite vocoder hidden state")
    u = state.rng.uniforms(2)
    ca = int(kernels.sample_categorical(postnet_logits(p, "a", h), u[0]))
    hb = h + linear(embedding_lookup(p["emb"], [ca]), p["proj_b.w"], p["proj_b.b"])[0]
    cb = int(kernels.sample_categorical(postnet_logits(p, "b", hb), u[1]))
    state.hidden = h
    state.prev_samples = np.array([ca, cb], dtype=np.int64)
    return ca, cb, state


_EMPTY2 = np.empty((0, 0), dtype=F32)
_EMPTY3 = np.empty((0, 1, 1), dtype=F32)
_EMPTY_I = np.empty(0, dtype=np.int64)


def _spec(t, bias=None):
    if isinstance(t, BlockSparseMatrix):
        spec = (_EMPTY2, t.data, t.kept_rows, t.kept_cols, t.rows, True)
    else:
        w = np.ascontiguousarray(t, dtype=F32)
        spec = (w, _EMPTY3, _EMPTY_I, _EMPTY_I, w.shape[1], False)
    return spec if bias is None else spec + (np.ascontiguousarray(bias, dtype=F32),)


def generate(
    p: ParamRegistry,
    cfg: VocoderConfig,
    mel: MelSpectrogram,
    seed: int = 0,
    chunk_samples: int = 2048,
    on_chunk=None,
    rng: SampleRNG | None = None,
) -> Waveform:
    """Synthesize ``mel.n_frames * frame_hop`` PCM16 samples.

    With ``on_chunk`` the PCM is also delivered in order, ``chunk_samples``
    at a time; chunking never changes the output.
    """
    if chunk_samples <= 0 or chunk_samples % 2:
        raise ValueError("chunk_samples must be a positive even number")
    if mel.n_frames == 0:
        raise ValueError("empty mel spectrogram")
    ipf = cfg.iters_per_frame
    n_iter = mel.n_frames * ipf
    cdim = cfg.cond_dim
    w_ih = p["gru.w_ih"]
    cond = linear(mel.frames, p["cond.w"], p["cond.b"])
    # partial input projection over the conditioning inputs, once per frame
    cond_gx = matmul(cond, np.ascontiguousarray(w_ih[:cdim]))
    w_ih_emb = np.ascontiguousarray(w_ih[cdim:], dtype=F32)
    emb = np.ascontiguousarray(p["emb"], dtype=F32)
    args = (
        _spec(p["gru.w_hh"]),
        _spec(p["a1.w"], p["a1.b"]),
        _spec(p["a2.w"], p["a2.b"]),
        _spec(p["b1.w"], p["b1.b"]),
        _spec(p["b2.w"], p["b2.b"]),
        np.ascontiguousarray(p["proj_b.w"], dtype=F32),
        np.ascontiguousarray(p["proj_b.b"], dtype=F32),
    )
    state = VocoderState.initial(cfg, rng=rng if rng is not None else SampleRNG(seed))
    pcm = np.empty(2 * n_iter, dtype=np.int16)
    step = chunk_samples // 2
    classes = np.empty(2 * step, dtype=np.int64)
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n_iter, step):
            n = min(step, n_iter - start)
            u = state.rng.uniforms(2 * n)
            status = kernels.vocoder_loop(
                cond_gx, ipf, start, n, emb, w_ih_emb, p["gru.b"], *args[:5], args[5], args[6],
                u, state.hidden, state.prev_samples, classes,
            )
            if status >= 0:
                raise NumericError(f"non-finite vocoder hidden state at iteration {status}", iteration=int(status))
            chunk = PCM_TABLE[classes[: 2 * n]]
            pcm[2 * start : 2 * (start + n)] = chunk
            if on_chunk is not None:
                on_chunk(chunk.copy())
    return Waveform(pcm, cfg.sample_rate)


# -- accounting ---------------------------------------------------------------


def vocoder_footprint(p: ParamRegistry, cfg: VocoderConfig, dtype: str | dict = "f16") -> dict[str, int]:
    """Bytes per tensor: dense at ``dtype`` width, sparse via block layout."""
    rows = {}
    for name in dense_shapes(cfg):
        dt = dtype.get(name, "f16") if isinstance(dtype, dict) else dtype
        t = p[name]
        if isinstance(t, BlockSparseMatrix):
            rows[name] = sparse_footprint_bytes(t, dt)
        else:
            rows[name] = int(np.asarray(t).size) * DTYPE_WIDTH[dt]
    rows["total"] = sum(rows.values())
    return rows


def write_wav(path, wav: Waveform) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(wav.sample_rate)
        w.writeframes(wav.samples.astype("<i2").tobytes())


class WavStreamWriter:
    """Incremental WAV writer; the header is patched when closed."""

    def __init__(self, path, sample_rate: int):
        self._w = wave.open(str(path), "wb")
        self._w.setnchannels(1)
        self._w.setsampwidth(2)
        self._w.setframerate(sample_rate)

    def __call__(self, chunk: np.ndarray) -> None:
        self._w.writeframes(chunk.astype("<i2").tobytes())

    def close(self) -> None:
        self._w.close()
