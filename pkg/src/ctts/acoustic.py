"""Non-autoregressive acoustic model: phonemes -> mel spectrogram.

Encoder FFT blocks, per-phoneme duration/pitch/energy predictors, length
regulator, bucketed pitch/energy embeddings, decoder FFT blocks, linear mel
head. Any weight may be an INT8 ``QTensorI8``; biases, norms and embedding
tables are kept in float.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, InputError, TruncationError
from .frontend import DEFAULT_PHONEMES
from .registry import ParamRegistry, round_to_f16, uniform_init
from .tensor import (
    F32,
    AttentionParams,
    conv1d,
    embedding_lookup,
    layer_norm,
    linear,
    multi_head_attention,
    relu,
    sinusoid_positions,
)

MEL_MAGIC = b"MEL0"
VARIANCES = ("duration", "pitch", "energy")

# Random-init duration head: bias ln(1 + DURATION_PRIOR), weights shrunk, so
# untrained models emit roughly DURATION_PRIOR frames per phoneme.
DURATION_PRIOR = 1.5
DURATION_WEIGHT_GAIN = 0.1


@dataclass(frozen=True)
class AcousticConfig:
    d_model: int = 256
    heads: int = 2
    n_enc_blocks: int = 3
    n_dec_blocks: int = 3
    conv_channels: int = 768
    conv_kernel: int = 9
    var_channels: int = 256
    var_kernel: int = 3
    n_mels: int = 80
    n_var_bins: int = 256
    pitch_range: tuple = (-3.0, 3.0)
    energy_range: tuple = (-3.0, 3.0)
    phoneme_vocab: int = len(DEFAULT_PHONEMES)
    preset: str = "baseline"

    def __post_init__(self):
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        for k in (self.conv_kernel, self.var_kernel):
            if k % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd, got {k}")
        object.__setattr__(self, "pitch_range", tuple(self.pitch_range))
        object.__setattr__(self, "energy_range", tuple(self.energy_range))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pitch_range"] = list(self.pitch_range)
        d["energy_range"] = list(self.energy_range)
        return d


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    frame_hop: int = 256

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class Variances:
    """Per-phoneme predictions; arrays of length n_phonemes."""

    log_duration: np.ndarray
    duration: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    rescued: bool = field(default=False)


_ATTN = ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")


def logical_slots(cfg: AcousticConfig) -> list[tuple[str, tuple, int, str]]:
    d, c, k = cfg.d_model, cfg.conv_channels, cfg.conv_kernel
    f, kv = cfg.var_channels, cfg.var_kernel
    slots = [("emb", (cfg.phoneme_vocab, d), d, "embedding")]

    def block(prefix):
        for w in _ATTN[:4]:
            slots.append((f"{prefix}.attn.{w}", (d, d), d, "weight"))
        for b in _ATTN[4:]:
            slots.append((f"{prefix}.attn.{b}", (d,), d, "bias"))
        slots.extend([
            (f"{prefix}.ln1.g", (d,), d, "norm_gain"),
            (f"{prefix}.ln1.b", (d,), d, "norm_bias"),
            (f"{prefix}.conv1.w", (k, d, c), k * d, "weight"),
            (f"{prefix}.conv1.b", (c,), k * d, "bias"),
            (f"{prefix}.conv2.w", (k, c, d), k * c, "weight"),
            (f"{prefix}.conv2.b", (d,), k * c, "bias"),
            (f"{prefix}.ln2.g", (d,), d, "norm_gain"),
            (f"{prefix}.ln2.b", (d,), d, "norm_bias"),
        ])

    for i in range(cfg.n_enc_blocks):
        block(f"enc.{i}")
    for v in VARIANCES:
        p = f"var.{v}"
        slots.extend([
            (f"{p}.conv1.w", (kv, d, f), kv * d, "weight"),
            (f"{p}.conv1.b", (f,), kv * d, "bias"),
            (f"{p}.ln1.g", (f,), f, "norm_gain"),
            (f"{p}.ln1.b", (f,), f, "norm_bias"),
            (f"{p}.conv2.w", (kv, f, f), kv * f, "weight"),
            (f"{p}.conv2.b", (f,), kv * f, "bias"),
            (f"{p}.ln2.g", (f,), f, "norm_gain"),
            (f"{p}.ln2.b", (f,), f, "norm_bias"),
            (f"{p}.out.w", (f, 1), f, "weight"),
            (f"{p}.out.b", (1,), f, "bias"),
        ])
    slots.append(("pitch_emb", (cfg.n_var_bins, d), d, "embedding"))
    slots.append(("energy_emb", (cfg.n_var_bins, d), d, "embedding"))
    for i in range(cfg.n_dec_blocks):
        block(f"dec.{i}")
    slots.extend([
        ("dec.ln_f.g", (d,), d, "norm_gain"),
        ("dec.ln_f.b", (d,), d, "norm_bias"),
        ("mel.w", (d, cfg.n_mels), d, "weight"),
        ("mel.b", (cfg.n_mels,), d, "bias"),
    ])
    return slots


def quantizable(name: str) -> bool:
    """Default INT8 policy: weight matrices and conv kernels only."""
    return name.endswith(".w") or name.split(".")[-1] in ("wq", "wk", "wv", "wo")


def param_count(cfg: AcousticConfig) -> int:
    return sum(math.prod(s) for _, s, _, _ in logical_slots(cfg))


def build_params(cfg: AcousticConfig, seed: int) -> ParamRegistry:
    tensors = {}
    for name, shape, fan_in, kind in logical_slots(cfg):
        if kind == "norm_gain":
            t = np.ones(shape, dtype=F32)
        elif kind == "norm_bias":
            t = np.zeros(shape, dtype=F32)
        else:
            t = uniform_init(seed, f"acoustic.{name}", shape, fan_in)
            if name == "var.duration.out.w":
                t *= F32(DURATION_WEIGHT_GAIN)
            elif name == "var.duration.out.b":
                t[:] = math.log1p(DURATION_PRIOR)
            t = round_to_f16(t)
        tensors[name] = t
    return ParamRegistry.identity(tensors)


def _fft_block(p: ParamRegistry, prefix: str, x: np.ndarray, heads: int) -> np.ndarray:
    h = layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    attn = AttentionParams(*(p[f"{prefix}.attn.{n}"] for n in _ATTN))
    x = x + multi_head_attention(h, h, attn, heads)
    h = layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    h = relu(conv1d(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"]))
    return x + conv1d(h, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"])


def encode_phonemes(p: ParamRegistry, cfg: AcousticConfig, phonemes) -> np.ndarray:
    ids = list(phonemes)
    if not ids:
        raise InputError("empty phoneme sequence")
    x = embedding_lookup(p["emb"], ids) * F32(math.sqrt(cfg.d_model))
    x = x + sinusoid_positions(len(ids), cfg.d_model)
    for i in range(cfg.n_enc_blocks):
        x = _fft_block(p, f"enc.{i}", x, cfg.heads)
    return x


def _variance_head(p: ParamRegistry, name: str, hidden: np.ndarray) -> np.ndarray:
    pre = f"var.{name}"
    h = relu(conv1d(hidden, p[f"{pre}.conv1.w"], p[f"{pre}.conv1.b"]))
    h = layer_norm(h, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
    h = relu(conv1d(h, p[f"{pre}.conv2.w"], p[f"{pre}.conv2.b"]))
    h = layer_norm(h, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
    return linear(h, p[f"{pre}.out.w"], p[f"{pre}.out.b"])[:, 0]


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def durations_from_log(log_dur: np.ndarray) -> np.ndarray:
    frames = round_half_away(np.exp(np.asarray(log_dur, dtype=np.float64)) - 1.0)
    return np.maximum(frames, 0).astype(np.int64)


def predict_variances(p: ParamRegistry, cfg: AcousticConfig, hidden: np.ndarray) -> Variances:
    log_dur = _variance_head(p, "duration", hidden)
    return Variances(
        log_duration=log_dur,
        duration=durations_from_log(log_dur),
        pitch=_variance_head(p, "pitch", hidden),
        energy=_variance_head(p, "energy", hidden),
    )


def length_regulate(hidden: np.ndarray, durations) -> np.ndarray:
    durations = np.asarray(durations)
    if durations.shape[0] != hidden.shape[0]:
        raise ValueError(f"{durations.shape[0]} durations for {hidden.shape[0]} rows")
    if np.any(durations < 0):
        raise ValueError("durations must be non-negative")
    return np.repeat(hidden, durations.astype(np.int64), axis=0)


def bucketize(values: np.ndarray, lo: float, hi: float, n_bins: int) -> np.ndarray:
    """Clamp to [lo, hi] and map linearly onto bins 0..n_bins-1."""
    v = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    idx = np.floor((v - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def add_variance_embeddings(p: ParamRegistry, cfg: AcousticConfig, expanded: np.ndarray, pitch, energy) -> np.ndarray:
    pb = bucketize(pitch, *cfg.pitch_range, cfg.n_var_bins)
    eb = bucketize(energy, *cfg.energy_range, cfg.n_var_bins)
    return expanded + embedding_lookup(p["pitch_emb"], pb) + embedding_lookup(p["energy_emb"], eb)


def decode_mel(p: ParamRegistry, cfg: AcousticConfig, conditioned: np.ndarray, frame_hop: int = 256) -> MelSpectrogram:
    if conditioned.shape[0] == 0:
        raise InputError("nothing to decode: zero frames")
    x = conditioned + sinusoid_positions(conditioned.shape[0], cfg.d_model)
    for i in range(cfg.n_dec_blocks):
        x = _fft_block(p, f"dec.{i}", x, cfg.heads)
    x = layer_norm(x, p["dec.ln_f.g"], p["dec.ln_f.b"])
    return MelSpectrogram(linear(x, p["mel.w"], p["mel.b"]), frame_hop)


def acoustic_infer(p: ParamRegistry, cfg: AcousticConfig, phonemes, frame_hop: int = 256) -> tuple[MelSpectrogram, Variances]:
    hidden = encode_phonemes(p, cfg, phonemes)
    var = predict_variances(p, cfg, hidden)
    if var.duration.sum() == 0:
        # never return empty audio for non-empty input
        var.duration[0] = 1
        var.rescued = True
    expanded = length_regulate(hidden, var.duration)
    pitch = np.repeat(var.pitch, var.duration)
    energy = np.repeat(var.energy, var.duration)
    cond = add_variance_embeddings(p, cfg, expanded, pitch, energy)
    return decode_mel(p, cfg, cond, frame_hop), var


def write_mel(path, mel: MelSpectrogram) -> None:
    frames = np.ascontiguousarray(mel.frames, dtype="<f4")
    t, n = frames.shape
    with open(path, "wb") as fh:
        fh.write(MEL_MAGIC + struct.pack("<II", t, n))
        fh.write(frames.tobytes())


def read_mel(path, frame_hop: int = 256) -> MelSpectrogram:
    raw = Path(path).read_bytes()
    if raw[:4] != MEL_MAGIC:
        raise FormatError(f"not a MEL0 dump: magic {raw[:4]!r}", offset=0)
    if len(raw) < 12:
        raise TruncationError("mel header truncated")
    t, n = struct.unpack_from("<II", raw, 4)
    need = 12 + 4 * t * n
    if len(raw) < need:
        raise TruncationError(f"mel payload truncated: {len(raw)} < {need} bytes")
    frames = np.frombuffer(raw, dtype="<f4", count=t * n, offset=12).reshape(t, n).astype(F32)
    return MelSpectrogram(frames, frame_hop)
