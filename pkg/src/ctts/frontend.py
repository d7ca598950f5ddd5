"""Sentence-level grapheme-to-phoneme transformer.

Deep encoder, shallow decoder. Under the shared plan every encoder layer
uses one of two attention weight sets (alternating A, B, A, ...), the
decoder's self-attention reuses set A and its cross-attention set B, and
all encoder layers share one FFN weight pair. Biases and layer norms stay
per layer. Decoding is greedy with a per-session KV cache.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, StateError
from .registry import ParamRegistry, round_to_f16, uniform_init
from .tensor import (
    F32,
    AttentionParams,
    LayerKV,
    embedding_lookup,
    layer_norm,
    linear,
    multi_head_attention,
    relu,
    sinusoid_positions,
)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>"]

_ARPABET_VOWELS = "AA AE AH AO AW AY EH ER EY IH IY OW OY UH UW".split()
_ARPABET_CONSONANTS = "B CH D DH F G HH JH K L M N NG P R S SH T TH V W Y Z ZH".split()
DEFAULT_PHONEMES = (
    SPECIALS
    + [f"{v}{s}" for v in _ARPABET_VOWELS for s in "012"]
    + _ARPABET_CONSONANTS
    + ["|"]
)
DEFAULT_GRAPHEMES = SPECIALS + [chr(c) for c in range(32, 127)]


class Inventory:
    """Token list where line number == id; ids 0-3 are PAD/BOS/EOS/UNK."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:4] != SPECIALS:
            raise ConfigError(f"inventory must start with {SPECIALS}, got {tokens[:4]}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("inventory has duplicate tokens")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Inventory) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    @classmethod
    def load(cls, path) -> "Inventory":
        text = Path(path).read_text(encoding="utf-8")
        if text.endswith("\n"):
            text = text[:-1]
        return cls(text.split("\n"))

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")


GRAPHEMES = Inventory(DEFAULT_GRAPHEMES)
PHONEMES = Inventory(DEFAULT_PHONEMES)


def tokenize(text: str, inventory: Inventory = GRAPHEMES) -> list[int]:
    return [BOS] + [inventory.id(ch) for ch in text] + [EOS]


def detokenize(ids, inventory: Inventory = GRAPHEMES) -> str:
    return "".join(inventory.tokens[i] for i in ids if i >= len(SPECIALS))


@dataclass(frozen=True)
class FrontendConfig:
    n_enc: int = 16
    n_dec: int = 5
    d_model: int = 256
    heads: int = 4
    d_ff: int = 1024
    grapheme_vocab: int = len(DEFAULT_GRAPHEMES)
    phoneme_vocab: int = len(DEFAULT_PHONEMES)
    max_len: int = 48

    def __post_init__(self):
        if not self.n_enc >= self.n_dec >= 1:
            raise ConfigError(f"need n_enc >= n_dec >= 1, got {self.n_enc}-{self.n_dec}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.heads} heads")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SharingPlan:
    mode: str = "baseline"

    def __post_init__(self):
        if self.mode not in ("baseline", "shared"):
            raise ConfigError(f"unknown sharing mode {self.mode!r}")

    @staticmethod
    def encoder_group(layer: int) -> str:
        # 1-based odd layers -> A, even -> B
        return "A" if layer % 2 == 0 else "B"

    def physical_id(self, slot: str) -> str:
        if self.mode == "baseline":
            return slot
        parts = slot.split(".")
        if parts[-1] in ("wq", "wk", "wv", "wo"):
            if parts[0] == "enc":
                return f"attn.{self.encoder_group(int(parts[1]))}.{parts[-1]}"
            if parts[2] == "self_attn":
                return f"attn.A.{parts[-1]}"
            return f"attn.B.{parts[-1]}"
        if parts[0] == "enc" and parts[2] == "ffn" and parts[3] in ("w1", "w2"):
            return f"enc.ffn.{parts[3]}"
        return slot

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "encoder_attention_groups": "layer 1,3,5,... -> A; 2,4,6,... -> B" if self.mode == "shared" else None,
            "decoder_self_attention": "A" if self.mode == "shared" else None,
            "decoder_cross_attention": "B" if self.mode == "shared" else None,
            "encoder_ffn": "one shared set" if self.mode == "shared" else None,
            "biases": "per layer",
        }


BASELINE_PLAN = SharingPlan("baseline")
SHARED_PLAN = SharingPlan("shared")

_ATTN_W = ("wq", "wk", "wv", "wo")
_ATTN_B = ("bq", "bk", "bv", "bo")


def logical_slots(cfg: FrontendConfig) -> list[tuple[str, tuple, int, str]]:
    """Every logical parameter slot as ``(name, shape, fan_in, kind)``."""
    d, f = cfg.d_model, cfg.d_ff
    slots = [
        ("src_emb", (cfg.grapheme_vocab, d), d, "embedding"),
        ("tgt_emb", (cfg.phoneme_vocab, d), d, "embedding"),
    ]

    def attn(prefix):
        for w in _ATTN_W:
            slots.append((f"{prefix}.{w}", (d, d), d, "weight"))
        for b in _ATTN_B:
            slots.append((f"{prefix}.{b}", (d,), d, "bias"))

    def ffn(prefix):
        slots.extend([
            (f"{prefix}.w1", (d, f), d, "weight"),
            (f"{prefix}.b1", (f,), d, "bias"),
            (f"{prefix}.w2", (f, d), f, "weight"),
            (f"{prefix}.b2", (d,), f, "bias"),
        ])

    def norm(prefix):
        slots.extend([(f"{prefix}.g", (d,), d, "norm_gain"), (f"{prefix}.b", (d,), d, "norm_bias")])

    for i in range(cfg.n_enc):
        attn(f"enc.{i}.attn")
        ffn(f"enc.{i}.ffn")
        norm(f"enc.{i}.ln1")
        norm(f"enc.{i}.ln2")
    norm("enc.ln_f")
    for j in range(cfg.n_dec):
        attn(f"dec.{j}.self_attn")
        attn(f"dec.{j}.cross_attn")
        ffn(f"dec.{j}.ffn")
        for n in (1, 2, 3):
            norm(f"dec.{j}.ln{n}")
    norm("dec.ln_f")
    slots.append(("out.w", (d, cfg.phoneme_vocab), d, "weight"))
    slots.append(("out.b", (cfg.phoneme_vocab,), d, "bias"))
    return slots


def build_registry(cfg: FrontendConfig, plan: SharingPlan, seed: int) -> ParamRegistry:
    """Seeded uniform(+-1/sqrt(fan_in)) init, values snapped to the FP16 grid.

    A physical tensor is initialised once from the first slot mapping to it;
    norm gains start at 1 and norm biases at 0.
    """
    physical, slots = {}, {}
    for name, shape, fan_in, kind in logical_slots(cfg):
        pid = plan.physical_id(name)
        if kind in ("bias", "norm_gain", "norm_bias") and pid != name:
            raise ConfigError(f"bias/norm slot {name} may not alias {pid}")
        slots[name] = pid
        if pid in physical:
            if physical[pid].shape != shape:
                raise ConfigError(f"slot {name} {shape} cannot alias {pid} {physical[pid].shape}")
            continue
        if kind == "norm_gain":
            t = np.ones(shape, dtype=F32)
        elif kind == "norm_bias":
            t = np.zeros(shape, dtype=F32)
        else:
            t = round_to_f16(uniform_init(seed, pid, shape, fan_in))
        physical[pid] = t
    return ParamRegistry(physical, slots)


def unique_param_count(cfg: FrontendConfig, plan: SharingPlan) -> tuple[int, dict[str, int]]:
    """Physical parameter count (shared tensors once) and bytes per dtype.

    Counted from the slot table alone, without allocating weights.
    """
    sizes = {}
    for name, shape, _, _ in logical_slots(cfg):
        sizes[plan.physical_id(name)] = math.prod(shape)
    n = sum(sizes.values())
    return n, {"f32": 4 * n, "f16": 2 * n, "i8": n}


def logical_param_count(cfg: FrontendConfig) -> int:
    return sum(math.prod(shape) for _, shape, _, _ in logical_slots(cfg))


def _attn(reg: ParamRegistry, prefix: str) -> AttentionParams:
    return AttentionParams(*(reg[f"{prefix}.{n}"] for n in _ATTN_W + _ATTN_B))


def _ffn(reg: ParamRegistry, prefix: str, x: np.ndarray) -> np.ndarray:
    h = relu(linear(x, reg[f"{prefix}.w1"], reg[f"{prefix}.b1"]))
    return linear(h, reg[f"{prefix}.w2"], reg[f"{prefix}.b2"])


def _ln(reg: ParamRegistry, prefix: str, x: np.ndarray) -> np.ndarray:
    return layer_norm(x, reg[f"{prefix}.g"], reg[f"{prefix}.b"])


def _embed(reg: ParamRegistry, table: str, ids, cfg: FrontendConfig, offset: int = 0) -> np.ndarray:
    x = embedding_lookup(reg[table], ids) * F32(math.sqrt(cfg.d_model))
    return x + sinusoid_positions(len(ids), cfg.d_model, offset)


def source_ids(tokens) -> list[int]:
    """Encoder input: graphemes followed by EOS, without BOS."""
    ids = list(tokens)
    if ids and ids[0] == BOS:
        ids = ids[1:]
    if not ids or ids[-1] != EOS:
        ids.append(EOS)
    return ids


def encode(reg: ParamRegistry, cfg: FrontendConfig, tokens) -> np.ndarray:
    ids = source_ids(tokens)
    if len(ids) > cfg.max_len:
        raise InputError(f"input of {len(ids)} tokens exceeds max_len {cfg.max_len}")
    x = _embed(reg, "src_emb", ids, cfg)
    for i in range(cfg.n_enc):
        h = _ln(reg, f"enc.{i}.ln1", x)
        x = x + multi_head_attention(h, h, _attn(reg, f"enc.{i}.attn"), cfg.heads)
        x = x + _ffn(reg, f"enc.{i}.ffn", _ln(reg, f"enc.{i}.ln2", x))
    return _ln(reg, "enc.ln_f", x)


class KVCache:
    """Per-session decoder state: growing self-attention K/V per layer and
    the cross-attention memory projected once from the encoder output."""

    def __init__(self, reg: ParamRegistry, cfg: FrontendConfig, memory: np.ndarray | None = None):
        self.steps = 0
        self.self_kv: list[LayerKV] = []
        self.cross_kv: list[LayerKV] = []
        if memory is not None:
            self.init(reg, cfg, memory)

    @property
    def initialized(self) -> bool:
        return bool(self.cross_kv)

    def init(self, reg: ParamRegistry, cfg: FrontendConfig, memory: np.ndarray) -> None:
        self.steps = 0
        self.self_kv = [LayerKV(cfg.d_model, capacity=cfg.max_len) for _ in range(cfg.n_dec)]
        self.cross_kv = []
        for j in range(cfg.n_dec):
            p = _attn(reg, f"dec.{j}.cross_attn")
            self.cross_kv.append(LayerKV.frozen(linear(memory, p.wk, p.bk), linear(memory, p.wv, p.bv)))


def decode_step(reg: ParamRegistry, cfg: FrontendConfig, cache: KVCache, prev_token: int) -> np.ndarray:
    """Feed one token and return next-token logits; appends one step to the cache."""
    if not cache.initialized:
        raise StateError("decode_step called before the cache was initialised from encode()")
    y = _embed(reg, "tgt_emb", [prev_token], cfg, offset=cache.steps)
    for j in range(cfg.n_dec):
        h = _ln(reg, f"dec.{j}.ln1", y)
        y = y + multi_head_attention(h, h, _attn(reg, f"dec.{j}.self_attn"), cfg.heads, causal=True, cache=cache.self_kv[j])
        h = _ln(reg, f"dec.{j}.ln2", y)
        y = y + multi_head_attention(h, None, _attn(reg, f"dec.{j}.cross_attn"), cfg.heads, cache=cache.cross_kv[j])
        y = y + _ffn(reg, f"dec.{j}.ffn", _ln(reg, f"dec.{j}.ln3", y))
    cache.steps += 1
    return linear(_ln(reg, "dec.ln_f", y), reg["out.w"], reg["out.b"])[0]


def decode_full(reg: ParamRegistry, cfg: FrontendConfig, memory: np.ndarray, prefix) -> np.ndarray:
    """Uncached teacher-forced decoder over ``prefix``; logits for every position."""
    prefix = list(prefix)
    y = _embed(reg, "tgt_emb", prefix, cfg)
    for j in range(cfg.n_dec):
        h = _ln(reg, f"dec.{j}.ln1", y)
        y = y + multi_head_attention(h, h, _attn(reg, f"dec.{j}.self_attn"), cfg.heads, causal=True)
        h = _ln(reg, f"dec.{j}.ln2", y)
        y = y + multi_head_attention(h, memory, _attn(reg, f"dec.{j}.cross_attn"), cfg.heads)
        y = y + _ffn(reg, f"dec.{j}.ffn", _ln(reg, f"dec.{j}.ln3", y))
    return linear(_ln(reg, "dec.ln_f", y), reg["out.w"], reg["out.b"])


def greedy_decode(reg: ParamRegistry, cfg: FrontendConfig, memory: np.ndarray, use_cache: bool = True) -> list[int]:
    out: list[int] = []
    cache = KVCache(reg, cfg, memory) if use_cache else None
    prev = BOS
    while len(out) < cfg.max_len:
        if use_cache:
            logits = decode_step(reg, cfg, cache, prev)
        else:
            logits = decode_full(reg, cfg, memory, [BOS] + out)[-1]
        tok = int(np.argmax(logits))  # lowest id wins ties
        out.append(tok)
        if tok == EOS:
            break
        prev = tok
    return out


def g2p(reg: ParamRegistry, cfg: FrontendConfig, text: str, graphemes: Inventory = GRAPHEMES) -> list[int]:
    """Greedy phoneme ids for ``text``; ends with EOS unless ``max_len`` was hit."""
    if not text:
        raise InputError("empty text")
    return greedy_decode(reg, cfg, encode(reg, cfg, tokenize(text, graphemes)))


def strip_specials(ids) -> list[int]:
    return [i for i in ids if i >= len(SPECIALS)]
