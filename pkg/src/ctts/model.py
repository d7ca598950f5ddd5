"""Three-stage model bundle, release presets and the synthesis pipeline."""

from __future__ import annotations

import time
from dataclasses import dataclass, field


from . import acoustic as ac
from . import frontend as fe
from . import vocoder as voc
from .errors import ConfigError, InputError
from .frontend import Inventory
from .quant import QTensorI8, quantize_tensor
from .registry import ParamRegistry

PRESETS = ("baseline", "optimized")

# Suppressing the special tokens in a randomly initialised frontend makes
# greedy decoding always run to max_len, so every sentence costs the same
# and presets are compared on equal work.
SPECIAL_LOGIT_BIAS = -1.0e4

FRONTEND_CONFIGS = {
    "baseline": fe.FrontendConfig(n_enc=16, n_dec=5, d_model=256, heads=4, d_ff=1024),
    "optimized": fe.FrontendConfig(n_enc=20, n_dec=1, d_model=512, heads=8, d_ff=2560),
}
SHARING_PLANS = {"baseline": fe.BASELINE_PLAN, "optimized": fe.SHARED_PLAN}
ACOUSTIC_CONFIGS = {
    "baseline": ac.AcousticConfig(),
    "optimized": ac.AcousticConfig(
        n_enc_blocks=2, n_dec_blocks=2, conv_channels=384, conv_kernel=3, var_channels=128, preset="reduced"
    ),
}
VOCODER_CONFIG = voc.VocoderConfig()


@dataclass
class TTSModel:
    fe_cfg: fe.FrontendConfig
    plan: fe.SharingPlan
    fe_params: ParamRegistry
    ac_cfg: ac.AcousticConfig
    ac_params: ParamRegistry
    voc_cfg: voc.VocoderConfig
    voc_params: ParamRegistry
    graphemes: Inventory = field(default_factory=lambda: fe.GRAPHEMES)
    phonemes: Inventory = field(default_factory=lambda: fe.PHONEMES)
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        if len(self.graphemes) != self.fe_cfg.grapheme_vocab:
            raise ConfigError(f"grapheme inventory has {len(self.graphemes)} tokens, model expects {self.fe_cfg.grapheme_vocab}")
        for name, n in (("frontend", self.fe_cfg.phoneme_vocab), ("acoustic", self.ac_cfg.phoneme_vocab)):
            if len(self.phonemes) != n:
                raise ConfigError(f"phoneme inventory has {len(self.phonemes)} tokens, {name} expects {n}")
        if self.ac_cfg.n_mels != self.voc_cfg.n_mels:
            raise ConfigError(f"acoustic emits {self.ac_cfg.n_mels} mel bins, vocoder expects {self.voc_cfg.n_mels}")


def quantize_acoustic(p: ParamRegistry, method: str = "maxabs") -> tuple[ParamRegistry, list, list[str]]:
    """INT8-quantize every policy tensor still in float; returns (params, reports, skipped)."""
    out = dict(p.physical)
    reports, skipped = [], []
    for name in p.referenced_ids():
        if not ac.quantizable(name):
            continue
        t = p.physical[name]
        if isinstance(t, QTensorI8):
            skipped.append(name)
            continue
        out[name], rep = quantize_tensor(name, t, method)
        reports.append(rep)
    return ParamRegistry(out, p.slots), reports, skipped


def build_model(fe_cfg: fe.FrontendConfig, plan: fe.SharingPlan, ac_cfg: ac.AcousticConfig,
                voc_cfg: voc.VocoderConfig, seed: int = 0, int8_acoustic: bool = False,
                sparse_vocoder: bool = False, meta: dict | None = None) -> TTSModel:
    """Randomly initialised model; special tokens are suppressed in the G2P output."""
    fe_params = fe.build_registry(fe_cfg, plan, seed)
    out_b = fe_params["out.b"].copy()
    out_b[: len(fe.SPECIALS)] = SPECIAL_LOGIT_BIAS
    fe_params.replace(fe_params.slots["out.b"], out_b)
    ac_params = ac.build_params(ac_cfg, seed)
    voc_params = voc.build_params(voc_cfg, seed)
    if int8_acoustic:
        ac_params, _, _ = quantize_acoustic(ac_params)
    if sparse_vocoder:
        voc_params, _ = voc.sparsify(voc_params, voc_cfg)
    m = TTSModel(fe_cfg, plan, fe_params, ac_cfg, ac_params, voc_cfg, voc_params,
                 meta=dict(meta or {"seed": seed}))
    m.validate()
    return m


def init_random(preset: str, seed: int = 0) -> TTSModel:
    """Release-size model: ``baseline`` (16-5 FE, FP16 acoustic, dense vocoder) or
    ``optimized`` (shared 20-1 FE, reduced INT8 acoustic, block-sparse vocoder)."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    opt = preset == "optimized"
    return build_model(
        FRONTEND_CONFIGS[preset], SHARING_PLANS[preset], ACOUSTIC_CONFIGS[preset], VOCODER_CONFIG, seed,
        int8_acoustic=opt, sparse_vocoder=opt, meta={"preset": preset, "seed": seed},
    )


@dataclass
class SynthResult:
    wav: voc.Waveform
    mel: ac.MelSpectrogram
    phonemes: list
    timings_ms: dict


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def text_to_phonemes(m: TTSModel, text: str) -> list[int]:
    ids = fe.strip_specials(fe.g2p(m.fe_params, m.fe_cfg, text, m.graphemes))
    if not ids:
        raise InputError("frontend produced no phonemes")
    return ids


def synthesize(m: TTSModel, text: str, seed: int = 0, on_chunk=None, chunk_samples: int = 2048) -> SynthResult:
    """Text to PCM through frontend, acoustic model and vocoder, timing each stage."""
    if not text or not text.strip():
        raise InputError("empty text")
    t = {}
    stage = "frontend"
    try:
        t0 = time.perf_counter()
        phonemes = text_to_phonemes(m, text)
        t1 = time.perf_counter()
        stage = "acoustic"
        mel, _ = ac.acoustic_infer(m.ac_params, m.ac_cfg, phonemes, m.voc_cfg.frame_hop)
        t2 = time.perf_counter()
        stage = "vocoder"
        wav = voc.generate(m.voc_params, m.voc_cfg, mel, seed=seed, chunk_samples=chunk_samples, on_chunk=on_chunk)
        t3 = time.perf_counter()
    except Exception as e:
        raise StageError(stage, e) from e
    t["frontend"] = (t1 - t0) * 1e3
    t["acoustic"] = (t2 - t1) * 1e3
    t["vocoder"] = (t3 - t2) * 1e3
    t["total"] = (t3 - t0) * 1e3
    return SynthResult(wav, mel, phonemes, t)
