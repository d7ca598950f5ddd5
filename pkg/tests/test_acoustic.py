import math

import numpy as np
import pytest

from ctts import acoustic as ac
from ctts.errors import ConfigError, FormatError, InputError, TruncationError
from ctts.model import quantize_acoustic
from ctts.registry import ParamRegistry
from ctts.tensor import sinusoid_positions

CFG = ac.AcousticConfig(d_model=16, heads=2, n_enc_blocks=1, n_dec_blocks=1, conv_channels=24,
                        conv_kernel=3, var_channels=8, n_mels=8, n_var_bins=16)


def test_round_half_away():
    assert ac.round_half_away(np.array([0.5, 1.5, 2.5, -0.5, 0.49])).tolist() == [1, 2, 3, -1, 0]


def test_durations_from_log():
    d = ac.durations_from_log(np.array([np.log(1.0), np.log(2.5), np.log(3.49), -5.0, np.log(4.0)]))
    assert d.tolist() == [0, 2, 2, 0, 3]
    assert d.dtype == np.int64


def test_length_regulate():
    h = np.arange(6, dtype=np.float32).reshape(3, 2)
    out = ac.length_regulate(h, [2, 0, 1])
    assert out.tolist() == [[0, 1], [0, 1], [4, 5]]
    with pytest.raises(ValueError):
        ac.length_regulate(h, [1, -1, 1])
    with pytest.raises(ValueError):
        ac.length_regulate(h, [1, 1])


def test_bucketize_against_scalar_oracle():
    lo, hi, n = -3.0, 3.0, 16
    vals = np.concatenate([np.linspace(-4, 4, 1001), [lo, hi, 0.0]])

    def oracle(v):
        v = min(max(float(v), lo), hi)
        return min(int(math.floor((v - lo) / (hi - lo) * n)), n - 1)

    assert ac.bucketize(vals, lo, hi, n).tolist() == [oracle(v) for v in vals]


def test_config_validation():
    with pytest.raises(ConfigError):
        ac.AcousticConfig(conv_kernel=4)
    with pytest.raises(ConfigError):
        ac.AcousticConfig(d_model=10, heads=3)


def test_inference_shapes_and_frame_count():
    p = ac.build_params(CFG, 0)
    mel, var = ac.acoustic_infer(p, CFG, [5, 6, 7, 8], frame_hop=16)
    assert mel.frames.shape == (int(var.duration.sum()), CFG.n_mels)
    assert mel.frame_hop == 16
    assert var.pitch.shape == (4,)
    assert not var.rescued


def test_random_init_duration_prior():
    p = ac.build_params(CFG, 0)
    _, var = ac.acoustic_infer(p, CFG, list(range(4, 40)))
    assert 1.0 <= var.duration.mean() <= 2.0


def test_all_zero_durations_rescued():
    p = ac.build_params(CFG, 0)
    b = p["var.duration.out.b"].copy()
    b[:] = -10
    p.replace("var.duration.out.b", b)
    mel, var = ac.acoustic_infer(p, CFG, [5, 6])
    assert var.rescued and var.duration.tolist() == [1, 0] and mel.n_frames == 1


def test_zero_weight_ablation_leaves_embedding_plus_positions():
    p = ac.build_params(CFG, 0)

    def zero(name):
        return name.startswith("enc.") and ".ln" not in name

    z = ParamRegistry.identity({k: np.zeros_like(v) if zero(k) else v for k, v in p.physical.items()})
    ids = [4, 9, 10]
    got = ac.encode_phonemes(z, CFG, ids)
    ref = p["emb"][ids] * np.float32(math.sqrt(CFG.d_model)) + sinusoid_positions(3, CFG.d_model)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_empty_input_rejected():
    with pytest.raises(InputError):
        ac.acoustic_infer(ac.build_params(CFG, 0), CFG, [])


def test_int8_acoustic_close_to_float():
    p = ac.build_params(CFG, 0)
    q, reports, skipped = quantize_acoustic(p)
    assert not skipped and all(r.max_err <= r.scale / 2 + 1e-7 for r in reports)
    ids = [5, 6, 7, 8, 9]
    hf = ac.encode_phonemes(p, CFG, ids)
    hq = ac.encode_phonemes(q, CFG, ids)
    assert np.max(np.abs(hf - hq)) / np.max(np.abs(hf)) < 0.05
    _, again, skipped = quantize_acoustic(q)
    assert not again and len(skipped) == len(reports)


def test_quantizable_policy():
    assert ac.quantizable("enc.0.conv1.w") and ac.quantizable("dec.1.attn.wq")
    assert not ac.quantizable("enc.0.conv1.b") and not ac.quantizable("emb") and not ac.quantizable("enc.0.ln1.g")


def test_mel_roundtrip_and_errors(tmp_path):
    mel = ac.MelSpectrogram(np.random.default_rng(0).standard_normal((5, 8)).astype(np.float32))
    ac.write_mel(tmp_path / "m.mel", mel)
    raw = (tmp_path / "m.mel").read_bytes()
    assert raw[:4] == b"MEL0" and len(raw) == 12 + 5 * 8 * 4
    back = ac.read_mel(tmp_path / "m.mel")
    assert np.array_equal(back.frames, mel.frames)
    (tmp_path / "bad.mel").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        ac.read_mel(tmp_path / "bad.mel")
    (tmp_path / "short.mel").write_bytes(raw[:-4])
    with pytest.raises(TruncationError):
        ac.read_mel(tmp_path / "short.mel")
