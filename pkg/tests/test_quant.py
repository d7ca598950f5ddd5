import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctts import quant
from ctts.quant import QTensorI8


def _bound_ok(w, q):
    err = np.abs(quant.dequantize(q).astype(np.float64) - w)
    return np.all(err <= q.scale / 2 + 1e-7)


def test_roundtrip_bound_on_grid():
    w = np.linspace(-3.0, 3.0, 10001, dtype=np.float32)
    q = quant.quantize(w, quant.calibrate(w))
    assert _bound_ok(w, q)
    assert q.data.max() == 127 and q.data.min() == -127


@settings(max_examples=60, deadline=None)
@given(arrays(np.float32, st.integers(1, 200), elements=st.floats(-100, 100, width=32)))
def test_roundtrip_bound_random(w):
    q = quant.quantize(w, quant.calibrate(w))
    assert _bound_ok(w, q)
    assert q.data.min() >= -127


def test_calibrate_maxabs_and_floor():
    w = np.array([0.5, -2.54, 1.0], np.float32)
    assert quant.calibrate(w) == pytest.approx(2.54 / 127, rel=1e-6)
    assert quant.calibrate(np.zeros(4, np.float32)) == pytest.approx(quant.SCALE_FLOOR, rel=1e-3)
    q = quant.quantize(np.zeros(4, np.float32), quant.calibrate(np.zeros(4, np.float32)))
    assert not np.any(q.data)


def test_calibrate_percentile_clips_outliers():
    w = np.concatenate([np.full(999, 0.1, np.float32), [50.0]]).astype(np.float32)
    assert quant.calibrate(w, "percentile", 99.0) < quant.calibrate(w, "maxabs")
    with pytest.raises(ValueError):
        quant.calibrate(w, "nope")
    with pytest.raises(ValueError):
        quant.calibrate(np.zeros(0, np.float32))


def test_round_half_even():
    q = quant.quantize(np.array([0.5, 1.5, 2.5, -0.5], np.float32), 1.0)
    assert q.data.tolist() == [0, 2, 2, 0]


def test_qtensor_validation():
    with pytest.raises(TypeError):
        QTensorI8(np.zeros(3, np.int16), 1.0)
    with pytest.raises(ValueError):
        QTensorI8(np.zeros(3, np.int8), 0.0)
    with pytest.raises(ValueError):
        QTensorI8(np.array([-128], np.int8), 1.0)


def test_qmatmul_equals_dequantize_then_matmul(rng):
    from ctts.tensor import matmul

    x = rng.standard_normal((5, 32)).astype(np.float32)
    w = rng.standard_normal((32, 7)).astype(np.float32)
    q, _ = quant.quantize_tensor("w", w)
    assert np.array_equal(quant.qmatmul(x, q), matmul(x, quant.dequantize(q)))
    np.testing.assert_allclose(quant.qmatmul(x, q), x @ w, atol=32 * q.scale * 3)


def test_quantize_tensor_report(rng):
    w = rng.standard_normal((16, 16)).astype(np.float32)
    q, rep = quant.quantize_tensor("layer.w", w)
    assert rep.max_err <= rep.scale / 2 + 1e-7
    assert rep.max_abs == pytest.approx(np.abs(w).max())
    assert "layer.w" in rep.row()
    assert q.nbytes == w.size
