"""Weight-only symmetric INT8 post-training quantization.

One scale per tensor, zero-point 0, codes in [-127, 127] (-128 unused),
round-half-to-even. Activations stay FP32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError

F32 = np.float32
QMAX = 127
SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class QTensorI8:
    data: np.ndarray
    scale: float

    def __post_init__(self):
        if self.data.dtype != np.int8:
            raise TypeError(f"QTensorI8 data must be int8, got {self.data.dtype}")
        if not self.scale > 0:
            raise ValueError(f"QTensorI8 scale must be positive, got {self.scale}")
        if self.data.size and self.data.min() < -QMAX:
            raise ValueError("QTensorI8 data uses -128, which symmetric quantization reserves")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def nbytes(self) -> int:
        return int(self.data.size)


@dataclass(frozen=True)
class CalibReport:
    name: str
    max_abs: float
    scale: float
    max_err: float

    def row(self) -> str:
        return f"{self.name:<40s} {self.max_abs:12.6g} {self.scale:12.6g} {self.max_err:12.6g}"


def calibrate(w: np.ndarray, method: str = "maxabs", percentile: float = 99.9) -> float:
    """Pick a per-tensor scale so that the clipping value maps to code 127."""
    if w.size == 0:
        raise ValueError("cannot calibrate an empty tensor")
    a = np.abs(np.asarray(w, dtype=np.float64)).ravel()
    if method == "maxabs":
        clip = a.max()
    elif method == "percentile":
        if not 0 < percentile <= 100:
            raise ValueError(f"percentile must be in (0, 100], got {percentile}")
        clip = np.percentile(a, percentile)
    else:
        raise ValueError(f"unknown calibration method {method!r}")
    return float(F32(max(clip / QMAX, SCALE_FLOOR)))


def quantize(w: np.ndarray, scale: float) -> QTensorI8:
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    scale = float(F32(scale))
    q = np.rint(np.asarray(w, dtype=np.float64) / scale)
    q = np.clip(q, -QMAX, QMAX).astype(np.int8)
    return QTensorI8(q, scale)


def dequantize(q: QTensorI8) -> np.ndarray:
    return q.data.astype(F32) * F32(q.scale)


def qmatmul(x: np.ndarray, qw: QTensorI8) -> np.ndarray:
    """``x @ dequantize(qw)`` without materialising the FP32 weight."""
    if x.ndim != 2 or qw.data.ndim != 2 or x.shape[1] != qw.shape[0]:
        raise ShapeError(f"qmatmul shape mismatch: {x.shape} x {qw.shape}")
    return kernels.qmatmul(np.ascontiguousarray(x, dtype=F32), np.ascontiguousarray(qw.data), F32(qw.scale))


def quantize_tensor(name: str, w: np.ndarray, method: str = "maxabs") -> tuple[QTensorI8, CalibReport]:
    scale = calibrate(w, method)
    q = quantize(w, scale)
    err = float(np.max(np.abs(dequantize(q).astype(np.float64) - w))) if w.size else 0.0
    return q, CalibReport(name, float(np.max(np.abs(w))), q.scale, err)
