"""Latency / RTF harness: median-total iteration per model, paired preset comparison."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .model import TTSModel, synthesize

STAGES = ("frontend", "acoustic", "vocoder")
RTF_THRESHOLD = 1.5


@dataclass
class BenchReport:
    label: str
    frontend_ms: float
    acoustic_ms: float
    vocoder_ms: float
    total_ms: float
    audio_ms: float
    iterations: int
    warmup: int
    sentences: int

    @property
    def rtf(self) -> float:
        return self.audio_ms / self.total_ms

    @property
    def rtf_ok(self) -> bool:
        return self.rtf > RTF_THRESHOLD

    @property
    def stage_sum_ms(self) -> float:
        return self.frontend_ms + self.acoustic_ms + self.vocoder_ms

    @property
    def stage_sum_rel_err(self) -> float:
        return abs(self.stage_sum_ms - self.total_ms) / self.total_ms

    def line(self) -> str:
        fields = {
            "model": self.label,
            "frontend_ms": f"{self.frontend_ms:.3f}",
            "acoustic_ms": f"{self.acoustic_ms:.3f}",
            "vocoder_ms": f"{self.vocoder_ms:.3f}",
            "total_ms": f"{self.total_ms:.3f}",
            "audio_ms": f"{self.audio_ms:.3f}",
            "rtf": f"{self.rtf:.4f}",
            "rtf_gt_1_5": int(self.rtf_ok),
            "iters": self.iterations,
            "warmup": self.warmup,
            "sentences": self.sentences,
        }
        return "BENCH " + " ".join(f"{k}={v}" for k, v in fields.items())

    def table(self) -> str:
        rows = [(s, getattr(self, f"{s}_ms")) for s in STAGES] + [("total", self.total_ms)]
        out = [f"{self.label}: median of {self.iterations} iterations after {self.warmup} warmup, {self.sentences} sentence(s)"]
        out += [f"  {name:<10s} {ms:10.2f} ms" for name, ms in rows]
        out.append(f"  {'audio':<10s} {self.audio_ms:10.2f} ms")
        out.append(f"  RTF {self.rtf:.3f} ({'above' if self.rtf_ok else 'below'} the {RTF_THRESHOLD} real-time threshold)")
        return "\n".join(out)


def worker_count(requested: int | None = None) -> int:
    cap = int(os.environ.get("CTTS_THREADS", "0") or 0)
    n = requested or 1
    return max(1, min(n, cap) if cap > 0 else n)


def _one_pass(m: TTSModel, texts: list[str], seed: int, pool) -> dict:
    """Synthesize every text once; per-stage latencies summed over sentences."""
    if pool is None:
        results = [synthesize(m, t, seed=seed) for t in texts]
    else:
        results = list(pool.map(lambda t: synthesize(m, t, seed=seed), texts))
    agg = {k: sum(r.timings_ms[k] for r in results) for k in (*STAGES, "total")}
    agg["audio"] = sum(r.wav.duration_s for r in results) * 1e3
    return agg


def run_bench(models: dict[str, TTSModel], texts: list[str], iters: int = 20, warmup: int = 3,
              seed: int = 0, workers: int | None = None) -> dict[str, BenchReport]:
    """Time every model on the same texts.

    Models are interleaved within each iteration so slow drift on the host
    affects all of them alike.
    """
    if not texts:
        raise ValueError("need at least one sentence")
    if iters < 1 or warmup < 0:
        raise ValueError("iters must be >= 1 and warmup >= 0")
    n = worker_count(workers)
    samples = {label: [] for label in models}
    pool = ThreadPoolExecutor(n) if n > 1 else None
    try:
        for i in range(warmup + iters):
            for label, m in models.items():
                r = _one_pass(m, texts, seed, pool)
                if i >= warmup:
                    samples[label].append(r)
    finally:
        if pool is not None:
            pool.shutdown()
    reports = {}
    for label, runs in samples.items():
        # every field comes from the run with the (low) median total, so the
        # stage breakdown is one consistent measurement
        med = sorted(runs, key=lambda r: r["total"])[(len(runs) - 1) // 2]
        reports[label] = BenchReport(
            label, med["frontend"], med["acoustic"], med["vocoder"], med["total"], med["audio"],
            iters, warmup, len(texts),
        )
    return reports
