"""Compare the numba and pure-numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel is run once per backend to compile/warm, then timed; results
are checked for bit equality (the vocoder loop is compared on its sampled
classes).
"""
import argparse
import timeit

import numpy as np

from ctts.kernels import _numba as nb
from ctts.kernels import _numpy as npk
from ctts.sparse import prune, to_block_sparse
from ctts import vocoder as voc


def _cases(rng):
    a = rng.standard_normal((32, 512)).astype(np.float32)
    b = rng.standard_normal((512, 1024)).astype(np.float32)
    x = rng.standard_normal((40, 256)).astype(np.float32)
    w = rng.standard_normal((9, 256, 256)).astype(np.float32)
    dense = rng.standard_normal((1536, 512)).astype(np.float32)
    mask, masked = prune(dense, 0.78)
    s = to_block_sparse(masked, mask)
    v = rng.standard_normal(512).astype(np.float32)
    q = rng.integers(-127, 128, size=(512, 1024)).astype(np.int8)
    return {
        "matmul 32x512x1024": ("matmul", (a, b)),
        "qmatmul 32x512x1024": ("qmatmul", (a, q, np.float32(0.01))),
        "conv1d T=40 k=9 256->256": ("conv1d", (x, w)),
        "bsr_matvec 1536x512 @ 0.78": ("bsr_matvec", (s.data, s.kept_rows, s.kept_cols, s.rows, v)),
    }


def _vocoder_case(sparse, frames=2):
    cfg = voc.VocoderConfig()
    p = voc.build_params(cfg, 0)
    if sparse:
        p, _ = voc.sparsify(p, cfg)
    mel = voc.MelSpectrogram(np.random.default_rng(1).standard_normal((frames, cfg.n_mels)).astype(np.float32))
    return lambda: voc.generate(p, cfg, mel, seed=0).samples


def _time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  equal")
    for label, (name, call_args) in _cases(rng).items():
        fa, fb = getattr(npk, name), getattr(nb, name)
        ta = _time(lambda: fa(*call_args), args.repeat)
        tb = _time(lambda: fb(*call_args), args.repeat)
        same = np.array_equal(fa(*call_args), fb(*call_args))
        print(f"{label:<34s} {ta * 1e3:10.3f} {tb * 1e3:10.3f} {ta / tb:8.1f}  {same}")

    orig = voc.kernels.vocoder_loop
    try:
        for sparse in (False, True):
            out, times = {}, {}
            for name, backend in (("numpy", npk), ("numba", nb)):
                voc.kernels.vocoder_loop = backend.vocoder_loop
                run = _vocoder_case(sparse)
                times[name] = _time(run, max(1, args.repeat // 2))
                out[name] = run()
            label = f"vocoder 2 frames ({'sparse' if sparse else 'dense'})"
            same = np.array_equal(out["numpy"], out["numba"])
            print(f"{label:<34s} {times['numpy'] * 1e3:10.3f} {times['numba'] * 1e3:10.3f} "
                  f"{times['numpy'] / times['numba']:8.1f}  {same}")
    finally:
        voc.kernels.vocoder_loop = orig


if __name__ == "__main__":
    main()
