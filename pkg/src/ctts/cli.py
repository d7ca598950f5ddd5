"""``ctts`` command line.

Exit codes: 0 success, 1 runtime or model error (stage named on stderr),
2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import acoustic as ac
from . import bench
from . import kernels
from . import modelfile
from . import vocoder as voc
from .errors import CttsError
from .model import PRESETS, StageError, TTSModel, init_random, quantize_acoustic, synthesize
from .quant import QTensorI8
from .registry import ParamRegistry
from .sparse import BlockSparseMatrix, PruneSchedule, prune, sparsity_at, to_block_sparse

VOICE_REFERENCE_BYTES = 5.7e6
MB = 1e6


class CommandError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _load(path, stage: str = "load") -> TTSModel:
    try:
        return modelfile.load(path)
    except (OSError, CttsError, ValueError) as e:
        raise CommandError(stage, f"cannot load {path}: {type(e).__name__}: {e}") from e


def _save(m: TTSModel, path) -> int:
    try:
        return modelfile.save(m, path)
    except OSError as e:
        raise CommandError("save", f"cannot write {path}: {e}") from e


def _container_path(path) -> Path:
    p = Path(path)
    return p / modelfile.MODEL_FILE if p.suffix != ".ctts" else p


# -- commands --------------------------------------------------------------------


def cmd_init_random(args) -> int:
    m = init_random(args.preset, args.seed)
    n = _save(m, args.out)
    print(f"wrote {args.preset} model (seed {args.seed}) to {_container_path(args.out)}: {n} bytes")
    return 0


def cmd_synth(args) -> int:
    m = _load(args.model)
    out = Path(args.out)
    writer = voc.WavStreamWriter(out, m.voc_cfg.sample_rate) if args.stream else None
    try:
        r = synthesize(m, args.text, seed=args.seed, on_chunk=writer, chunk_samples=args.chunk_samples)
    except StageError as e:
        raise CommandError(e.stage, f"{type(e.cause).__name__}: {e.cause}") from e
    finally:
        if writer is not None:
            writer.close()
    if writer is None:
        voc.write_wav(out, r.wav)
    if args.mel_out:
        ac.write_mel(args.mel_out, r.mel)
    t = r.timings_ms
    print(
        f"TIMING frontend_ms={t['frontend']:.3f} acoustic_ms={t['acoustic']:.3f} vocoder_ms={t['vocoder']:.3f} "
        f"total_ms={t['total']:.3f} phonemes={len(r.phonemes)} frames={r.mel.n_frames} samples={len(r.wav.samples)}"
    )
    return 0


def cmd_vocode(args) -> int:
    m = _load(args.model)
    try:
        mel = ac.read_mel(args.mel, m.voc_cfg.frame_hop)
        if mel.frames.shape[1] != m.voc_cfg.n_mels:
            raise ValueError(f"mel has {mel.frames.shape[1]} bins, vocoder expects {m.voc_cfg.n_mels}")
        wav = voc.generate(m.voc_params, m.voc_cfg, mel, seed=args.seed)
    except (CttsError, ValueError) as e:
        raise CommandError("vocoder", f"{type(e).__name__}: {e}") from e
    voc.write_wav(args.out, wav)
    print(f"wrote {len(wav.samples)} samples from {mel.n_frames} frames to {args.out}")
    return 0


def _acoustic_weight_bytes(p: ParamRegistry) -> int:
    total = 0
    for pid in p.referenced_ids():
        if ac.quantizable(pid):
            t = p.physical[pid]
            total += t.nbytes if isinstance(t, QTensorI8) else np.asarray(t).size * 2
    return total


def cmd_quantize(args) -> int:
    m = _load(getattr(args, "in"))
    before = _acoustic_weight_bytes(m.ac_params)
    new_params, reports, skipped = quantize_acoustic(m.ac_params, args.method)
    for name in skipped:
        print(f"notice: {name} is already INT8, skipped")
    if reports:
        print(f"{'tensor':<40s} {'max_abs':>12s} {'scale':>12s} {'max_err':>12s}")
        for rep in reports:
            print(rep.row())
    m.ac_params = new_params
    after = _acoustic_weight_bytes(m.ac_params)
    n = _save(m, args.out)
    print(f"acoustic weight bytes: {before} (FP16 equivalent) -> {after}, ratio {after / before:.4f}")
    print(f"wrote {_container_path(args.out)}: {n} bytes")
    return 0


def prune_trace(p: ParamRegistry, cfg: voc.VocoderConfig, target: float, steps: int):
    """Apply the cubic schedule over ``steps`` steps; each step re-prunes the
    input weights at the scheduled sparsity. Returns (params, trace)."""
    sched = PruneSchedule(0, steps, target)
    dense = {n: np.ascontiguousarray(voc.dense_weight(p[n]).T) for n in voc.SPARSE_MATRICES}
    trace, last = [], {}
    for step in range(1, steps + 1):
        s = sparsity_at(sched, step)
        row = {}
        for name, w in dense.items():
            last[name] = prune(w, s, cfg.block_shape)
            row[name] = 1.0 - last[name][0].mean()
        trace.append((step, s, row))
    out = dict(p.physical)
    for name, (mask, masked) in last.items():
        out[name] = to_block_sparse(masked, mask, cfg.block_shape)
    return ParamRegistry.identity(out), trace


def cmd_prune(args) -> int:
    m = _load(getattr(args, "in"))
    before = voc.vocoder_footprint(m.voc_params, m.voc_cfg)["total"]
    dense_bytes = voc.vocoder_footprint(
        ParamRegistry.identity({n: voc.dense_weight(m.voc_params[n]) for n in m.voc_params.slots}), m.voc_cfg
    )["total"]
    new_params, trace = prune_trace(m.voc_params, m.voc_cfg, args.target, args.steps)
    print(f"{'step':>5s} {'scheduled':>10s} " + " ".join(f"{n:>10s}" for n in voc.SPARSE_MATRICES))
    for step, s, row in trace:
        print(f"{step:5d} {s:10.6f} " + " ".join(f"{row[n]:10.6f}" for n in voc.SPARSE_MATRICES))
    m.voc_params = new_params
    m.voc_cfg = voc.VocoderConfig(**{**m.voc_cfg.to_dict(), "sparsity": {n: args.target for n in voc.SPARSE_MATRICES}})
    after = voc.vocoder_footprint(m.voc_params, m.voc_cfg)["total"]
    n = _save(m, args.out)
    print(f"vocoder bytes: dense {dense_bytes} (input {before}) -> {after}, ratio {after / dense_bytes:.4f}")
    print(f"wrote {_container_path(args.out)}: {n} bytes")
    return 0


def cmd_bench(args) -> int:
    texts = [ln.strip() for ln in Path(args.text_file).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not texts:
        raise CommandError("bench", f"{args.text_file} has no sentences")
    models = {}
    for path in args.model:
        label = Path(path).stem if Path(path).suffix == ".ctts" else Path(path).name
        while label in models:
            label += "'"
        models[label] = _load(path)
    try:
        reports = bench.run_bench(models, texts, args.iters, args.warmup, args.seed, args.workers)
    except StageError as e:
        raise CommandError(e.stage, f"{type(e.cause).__name__}: {e.cause}") from e
    print(f"kernel backend: {kernels.BACKEND}")
    for r in reports.values():
        print(r.table())
    for r in reports.values():
        print(r.line())
    if len(reports) == 2:
        (la, a), (lb, b) = reports.items()
        fast = la if a.total_ms < b.total_ms else lb
        print(f"BENCH_PAIR a={la} b={lb} a_total_ms={a.total_ms:.3f} b_total_ms={b.total_ms:.3f} "
              f"ratio={a.total_ms / b.total_ms:.4f} faster={fast}")
    return 0


def inspect_report(path) -> dict:
    """Footprint, sharing and sparsity summary; totals come from the container itself."""
    m = _load(path)
    fp = modelfile.footprint_report(_container_path(path))
    sparsity = {
        n: m.voc_params[n].sparsity if isinstance(m.voc_params[n], BlockSparseMatrix) else 0.0
        for n in voc.SPARSE_MATRICES
    }
    n_i8 = sum(isinstance(m.ac_params.physical[p], QTensorI8) for p in m.ac_params.referenced_ids())
    return {
        "model": m,
        "footprint": fp,
        "sharing_savings": fp["logical"]["frontend"] - fp["raw"]["frontend"],
        "sparsity": sparsity,
        "int8_tensors": n_i8,
        "per_voice": fp["per_voice"],
    }


def cmd_inspect(args) -> int:
    info = inspect_report(args.model)
    fp, m = info["footprint"], info["model"]
    print(f"model {args.model}  preset={m.meta.get('preset', '?')}  sharing={m.plan.mode}")
    print(f"{'component':<10s} {'bytes':>12s} {'MB':>8s} {'blobs':>6s}")
    for comp in modelfile.COMPONENTS:
        b = fp["aligned"][comp]
        print(f"{comp:<10s} {b:12d} {b / MB:8.3f} {fp['blobs'][comp]:6d}")
    print(f"{'manifest':<10s} {fp['manifest']:12d} {fp['manifest'] / MB:8.3f}")
    print(f"{'header':<10s} {fp['header']:12d}")
    print(f"{'total':<10s} {fp['file_size']:12d} {fp['file_size'] / MB:8.3f} {fp['n_blobs']:6d}")
    print(f"frontend sharing: logical {fp['logical']['frontend']} bytes, physical {fp['raw']['frontend']} bytes, "
          f"savings {info['sharing_savings']} bytes")
    print(f"acoustic: {info['int8_tensors']} INT8 tensors, config preset {m.ac_cfg.preset}")
    print("vocoder block sparsity: " + ", ".join(f"{n}={s:.4f}" for n, s in info["sparsity"].items()))
    pv = info["per_voice"]
    print(f"per additional voice (acoustic + vocoder): {pv} bytes = {pv / MB:.3f} MB "
          f"(reference ~{VOICE_REFERENCE_BYTES / MB:.1f} MB, band 4-8 MB: {'in' if 4 * MB <= pv <= 8 * MB else 'out'})")
    return 0


# -- parser -----------------------------------------------------------------------


def _target(s: str) -> float:
    v = float(s)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"target sparsity must be in [0, 1), got {v}")
    return v


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctts", description="Compact three-stage TTS engine.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init-random", help="build a randomly initialised model")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--preset", choices=PRESETS, default="optimized")
    s.add_argument("--out", required=True, help="model directory or .ctts path")
    s.set_defaults(func=cmd_init_random)

    s = sub.add_parser("synth", help="text to WAV")
    s.add_argument("--model", required=True)
    s.add_argument("--text", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stream", action="store_true", help="write PCM chunk by chunk as it is generated")
    s.add_argument("--chunk-samples", type=_positive, default=2048)
    s.add_argument("--mel-out", help="also dump the mel spectrogram (MEL0 format)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("vocode", help="MEL0 dump to WAV")
    s.add_argument("--model", required=True)
    s.add_argument("--mel", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_vocode)

    s = sub.add_parser("quantize", help="INT8 post-training quantization of the acoustic model")
    s.add_argument("--in", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--method", choices=("maxabs", "percentile"), default="maxabs")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("prune", help="block-prune the vocoder")
    s.add_argument("--in", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--target", type=_target, default=0.78)
    s.add_argument("--steps", type=_positive, default=10)
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("bench", help="latency and RTF, one or two models")
    s.add_argument("--model", required=True, nargs="+")
    s.add_argument("--text-file", required=True)
    s.add_argument("--iters", type=_positive, default=20)
    s.add_argument("--warmup", type=_non_negative, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=_positive, default=1, help="sentence-level threads, capped by CTTS_THREADS")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("inspect", help="footprint table")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and not args.text.strip():
        parser.error("--text must not be empty")
    try:
        return args.func(args)
    except CommandError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (CttsError, OSError, ValueError) as e:
        print(f"error: {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
