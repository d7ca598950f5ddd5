"""Deduplicating ``.ctts`` model container.

Layout::

    b"CTTS" | u32 version | u64 manifest length | manifest JSON (space padded)
    | blob 0 | pad | blob 1 | pad | ...

Every blob starts on a 64-byte boundary (the manifest padding aligns the
first one). Only the first slot mapped to a physical tensor owns a blob;
later slots carry ``alias_of`` and no data. Dense floats are stored as
IEEE binary16 when that is lossless and binary32 otherwise; INT8 tensors
keep their scale in the manifest; block-sparse matrices are stored as
``u64 n_kept | u32 linear block index * n_kept | values``.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import acoustic as ac
from . import frontend as fe
from . import vocoder as voc
from .errors import FormatError, TruncationError, ValidationError, VersionError
from .frontend import Inventory
from .model import TTSModel
from .quant import QTensorI8
from .registry import ParamRegistry
from .sparse import BlockSparseMatrix

MAGIC = b"CTTS"
VERSION = 1
HEADER = struct.Struct("<4sIQ")
HEADER_BYTES = HEADER.size
ALIGN = 64
COMPONENTS = ("frontend", "acoustic", "vocoder")
MODEL_FILE = "model.ctts"
GRAPHEME_FILE = "graphemes.txt"
PHONEME_FILE = "phonemes.txt"

CONVENTIONS = {
    "gru_gate_order": ["update", "reset", "candidate"],
    "gru_bias": "single bias added to the input projection",
    "dense_weight_layout": "[in, out], y = x @ W",
    "sparse_weight_layout": "block-sparse [out, in], kept blocks in row-major block order",
    "conv_weight_layout": "[kernel, in, out], same padding",
    "variance_bucketing": "linear: floor((clip(v) - lo) / (hi - lo) * n_bins), clipped to n_bins - 1",
    "mu_law": "mu=255, class 128 decodes to 0",
    "pcm": "round(x * 32767), int16 little-endian",
}


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def _is_f16_exact(a: np.ndarray) -> bool:
    with np.errstate(over="ignore"):
        return bool(np.array_equal(a.astype(np.float16).astype(np.float32), a))


def _encode(t) -> tuple[dict, bytes]:
    """Descriptor fields and payload for one physical tensor."""
    if isinstance(t, QTensorI8):
        return {"dtype": "i8", "shape": list(t.shape), "scale": float(t.scale)}, t.data.tobytes()
    if isinstance(t, BlockSparseMatrix):
        vals = t.data
        dt = "f16" if _is_f16_exact(vals) else "f32"
        gc = t.cols // t.block_shape[1]
        lin = (t.kept_rows * gc + t.kept_cols).astype("<u4")
        payload = struct.pack("<Q", t.n_kept) + lin.tobytes() + vals.astype("<f2" if dt == "f16" else "<f4").tobytes()
        return {
            "dtype": dt,
            "shape": [t.rows, t.cols],
            "layout": "bsr",
            "block_shape": list(t.block_shape),
            "n_kept": t.n_kept,
        }, payload
    a = np.asarray(t, dtype=np.float32)
    dt = "f16" if _is_f16_exact(a) else "f32"
    return {"dtype": dt, "shape": list(a.shape)}, a.astype("<f2" if dt == "f16" else "<f4").tobytes()


def _expected_nbytes(d: dict) -> int:
    width = {"f16": 2, "f32": 4, "i8": 1}[d["dtype"]]
    if d.get("layout") == "bsr":
        br, bc = d["block_shape"]
        return 8 + d["n_kept"] * (4 + br * bc * width)
    return math.prod(d["shape"]) * width


def _registries(m: TTSModel) -> dict[str, ParamRegistry]:
    return {"frontend": m.fe_params, "acoustic": m.ac_params, "vocoder": m.voc_params}


def build_manifest(m: TTSModel) -> tuple[dict, list[bytes]]:
    descriptors, blobs = [], []
    for comp, reg in _registries(m).items():
        owner: dict[str, int] = {}
        for slot, pid in reg.slots.items():
            desc = {"id": len(descriptors), "name": slot, "component": comp, "physical": pid}
            if pid in owner:
                desc["alias_of"] = owner[pid]
            else:
                fields, payload = _encode(reg.physical[pid])
                desc.update(fields)
                desc["nbytes"] = len(payload)
                owner[pid] = desc["id"]
                blobs.append(payload)
            descriptors.append(desc)
    manifest = {
        "format": "ctts",
        "version": VERSION,
        "meta": m.meta,
        "components": {
            "frontend": {"config": m.fe_cfg.to_dict(), "sharing": m.plan.to_dict()},
            "acoustic": {"config": m.ac_cfg.to_dict()},
            "vocoder": {"config": m.voc_cfg.to_dict()},
        },
        "conventions": CONVENTIONS,
        "tensors": descriptors,
    }
    return manifest, blobs


def _serialize(manifest: dict, blobs: list[bytes]) -> bytes:
    text = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
    text += b" " * (_align(HEADER_BYTES + len(text)) - HEADER_BYTES - len(text))
    parts = [HEADER.pack(MAGIC, VERSION, len(text)), text]
    for b in blobs:
        parts.append(b)
        parts.append(b"\0" * (_align(len(b)) - len(b)))
    return b"".join(parts)


def to_bytes(m: TTSModel) -> bytes:
    manifest, blobs = build_manifest(m)
    return _serialize(manifest, blobs)


def save(m: TTSModel, path) -> int:
    """Write ``m`` to ``path`` (a ``.ctts`` file or a model directory); returns container bytes."""
    m.validate()
    data = to_bytes(m)
    path = Path(path)
    if path.suffix != ".ctts":
        path.mkdir(parents=True, exist_ok=True)
        path = path / MODEL_FILE
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    m.graphemes.save(path.parent / GRAPHEME_FILE)
    m.phonemes.save(path.parent / PHONEME_FILE)
    return len(data)


# -- loading -------------------------------------------------------------------


@dataclass
class Container:
    manifest: dict
    blob_offsets: list[int]
    file_size: int
    manifest_bytes: int


def _parse(data: bytes) -> Container:
    if len(data) < HEADER_BYTES:
        if not MAGIC.startswith(data[:4]):
            raise FormatError(f"bad magic {data[:4]!r}", offset=0)
        raise TruncationError(f"file is {len(data)} bytes, header needs {HEADER_BYTES}")
    magic, version, mlen = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise VersionError(f"container version {version}, this reader supports {VERSION}")
    if HEADER_BYTES + mlen > len(data):
        raise TruncationError(f"manifest runs to byte {HEADER_BYTES + mlen}, file has {len(data)}")
    try:
        manifest = json.loads(data[HEADER_BYTES : HEADER_BYTES + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"manifest is not valid JSON: {e}", offset=HEADER_BYTES) from e
    if (HEADER_BYTES + mlen) % ALIGN:
        raise FormatError("manifest padding leaves the first blob unaligned", offset=HEADER_BYTES + mlen)
    _validate_manifest(manifest)
    offsets, pos = [], HEADER_BYTES + mlen
    for d in manifest["tensors"]:
        if "alias_of" in d:
            continue
        offsets.append(pos)
        pos += _align(d["nbytes"])
    if pos > len(data):
        raise TruncationError(f"blobs run to byte {pos}, file has {len(data)}")
    if pos < len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last blob", offset=pos)
    return Container(manifest, offsets, len(data), mlen)


def _validate_manifest(man: dict) -> None:
    try:
        tensors = man["tensors"]
        comps = man["components"]
    except (KeyError, TypeError) as e:
        raise ValidationError(f"manifest missing required key: {e}") from e
    if set(comps) != set(COMPONENTS):
        raise ValidationError(f"manifest components {sorted(comps)} != {sorted(COMPONENTS)}")
    seen = set()
    by_id = {}
    for i, d in enumerate(tensors):
        if d.get("id") != i:
            raise ValidationError(f"descriptor {i} has id {d.get('id')}")
        key = (d["component"], d["name"])
        if key in seen:
            raise ValidationError(f"slot {key} named twice")
        seen.add(key)
        if "alias_of" in d:
            tgt = by_id.get(d["alias_of"])
            if tgt is None or "alias_of" in tgt:
                raise ValidationError(f"{d['name']}: alias_of {d['alias_of']} is not an earlier owning descriptor")
            if tgt["component"] != d["component"] or tgt["physical"] != d["physical"]:
                raise ValidationError(f"{d['name']}: alias target disagrees on component/physical id")
        else:
            if d.get("dtype") not in ("f16", "f32", "i8"):
                raise ValidationError(f"{d['name']}: unknown dtype {d.get('dtype')!r}")
            if d["nbytes"] != _expected_nbytes(d):
                raise ValidationError(f"{d['name']}: blob length {d['nbytes']} does not match dtype and shape")
        by_id[i] = d


def _decode(d: dict, buf: memoryview, writable: bool):
    n = d["nbytes"]
    raw = bytes(buf[:n])
    shape = tuple(d["shape"])
    if d.get("layout") == "bsr":
        br, bc = d["block_shape"]
        rows, cols = shape
        nk = struct.unpack_from("<Q", raw)[0]
        if nk != d["n_kept"]:
            raise ValidationError(f"{d['name']}: blob holds {nk} blocks, manifest says {d['n_kept']}")
        lin = np.frombuffer(raw, dtype="<u4", count=nk, offset=8).astype(np.int64)
        vdt = "<f2" if d["dtype"] == "f16" else "<f4"
        vals = np.frombuffer(raw, dtype=vdt, offset=8 + 4 * nk).astype(np.float32).reshape(nk, br, bc)
        gc = cols // bc
        if nk and lin.max() >= (rows // br) * gc:
            raise ValidationError(f"{d['name']}: block index out of range")
        arrays = (lin // gc, lin % gc, vals)
        for a in arrays:
            a.flags.writeable = writable
        try:
            return BlockSparseMatrix(rows, cols, (br, bc), *arrays)
        except (ValueError, Exception) as e:
            raise ValidationError(f"{d['name']}: {e}") from e
    if d["dtype"] == "i8":
        q = np.frombuffer(raw, dtype=np.int8).reshape(shape).copy()
        q.flags.writeable = writable
        try:
            return QTensorI8(q, float(np.float32(d["scale"])))
        except (TypeError, ValueError) as e:
            raise ValidationError(f"{d['name']}: {e}") from e
    a = np.frombuffer(raw, dtype="<f2" if d["dtype"] == "f16" else "<f4").astype(np.float32).reshape(shape)
    a.flags.writeable = writable
    return a


def from_bytes(data: bytes, writable: bool = False, graphemes: Inventory | None = None,
               phonemes: Inventory | None = None) -> TTSModel:
    c = _parse(data)
    man = c.manifest
    view = memoryview(data)
    physical = {k: {} for k in COMPONENTS}
    slots = {k: {} for k in COMPONENTS}
    offsets = iter(c.blob_offsets)
    for d in man["tensors"]:
        comp = d["component"]
        slots[comp][d["name"]] = d["physical"]
        if "alias_of" not in d:
            physical[comp][d["physical"]] = _decode(d, view[next(offsets):], writable)
    comps = man["components"]
    try:
        fe_cfg = fe.FrontendConfig(**comps["frontend"]["config"])
        plan = fe.SharingPlan(comps["frontend"]["sharing"]["mode"])
        ac_cfg = ac.AcousticConfig(**comps["acoustic"]["config"])
        voc_cfg = voc.VocoderConfig(**comps["vocoder"]["config"])
    except (TypeError, ValueError, KeyError) as e:
        raise ValidationError(f"bad component config: {e}") from e
    regs = {k: ParamRegistry(physical[k], slots[k]) for k in COMPONENTS}
    _check_slots(regs, fe_cfg, plan, ac_cfg, voc_cfg)
    m = TTSModel(
        fe_cfg, plan, regs["frontend"], ac_cfg, regs["acoustic"], voc_cfg, regs["vocoder"],
        graphemes=graphemes or fe.GRAPHEMES, phonemes=phonemes or fe.PHONEMES, meta=man.get("meta", {}),
    )
    try:
        m.validate()
    except ValueError as e:
        raise ValidationError(str(e)) from e
    return m


def _shape(t) -> tuple:
    return tuple(t.shape)


def _check_slots(regs, fe_cfg, plan, ac_cfg, voc_cfg) -> None:
    """Every expected slot present with the expected shape and sharing."""
    expect = {
        "frontend": {n: s for n, s, _, _ in fe.logical_slots(fe_cfg)},
        "acoustic": {n: s for n, s, _, _ in ac.logical_slots(ac_cfg)},
        "vocoder": {n: s for n, (s, _) in voc.dense_shapes(voc_cfg).items()},
    }
    for comp, shapes in expect.items():
        reg = regs[comp]
        if set(reg.slots) != set(shapes):
            missing = sorted(set(shapes) - set(reg.slots))[:3]
            extra = sorted(set(reg.slots) - set(shapes))[:3]
            raise ValidationError(f"{comp}: slot mismatch, missing {missing}, unexpected {extra}")
        for name, shape in shapes.items():
            t = reg[name]
            got = _shape(t)
            if isinstance(t, BlockSparseMatrix):
                got = got[::-1]  # stored [out, in]
            if got != tuple(shape):
                raise ValidationError(f"{comp}.{name}: shape {got}, expected {tuple(shape)}")
    for slot, pid in regs["frontend"].slots.items():
        if plan.physical_id(slot) != pid:
            raise ValidationError(f"frontend.{slot} maps to {pid}, sharing plan says {plan.physical_id(slot)}")


def load(path, writable: bool = False) -> TTSModel:
    """Load a ``.ctts`` file or model directory. Arrays are read-only unless ``writable``."""
    path = Path(path)
    if path.is_dir():
        path = path / MODEL_FILE
    inv = {}
    for key, fname in (("graphemes", GRAPHEME_FILE), ("phonemes", PHONEME_FILE)):
        f = path.parent / fname
        if f.exists():
            inv[key] = Inventory.load(f)
    return from_bytes(path.read_bytes(), writable=writable, **inv)


# -- accounting ------------------------------------------------------------------


def footprint_report(data_or_path) -> dict:
    """Per-component physical bytes; aliases contribute nothing.

    ``aligned`` rows (blobs plus their padding, and the manifest line) add up
    to the file size minus the fixed header. ``raw`` rows count payload only.
    """
    data = data_or_path if isinstance(data_or_path, (bytes, bytearray)) else Path(data_or_path).read_bytes()
    c = _parse(bytes(data))
    aligned = {k: 0 for k in COMPONENTS}
    raw = {k: 0 for k in COMPONENTS}
    logical = {k: 0 for k in COMPONENTS}
    blobs = {k: 0 for k in COMPONENTS}
    by_id = {}
    for d in c.manifest["tensors"]:
        comp = d["component"]
        owner = by_id[d["alias_of"]] if "alias_of" in d else d
        logical[comp] += owner["nbytes"]
        if "alias_of" not in d:
            raw[comp] += d["nbytes"]
            aligned[comp] += _align(d["nbytes"])
            blobs[comp] += 1
        by_id[d["id"]] = d
    return {
        "header": HEADER_BYTES,
        "manifest": c.manifest_bytes,
        "aligned": aligned,
        "raw": raw,
        "logical": logical,
        "blobs": blobs,
        "n_blobs": sum(blobs.values()),
        "file_size": c.file_size,
        "per_voice": aligned["acoustic"] + aligned["vocoder"],
    }
