"""Logical weight slots mapped onto (possibly shared) physical tensors."""

from __future__ import annotations

import zlib

import numpy as np

from .quant import QTensorI8
from .sparse import BlockSparseMatrix

F32 = np.float32


def round_to_f16(x: np.ndarray) -> np.ndarray:
    """Snap FP32 values onto the FP16 grid so FP16 storage is lossless."""
    return np.asarray(x, dtype=F32).astype(np.float16).astype(F32)


def seeded_rng(seed: int, name: str) -> np.random.Generator:
    # Per-tensor streams: a tensor's init never depends on which others exist.
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def uniform_init(seed: int, name: str, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return seeded_rng(seed, name).uniform(-bound, bound, size=shape).astype(F32)


def param_count(t) -> int:
    if isinstance(t, BlockSparseMatrix):
        return t.nnz
    if isinstance(t, QTensorI8):
        return int(t.data.size)
    return int(np.asarray(t).size)


class ParamRegistry:
    """Physical tensors by id plus a logical-slot -> physical-id map.

    Aliased slots return the very same object, so a write through one slot
    is visible through every slot sharing that tensor.
    """

    def __init__(self, physical: dict, slots: dict[str, str]):
        missing = {p for p in slots.values() if p not in physical}
        if missing:
            raise KeyError(f"slots reference unknown physical ids: {sorted(missing)[:5]}")
        self.physical = dict(physical)
        self.slots = dict(slots)

    @classmethod
    def identity(cls, tensors: dict) -> "ParamRegistry":
        return cls(tensors, {name: name for name in tensors})

    def __getitem__(self, slot: str):
        return self.physical[self.slots[slot]]

    def __contains__(self, slot: str) -> bool:
        return slot in self.slots

    def referenced_ids(self) -> list[str]:
        seen = dict.fromkeys(self.slots.values())
        return list(seen)

    def unique_param_count(self) -> int:
        return sum(param_count(self.physical[p]) for p in self.referenced_ids())

    def logical_param_count(self) -> int:
        return sum(param_count(self.physical[p]) for p in self.slots.values())

    def aliased_slots(self) -> dict[str, str]:
        return {s: p for s, p in self.slots.items() if s != p}

    def replace(self, physical_id: str, tensor) -> None:
        self.physical[physical_id] = tensor

    def expanded(self) -> "ParamRegistry":
        """Give every slot a private copy; same function, no sharing."""
        out = {}
        for slot, pid in self.slots.items():
            t = self.physical[pid]
            out[slot] = t.copy() if isinstance(t, np.ndarray) else t
        return ParamRegistry.identity(out)
