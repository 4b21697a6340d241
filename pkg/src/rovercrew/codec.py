"""Palettised segmentation-mask codec for constrained links.

Wire format, little-endian:
    8-byte header: magic b"PMSK", u16 width, u16 height
    payload: row-major RLE runs of (class_index: u8, run_length: u16)

Runs never exceed 65535 pixels and may span row boundaries; a uniform
w*h image therefore encodes to ceil(w*h / 65535) runs of 3 bytes each.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptPayload

MAGIC = b"PMSK"
MAX_RUN = 0xFFFF
NUM_CLASSES = 5
HEADER = struct.Struct("<4sHH")
RUN = struct.Struct("<BH")


@dataclass
class PalettisedMask:
    width: int
    height: int
    payload: bytes

    def to_bytes(self) -> bytes:
        return HEADER.pack(MAGIC, self.width, self.height) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "PalettisedMask":
        if len(data) < HEADER.size:
            raise CorruptPayload("mask blob shorter than header")
        magic, w, h = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptPayload(f"bad magic {magic!r}")
        return cls(w, h, data[HEADER.size:])


def encode_mask(seg_mask: np.ndarray) -> PalettisedMask:
    """Run-length encode a (H, W) array of class indices 0..4."""
    seg_mask = np.asarray(seg_mask)
    if seg_mask.ndim != 2:
        raise ValueError("seg_mask must be 2-D")
    if seg_mask.size and (seg_mask.min() < 0 or seg_mask.max() >= NUM_CLASSES):
        raise ValueError("class index out of range")
    flat = seg_mask.reshape(-1).astype(np.uint8)
    parts = []
    if flat.size:
        # boundaries of equal-value runs
        change = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [flat.size]))
        for s, e in zip(starts, ends):
            val = int(flat[s])
            n = int(e - s)
            while n > MAX_RUN:
                parts.append(RUN.pack(val, MAX_RUN))
                n -= MAX_RUN
            parts.append(RUN.pack(val, n))
    h, w = seg_mask.shape
    return PalettisedMask(w, h, b"".join(parts))


def decode_mask(mask: PalettisedMask) -> np.ndarray:
    """Decode back to a (H, W) uint8 array; raises CorruptPayload on mismatch."""
    if len(mask.payload) % RUN.size != 0:
        raise CorruptPayload("payload length not a multiple of run size")
    total = mask.width * mask.height
    out = np.empty(total, dtype=np.uint8)
    pos = 0
    for off in range(0, len(mask.payload), RUN.size):
        val, n = RUN.unpack_from(mask.payload, off)
        if val >= NUM_CLASSES:
            raise CorruptPayload(f"class index {val} out of range")
        if pos + n > total:
            raise CorruptPayload("run sum exceeds image size")
        out[pos:pos + n] = val
        pos += n
    if pos != total:
        raise CorruptPayload(f"run sum {pos} != {total} pixels")
    return out.reshape(mask.height, mask.width)
