"""Minimal binary PGM/PPM readers and writers.

PGM P5 carries 8-bit grayscale (occupancy renders) or 16-bit (elevation,
depth in millimeters); PPM P6 carries the fixed 5-color segmentation
palette and planner overlays.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

# Palette for the five segmentation classes, index order:
# NotLabelled, Soil, CloseRock, FarRock, LittleRock
SEG_PALETTE = np.array(
    [
        (0, 0, 0),        # not labelled: black
        (170, 120, 70),   # soil: brown
        (220, 40, 40),    # close rock: red
        (240, 160, 40),   # far rock: orange
        (90, 200, 90),    # little rock: green
    ],
    dtype=np.uint8,
)


def _read_token(f) -> bytes:
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise ValueError("unexpected EOF in PNM header")
        if ch in b" \t\r\n":
            if tok:
                return tok
            continue
        if ch == b"#":
            while ch not in b"\r\n":
                ch = f.read(1)
            continue
        tok += ch


def write_pgm(path: str | Path, img: np.ndarray, maxval: int = 255) -> None:
    img = np.asarray(img)
    dtype = np.uint8 if maxval < 256 else ">u2"
    data = img.astype(dtype)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        f.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        if _read_token(f) != b"P5":
            raise ValueError("not a binary PGM")
        w = int(_read_token(f))
        h = int(_read_token(f))
        maxval = int(_read_token(f))
        dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
        data = np.frombuffer(f.read(w * h * dtype.itemsize), dtype=dtype)
    return data.reshape(h, w).astype(np.uint16 if maxval >= 256 else np.uint8)


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected (H, W, 3) array")
    with open(path, "wb") as f:
        f.write(f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode())
        f.write(rgb.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        if _read_token(f) != b"P6":
            raise ValueError("not a binary PPM")
        w = int(_read_token(f))
        h = int(_read_token(f))
        maxval = int(_read_token(f))
        if maxval != 255:
            raise ValueError("only 8-bit PPM supported")
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3)


def seg_to_ppm(path: str | Path, seg_mask: np.ndarray) -> None:
    """Write a class-index mask using the fixed 5-color palette."""
    write_ppm(path, SEG_PALETTE[np.asarray(seg_mask, dtype=np.uint8)])
