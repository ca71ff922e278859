"""PFM (portable float map) image IO, plus a minimal PNG writer for LDR
previews.

PFM: little-endian float32, scanlines stored bottom-up. Color maps use the
``PF`` header, single-channel maps ``Pf``. Arrays are exchanged as (H, W, 3)
or (H, W) with row 0 at the top.
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np


def write_pfm(path: str | os.PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim == 2:
        header = b"Pf"
        data = image[::-1].astype("<f4")
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF"
        data = image[::-1].astype("<f4")
    else:
        raise ValueError(f"expected (H,W) or (H,W,3) image, got shape {image.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("refusing to write non-finite pixel values")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data).tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimensions")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h * channels
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"{path}: truncated PFM payload")
        data = np.frombuffer(raw, dtype=dtype).astype(np.float64)
        if scale not in (-1.0, 1.0) and scale != 0.0:
            data = data * abs(scale)
    if channels == 3:
        return data.reshape(h, w, 3)[::-1].copy()
    return data.reshape(h, w)[::-1].copy()


def write_png(path: str | os.PathLike, rgb8: np.ndarray) -> None:
    """Write an 8-bit RGB PNG (LDR previews only; no dependencies)."""
    img = np.asarray(rgb8)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("expected (H,W,3) uint8 image")
    h, w = img.shape[:2]
    raw = b"".join(b"\x00" + img[y].tobytes() for y in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        out = struct.pack(">I", len(payload)) + tag + payload
        return out + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", header))
        f.write(chunk(b"IDAT", zlib.compress(raw, 6)))
        f.write(chunk(b"IEND", b""))


def tonemap_to_png(path, hdr_image: np.ndarray, exposure: float = 1.0, gamma: float = 2.2) -> None:
    x = np.clip(np.asarray(hdr_image, dtype=np.float64) * exposure, 0.0, 1.0)
    write_png(path, (x ** (1.0 / gamma) * 255.0 + 0.5).astype(np.uint8))
