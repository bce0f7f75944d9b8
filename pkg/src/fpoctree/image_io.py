"""Image files: 8-bit PNG for viewing, raw float32 dumps for bit-exact checks.

Raw layout: width then height as little-endian uint32, then row-major
float32 RGB.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage


def write_png(path, img: np.ndarray) -> None:
    arr = np.asarray(img)
    if arr.ndim == 2:  # binary/gray masks
        data = (arr.astype(float) * 255.0).round().clip(0, 255).astype(np.uint8)
        PILImage.fromarray(data, mode="L").save(path)
        return
    data = (arr.astype(float) * 255.0).round().clip(0, 255).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.float32) / 255.0
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def write_raw(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("raw dumps take [H, W, 3] images")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<II", w, h))
        f.write(img.astype("<f4").tobytes())


def read_raw(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise ValueError("raw image truncated")
    w, h = struct.unpack("<II", blob[:8])
    expect = 8 + w * h * 3 * 4
    if len(blob) != expect:
        raise ValueError(f"raw image size mismatch: {len(blob)} vs {expect}")
    return np.frombuffer(blob[8:], dtype="<f4").reshape(h, w, 3).copy()
