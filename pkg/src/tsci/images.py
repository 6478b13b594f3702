"""Uncompressed PGM/PPM image output for masks and saliency overlays.

Binary netpbm formats only (P5 gray, P6 color): everything a hex editor can
audit, nothing that needs a codec. Values in [0,1] quantize as round(255*v).
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError

MONTAGE_GUTTER = 4  # black separator columns after each frame


def _quantize(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: str, img: np.ndarray) -> None:
    """Write a 2-D array of [0,1] values as a binary P5 graymap."""
    if np.asarray(img).ndim != 2:
        raise DimensionError(f"PGM needs a 2-D image, got shape {np.shape(img)}")
    data = _quantize(img)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_ppm(path: str, img: np.ndarray) -> None:
    """Write an (H, W, 3) array of [0,1] values as a binary P6 pixmap."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"PPM needs (H, W, 3), got shape {arr.shape}")
    data = _quantize(arr)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_header(fh, magic: bytes):
    got = fh.readline().strip()
    if got != magic:
        raise DimensionError(f"expected {magic!r} header, got {got!r}")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise DimensionError("truncated netpbm header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(x) for x in text.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise DimensionError(f"only maxval 255 is supported, got {maxval}")
    return w, h


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P5")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w)


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P6")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3)


def overlay_montage(frames: np.ndarray, saliency: np.ndarray) -> np.ndarray:
    """One row of frame columns, oldest to newest left to right: the frame in
    gray with the saliency lifting the red channel. (H, m*(W+gutter), 3)."""
    frames = np.asarray(frames, dtype=np.float64)
    saliency = np.asarray(saliency, dtype=np.float64)
    if frames.shape != saliency.shape or frames.ndim != 3:
        raise DimensionError(
            f"frames {frames.shape} and saliency {saliency.shape} must be equal (m, H, W)")
    m, h, w = frames.shape
    out = np.zeros((h, m * (w + MONTAGE_GUTTER), 3), dtype=np.float64)
    for k in range(m):
        x = k * (w + MONTAGE_GUTTER)
        out[:, x:x + w, 0] = np.maximum(frames[k], saliency[k])
        out[:, x:x + w, 1] = frames[k]
        out[:, x:x + w, 2] = frames[k]
    return out


def render_overlay(frames: np.ndarray, saliency: np.ndarray, out_prefix: str) -> list[str]:
    """Write one PGM per frame's saliency plus the montage PPM; returns paths."""
    if frames.shape != saliency.shape:
        raise DimensionError(
            f"frames {frames.shape} and saliency {saliency.shape} must match")
    paths = []
    for k in range(frames.shape[0]):
        p = f"{out_prefix}-frame{k + 1}.pgm"
        write_pgm(p, saliency[k])
        paths.append(p)
    montage = f"{out_prefix}-montage.ppm"
    write_ppm(montage, overlay_montage(frames, saliency))
    paths.append(montage)
    return paths
