"""Binary file formats: PGM/PPM images, AFLW flow fields, tensor checkpoints, IDX."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

FLOW_MAGIC = b"AFLW"
IDX_TYPES = {0x08: np.uint8}


class FormatError(ValueError):
    pass


# -- PGM / PPM -------------------------------------------------------------------------------
def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated image header")
    return buf[start:pos], pos


def read_pnm_bytes(path: str | os.PathLike) -> np.ndarray:
    """Raw uint8 pixels of a P5 (H, W) or P6 (H, W, 3) file with maxval 255."""
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r}")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    if int(maxval) != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {int(maxval)}")
    pos += 1  # single whitespace before the raster
    channels = 3 if magic == b"P6" else 1
    h, w = int(h), int(w)
    n = h * w * channels
    raster = buf[pos : pos + n]
    if len(raster) != n:
        raise FormatError(f"{path}: expected {n} raster bytes, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape((h, w, 3) if channels == 3 else (h, w))
    return arr.copy()


def write_pnm_bytes(path: str | os.PathLike, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise FormatError(f"raw pixels must be uint8, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot write image of shape {pixels.shape}")
    h, w = pixels.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + pixels.tobytes())


def read_image(path: str | os.PathLike) -> np.ndarray:
    """PGM/PPM as floats in [0, 1]."""
    return read_pnm_bytes(path).astype(np.float64) / 255.0


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write floats in [0, 1] (values are clipped, then rounded to 8 bits)."""
    image = np.asarray(image, dtype=float)
    write_pnm_bytes(path, np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8))


# -- flow fields -------------------------------------------------------------------------------
def write_flow(path: str | os.PathLike, flow: np.ndarray) -> None:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise FormatError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    body = np.ascontiguousarray(flow, dtype="<f4").tobytes()
    Path(path).write_bytes(FLOW_MAGIC + struct.pack("<II", h, w) + body)


def read_flow(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != FLOW_MAGIC:
        raise FormatError(f"{path}: bad flow magic {buf[:4]!r}")
    if len(buf) < 12:
        raise FormatError(f"{path}: truncated flow header")
    h, w = struct.unpack("<II", buf[4:12])
    n = h * w * 2 * 4
    if len(buf) - 12 != n:
        raise FormatError(f"{path}: expected {n} bytes of flow data, found {len(buf) - 12}")
    return np.frombuffer(buf[12:], dtype="<f4").reshape(h, w, 2).astype(np.float64)


# -- checkpoints -----------------------------------------------------------------------------------
def save_checkpoint(path: str | os.PathLike, tensors: dict[str, np.ndarray]) -> None:
    """Concatenated records: u16 name length, name, u8 rank, u32 extents, f32 values (all LE)."""
    parts = []
    for name, value in tensors.items():
        arr = np.asarray(value)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    out: dict[str, np.ndarray] = {}
    pos = 0
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 4 * count > len(buf):
                raise FormatError(f"{path}: truncated values for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 4 * count
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint ({exc})") from None
    return out


# -- IDX (MNIST-style) --------------------------------------------------------------------------------
def load_idx(path: str | os.PathLike, rescale: bool = True) -> np.ndarray:
    """Parse an unsigned-byte IDX file; values are rescaled to [0, 1] unless ``rescale`` is off (labels)."""
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    if buf[0] != 0 or buf[1] != 0:
        raise FormatError(f"{path}: bad IDX magic {buf[:4].hex()}")
    if buf[2] not in IDX_TYPES:
        raise FormatError(f"{path}: unsupported IDX type byte 0x{buf[2]:02x}")
    rank = buf[3]
    header = 4 + 4 * rank
    if len(buf) < header:
        raise FormatError(f"{path}: truncated IDX dimensions")
    shape = struct.unpack(f">{rank}I", buf[4:header])
    count = int(np.prod(shape)) if rank else 1
    if len(buf) - header != count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(buf) - header}")
    data = np.frombuffer(buf, dtype=IDX_TYPES[buf[2]], offset=header).reshape(shape)
    return data.astype(np.float64) / 255.0 if rescale else data.astype(np.int64)
