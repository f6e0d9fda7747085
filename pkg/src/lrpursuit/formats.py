"""Frame, mask and factor file formats.

Frames are binary PGM (P5, one entry per sensor) or PPM (P6, three), or a
CSV matrix with one flattened frame per row.  Masks are P5 images with 0 for
background and 255 for events.  Factor dumps are a header line
``LRP1 T r nN`` followed by little-endian float64 ``L`` then ``R``, both
row-major.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .model import ContractError, EventMask, FactorPair

FACTOR_MAGIC = "LRP1"
PNM_SUFFIXES = (".pgm", ".ppm", ".pnm")


def _tokens(buf: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ContractError("truncated PNM header")
        out.append(buf[start:pos])
    return out, pos + 1


def read_pnm(path) -> tuple[np.ndarray, int]:
    """Return ``(pixels, maxval)``; pixels are ``(H, W)`` for P5 and ``(H, W, 3)`` for P6."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ContractError(f"{path}: not a binary PGM/PPM file")
    (w, h, maxval), pos = _tokens(buf, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ContractError(f"{path}: bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = w * h * channels
    if len(buf) - pos < count * dtype.itemsize:
        raise ContractError(f"{path}: truncated pixel data")
    raw = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return raw.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pnm(path, pixels) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ContractError("pixels must be (H, W) or (H, W, 3)")
    if pixels.size and (pixels.min() < 0 or pixels.max() > 65535):
        raise ContractError("pixel values out of range")
    h, w = pixels.shape[:2]
    maxval = 255 if pixels.size == 0 or pixels.max() <= 255 else 65535
    data = pixels.astype(np.uint8 if maxval == 255 else ">u2").tobytes()
    Path(path).write_bytes(magic + f"\n{w} {h}\n{maxval}\n".encode() + data)


def to_pixels(x, frame_shape, sensor_size: int = 1, maxval: int = 255) -> np.ndarray:
    """Round and clip a flattened frame to integer pixels."""
    shape = tuple(frame_shape) + ((3,) if sensor_size == 3 else ())
    if sensor_size not in (1, 3):
        raise ContractError("only 1 or 3 entries per sensor map to PGM/PPM")
    return np.clip(np.rint(np.asarray(x)), 0, maxval).astype(np.uint16).reshape(shape)


def write_mask(path, mask: EventMask, frame_shape) -> None:
    events = mask.events.reshape(frame_shape)
    write_pnm(path, np.where(events, 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    """Event map (True = event) from a mask image: values >= 128 are events."""
    pixels, _ = read_pnm(path)
    if pixels.ndim == 3:
        pixels = pixels[..., 0]
    return pixels >= 128


def list_pnm(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise ContractError(f"{directory}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in PNM_SUFFIXES)


def read_csv_matrix(path) -> np.ndarray:
    """Rows of a numeric CSV file; every row must have the same width."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise ContractError(f"{path}:{lineno}: non-numeric entry") from None
            if rows and len(values) != len(rows[0]):
                raise ContractError(f"{path}:{lineno}: row has {len(values)} entries, "
                                    f"expected {len(rows[0])}")
            rows.append(values)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows)


def write_csv_matrix(path, M) -> None:
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")


def write_factors(path, f: FactorPair) -> None:
    T, r = f.L.shape
    header = f"{FACTOR_MAGIC} {T} {r} {f.R.shape[1]}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f.L.astype("<f8").tobytes())
        fh.write(f.R.astype("<f8").tobytes())


def read_factors(path) -> FactorPair:
    buf = Path(path).read_bytes()
    end = buf.find(b"\n")
    parts = buf[:end].decode(errors="replace").split() if end >= 0 else []
    if len(parts) != 4 or parts[0] != FACTOR_MAGIC:
        raise ContractError(f"{path}: not a factor dump")
    T, r, cols = (int(p) for p in parts[1:])
    body = np.frombuffer(buf, dtype="<f8", offset=end + 1)
    if body.size != T * r + r * cols:
        raise ContractError(f"{path}: expected {T * r + r * cols} values, found {body.size}")
    return FactorPair(body[:T * r].reshape(T, r).astype(float), body[T * r:].reshape(r, cols).astype(float))

