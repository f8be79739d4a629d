"""File formats: the STF1 tensor container, model checkpoints, binary PGM/PPM.

STF1 layout::

    bytes 0-3   magic b"STF1"
    byte  4     dtype code (0=f32, 1=f64, 2=u8)
    byte  5     ndim
    then        ndim little-endian u32 extents
    then        row-major little-endian payload

Checkpoint layout::

    bytes 0-3   magic b"STFC"
    bytes 4-7   u32 format version
    bytes 8-11  u32 manifest length M
    M bytes     UTF-8 JSON manifest {"version", "config", "params": [...]}
    then        concatenated STF1 records, one per parameter; each manifest
                entry gives name, dims, dtype and byte offset/length relative
                to the start of this payload section
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"STF1"
CKPT_MAGIC = b"STFC"
CKPT_VERSION = 1

_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_NAMES = {0: "f32", 1: "f64", 2: "u8"}


class FormatError(ValueError):
    pass


def _dtype_code(dtype) -> int:
    dtype = np.dtype(dtype)
    for code, dt in _CODES.items():
        if dtype.kind == dt.kind and dtype.itemsize == dt.itemsize:
            return code
    raise FormatError(f"dtype {dtype} not representable in STF1")


def encode_stf1(array) -> bytes:
    arr = np.asarray(array)
    code = _dtype_code(arr.dtype)
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    header = MAGIC + bytes([code, arr.ndim]) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode_stf1(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record starting at ``offset``; returns (array, end offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError("bad STF1 magic")
    code, ndim = buf[offset + 4], buf[offset + 5]
    if code not in _CODES:
        raise FormatError(f"unknown dtype code {code}")
    pos = offset + 6
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dt = _CODES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) < pos + nbytes:
        raise FormatError("truncated STF1 payload")
    arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims)
    return arr.astype(dt.newbyteorder("="), copy=True), pos + nbytes


def write_stf1(path, array):
    Path(path).write_bytes(encode_stf1(array))


def read_stf1(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_stf1(buf)
    if end != len(buf):
        raise FormatError(f"{path}: trailing bytes after STF1 record")
    return arr


def write_checkpoint(path, named_arrays: dict, config: dict):
    entries, blobs, offset = [], [], 0
    for name, arr in named_arrays.items():
        arr = np.asarray(arr)
        blob = encode_stf1(arr)
        entries.append({"name": name, "dims": list(arr.shape),
                        "dtype": _NAMES[_dtype_code(arr.dtype)],
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"version": CKPT_VERSION, "config": config, "params": entries},
                          sort_keys=True).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(config, {name: array})``."""
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version, mlen = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    manifest = json.loads(buf[12:12 + mlen].decode())
    base = 12 + mlen
    arrays = {}
    for entry in manifest["params"]:
        arr, end = decode_stf1(buf, base + entry["offset"])
        if end - base - entry["offset"] != entry["nbytes"] or list(arr.shape) != entry["dims"]:
            raise FormatError(f"manifest mismatch for {entry['name']}")
        arrays[entry["name"]] = arr
    return manifest["config"], arrays


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) image, 8-bit only.

    Returns uint8 ``(rows, cols)`` for PGM and ``(rows, cols, 3)`` for PPM.
    """
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval > 255:
        raise FormatError(f"{path}: only 8-bit binary P5/P6 supported")
    channels = 3 if magic == b"P6" else 1
    arr = np.frombuffer(data, dtype=np.uint8, count=width * height * channels, offset=pos)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape).copy()


def write_pnm(path, image):
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if img.ndim == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, img.shape[1], img.shape[0])
    Path(path).write_bytes(header + img.tobytes())
