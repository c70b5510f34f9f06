"""Binary formats.

Tensor dump ("CPT1"): magic, u8 dtype code (0=f32, 1=f64), u8 rank,
rank x u32 dims, raw scalars; everything little-endian.

Weight file ("CPATW1"): magic, u32 entry count, then per entry
u16 name length, UTF-8 name, u8 dtype code, u8 rank, rank x u32 dims,
u64 byte offset into the data section; the data section is the
concatenation of one CPT1 blob per entry, in manifest order.
"""
from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

TENSOR_MAGIC = b"CPT1"
STORE_MAGIC = b"CPATW1"
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def _dtype_code(arr: np.ndarray) -> int:
    try:
        return DTYPE_CODES[np.dtype(arr.dtype)]
    except KeyError:
        raise FormatError(f"unsupported dtype {arr.dtype}; only float32/float64") from None


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = _dtype_code(arr)
    head = TENSOR_MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=CODE_DTYPES[code]).tobytes()


def _read(buf: io.BufferedIOBase, n: int, what: str) -> bytes:
    pos = buf.tell()
    data = buf.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what} at byte {pos}: wanted {n}, got {len(data)}")
    return data


def read_tensor(buf) -> np.ndarray:
    start = buf.tell()
    if _read(buf, 4, "tensor magic") != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic at byte {start}")
    code, rank = struct.unpack("<BB", _read(buf, 2, "tensor header"))
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code} at byte {start + 4}")
    dims = struct.unpack(f"<{rank}I", _read(buf, 4 * rank, "tensor dims"))
    dt = CODE_DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    raw = _read(buf, count * dt.itemsize, "tensor data")
    return np.frombuffer(raw, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def tensor_from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))


def save_tensor(arr: np.ndarray, path) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def store_to_bytes(params: Mapping[str, np.ndarray]) -> bytes:
    manifest = [STORE_MAGIC, struct.pack("<I", len(params))]
    blobs = []
    offset = 0
    for name, arr in params.items():
        arr = np.asarray(arr)
        raw_name = name.encode("utf-8")
        blob = tensor_to_bytes(arr)
        manifest.append(struct.pack("<H", len(raw_name)) + raw_name)
        manifest.append(struct.pack("<BB", _dtype_code(arr), arr.ndim))
        manifest.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        manifest.append(struct.pack("<Q", offset))
        blobs.append(blob)
        offset += len(blob)
    return b"".join(manifest) + b"".join(blobs)


def store_from_bytes(data: bytes) -> "OrderedDict[str, np.ndarray]":
    buf = io.BytesIO(data)
    if _read(buf, len(STORE_MAGIC), "store magic") != STORE_MAGIC:
        raise FormatError("bad weight-file magic at byte 0 (expected CPATW1)")
    (count,) = struct.unpack("<I", _read(buf, 4, "entry count"))
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read(buf, 2, "name length"))
        name = _read(buf, nlen, "name").decode("utf-8")
        code, rank = struct.unpack("<BB", _read(buf, 2, "entry header"))
        dims = struct.unpack(f"<{rank}I", _read(buf, 4 * rank, "entry dims"))
        (off,) = struct.unpack("<Q", _read(buf, 8, "entry offset"))
        entries.append((name, code, dims, off))
    base = buf.tell()
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, code, dims, off in entries:
        buf.seek(base + off)
        arr = read_tensor(buf)
        if arr.shape != tuple(dims) or CODE_DTYPES.get(code) != arr.dtype.newbyteorder("<"):
            raise FormatError(f"tensor {name!r} at byte {base + off} disagrees with its manifest entry")
        if name in out:
            raise FormatError(f"duplicate parameter name {name!r}")
        out[name] = arr
    return out
