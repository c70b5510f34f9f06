"""8-bit PNG reading and writing (zlib + struct, no external codec).

Reads colour types 0 (grey), 2 (RGB), 4 (grey+alpha) and 6 (RGBA) at bit
depth 8, non-interlaced; alpha is dropped and grey is expanded to RGB.
Writes RGB, filter type 0.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SIGNATURE = b"\x89PNG\r\n\x1a\n"
CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


class PNGError(ValueError):
    def __init__(self, msg: str, offset: int | None = None):
        self.offset = offset
        super().__init__(f"{msg} (at byte {offset})" if offset is not None else msg)


class UnsupportedPNG(PNGError):
    pass


@dataclass(frozen=True)
class ImageRGB:
    width: int
    height: int
    pixels: bytes  # row-major RGB triplets

    def __post_init__(self):
        if self.width * self.height * 3 != len(self.pixels):
            raise ValueError(f"{self.width}x{self.height} RGB needs {self.width * self.height * 3} bytes, "
                             f"got {len(self.pixels)}")

    def to_array(self) -> np.ndarray:
        """[H, W, 3] uint8."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)

    def to_chw(self) -> np.ndarray:
        """[3, H, W] float64 in [0, 1]."""
        return self.to_array().transpose(2, 0, 1) / 255.0

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageRGB":
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ValueError(f"expected [H,W,3] uint8, got {arr.shape} {arr.dtype}")
        return cls(arr.shape[1], arr.shape[0], np.ascontiguousarray(arr).tobytes())

    @classmethod
    def from_chw(cls, x: np.ndarray) -> "ImageRGB":
        """Quantise a [3,H,W] float image in [0,1] (clipped, rounded)."""
        q = np.clip(np.round(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
        return cls.from_array(q.transpose(1, 2, 0))


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, width: int, height: int, bpp: int, offset: int) -> np.ndarray:
    stride = width * bpp
    if len(raw) != height * (stride + 1):
        raise PNGError(f"decompressed image data is {len(raw)} bytes, expected {height * (stride + 1)}", offset)
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(height, stride + 1)
    for y in range(height):
        ftype = int(buf[y, 0])
        line = buf[y, 1:].astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype == 1:
            cur = line.copy()
            for i in range(bpp, stride):
                cur[i] = (cur[i] + cur[i - bpp]) & 0xFF
        elif ftype == 3:
            cur = line.copy()
            for i in range(stride):
                left = cur[i - bpp] if i >= bpp else 0
                cur[i] = (cur[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:
            cur = line.copy()
            for i in range(stride):
                left = int(cur[i - bpp]) if i >= bpp else 0
                upleft = int(prev[i - bpp]) if i >= bpp else 0
                cur[i] = (cur[i] + _paeth(left, int(prev[i]), upleft)) & 0xFF
        else:
            raise PNGError(f"unknown filter type {ftype} on row {y}", offset)
        out[y] = cur
        prev = cur
    return out


def decode_png(data: bytes) -> ImageRGB:
    if data[:8] != SIGNATURE:
        raise PNGError("not a PNG file (bad signature)", 0)
    pos = 8
    header = None
    idat = []
    idat_offset = None
    while True:
        if pos + 8 > len(data):
            raise PNGError("truncated chunk header", pos)
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        body_start = pos + 8
        if body_start + length + 4 > len(data):
            raise PNGError(f"truncated {ctype.decode('latin-1')} chunk", pos)
        body = data[body_start:body_start + length]
        (crc,) = struct.unpack(">I", data[body_start + length:body_start + length + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise PNGError(f"CRC mismatch in {ctype.decode('latin-1')} chunk", pos)
        if ctype == b"IHDR":
            if length != 13:
                raise PNGError("IHDR must be 13 bytes", pos)
            header = struct.unpack(">IIBBBBB", body)
            width, height, depth, color, comp, filt, interlace = header
            if depth != 8:
                raise UnsupportedPNG(f"unsupported bit depth {depth} (only 8-bit)", pos)
            if color not in CHANNELS:
                raise UnsupportedPNG(f"unsupported colour type {color}", pos)
            if interlace:
                raise UnsupportedPNG("interlaced PNGs are not supported", pos)
            if comp or filt:
                raise PNGError("unknown compression or filter method", pos)
        elif ctype == b"IDAT":
            if idat_offset is None:
                idat_offset = pos
            idat.append(body)
        elif ctype == b"IEND":
            break
        pos = body_start + length + 4
    if header is None:
        raise PNGError("missing IHDR chunk", 8)
    if not idat:
        raise PNGError("missing IDAT chunk", pos)
    width, height, _, color, *_ = header
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise PNGError(f"corrupt image data: {exc}", idat_offset) from None
    nch = CHANNELS[color]
    px = _unfilter(raw, width, height, nch, idat_offset).reshape(height, width, nch)
    if nch in (1, 2):
        px = np.repeat(px[:, :, :1], 3, axis=2)
    else:
        px = px[:, :, :3]
    return ImageRGB.from_array(np.ascontiguousarray(px))


def encode_png(img: ImageRGB) -> bytes:
    def chunk(ctype: bytes, body: bytes) -> bytes:
        return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)

    rows = img.to_array().reshape(img.height, img.width * 3)
    raw = np.concatenate([np.zeros((img.height, 1), np.uint8), rows], axis=1).tobytes()
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, 2, 0, 0, 0)
    return SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 6)) + chunk(b"IEND", b"")


def load_png(path) -> ImageRGB:
    return decode_png(Path(path).read_bytes())


def save_png(img: ImageRGB, path) -> None:
    Path(path).write_bytes(encode_png(img))
