"""Synthetic HR images and LR/HR patch pairs for desk-scale training."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .png import ImageRGB, load_png
from .resize import bicubic_resize

log = logging.getLogger(__name__)

KINDS = ("noise", "grating", "rects")


@dataclass(frozen=True)
class PatchPair:
    lr: np.ndarray  # [3, p, p] in [0, 1]
    hr: np.ndarray  # [3, s*p, s*p] in [0, 1]
    scale: int

    def __post_init__(self):
        p = self.lr.shape[-1]
        if self.hr.shape[-2:] != (self.scale * self.lr.shape[-2], self.scale * p):
            raise ValueError(f"hr {self.hr.shape} is not {self.scale}x lr {self.lr.shape}")


def downscale(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic LR counterpart of a [3,H,W] image in [0,1], clipped to [0,1]."""
    h, w = hr.shape[-2:]
    return np.clip(bicubic_resize(hr, h // scale, w // scale), 0.0, 1.0)


def make_pairs(hr_images: Sequence[ImageRGB], scale: int, patch: int, seed: int,
               count: int | None = None) -> Iterator[PatchPair]:
    """Endless (or ``count``-long) seeded stream of aligned patch pairs."""
    rng = np.random.default_rng(seed)
    hp = scale * patch
    usable = []
    for i, img in enumerate(hr_images):
        if img.height < hp or img.width < hp:
            log.warning("skipping image %d (%dx%d): smaller than %dx%d HR patch", i, img.width, img.height, hp, hp)
            continue
        usable.append(img.to_chw())
    if not usable:
        raise ValueError(f"no image is large enough for a {hp}x{hp} HR patch")
    n = 0
    while count is None or n < count:
        img = usable[int(rng.integers(len(usable)))]
        h, w = img.shape[-2:]
        y = int(rng.integers((h - hp) // scale + 1)) * scale
        x = int(rng.integers((w - hp) // scale + 1)) * scale
        hr = img[:, y:y + hp, x:x + hp]
        yield PatchPair(downscale(hr, scale), hr, scale)
        n += 1


def batches(pairs: Iterator[PatchPair], batch: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Stack consecutive pairs into ([B,3,p,p], [B,3,sp,sp])."""
    while True:
        chunk = [next(pairs) for _ in range(batch)]
        yield np.stack([c.lr for c in chunk]), np.stack([c.hr for c in chunk])


def batch_digest(lr: np.ndarray, hr: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(lr, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(hr, dtype=np.float64).tobytes())
    return h.hexdigest()


# -------------------------------------------------------------- synthetic
def _to_image(x: np.ndarray) -> ImageRGB:
    return ImageRGB.from_array(np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8))


def band_limited_noise(size: int, rng: np.random.Generator) -> np.ndarray:
    cutoff = rng.uniform(0.08, 0.25)
    f = np.fft.fftfreq(size)
    mask = (np.hypot(f[:, None], f[None, :]) <= cutoff).astype(float)
    out = np.empty((size, size, 3))
    for ch in range(3):
        spec = np.fft.fft2(rng.standard_normal((size, size))) * mask
        field = np.fft.ifft2(spec).real
        field = (field - field.mean()) / (field.std() + 1e-12)
        out[:, :, ch] = 0.5 + 0.18 * field
    return np.clip(out, 0.0, 1.0)


def grating(size: int, rng: np.random.Generator) -> np.ndarray:
    """Oriented sinusoid with an integer number of cycles along each axis."""
    top = max(1, size // 8)
    kx, ky = (int(v) for v in rng.integers(0, top + 1, size=2))
    if kx == 0 and ky == 0:
        kx = 1
    phase = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    wave = np.sin(2 * np.pi * (kx * xx + ky * yy) / size + phase)
    amp = rng.uniform(0.2, 0.45, size=3)
    base = rng.uniform(0.45, 0.55, size=3)
    return base + amp * wave[:, :, None]


def rectangles(size: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((size, size, 3))
    out[:] = rng.uniform(0.1, 0.9, size=3)
    for _ in range(int(rng.integers(3, 9))):
        y0, x0 = (int(v) for v in rng.integers(0, size - 2, size=2))
        h, w = (int(v) for v in rng.integers(2, max(3, size // 2), size=2))
        out[y0:y0 + h, x0:x0 + w] = rng.uniform(0.0, 1.0, size=3)
    return out


GENERATORS = {"noise": band_limited_noise, "grating": grating, "rects": rectangles}


def synth_image(kind: str, size: int, rng: np.random.Generator) -> ImageRGB:
    return _to_image(GENERATORS[kind](size, rng))


def synth_dataset(n: int, size: int, seed: int) -> list[ImageRGB]:
    """``n`` images cycling through noise, grating and rectangle content."""
    rng = np.random.default_rng(seed)
    return [synth_image(KINDS[i % len(KINDS)], size, rng) for i in range(n)]


def read_manifest(path) -> list[ImageRGB]:
    """One PNG path per line (UTF-8), relative paths resolved against the manifest."""
    path = Path(path)
    base = path.parent
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            p = Path(line)
            out.append(load_png(p if p.is_absolute() else base / p))
    return out
