"""Window geometry: partition/merge, one-direction cyclic shift, overlapped unfold.

All windows are ordered row-major over the (H/win_h, W/win_w) grid.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, pad, reshape, roll, take, transpose


class WindowKind(enum.Enum):
    SQUARED = "squared"
    VERTICAL = "vertical"      # H x ws columns (V-EWin)
    HORIZONTAL = "horizontal"  # ws x W rows (H-EWin)


@dataclass(frozen=True)
class WindowSpec:
    win_h: int
    win_w: int
    shift_dx: int = 0  # <= 0, leftward
    shift_dy: int = 0  # >= 0, downward
    kind: WindowKind = WindowKind.SQUARED

    def __post_init__(self):
        if self.win_h <= 0 or self.win_w <= 0:
            raise ValueError(f"zero-sized window {self.win_h}x{self.win_w}")
        if self.shift_dx > 0 or self.shift_dy < 0:
            raise ValueError("shift_dx must be <= 0 (left) and shift_dy >= 0 (down)")
        if self.kind is WindowKind.VERTICAL and self.shift_dy:
            raise ValueError("vertically enhanced windows shift only horizontally")
        if self.kind is WindowKind.HORIZONTAL and self.shift_dx:
            raise ValueError("horizontally enhanced windows shift only vertically")

    @property
    def shifted(self) -> bool:
        return bool(self.shift_dx or self.shift_dy)

    @classmethod
    def make(cls, kind: WindowKind, ws: int, h: int, w: int, shift: str | None = None) -> "WindowSpec":
        """Geometry of one branch on an ``h`` x ``w`` map.

        ``shift`` is ``"left"``, ``"down"`` or ``None``; the offset is ``ws // 2``.
        Enhanced windows may only shift across their short side.
        """
        half = ws // 2
        dx = -half if shift == "left" else 0
        dy = half if shift == "down" else 0
        if shift not in (None, "left", "down"):
            raise ValueError(f"unknown shift direction {shift!r}")
        if kind is WindowKind.VERTICAL:
            return cls(h, ws, shift_dx=dx, shift_dy=dy, kind=kind)
        if kind is WindowKind.HORIZONTAL:
            return cls(ws, w, shift_dx=dx, shift_dy=dy, kind=kind)
        return cls(ws, ws, shift_dx=dx, shift_dy=dy, kind=kind)

    def num_windows(self, h: int, w: int) -> int:
        return (h // self.win_h) * (w // self.win_w)


@dataclass(frozen=True)
class OverlapSpec:
    M: int
    alpha: float = 0.5

    def __post_init__(self):
        if self.M <= 0:
            raise ValueError("window size M must be positive")
        if self.alpha < 0:
            raise ValueError("overlap ratio must be non-negative")
        if self.alpha > 0 and self.M_o <= self.M:
            raise ValueError(f"overlapped size {self.M_o} must exceed M={self.M} when alpha > 0")

    @property
    def M_o(self) -> int:
        return int(math.floor((1 + self.alpha) * self.M + 1e-9))

    @property
    def halo(self) -> tuple[int, int]:
        extra = self.M_o - self.M
        return extra // 2, extra - extra // 2


def _check_divisible(h: int, w: int, spec: WindowSpec) -> None:
    if h % spec.win_h or w % spec.win_w:
        raise ValueError(f"map {h}x{w} not divisible into {spec.win_h}x{spec.win_w} windows")


def partition(x: Tensor, spec: WindowSpec) -> Tensor:
    """[N,C,H,W] -> [N*nw, C, win_h, win_w]."""
    n, c, h, w = x.shape
    _check_divisible(h, w, spec)
    gh, gw = h // spec.win_h, w // spec.win_w
    y = reshape(x, (n, c, gh, spec.win_h, gw, spec.win_w))
    y = transpose(y, (0, 2, 4, 1, 3, 5))
    return reshape(y, (n * gh * gw, c, spec.win_h, spec.win_w))


def merge(windows: Tensor, spec: WindowSpec, h: int, w: int) -> Tensor:
    """Exact inverse of :func:`partition`."""
    b, c, wh, ww = windows.shape
    _check_divisible(h, w, spec)
    if (wh, ww) != (spec.win_h, spec.win_w):
        raise ValueError(f"window size {wh}x{ww} does not match spec {spec.win_h}x{spec.win_w}")
    gh, gw = h // spec.win_h, w // spec.win_w
    if b % (gh * gw):
        raise ValueError(f"{b} windows inconsistent with a {gh}x{gw} grid")
    n = b // (gh * gw)
    y = reshape(windows, (n, gh, gw, c, wh, ww))
    y = transpose(y, (0, 3, 1, 4, 2, 5))
    return reshape(y, (n, c, h, w))


def shift(x: Tensor, spec: WindowSpec) -> Tensor:
    """Cyclic roll: left by ``-shift_dx`` columns or down by ``shift_dy`` rows."""
    if spec.shift_dx:
        x = roll(x, spec.shift_dx, axis=-1)
    if spec.shift_dy:
        x = roll(x, spec.shift_dy, axis=-2)
    return x


def unshift(x: Tensor, spec: WindowSpec) -> Tensor:
    if spec.shift_dy:
        x = roll(x, -spec.shift_dy, axis=-2)
    if spec.shift_dx:
        x = roll(x, -spec.shift_dx, axis=-1)
    return x


def unfold_overlapping(x: Tensor, os: OverlapSpec) -> Tensor:
    """[N,C,H,W] -> [N*(HW/M^2), C, M_o, M_o], zero padding outside the map."""
    n, c, h, w = x.shape
    m, mo = os.M, os.M_o
    if h % m or w % m:
        raise ValueError(f"map {h}x{w} not divisible by M={m}")
    lo, hi = os.halo
    xp = pad(x, ((0, 0), (0, 0), (lo, hi), (lo, hi))) if (lo or hi) else x
    gh, gw = h // m, w // m
    # gather rows then columns so each window is one contiguous block
    rows = (np.arange(gh)[:, None] * m + np.arange(mo)[None, :]).reshape(-1)
    cols = (np.arange(gw)[:, None] * m + np.arange(mo)[None, :]).reshape(-1)
    y = take(take(xp, rows, axis=2), cols, axis=3)  # N,C,gh*mo,gw*mo
    y = reshape(y, (n, c, gh, mo, gw, mo))
    y = transpose(y, (0, 2, 4, 1, 3, 5))
    return reshape(y, (n * gh * gw, c, mo, mo))


def reflect_pad_to_multiple(x: Tensor, mult: int) -> tuple[Tensor, int, int]:
    """Reflect-pad bottom/right so H and W are multiples of ``mult``.

    Returns the padded tensor and the original (H, W) for cropping.
    """
    h, w = x.shape[-2:]
    ph, pw = (-h) % mult, (-w) % mult
    if ph:
        x = take(x, np.pad(np.arange(h), (0, ph), mode="reflect") if h > 1 else np.zeros(h + ph, int), axis=2)
    if pw:
        x = take(x, np.pad(np.arange(w), (0, pw), mode="reflect") if w > 1 else np.zeros(w + pw, int), axis=3)
    return x, h, w
