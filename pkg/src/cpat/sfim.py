"""Spatial-frequency interaction: a local conv branch and an FFT branch, fused 1x1."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

from .functional import ComplexTensor, conv2d, fft2, ifft2, leaky_relu
from .tensor import Tensor, concat, split

SLOPE = 0.2

Conv = tuple[Tensor, Tensor]  # kernel, bias


@dataclass
class SfimWeights:
    sb_c1: Conv       # 1x1, C -> C
    sb_c3a: Conv      # 3x3 on the first channel half
    sb_c3b: Conv      # 3x3 on the second channel half
    fb_c3_in: Conv    # 3x3, C -> C
    fb_c3_pre: Conv   # 3x3 before the FFT
    fd_c1: Conv       # 1x1 over stacked real/imag, 2C -> 2C
    fb_c1_out: Conv   # 1x1, C -> C
    fuse: Conv        # 1x1, 2C -> C

    NAMES = ("spatial.c1", "spatial.c3a", "spatial.c3b", "freq.c3_in", "freq.c3_pre",
             "freq.fd", "freq.c1_out", "fuse")

    @classmethod
    def from_params(cls, p: Mapping[str, Tensor], prefix: str) -> "SfimWeights":
        return cls(*[(p[f"{prefix}{n}.weight"], p[f"{prefix}{n}.bias"]) for n in cls.NAMES])


def _conv(x: Tensor, c: Conv) -> Tensor:
    k, b = c
    return conv2d(x, k, b, pad=k.shape[-1] // 2)


def spatial_branch(x: Tensor, w: SfimWeights) -> Tensor:
    if x.shape[1] % 2:
        raise ValueError(f"spatial branch needs an even channel count, got {x.shape[1]}")
    sb1 = leaky_relu(_conv(x, w.sb_c1), SLOPE)
    lo, hi = split(sb1, 2, axis=1)
    return concat([_conv(lo, w.sb_c3a), _conv(hi, w.sb_c3b)], axis=1) + sb1


def freq_domain(x: Tensor, w: SfimWeights,
                transform: Callable[[Tensor], Tensor] | None = None,
                return_residue: bool = False):
    """FFT -> stack(real, imag) -> transform -> unstack -> iFFT -> real part.

    The default transform is a shared 1x1 conv followed by LeakyReLU.
    """
    spec = fft2(x)
    stacked = concat([spec.real, spec.imag], axis=1)
    if transform is None:
        out = leaky_relu(_conv(stacked, w.fd_c1), SLOPE)
    else:
        out = transform(stacked)
    re, im = split(out, 2, axis=1)
    return ifft2(ComplexTensor(re, im), return_residue=return_residue)


def freq_branch(x: Tensor, w: SfimWeights, use_freq: bool = True) -> Tensor:
    fb1 = leaky_relu(_conv(x, w.fb_c3_in), SLOPE)
    y = _conv(fb1, w.fb_c3_pre)
    if use_freq:
        y = freq_domain(y, w)
    return _conv(y + fb1, w.fb_c1_out)


def sfim_forward(x: Tensor, w: SfimWeights, use_freq: bool = True) -> Tensor:
    return _conv(concat([spatial_branch(x, w), freq_branch(x, w, use_freq)], axis=1), w.fuse)
