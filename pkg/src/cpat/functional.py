"""Differentiable kernels used by the network.

Convolutions are cross-correlations with zero padding.  FFT normalisation is
forward-unnormalised, inverse divided by ``H*W``.  MAC counts and FFT calls
are reported to :mod:`cpat.instrument`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import instrument
from .tensor import Tensor, as_tensor, make_node, reshape, transpose

GELU_C = 0.7978845608  # sqrt(2/pi), tanh approximation
GELU_A = 0.044715


# ------------------------------------------------------------------ matmul
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched ``a @ b``; leading dims must match, or ``b`` may be 2-D."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul batch mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd
    instrument.record_macs(out.size * ad.shape[-1])

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return make_node(out, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Token-wise ``x @ w + b`` over the last axis; ``w`` is [in, out]."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight rows {w.shape[0]}")
    xd, wd = x.data, w.data
    flat = xd.reshape(-1, xd.shape[-1])
    out = flat @ wd
    instrument.record_macs(flat.shape[0] * wd.shape[0] * wd.shape[1])
    if b is not None:
        out = out + b.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))

    def bw(g):
        gf = g.reshape(-1, g.shape[-1])
        gx = (gf @ wd.T).reshape(xd.shape)
        gw = flat.T @ gf
        if b is None:
            return gx, gw
        return gx, gw, gf.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, bw, "linear")


# ---------------------------------------------------------- normalisations
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_node(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match C={c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        dxhat = g * gd
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_node(out, (x, gamma, beta), bw, "layer_norm")


# ------------------------------------------------------------- activations
def gelu(x: Tensor) -> Tensor:
    xd = x.data
    t = np.tanh(GELU_C * (xd + GELU_A * xd**3))
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return make_node(out, (x,), bw, "gelu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    scale = np.where(xd >= 0, 1.0, slope).astype(xd.dtype)
    return make_node(xd * scale, (x,), lambda g: (g * scale,), "leaky_relu")


# ------------------------------------------------------------ convolutions
def conv2d(x: Tensor, k: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of NCHW ``x`` with OCkk ``k``, zero padding."""
    n, c, h, w = x.shape
    o, kc, kh, kw = k.shape
    if kc != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {kc}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    kd = k.data
    out = np.tensordot(cols, kd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    instrument.record_macs(n * o * ho * wo * c * kh * kw)

    def bw(g):
        gk = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(g, kd, axes=([1], [0]))  # N,Ho,Wo,C,kh,kw
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if b is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    parents = (x, k) if b is None else (x, k, b)
    return make_node(out, parents, bw, "conv2d")


def depthwise_conv2d(x: Tensor, k: Tensor, b: Tensor | None = None, pad: int | None = None) -> Tensor:
    """Per-channel 2-D cross-correlation; ``k`` is [C, 1, kh, kw]."""
    n, c, h, w = x.shape
    if k.shape[0] != c or k.shape[1] != 1:
        raise ValueError(f"depthwise kernel {k.shape} does not match {c} channels")
    kh, kw = k.shape[2:]
    if pad is None:
        pad = kh // 2
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    kd = k.data
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(xp, kd))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + ho, j:j + wo] * kd[None, :, 0, i, j, None, None]
    if b is not None:
        out += b.data[None, :, None, None]
    instrument.record_macs(n * c * ho * wo * kh * kw)

    def bw(g):
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        gk = np.zeros(kd.shape, dtype=kd.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho, j:j + wo] += g * kd[None, :, 0, i, j, None, None]
                gk[:, 0, i, j] = (g * xp[:, :, i:i + ho, j:j + wo]).sum(axis=(0, 2, 3))
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if b is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    parents = (x, k) if b is None else (x, k, b)
    return make_node(out, parents, bw, "depthwise_conv2d")


# ------------------------------------------------------------ pixel shuffle
def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """[N, C*r*r, H, W] -> [N, C, rH, rW]; out[c, r*h+dy, r*w+dx] = in[c*r*r+dy*r+dx, h, w]."""
    n, cr2, h, w = x.shape
    if cr2 % (r * r):
        raise ValueError(f"pixel_shuffle: {cr2} channels not divisible by r^2={r * r}")
    c = cr2 // (r * r)
    y = reshape(x, (n, c, r, r, h, w))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (n, c, h * r, w * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ValueError(f"pixel_unshuffle: spatial {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    y = reshape(x, (n, c, h, r, w, r))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (n, c * r * r, h, w))


# --------------------------------------------------------------------- FFT
@dataclass(frozen=True)
class ComplexTensor:
    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real/imag shape mismatch: {self.real.shape} vs {self.imag.shape}")

    @property
    def shape(self):
        return self.real.shape

    def to_numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def fft2(x: Tensor) -> ComplexTensor:
    """Unnormalised 2-D DFT over the two trailing axes."""
    instrument.record_call("fft2")
    spec = np.fft.fft2(x.data)
    dt = x.dtype
    real = make_node(spec.real.astype(dt), (x,),
                     lambda g: (np.fft.fft2(g).real.astype(dt),), "fft2_real")
    imag = make_node(spec.imag.astype(dt), (x,),
                     lambda g: (np.fft.fft2(g).imag.astype(dt),), "fft2_imag")
    return ComplexTensor(real, imag)


def ifft2(z: ComplexTensor, return_residue: bool = False):
    """Real part of the inverse 2-D DFT (divided by H*W).

    With ``return_residue`` also returns max |imag| of the full inverse,
    useful for checking Hermitian symmetry of a modified spectrum.
    """
    instrument.record_call("ifft2")
    dt = z.real.dtype
    full = np.fft.ifft2(z.real.data + 1j * z.imag.data)
    out = full.real.astype(dt)

    def bw(g):
        back = np.fft.ifft2(g)
        return back.real.astype(dt), (-back.imag).astype(dt)

    node = make_node(out, (z.real, z.imag), bw, "ifft2")
    if return_residue:
        return node, float(np.abs(full.imag).max()) if full.size else 0.0
    return node


# ------------------------------------------------------------------ losses
def l1_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    s = np.sign(diff)
    n = diff.size

    def bw(g):
        return g * s / n, None

    return make_node(np.asarray(np.abs(diff).mean(), dtype=pred.dtype), (pred, target), bw, "l1_loss")
