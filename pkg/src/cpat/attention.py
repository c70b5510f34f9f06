"""Channel-partitioned windowed self-attention, CPE and overlapping cross-attention."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from . import instrument
from .functional import depthwise_conv2d, gelu, layer_norm, linear, matmul, softmax
from .tensor import Tensor, concat, reshape, split, transpose
from .windowing import (
    OverlapSpec,
    WindowKind,
    WindowSpec,
    merge,
    partition,
    reflect_pad_to_multiple,
    shift,
    unfold_overlapping,
    unshift,
)

BRANCHES = ("vewin", "hewin", "wmsa")
# channel third -> (window kind when enhanced, shift direction when shifted)
BRANCH_LAYOUT = {
    "vewin": (WindowKind.VERTICAL, "left"),
    "hewin": (WindowKind.HORIZONTAL, "down"),
    "wmsa": (WindowKind.SQUARED, None),
}


@dataclass
class AttentionWeights:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wp: Tensor
    bp: Tensor
    heads: int

    def __post_init__(self):
        c = self.wq.shape[0]
        if c % self.heads:
            raise ValueError(f"{c} channels not divisible by {self.heads} heads")

    @property
    def head_dim(self) -> int:
        return self.wq.shape[1] // self.heads

    @classmethod
    def from_params(cls, p: Mapping[str, Tensor], prefix: str, heads: int) -> "AttentionWeights":
        return cls(p[prefix + "q.weight"], p[prefix + "q.bias"],
                   p[prefix + "k.weight"], p[prefix + "k.bias"],
                   p[prefix + "v.weight"], p[prefix + "v.bias"],
                   p[prefix + "proj.weight"], p[prefix + "proj.bias"], heads)


@dataclass
class BlockWeights:
    branches: dict[str, AttentionWeights]
    cpe: dict[str, tuple[Tensor, Tensor]]
    dw_k: Tensor
    dw_b: Tensor
    norm1: tuple[Tensor, Tensor]
    norm2: tuple[Tensor, Tensor]
    fc1: tuple[Tensor, Tensor]
    fc2: tuple[Tensor, Tensor]

    @classmethod
    def from_params(cls, p: Mapping[str, Tensor], prefix: str, heads: int) -> "BlockWeights":
        return cls(
            branches={b: AttentionWeights.from_params(p, f"{prefix}{b}.", heads) for b in BRANCHES},
            cpe={b: (p[f"{prefix}{b}.cpe.weight"], p[f"{prefix}{b}.cpe.bias"]) for b in BRANCHES},
            dw_k=p[prefix + "dwconv.weight"],
            dw_b=p[prefix + "dwconv.bias"],
            norm1=(p[prefix + "norm1.gamma"], p[prefix + "norm1.beta"]),
            norm2=(p[prefix + "norm2.gamma"], p[prefix + "norm2.beta"]),
            fc1=(p[prefix + "mlp.fc1.weight"], p[prefix + "mlp.fc1.bias"]),
            fc2=(p[prefix + "mlp.fc2.weight"], p[prefix + "mlp.fc2.bias"]),
        )


def to_tokens(x: Tensor) -> Tensor:
    return transpose(x, (0, 2, 3, 1))


def to_map(t: Tensor) -> Tensor:
    return transpose(t, (0, 3, 1, 2))


def channel_norm(x: Tensor, norm: tuple[Tensor, Tensor]) -> Tensor:
    """LayerNorm over channels of an NCHW map."""
    return to_map(layer_norm(to_tokens(x), *norm))


# ----------------------------------------------------------------- kernels
def attention_core(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """softmax(QK^T / sqrt(D)) V per head; q [B,Tq,c], k/v [B,Tk,c] -> [B,Tq,c]."""
    b, tq, c = q.shape
    tk = k.shape[1]
    d = c // heads
    qh = transpose(reshape(q, (b, tq, heads, d)), (0, 2, 1, 3))
    kt = transpose(reshape(k, (b, tk, heads, d)), (0, 2, 3, 1))
    vh = transpose(reshape(v, (b, tk, heads, d)), (0, 2, 1, 3))
    with instrument.component("qk"):
        logits = matmul(qh, kt)
    attn = softmax(logits * (1.0 / math.sqrt(d)), axis=-1)
    with instrument.component("av"):
        out = matmul(attn, vh)
    return reshape(transpose(out, (0, 2, 1, 3)), (b, tq, c))


def window_mhsa(windows: Tensor, w: AttentionWeights) -> Tensor:
    """Multi-head self-attention inside each window; [B, T, c] -> [B, T, c]."""
    if windows.ndim != 3 or windows.shape[-1] != w.wq.shape[0]:
        raise ValueError(f"window tokens {windows.shape} do not match {w.wq.shape[0]} channels")
    q = linear(windows, w.wq, w.bq)
    k = linear(windows, w.wk, w.bk)
    v = linear(windows, w.wv, w.bv)
    return linear(attention_core(q, k, v, w.heads), w.wp, w.bp)


def cpe(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Conditional position embedding: ``x + depthwise_conv(x)``."""
    return x + depthwise_conv2d(x, kernel, bias)


def _windows_to_tokens(x: Tensor, spec: WindowSpec) -> Tensor:
    win = partition(shift(x, spec), spec)
    b, c, wh, ww = win.shape
    return transpose(reshape(win, (b, c, wh * ww)), (0, 2, 1))


def _tokens_to_map(t: Tensor, spec: WindowSpec, h: int, w: int) -> Tensor:
    b, _, c = t.shape
    win = reshape(transpose(t, (0, 2, 1)), (b, c, spec.win_h, spec.win_w))
    return unshift(merge(win, spec, h, w), spec)


def branch_forward(x_part: Tensor, spec: WindowSpec, w: AttentionWeights,
                   cpe_weights: tuple[Tensor, Tensor] | None = None) -> tuple[Tensor, Tensor]:
    """One CPWin-SA branch on a channel third.

    cpe -> shift -> partition -> attention -> merge -> unshift -> projection.
    Projections are token-wise, so they run on the whole map.  Returns the
    branch output and its value projection (both NCHW, unshifted).
    """
    _, _, h, wd = x_part.shape
    y = cpe(x_part, *cpe_weights) if cpe_weights is not None else x_part
    t = to_tokens(y)
    q = to_map(linear(t, w.wq, w.bq))
    k = to_map(linear(t, w.wk, w.bk))
    v = to_map(linear(t, w.wv, w.bv))
    att = attention_core(_windows_to_tokens(q, spec), _windows_to_tokens(k, spec),
                         _windows_to_tokens(v, spec), w.heads)
    merged = _tokens_to_map(att, spec, h, wd)
    return to_map(linear(to_tokens(merged), w.wp, w.bp)), v


def branch_specs(ws: int, h: int, w: int, shifted: bool, enhanced: bool) -> dict[str, WindowSpec]:
    specs = {}
    for name in BRANCHES:
        kind, direction = BRANCH_LAYOUT[name]
        if not enhanced:
            kind = WindowKind.SQUARED
        specs[name] = WindowSpec.make(kind, ws, h, w, direction if shifted else None)
    return specs


def cpwin_block(x: Tensor, w: BlockWeights, ws: int, shifted: bool = False,
                enhanced: bool = True) -> Tensor:
    """LN -> three attention branches on channel thirds -> + x + DWConv(V) -> LN -> MLP -> +."""
    c = x.shape[1]
    if c % 3:
        raise ValueError(f"channel count {c} must be divisible by 3")
    xin, h0, w0 = reflect_pad_to_multiple(x, ws)
    _, _, h, wd = xin.shape
    parts = split(channel_norm(xin, w.norm1), 3, axis=1)
    specs = branch_specs(ws, h, wd, shifted, enhanced)
    outs, values = [], []
    for name, part in zip(BRANCHES, parts):
        with instrument.component(name):
            o, v = branch_forward(part, specs[name], w.branches[name], w.cpe[name])
        outs.append(o)
        values.append(v)
    xhat = concat(outs, axis=1) + xin + depthwise_conv2d(concat(values, axis=1), w.dw_k, w.dw_b)
    with instrument.component("mlp"):
        t = layer_norm(to_tokens(xhat), *w.norm2)
        t = linear(gelu(linear(t, *w.fc1)), *w.fc2)
    out = xhat + to_map(t)
    if (h, wd) != (h0, w0):
        out = out[:, :, :h0, :w0]
    return out


# -------------------------------------------------------------------- OCAM
@dataclass
class OcamWeights:
    norm: tuple[Tensor, Tensor]
    attn: AttentionWeights

    @classmethod
    def from_params(cls, p: Mapping[str, Tensor], prefix: str, heads: int) -> "OcamWeights":
        return cls((p[prefix + "norm.gamma"], p[prefix + "norm.beta"]),
                   AttentionWeights.from_params(p, prefix, heads))


def ocam(x: Tensor, os: OverlapSpec, w: OcamWeights) -> Tensor:
    """Queries from M x M windows, keys/values from the M_o x M_o halo around them."""
    xin, h0, w0 = reflect_pad_to_multiple(x, os.M)
    _, c, h, wd = xin.shape
    a = w.attn
    t = layer_norm(to_tokens(xin), *w.norm)
    q = to_map(linear(t, a.wq, a.bq))
    k = to_map(linear(t, a.wk, a.bk))
    v = to_map(linear(t, a.wv, a.bv))
    spec = WindowSpec(os.M, os.M)
    qt = _windows_to_tokens(q, spec)

    def halo_tokens(m: Tensor) -> Tensor:
        win = unfold_overlapping(m, os)
        b = win.shape[0]
        return transpose(reshape(win, (b, c, os.M_o * os.M_o)), (0, 2, 1))

    att = attention_core(qt, halo_tokens(k), halo_tokens(v), a.heads)
    merged = _tokens_to_map(att, spec, h, wd)
    out = xin + to_map(linear(to_tokens(merged), a.wp, a.bp))
    if (h, wd) != (h0, w0):
        out = out[:, :, :h0, :w0]
    return out
