"""CPAT assembly: dimensionality expansion, residual groups, reconstruction."""
from __future__ import annotations

import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import instrument
from .attention import BRANCHES, BlockWeights, OcamWeights, branch_specs, cpwin_block, ocam
from .functional import conv2d, leaky_relu, pixel_shuffle
from .serialize import store_from_bytes, store_to_bytes
from .sfim import SfimWeights, sfim_forward
from .tensor import Tensor
from .windowing import OverlapSpec, WindowSpec

SLOPE = 0.2


class ConfigError(ValueError):
    pass


class MissingParameterError(KeyError):
    pass


@dataclass(frozen=True)
class CPATConfig:
    c_in: int = 3
    c_out: int = 3
    channels: int = 180
    groups: int = 6            # residual groups (RWAG count)
    blocks: int = 6            # CPWin-SA blocks per group
    ws: int = 16
    heads: int = 6
    mlp_ratio: float = 2.0
    scale: int = 2
    overlap_alpha: float = 0.5
    enhanced_windows: bool = True
    shift: bool = True
    sfim: bool = True
    freq_domain: bool = True
    group_sfim: bool = True    # SFIM inside every group
    final_sfim: bool = True    # trailing SFIM after the last group
    outer_residual: bool = False  # extra "+ I_DE2" after the trailing SFIM

    def __post_init__(self):
        c = self.channels
        if c <= 0 or c % 3:
            raise ConfigError(f"channels={c} must be a positive multiple of 3")
        if self.heads <= 0 or c % (3 * self.heads):
            raise ConfigError(f"channels={c} must be divisible by 3*heads={3 * self.heads}")
        if c % self.heads:
            raise ConfigError(f"channels={c} must be divisible by heads={self.heads} for OCAM")
        if self.ws <= 0 or self.ws % 2:
            raise ConfigError(f"window size {self.ws} must be positive and even")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale {self.scale} unsupported; use 2, 3 or 4")
        if self.sfim and c % 2:
            raise ConfigError(f"SFIM splits channels in half; channels={c} is odd")
        if self.groups < 1 or self.blocks < 1:
            raise ConfigError("need at least one group and one block")
        if int(c * self.mlp_ratio) < 1:
            raise ConfigError("mlp_ratio too small")
        OverlapSpec(self.ws, self.overlap_alpha)

    @property
    def hidden(self) -> int:
        return int(self.channels * self.mlp_ratio)

    @property
    def upsample_stages(self) -> list[int]:
        return [2, 2] if self.scale == 4 else [self.scale]

    @classmethod
    def toy(cls, **overrides) -> "CPATConfig":
        base = dict(channels=12, groups=1, blocks=2, ws=4, heads=2, scale=2)
        base.update(overrides)
        return cls(**base)

    def with_(self, **overrides) -> "CPATConfig":
        return replace(self, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ------------------------------------------------------------ parameters
def _conv(shapes, name, cin, cout, k):
    shapes[name + ".weight"] = (cout, cin, k, k)
    shapes[name + ".bias"] = (cout,)


def _lin(shapes, name, cin, cout):
    shapes[name + ".weight"] = (cin, cout)
    shapes[name + ".bias"] = (cout,)


def _sfim_shapes(shapes, p, c):
    _conv(shapes, p + "spatial.c1", c, c, 1)
    _conv(shapes, p + "spatial.c3a", c // 2, c // 2, 3)
    _conv(shapes, p + "spatial.c3b", c - c // 2, c - c // 2, 3)
    _conv(shapes, p + "freq.c3_in", c, c, 3)
    _conv(shapes, p + "freq.c3_pre", c, c, 3)
    _conv(shapes, p + "freq.fd", 2 * c, 2 * c, 1)
    _conv(shapes, p + "freq.c1_out", c, c, 1)
    _conv(shapes, p + "fuse", 2 * c, c, 1)


def _mixer_shapes(shapes, p, cfg, c):
    if cfg.sfim:
        _sfim_shapes(shapes, p + "sfim.", c)
    else:
        _conv(shapes, p + "mix3x3", c, c, 3)


def param_shapes(cfg: CPATConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Every parameter name with its shape, in forward order."""
    c, third = cfg.channels, cfg.channels // 3
    s: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    _conv(s, "de.conv1", cfg.c_in, c, 3)
    _conv(s, "de.conv2a", cfg.c_in, c, 3)
    _conv(s, "de.conv2b", c, c, 3)
    for g in range(cfg.groups):
        for b in range(cfg.blocks):
            p = f"rwag{g}.block{b}."
            s[p + "norm1.gamma"] = (c,)
            s[p + "norm1.beta"] = (c,)
            for br in BRANCHES:
                for proj in ("q", "k", "v", "proj"):
                    _lin(s, f"{p}{br}.{proj}", third, third)
                s[f"{p}{br}.cpe.weight"] = (third, 1, 3, 3)
                s[f"{p}{br}.cpe.bias"] = (third,)
            s[p + "dwconv.weight"] = (c, 1, 3, 3)
            s[p + "dwconv.bias"] = (c,)
            s[p + "norm2.gamma"] = (c,)
            s[p + "norm2.beta"] = (c,)
            _lin(s, p + "mlp.fc1", c, cfg.hidden)
            _lin(s, p + "mlp.fc2", cfg.hidden, c)
        p = f"rwag{g}.ocam."
        s[p + "norm.gamma"] = (c,)
        s[p + "norm.beta"] = (c,)
        for proj in ("q", "k", "v", "proj"):
            _lin(s, p + proj, c, c)
        if cfg.group_sfim:
            _mixer_shapes(s, f"rwag{g}.", cfg, c)
        _conv(s, f"rwag{g}.conv", c, c, 3)
    if cfg.final_sfim:
        _mixer_shapes(s, "final.", cfg, c)
    for i, r in enumerate(cfg.upsample_stages):
        _conv(s, f"ir.up{i}", c, c * r * r, 3)
    _conv(s, "ir.last", c, cfg.c_out, 3)
    return s


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def _init_one(name: str, shape: tuple[int, ...], seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith((".beta", ".bias")):
        return np.zeros(shape)
    if len(shape) == 2:
        return _trunc_normal(rng, shape, 0.02)
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class WeightStore:
    """Ordered name -> ndarray mapping of model parameters."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self.params: OrderedDict[str, np.ndarray] = OrderedDict(params or {})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def names(self) -> list[str]:
        return list(self.params)

    @property
    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "WeightStore":
        return WeightStore({k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self.params.items()})

    def as_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    def check(self, cfg: CPATConfig) -> None:
        """Raise naming the first parameter that is missing or mis-shaped."""
        expected = param_shapes(cfg)
        for name, shape in expected.items():
            if name not in self.params:
                raise MissingParameterError(f"missing parameter {name!r} (expected shape {shape})")
            if tuple(self.params[name].shape) != shape:
                raise MissingParameterError(
                    f"parameter {name!r} has shape {tuple(self.params[name].shape)}, config expects {shape}")
        extra = [n for n in self.params if n not in expected]
        if extra:
            raise MissingParameterError(f"unexpected parameter {extra[0]!r} for this config")

    def to_bytes(self) -> bytes:
        return store_to_bytes(self.params)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightStore":
        return cls(store_from_bytes(data))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightStore":
        return cls.from_bytes(Path(path).read_bytes())


def init_weights(cfg: CPATConfig, seed: int = 0, dtype=np.float32) -> WeightStore:
    """Seeded init; each tensor draws from its own stream keyed by its name,
    so configs sharing a parameter name share its initial value."""
    return WeightStore({n: _init_one(n, s, seed).astype(dtype) for n, s in param_shapes(cfg).items()})


# --------------------------------------------------------------- forward
Params = Mapping[str, Tensor]


def _c(x: Tensor, p: Params, name: str) -> Tensor:
    k = p[name + ".weight"]
    return conv2d(x, k, p[name + ".bias"], pad=k.shape[-1] // 2)


def dimensionality_expansion(x: Tensor, p: Params) -> tuple[Tensor, Tensor]:
    de1 = _c(x, p, "de.conv1")
    de2 = _c(leaky_relu(_c(x, p, "de.conv2a"), SLOPE), p, "de.conv2b")
    return de1, de2


def _mixer(x: Tensor, p: Params, prefix: str, cfg: CPATConfig) -> Tensor:
    if cfg.sfim:
        return sfim_forward(x, SfimWeights.from_params(p, prefix + "sfim."), cfg.freq_domain)
    return _c(x, p, prefix + "mix3x3")


def block_shifted(cfg: CPATConfig, b: int) -> bool:
    """Blocks come in unshifted/shifted pairs."""
    return cfg.shift and b % 2 == 1


def rwag_forward(x: Tensor, p: Params, g: int, cfg: CPATConfig) -> Tensor:
    """Blocks -> OCAM -> SFIM -> 3x3 conv -> + group input."""
    y = x
    for b in range(cfg.blocks):
        with instrument.component(f"block{b}"):
            w = BlockWeights.from_params(p, f"rwag{g}.block{b}.", cfg.heads)
            y = cpwin_block(y, w, cfg.ws, block_shifted(cfg, b), cfg.enhanced_windows)
    with instrument.component("ocam"):
        y = ocam(y, OverlapSpec(cfg.ws, cfg.overlap_alpha), OcamWeights.from_params(p, f"rwag{g}.ocam.", cfg.heads))
    if cfg.group_sfim:
        with instrument.component("sfim"):
            y = _mixer(y, p, f"rwag{g}.", cfg)
    with instrument.component("conv"):
        y = _c(y, p, f"rwag{g}.conv")
    return y + x


def cfl_forward(de1: Tensor, de2: Tensor, p: Params, cfg: CPATConfig) -> Tensor:
    """x_0 = I_DE1, x_i = RWAG_i(x_{i-1}) + I_DE2, O_CFL = SFIM(x_L)."""
    x = de1
    for g in range(cfg.groups):
        with instrument.component(f"rwag{g}"):
            x = rwag_forward(x, p, g, cfg) + de2
    if cfg.final_sfim:
        with instrument.component("final_sfim"):
            x = _mixer(x, p, "final.", cfg)
    if cfg.outer_residual:
        x = x + de2
    return x


def reconstruct(o_cfl: Tensor, de1: Tensor, p: Params, cfg: CPATConfig) -> Tensor:
    y = o_cfl + de1
    for i, r in enumerate(cfg.upsample_stages):
        y = pixel_shuffle(_c(y, p, f"ir.up{i}"), r)
    return _c(y, p, "ir.last")


def _as_params(store, requires_grad: bool = False) -> Params:
    if isinstance(store, WeightStore):
        return store.as_tensors(requires_grad)
    return store


def cpat_forward(x, store, cfg: CPATConfig) -> Tensor:
    """LR batch [N, c_in, H, W] -> SR batch [N, c_out, scale*H, scale*W]."""
    if isinstance(store, WeightStore):
        store.check(cfg)
        p = store.as_tensors()
    else:
        missing = [n for n in param_shapes(cfg) if n not in store]
        if missing:
            raise MissingParameterError(f"missing parameter {missing[0]!r}")
        p = store
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=next(iter(p.values())).dtype))
    if x.ndim != 4 or x.shape[1] != cfg.c_in:
        raise ConfigError(f"expected input [N,{cfg.c_in},H,W], got {x.shape}")
    with instrument.component("de"):
        de1, de2 = dimensionality_expansion(x, p)
    o = cfl_forward(de1, de2, p, cfg)
    with instrument.component("ir"):
        return reconstruct(o, de1, p, cfg)


def window_specs(cfg: CPATConfig, h: int, w: int) -> list[tuple[str, WindowSpec]]:
    """Window geometry each attention branch uses on an ``h`` x ``w`` map."""
    ph, pw = h + (-h) % cfg.ws, w + (-w) % cfg.ws
    out = []
    for g in range(cfg.groups):
        for b in range(cfg.blocks):
            specs = branch_specs(cfg.ws, ph, pw, block_shifted(cfg, b), cfg.enhanced_windows)
            out.extend((f"rwag{g}.block{b}.{name}", spec) for name, spec in specs.items())
    return out
