"""Closed-form attention complexity and instrumented MAC counting."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .. import instrument
from ..attention import AttentionWeights, branch_forward
from ..tensor import Tensor
from ..windowing import WindowKind, WindowSpec


def _exact(v: Fraction):
    return int(v) if v.denominator == 1 else v


def flops_global_msa(h: int, w: int, c: int):
    """4HW(C/3)^2 + 2(HW)^2(C/3): projections plus dense QK^T and AV."""
    if min(h, w, c) <= 0:
        raise ValueError("arguments must be positive")
    c3 = Fraction(c, 3)
    return _exact(4 * h * w * c3**2 + 2 * (h * w) ** 2 * c3)


def flops_vewin(h: int, w: int, c: int, ws: int):
    """4HW(C/3)^2 + 2H^2 W ws (C/3) for H x ws column windows."""
    if min(h, w, c, ws) <= 0:
        raise ValueError("arguments must be positive")
    c3 = Fraction(c, 3)
    return _exact(4 * h * w * c3**2 + 2 * h * h * w * ws * c3)


def empirical_mac_count(fn: Callable, *args, **kwargs) -> tuple[int, instrument.OpCounter]:
    """Run ``fn`` under a fresh counter; returns (total MACs, counter)."""
    with instrument.counting() as counter:
        fn(*args, **kwargs)
    return counter.total_macs, counter


def random_attention_weights(c: int, heads: int, seed: int = 0, dtype=np.float64) -> AttentionWeights:
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(4):
        mats.append(Tensor(rng.normal(0, 0.2, (c, c)).astype(dtype)))
        mats.append(Tensor(np.zeros(c, dtype)))
    return AttentionWeights(*mats, heads=heads)


def vewin_attention_macs(h: int, w: int, c: int, ws: int, heads: int = 1, seed: int = 0) -> instrument.OpCounter:
    """Instrumented run of a bare V-EWin attention (no CPE) on a ``C/3``-channel map."""
    c3 = c // 3
    x = Tensor(np.random.default_rng(seed).standard_normal((1, c3, h, w)))
    spec = WindowSpec.make(WindowKind.VERTICAL, ws, h, w)
    wts = random_attention_weights(c3, heads, seed)

    def run():
        with instrument.component("projections"):
            branch_forward(x, spec, wts)

    _, counter = empirical_mac_count(run)
    return counter


@dataclass
class FlopsReport:
    """MAC counts grouped into sections; each section has its own total."""

    sections: dict[str, Counter] = field(default_factory=dict)
    closed_form: dict[str, int] = field(default_factory=dict)
    meta: dict[str, object] = field(default_factory=dict)

    def add_section(self, name: str, counts: dict[str, int]) -> None:
        self.sections[name] = Counter({k: int(v) for k, v in counts.items()})

    def total(self, section: str) -> int:
        return sum(self.sections[section].values())

    def to_table(self) -> str:
        rows = [("section", "component", "count")]
        for k, v in self.closed_form.items():
            rows.append(("closed_form", k, str(v)))
        for sec, counts in self.sections.items():
            for k in sorted(counts):
                rows.append((sec, k, str(counts[k])))
            rows.append((sec, "total", str(self.total(sec))))
        w0 = max(len(r[0]) for r in rows)
        w1 = max(len(r[1]) for r in rows)
        lines = [f"# {k}={v}" for k, v in self.meta.items()]
        lines += [f"{a:<{w0}}  {b:<{w1}}  {c:>}" for a, b, c in rows]
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_table(text: str) -> dict[tuple[str, str], int]:
        out = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            sec, comp, count = line.split()
            if sec == "section":
                continue
            out[(sec, comp)] = int(count)
        return out


def group_counts(counter: instrument.OpCounter, depth: int = 1, leaf: bool = False) -> dict[str, int]:
    """Collapse scoped component paths to their first ``depth`` segments
    (or to their last segment when ``leaf``)."""
    out: Counter = Counter()
    for path, n in counter.macs.items():
        parts = path.split("/")
        key = parts[-1] if leaf else "/".join(parts[:depth])
        out[key] += n
    return dict(out)
