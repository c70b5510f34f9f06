"""L1 + Adam training on synthetic patch pairs."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .analysis.metrics import psnr, rgb_to_y
from .data.dataset import batch_digest, batches, downscale, make_pairs, synth_dataset
from .functional import l1_loss
from .model import CPATConfig, WeightStore, cpat_forward, init_weights
from .tensor import backward

log = logging.getLogger(__name__)


class NumericFailure(RuntimeError):
    def __init__(self, msg: str, last_good: WeightStore | None = None, step: int = 0):
        super().__init__(msg)
        self.last_good = last_good
        self.step = step


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One bias-corrected Adam step, in place on ``params``."""
        self.step += 1
        c1 = 1.0 - self.beta1**self.step
        c2 = 1.0 - self.beta2**self.step
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


@dataclass
class TrainSettings:
    """Defaults follow the full-scale schedule; :meth:`toy` is the desk-scale one."""

    iters: int = 500_000
    batch: int = 32
    patch: int = 64
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    lr_halve_every: int = 0   # 0 keeps the rate constant
    n_images: int = 12
    image_size: int = 64
    eval_images: int = 6
    eval_size: int = 32
    dtype: str = "float32"

    @classmethod
    def toy(cls, **overrides) -> "TrainSettings":
        return cls(**{"iters": 200, "batch": 4, "patch": 16, **overrides})


@dataclass
class TrainResult:
    store: WeightStore
    losses: list[float]
    digests: list[str]
    stream_hash: str


def lr_at(settings: TrainSettings, it: int) -> float:
    if settings.lr_halve_every > 0:
        return settings.lr * 0.5 ** ((it - 1) // settings.lr_halve_every)
    return settings.lr


def smoothed(losses: list[float], window: int = 10) -> tuple[float, float]:
    """Mean of the first and of the last ``window`` losses."""
    w = max(1, min(window, len(losses)))
    return float(np.mean(losses[:w])), float(np.mean(losses[-w:]))


def training_stream(cfg: CPATConfig, settings: TrainSettings, seed: int) -> Iterable[tuple[np.ndarray, np.ndarray]]:
    images = synth_dataset(settings.n_images, settings.image_size, seed)
    return batches(make_pairs(images, cfg.scale, settings.patch, seed), settings.batch)


def train(cfg: CPATConfig, settings: TrainSettings, seed: int,
          on_step: Callable[[int, float, float, float], None] | None = None,
          store: WeightStore | None = None) -> TrainResult:
    """Run ``settings.iters`` Adam steps on L1 loss.

    ``on_step(iter, loss, lr, seconds)`` is called after every step.  A
    non-finite loss raises :class:`NumericFailure` carrying the last
    finite weights.
    """
    dtype = np.dtype(settings.dtype)
    store = (store or init_weights(cfg, seed)).astype(dtype)
    opt = AdamState(settings.lr, settings.beta1, settings.beta2, settings.eps)
    stream = iter(training_stream(cfg, settings, seed))
    losses, digests = [], []
    t0 = time.perf_counter()
    for it in range(1, settings.iters + 1):
        lr_batch, hr_batch = next(stream)
        digests.append(batch_digest(lr_batch, hr_batch))
        params = store.as_tensors(requires_grad=True)
        out = cpat_forward(lr_batch.astype(dtype), params, cfg)
        loss = l1_loss(out, hr_batch.astype(dtype))
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericFailure(f"loss became {value} at iteration {it}", store, it)
        grads = backward(loss)
        opt.lr = lr_at(settings, it)
        snapshot = store.copy()
        opt.update(store.params, {t.name: g for t, g in grads.items()})
        if not all(np.isfinite(a).all() for a in store.params.values()):
            raise NumericFailure(f"non-finite weights after iteration {it}", snapshot, it)
        losses.append(value)
        if on_step is not None:
            on_step(it, value, opt.lr, time.perf_counter() - t0)
    stream_hash = _chain(digests)
    return TrainResult(store, losses, digests, stream_hash)


def _chain(digests: list[str]) -> str:
    h = hashlib.sha256()
    for d in digests:
        h.update(d.encode())
    return h.hexdigest()


def heldout_set(cfg: CPATConfig, settings: TrainSettings, seed: int) -> list[np.ndarray]:
    """HR [3,H,W] images in [0,1], disjoint seed from the training stream."""
    size = settings.eval_size - settings.eval_size % cfg.scale
    return [img.to_chw() for img in synth_dataset(settings.eval_images, size, seed + 1_000_003)]


def evaluate_psnr(store: WeightStore, cfg: CPATConfig, hr_images: list[np.ndarray]) -> float:
    """Mean Y-channel PSNR (border crop = scale) of quantised model output."""
    scores = []
    for hr in hr_images:
        lr = downscale(hr, cfg.scale)
        sr = cpat_forward(lr[None].astype(store.dtype), store, cfg).data[0]
        sr_q = np.clip(np.round(sr * 255.0), 0, 255)
        hr_q = np.round(hr * 255.0)
        scores.append(psnr(rgb_to_y(sr_q)[0], rgb_to_y(hr_q)[0], crop=cfg.scale))
    return float(np.mean(scores))


class LossLog:
    """CSV sink with columns iter,loss,lr,seconds."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        self._w.writerow(["iter", "loss", "lr", "seconds"])

    def __call__(self, it: int, loss: float, lr: float, seconds: float) -> None:
        self._w.writerow([it, repr(loss), repr(lr), f"{seconds:.3f}"])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
