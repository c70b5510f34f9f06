import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cpat.model import CPATConfig, WeightStore, init_weights  # noqa: E402
from oracles import numeric_grad  # noqa: E402
from cpat.sfim import SfimWeights  # noqa: E402
from cpat.tensor import Tensor, backward, mul, tsum  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_cfg():
    return CPATConfig.toy()


@pytest.fixture(scope="session")
def toy_store(toy_cfg):
    return init_weights(toy_cfg, seed=0, dtype=np.float64)


def check_grads(fn, arrays, rng, h=1e-6, tol=1e-6):
    """Compare tape gradients of ``sum(fn(*inputs) * R)`` with central differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = None

    def value():
        out = fn(*[Tensor(a) for a in arrays])
        return float((out.data * probe).sum())

    ts = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*ts)
    probe = rng.standard_normal(out.shape)
    grads = backward(tsum(mul(out, probe)), wrt=ts)
    for t, a in zip(ts, arrays):
        num = numeric_grad(value, a, h)
        np.testing.assert_allclose(grads[t], num, rtol=tol, atol=tol)


def jittered(cfg, seed=0, scale=0.05):
    """Init weights plus noise on every tensor, so zero biases and unit gammas get exercised."""
    store = init_weights(cfg, seed, np.float64)
    rng = np.random.default_rng(seed + 7)
    return WeightStore({k: v + scale * rng.standard_normal(v.shape) for k, v in store.items()})


def sfim_weights(c=6, seed=0, dtype=np.float64, jitter=0.0):
    cfg = CPATConfig.toy(channels=c, heads=1)
    store = init_weights(cfg, seed, dtype)
    rng = np.random.default_rng(seed)
    p = {}
    for n in SfimWeights.NAMES:
        k = store[f"final.sfim.{n}.weight"]
        b = store[f"final.sfim.{n}.bias"]
        p[f"{n}.weight"] = Tensor(k + jitter * rng.standard_normal(k.shape))
        p[f"{n}.bias"] = Tensor(b + jitter * rng.standard_normal(b.shape))
    return SfimWeights.from_params(p, "")


def delta_conv(c_out, c_in, k, dtype=np.float64):
    kern = np.zeros((c_out, c_in, k, k), dtype)
    for i in range(min(c_out, c_in)):
        kern[i, i, k // 2, k // 2] = 1.0
    return Tensor(kern), Tensor(np.zeros(c_out, dtype))
