"""Regenerate the committed golden files under tests/data.

    python scripts/make_golden.py [--check]

Writes toy_weights.cpatw (toy config, float64, seed 0), golden_input.cpt
(seeded 1x3x8x8 LR batch) and golden_output.cpt (the forward pass on them).
``--check`` recomputes and compares instead of writing.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from cpat.model import CPATConfig, WeightStore, cpat_forward, init_weights
from cpat.serialize import load_tensor, save_tensor

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"
SEED = 0


def golden_input() -> np.ndarray:
    return np.random.default_rng(SEED + 7).random((1, 3, 8, 8))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args(argv)
    cfg = CPATConfig.toy()
    if args.check:
        store = WeightStore.load(DATA / "toy_weights.cpatw")
        out = cpat_forward(load_tensor(DATA / "golden_input.cpt"), store, cfg).data
        same = np.array_equal(out, load_tensor(DATA / "golden_output.cpt"))
        print("golden output matches" if same else "golden output DIFFERS")
        return 0 if same else 1
    store = init_weights(cfg, SEED, np.float64)
    x = golden_input()
    store.save(DATA / "toy_weights.cpatw")
    save_tensor(x, DATA / "golden_input.cpt")
    save_tensor(cpat_forward(x, store, cfg).data, DATA / "golden_output.cpt")
    print(f"wrote golden files to {DATA}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
