"""Self-ensemble over the eight dihedral transforms of the input."""
from __future__ import annotations

from typing import Callable

import numpy as np

# (quarter turns, horizontal flip) for each of the 8 symmetries of the square
DIHEDRAL = [(k, f) for f in (False, True) for k in range(4)]


def dihedral(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    """Flip (optional, along W) then rotate ``k`` quarter turns in the H/W plane."""
    if flip:
        x = x[..., ::-1]
    return np.rot90(x, k, axes=(-2, -1))


def inverse_dihedral(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    x = np.rot90(x, -k, axes=(-2, -1))
    if flip:
        x = x[..., ::-1]
    return x


def self_ensemble(forward: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Average of ``inverse_t(forward(t(x)))`` over all eight transforms ``t``.

    Outputs are summed as a balanced tree, so eight identical outputs
    average back to exactly that output.
    """
    outs = [inverse_dihedral(np.asarray(forward(np.ascontiguousarray(dihedral(x, k, flip)))), k, flip).astype(np.float64)
            for k, flip in DIHEDRAL]
    while len(outs) > 1:
        outs = [outs[i] + outs[i + 1] for i in range(0, len(outs), 2)]
    return outs[0] / len(DIHEDRAL)
