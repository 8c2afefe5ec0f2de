"""Deterministic per-purpose random streams.

Every stochastic choice in the package draws from a named stream derived
from one master seed, so distinct purposes (sampling inputs, shuffling,
weight init, label flips, ...) never share state and never collide when
an experiment adds or removes a consumer.
"""

from __future__ import annotations

import numpy as np

# stable numeric ids; appending is fine, reordering is not
_PURPOSES = {
    "means": 0,
    "labels": 1,
    "inputs": 2,
    "split": 3,
    "flips": 4,
    "perturb": 5,
    "init": 6,
    "shuffle": 7,
    "pairs": 8,
    "permtest": 9,
    "misc": 10,
}


def stream(seed: int, purpose: str, *key: int) -> np.random.Generator:
    """Generator for `purpose` under `seed`; extra ints open sub-streams."""
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    ss = np.random.SeedSequence(entropy=int(seed),
                                spawn_key=(_PURPOSES[purpose], *map(int, key)))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *key: int) -> int:
    """Collision-resistant child seed for handing to another component."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(map(int, key)))
    return int(ss.generate_state(1, np.uint64)[0])
