"""Deterministic random streams on top of the Philox counter-based generator.

Simulation noise is indexed by (seed, path, step, coordinate): the standard
normal for path p, step s, coordinate c is ndtri(u) where u is the uniform
built from the 64-bit Philox output at counter position (s*n + p)*d + c under
a key derived from the seed.  The mapping depends only on those integers, so
identical inputs reproduce bit-identical noise regardless of how paths are
chunked or parallelized.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_U64_TO_UNIT = 2.0**-53  # top 53 bits of a uint64 -> (0, 1), offset by half an ulp


def _philox_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed)).generate_state(2, np.uint64)


def normal_block(seed: int, step: int, n_paths: int, dim: int) -> np.ndarray:
    """Standard normals for one simulation step, shape (n_paths, dim).

    Each step owns a contiguous run of Philox counter blocks (4 outputs per
    block); entry [p, c] is the variate at output p*dim + c within the step's
    run.  The transform is u = ((raw >> 11) + 0.5) * 2**-53, z = ndtri(u);
    tails are capped near 8.2 sigma by the 53-bit uniform resolution.
    """
    bg = np.random.Philox(key=_philox_key(seed))
    count = n_paths * dim
    blocks_per_step = -(-count // 4)  # Philox emits 4 outputs per counter block
    bg.advance(step * blocks_per_step)
    raw = bg.random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U64_TO_UNIT
    return ndtri(u).reshape(n_paths, dim)


def derive_seed(seed: int, *path: int) -> int:
    """Stable child seed for a labelled role, e.g. derive_seed(base, replicate, role)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent Generator for auxiliary randomness (shuffles, proposals, inits)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))
