"""Seeded random-number streams.

Every stochastic routine in this package draws from a Philox counter-based
generator keyed by ``(seed, stream tag)``.  Philox is a named 64-bit
counter-based generator, so the exact streams can be documented and
reproduced from the key alone: two calls with the same seed and tag yield
bit-identical draws regardless of call order elsewhere in the program.

Seed 0 is reserved for documentation examples; experiment configs should
use seeds >= 1.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Registry of stream tags.  Each (purpose, index) pair maps to its own
# independent Philox key so concurrent tasks never share a stream.
STREAMS = {
    "family": 0,  # dataset sampling
    "init": 1,  # network parameter initialization
    "shuffle": 2,  # epoch shuffling during training
    "perm": 3,  # nuisance-column permutations for critic negatives
    "fold": 4,  # cross-fitting fold assignment
    "randomize": 5,  # generative resampling
    "split": 6,  # train/validation splits
    "eval": 7,  # evaluation / sweep test sets
    "misc": 8,
}


def child_seed(seed: int, index: int) -> int:
    """Derive a documented 64-bit child seed (splitmix64 of seed + index).

    Used wherever a scalar-seeded component (fold model, sweep point,
    per-method run) needs its own independent stream family.
    """
    x = (seed + 0x9E3779B97F4A7C15 * (index + 1)) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def make_rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """Return the generator for ``(seed, stream, index)``.

    ``index`` distinguishes repeated uses of the same stream (per-fold
    models, per-sweep-point test sets, ...) and must stay below 2**32.
    """
    if stream not in STREAMS:
        raise KeyError(f"unknown rng stream {stream!r}")
    if not 0 <= index < (1 << 32):
        raise ValueError(f"stream index out of range: {index}")
    tag = (STREAMS[stream] << 32) | index
    key = np.array([seed & _MASK64, tag], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def train_val_split(n: int, seed: int, fraction: float = 0.2):
    """Seeded (train_idx, val_idx) split; validation takes ``fraction``."""
    perm = make_rng(seed, "split").permutation(n)
    n_val = max(1, int(round(n * fraction)))
    return perm[n_val:], perm[:n_val]
