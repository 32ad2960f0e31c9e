"""Deterministic seeding and uniform streams.

Seed derivation uses the SplitMix64 recurrence so replica streams are pinned
down exactly by the docs:

    state' = (state + 0x9E3779B97F4A7C15) mod 2^64
    z = state'
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    output = z ^ (z >> 31)

Replica r of base seed s draws from the stream seeded by mix(s, r).
Bulk vectorized sampling delegates to numpy's PCG64 seeded with mixed seeds.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _scramble(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (new_state, output word)."""
    state = (state + _GAMMA) & _MASK64
    return state, _scramble(state)


def mix(base_seed: int, stream: int) -> int:
    """64-bit mixing of a base seed with a replica/stream index."""
    return _scramble((base_seed & _MASK64) ^ ((stream + 1) * _GAMMA & _MASK64))


class ScalarRng:
    """SplitMix64-backed scalar uniform stream for the reference samplers."""

    def __init__(self, seed: int, stream: int = 0):
        self._state = mix(seed, stream)

    def next_u64(self) -> int:
        self._state, out = splitmix64(self._state)
        return out

    def uniform(self) -> float:
        # 53-bit mantissa, uniform on [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """numpy Generator for vectorized sampling, seeded via mix()."""
    return np.random.Generator(np.random.PCG64(mix(seed, stream)))
