"""splitmix64 generator shared by every seeded component.

The generator state after k draws is ``seed + k * GAMMA (mod 2**64)``, so a
block of draws can be produced in one vectorized pass.
"""

from __future__ import annotations

import numpy as np

NAME = "splitmix64"
GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


def mix64(z: int) -> int:
    z = z & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int) -> int:
    """First output of a generator seeded with ``seed`` (used to derive sub-seeds)."""
    return mix64((seed + GAMMA) & MASK64)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Stateful splitmix64 stream.

    >>> rng = SplitMix64(0)
    >>> hex(rng.next64())
    '0xe220a8397b1dcdaf'
    """

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def next_block(self, count: int) -> np.ndarray:
        """The next ``count`` outputs as a uint64 array, advancing the stream."""
        if count <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, count + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * np.uint64(GAMMA)
        self.state = (self.state + count * GAMMA) & MASK64
        return _mix64_array(states)

    def randint(self, low: int, high: int) -> int:
        """Integer in the closed range [low, high] via modulo reduction."""
        return low + self.next64() % (high - low + 1)

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits."""
        return (self.next64() >> 11) * (1.0 / (1 << 53))

    def uniform_block(self, count: int) -> np.ndarray:
        return (self.next_block(count) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def integers_block(self, count: int, low: int, high: int) -> np.ndarray:
        """``count`` integers in [low, high], drawn as ``low + next64 mod span``."""
        span = np.uint64(high - low + 1)
        return (self.next_block(count) % span).astype(np.int64) + low

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle returning a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.next64() % (i + 1)
            out[i], out[j] = out[j], out[i]
        return out
