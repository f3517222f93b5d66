"""SplitMix64 counter stream shared by the compiled and pure-Python samplers.

Both backends must draw the same numbers in the same order, so sampling
does not go through numpy's generators.
"""

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def node_stream_seed(seed: int, node: int) -> int:
    """Per-node stream seed, so samples do not depend on root order."""
    return (seed & MASK64) ^ mix64(((node + 1) * GAMMA) & MASK64)


class RandomSource:
    """Deterministic 64-bit stream; identical seed and calls give identical draws."""

    __slots__ = ("seed", "state")

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.state = self.seed

    @classmethod
    def for_node(cls, seed: int, node: int) -> "RandomSource":
        return cls(node_stream_seed(seed, node))

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def sample(self, pool, k: int) -> list[int]:
        """``min(k, len(pool))`` distinct items, uniform without replacement, sorted.

        A partial Fisher-Yates shuffle over a copy of ``pool``; no draws are
        consumed when the whole pool is taken.
        """
        items = list(pool)
        n = len(items)
        if k >= n:
            return sorted(items)
        for i in range(k):
            j = i + self.below(n - i)
            items[i], items[j] = items[j], items[i]
        return sorted(items[:k])
