"""Seeded, forkable random streams.

All randomness in the package flows through :class:`Rng`, which wraps numpy's
Philox4x32-10 counter-based bit generator keyed by a 64-bit seed. Philox is
fully specified by its published round constants, so a given seed produces the
same sample sequence on every platform.

Stream forking derives child seeds with splitmix64 (Steele et al., the
SplittableRandom finalizer), mixing the parent seed with the child index:

    child_seed = splitmix64(parent_seed XOR GOLDEN * (index + 1))

Distinct indices give statistically independent Philox keys, and the
derivation is reproducible from the top-level seed alone.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15  # 2^64 / golden ratio, splitmix64 increment


def splitmix64(x: int) -> int:
    """One splitmix64 finalizer round (explicit constants, 64-bit wrap)."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Rng:
    """Deterministic random stream with documented fork derivation."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.generator = np.random.Generator(np.random.Philox(key=self.seed))

    def fork(self, index: int) -> "Rng":
        """Independent child stream number ``index`` (index >= 0)."""
        if index < 0:
            raise ValueError("fork index must be non-negative")
        child = splitmix64(self.seed ^ ((_GOLDEN * (index + 1)) & _MASK64))
        return Rng(child)

    # Thin passthroughs so call sites read like numpy Generator usage.
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None, endpoint=False):
        return self.generator.integers(low, high, size=size, endpoint=endpoint)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def choice(self, a, size=None, p=None):
        return self.generator.choice(a, size=size, p=p)

    def __repr__(self):
        return f"Rng(seed={self.seed:#018x})"
