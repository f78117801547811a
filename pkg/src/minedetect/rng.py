"""Deterministic 64-bit PRNG for scenario generation.

The generator is SplitMix64 (Steele, Lea & Flood's mix finalizer), chosen
because the whole algorithm fits in a dozen lines of integer arithmetic and
can be re-implemented bit-for-bit in any language:

    state <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z <- state
    z <- (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2^64
    z <- (z XOR (z >> 27)) * 0x94D049BB133111EB   mod 2^64
    output <- z XOR (z >> 31)

Derived draws are defined exactly as:

* ``randbelow(n)`` = ``next_u64() % n`` (modulo reduction; the tiny bias is
  irrelevant here, determinism is what matters).
* ``uniform()`` = ``next_u64() >> 11`` divided by 2^53 (a float in [0, 1)).
* ``randint(a, b)`` = ``a + randbelow(b - a + 1)``.
* ``choice(seq)`` = ``seq[randbelow(len(seq))]``.

Reproducing a scenario therefore needs only the seed and the documented
draw order of the generator code.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """SplitMix64 PRNG with the standard constants."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow() needs n >= 1")
        return self.next_u64() % n

    def randint(self, a: int, b: int) -> int:
        """Uniform integer in [a, b], both ends inclusive."""
        if b < a:
            raise ValueError("randint() needs a <= b")
        return a + self.randbelow(b - a + 1)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) / float(1 << 53)
        return lo + (hi - lo) * u

    def choice(self, seq):
        if not seq:
            raise ValueError("choice() from an empty sequence")
        return seq[self.randbelow(len(seq))]
