"""Self-contained 64-bit random number generation.

Corpus generation must be reproducible bit-for-bit across platforms and
language runtimes, so it does not depend on any library RNG.  The stream
generator is SplitMix64 (Steele, Lea & Flood, "Fast splittable
pseudorandom number generators", OOPSLA 2014), chosen because it is tiny,
well studied, and trivially portable: the full state is one 64-bit word
advanced by the golden-ratio increment, and each output is a finalizing
mix of the state.

    state   += 0x9E3779B97F4A7C15
    z        = state
    z        = (z ^ (z >> 30)) * 0xBF58476D1CE4E91D
    z        = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output   = z ^ (z >> 31)

All arithmetic is modulo 2**64.  Seed derivation for pipeline stages
hashes the stage name with FNV-1a (64-bit) into the root seed and runs
one SplitMix64 mix over the result, so every stage gets an independent,
documented stream from a single root seed.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E91D
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x00000100000001B3


def splitmix64_mix(z: int) -> int:
    """One SplitMix64 output mix of a 64-bit value (stateless)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return (z ^ (z >> 31)) & MASK64


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return h


def derive_seed(root_seed: int, stage: str) -> int:
    """Per-stage seed: mix(root XOR fnv1a(stage)).  Documented fan-out."""
    return splitmix64_mix((root_seed & MASK64) ^ fnv1a64(stage.encode("utf-8")))


class SplitMix64:
    """Sequential SplitMix64 stream."""

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & MASK64
        return splitmix64_mix(self._state)

    def next_float(self) -> float:
        """Uniform in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n).  Rejection-free would bias by at most
        n / 2**64, which is far below anything observable at corpus scale,
        but rejection sampling keeps the stream exactly uniform."""
        if n <= 0:
            raise ValueError("next_below needs n >= 1")
        limit = (MASK64 + 1) - ((MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def next_int(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError("empty range")
        return lo + self.next_below(hi - lo + 1)

    def split(self) -> "SplitMix64":
        """Child stream seeded from the next output; streams do not overlap
        in any way that matters at the draw counts used here."""
        return SplitMix64(self.next_u64())
