"""Deterministic random number generation.

The generator is xoshiro256** seeded through splitmix64, implemented on
64-bit integer arithmetic only, so the raw stream is bit-identical for a
given seed on every platform.  Frozen algorithm:

* splitmix64: state += 0x9E3779B97F4A7C15; z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EB; output z ^ (z >> 31).
* seeding: the 256-bit xoshiro state is the first four splitmix64 outputs.
* xoshiro256** next: out = rotl(s1 * 5, 7) * 9; t = s1 << 17;
  s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45).

Derived quantities:

* uniform(): (next() >> 11) * 2**-53, in [0, 1).
* normal(): Marsaglia polar method on uniforms mapped to (-1, 1); the
  spare variate is cached, so draws come in deterministic pairs.  Uses
  only sqrt/log, whose platform variation is below double noise in
  practice; the integer and uniform streams are exact everywhere.
* randbelow(n): top-bits rejection sampling, unbiased.
* shuffle(): Fisher-Yates from the tail using randbelow.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64, state


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def derive_seed(seed: int, *salts: int) -> int:
    """Mix integer salts into a seed, one splitmix64 round per value.

    Used to spawn independent sub-streams, e.g. one per (task, epoch),
    from a single experiment seed without consuming the parent stream.
    """
    state = seed & _MASK64
    for salt in salts:
        state = (state ^ (salt & _MASK64)) & _MASK64
        out, state = _splitmix64(state)
        state = out
    out, _ = _splitmix64(state)
    return out


class Rng:
    """Single-owner deterministic generator; never share across threads."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        s = []
        state = self.seed
        for _ in range(4):
            out, state = _splitmix64(state)
            s.append(out)
        if not any(s):  # all-zero state is the one forbidden xoshiro state
            s[0] = 1
        self._s = s
        self._spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        out = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return out

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return z
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                break
        f = math.sqrt(-2.0 * math.log(s) / s)
        self._spare = v * f
        return u * f

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        # row-major fill order, frozen for reproducibility
        return self.normals(rows * cols).reshape(rows, cols)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        k = (n - 1).bit_length()
        if k == 0:
            return 0
        while True:
            r = self.next_u64() >> (64 - k)
            if r < n:
                return r

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items

    def derive(self, *salts: int) -> "Rng":
        """Child generator keyed on the original seed plus the salts."""
        return Rng(derive_seed(self.seed, *salts))
