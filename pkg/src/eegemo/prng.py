"""Pinned pseudo-random generator used for every stochastic step.

Algorithm
---------
* Seeding: the 64-bit seed drives a SplitMix64 sequence; its first four
  outputs become the xoshiro256** state words ``s0..s3``.
* Generator: xoshiro256** (Blackman & Vigna), 64-bit outputs.
* Uniform doubles: ``(x >> 11) * 2**-53``, i.e. in ``[0, 1)``.
* Bounded integers in ``[0, m)``: ``(x * m) >> 64`` (multiply-high, no
  rejection step).
* Permutations: Fisher-Yates from the top, ``for i = n-1 .. 1: j = bounded(i+1);
  swap(a[i], a[j])`` starting from the identity.
* Normals: Box-Muller over consecutive uniform pairs ``(u1, u2)``:
  ``r = sqrt(-2 log1p(-u1))``, emitting ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``.
  An odd request discards the final sine.
* Derived seeds: ``derive_seed(base, *keys)`` folds each key into the base
  with ``h = mix64(h + GOLDEN + key)``, where ``mix64`` is the SplitMix64
  output finalizer.

All arithmetic is modulo 2**64.
"""

from __future__ import annotations

import numba
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int, n: int) -> list[int]:
    x = seed & MASK64
    out = []
    for _ in range(n):
        x = (x + GOLDEN) & MASK64
        out.append(mix64(x))
    return out


def derive_seed(base: int, *keys: int) -> int:
    h = base & MASK64
    for k in keys:
        h = mix64(h + GOLDEN + (k & MASK64))
    return h


@numba.njit(cache=True)
def _fill_u64(state, out):
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    for k in range(out.shape[0]):
        a = s1 * np.uint64(5)
        a = (a << np.uint64(7)) | (a >> np.uint64(57))
        out[k] = a * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3


class Xoshiro256:
    """xoshiro256** stream with SplitMix64 seeding."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.state = np.array(splitmix64(self.seed, 4), dtype=np.uint64)

    def u64(self, n: int) -> np.ndarray:
        out = np.empty(int(n), dtype=np.uint64)
        if n:
            _fill_u64(self.state, out)
        return out

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def uniform(self, n: int) -> np.ndarray:
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def bounded(self, m: int) -> int:
        return (self.next_u64() * m) >> 64

    def permutation(self, n: int) -> np.ndarray:
        perm = list(range(n))
        if n < 2:
            return np.array(perm, dtype=np.int64)
        draws = self.u64(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = (int(draws[k]) * (i + 1)) >> 64
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:n]
