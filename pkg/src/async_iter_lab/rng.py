"""Counter-based splittable random number generator.

Every random quantity in this package is addressed, not drawn: a value is a
pure function of a 64-bit stream key and a 64-bit counter, so any subsequence
can be regenerated (or generated on another thread) without shared state.

Definition (all arithmetic mod 2^64):

    mix64(z):  z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
               z ^= z >> 27; z *= 0x94D049BB133111EB
               z ^= z >> 31
    u64(key, i)      = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)
    split(key, name) = mix64(key ^ fnv1a64(utf8(name)))
    subkey(key, i)   = u64(key, i)

u64(key, .) is the splitmix64 output sequence for the state `key`.  Derived
quantities:

    uniform(key, i)  = (u64(key, i) >> 11) * 2^-53            in [0, 1)
    randint(key, i, n) = u64(key, i) % n   (bias < 2^-57 for n <= 2^6)
    normal pair j    = Box-Muller from uniforms at counters (2j, 2j+1),
                       with u1 := 1 - uniform(key, 2j) so that u1 > 0:
                       z0 = sqrt(-2 ln u1) cos(2 pi u2)
                       z1 = sqrt(-2 ln u1) sin(2 pi u2)
    exponential(key, i, rate) = -ln(1 - uniform(key, i)) / rate

u64(key, .) matches the reference splitmix64 output sequence for seed `key`
(u64(0, 0..2) = 0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4, 0x06c45d188009454f).

Test vectors (key 42), frozen in tests/test_rng.py:

    u64(42, 0..3)      = 0xbdd732262feb6e95, 0x28efe333b266f103,
                         0x47526757130f9f52, 0x581ce1ff0e4ae394
    split(42, "delay") = 0x22273a4c055aabe9
    subkey(42, 7)      = 0xccf635ee9e9e2fa4
    uniform(42, 0)     = 0.7415648787718233
    normal pair 0      = 0.8822489062222688, 1.388473285287707
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_INV_2_53 = 2.0**-53


def mix64(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK
    z ^= z >> 31
    return z


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


def u64(key: int, i: int) -> int:
    """The i-th 64-bit word of the stream `key` (counter-addressed)."""
    return mix64((int(key) + (int(i) + 1) * _GAMMA) & _MASK)


def split(key: int, name: str) -> int:
    """Derive an independent child stream key from a string label."""
    return mix64(key ^ fnv1a64(name.encode("utf-8")))


def subkey(key: int, i: int) -> int:
    """Derive an independent child stream key from an integer label."""
    return u64(key, i)


def u64_block(key: int, start: int, count: int) -> np.ndarray:
    """Vectorized u64(key, start..start+count-1) as a uint64 array."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = (np.uint64(key & _MASK) + idx * np.uint64(_GAMMA)).astype(np.uint64)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


def uniform(key: int, i: int) -> float:
    """Uniform draw in [0, 1) at counter i."""
    return (u64(key, i) >> 11) * _INV_2_53


def uniform_block(key: int, start: int, count: int) -> np.ndarray:
    return (u64_block(key, start, count) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def randint(key: int, i: int, n: int) -> int:
    """Uniform integer in [0, n) at counter i (modulo method)."""
    if n <= 0:
        raise ValueError("randint needs n >= 1")
    return u64(key, i) % n


def normal_block(key: int, count: int, start_pair: int = 0) -> np.ndarray:
    """`count` standard normal draws via Box-Muller.

    Pair j consumes uniform counters (2j, 2j+1); `start_pair` offsets j so
    disjoint blocks of the same stream never overlap.
    """
    pairs = (count + 1) // 2
    u = uniform_block(key, 2 * start_pair, 2 * pairs)
    u1 = 1.0 - u[0::2]
    u2 = u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * math.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:count]


def exponential(key: int, i: int, rate: float) -> float:
    """Exponential draw with the given rate at counter i."""
    if rate <= 0:
        raise ValueError("exponential needs rate > 0")
    return -math.log(1.0 - uniform(key, i)) / rate


class Stream:
    """Stateful convenience wrapper over one counter-addressed stream.

    Splitting returns a fresh independent Stream; the parent's counter is
    untouched, so interleaving splits and draws stays reproducible.
    """

    def __init__(self, key: int):
        self.key = key & _MASK
        self.counter = 0

    @classmethod
    def from_seed(cls, seed: int) -> "Stream":
        return cls(seed)

    def split(self, name: str) -> "Stream":
        return Stream(split(self.key, name))

    def subkey(self, i: int) -> "Stream":
        return Stream(subkey(self.key, i))

    def u64(self) -> int:
        value = u64(self.key, self.counter)
        self.counter += 1
        return value

    def uniform(self) -> float:
        value = uniform(self.key, self.counter)
        self.counter += 1
        return value

    def randint(self, n: int) -> int:
        value = randint(self.key, self.counter, n)
        self.counter += 1
        return value

    def normals(self, count: int) -> np.ndarray:
        # Consumes whole pairs so subsequent draws stay pair-aligned.
        pairs = (count + 1) // 2
        if self.counter % 2:
            self.counter += 1
        out = normal_block(self.key, count, start_pair=self.counter // 2)
        self.counter += 2 * pairs
        return out
