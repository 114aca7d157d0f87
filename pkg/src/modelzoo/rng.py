"""Deterministic, platform-independent pseudo-random number generation.

The generator is counter-based splitmix64: output ``i`` is a bit-mix of
``seed + (i+1) * 0x9E3779B97F4A7C15`` with all arithmetic modulo 2**64.
Because there is no sequential state, any part of a stream can be produced
independently and the same (seed, index) pair yields the same bits on every
platform.  Floats take the top 53 bits of each word, so they are exact IEEE
doubles in [0, 1).

Named streams (one per parameter slot) derive their seed from the base seed
and an FNV-1a hash of the slot name, so initialisation does not depend on
the order slots are visited in.

Generation runs in fixed-size blocks with in-place numpy ops; results are
identical for any block size, but peak memory stays bounded even for
hundred-million-element weight slots.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_BLOCK = 1 << 22  # 4M words per block keeps temporaries around 32 MB


def fnv1a64(text: str) -> int:
    """FNV-1a hash of the UTF-8 encoding of ``text``, as a 64-bit int."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(seed: int, name: str) -> int:
    """Per-name sub-seed: one splitmix64 step of seed XOR hash(name)."""
    z = ((seed & _MASK64) ^ fnv1a64(name)) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _mix_block(seed: int, start: int, stop: int) -> np.ndarray:
    """splitmix64 words for counter indices [start, stop), in place."""
    z = np.arange(start + 1, stop + 1, dtype=np.uint64)
    z *= _GOLDEN
    z += np.uint64(seed & _MASK64)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def random_words(seed: int, count: int) -> np.ndarray:
    """``count`` splitmix64 outputs for this seed, as a uint64 array."""
    out = np.empty(count, dtype=np.uint64)
    for start in range(0, count, _BLOCK):
        stop = min(start + _BLOCK, count)
        out[start:stop] = _mix_block(seed, start, stop)
    return out


def unit_floats(seed: int, count: int) -> np.ndarray:
    """``count`` doubles in [0, 1), from the top 53 bits of each word."""
    out = np.empty(count, dtype=np.float64)
    for start in range(0, count, _BLOCK):
        stop = min(start + _BLOCK, count)
        z = _mix_block(seed, start, stop)
        z >>= np.uint64(11)
        out[start:stop] = z
    out *= 2.0 ** -53
    return out


def uniform(seed: int, count: int, bound: float) -> np.ndarray:
    """``count`` float32 samples from [-bound, bound)."""
    out = np.empty(count, dtype=np.float32)
    for start in range(0, count, _BLOCK):
        stop = min(start + _BLOCK, count)
        z = _mix_block(seed, start, stop)
        z >>= np.uint64(11)
        u = z * (2.0 ** -53)
        u *= 2.0
        u -= 1.0
        u *= bound
        out[start:stop] = u
    return out