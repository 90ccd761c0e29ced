"""Portable counter-keyed random streams built on xoshiro256**.

Every draw is addressed by ``(seed, stream tag, unit, period)``: the key is
mixed through splitmix64 into a fresh xoshiro256** state, so a panel cell's
noise does not depend on how many other cells were generated or in which
order. All arithmetic is vectorized over uint64 arrays, which wrap modulo
2**64 exactly like the reference C implementation.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_MASK = (1 << 64) - 1

# Stream tags keep independent uses of the same (unit, period) address apart.
INTERCEPT = 0x1
NOISE = 0x2
BOOTSTRAP = 0x3
COVARIATE = 0x4


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


def splitmix64(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    x = x + _U64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return x, z ^ (z >> _U64(31))


def _mix(key: np.ndarray, value) -> np.ndarray:
    _, out = splitmix64(key ^ np.asarray(value, dtype=np.int64).astype(_U64))
    return out


def stream_key(seed: int, tag: int, unit, period) -> np.ndarray:
    """Derive a 64-bit key per address; broadcasting over ``unit``/``period``."""
    base = np.asarray(seed & _MASK, dtype=_U64)
    with np.errstate(over="ignore"):
        k = _mix(base, tag)
        k = _mix(k, unit)
        k = _mix(k, period)
    return k


class Xoshiro256:
    """Vectorized xoshiro256** generators, one per element of ``keys``."""

    def __init__(self, keys: np.ndarray):
        keys = np.asarray(keys, dtype=_U64)
        with np.errstate(over="ignore"):
            x, s0 = splitmix64(keys)
            x, s1 = splitmix64(x)
            x, s2 = splitmix64(x)
            x, s3 = splitmix64(x)
        self.s = [s0, s1, s2, s3]

    @classmethod
    def from_state(cls, state) -> "Xoshiro256":
        gen = cls.__new__(cls)
        gen.s = [np.asarray(v, dtype=_U64) for v in state]
        return gen

    def next_u64(self) -> np.ndarray:
        s0, s1, s2, s3 = self.s
        with np.errstate(over="ignore"):
            result = _rotl(s1 * _U64(5), 7) * _U64(9)
            t = s1 << _U64(17)
            s2 = s2 ^ s0
            s3 = s3 ^ s1
            s1 = s1 ^ s2
            s0 = s0 ^ s3
            s2 = s2 ^ t
            s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> np.ndarray:
        """Uniform doubles in the open-closed interval (0, 1]."""
        return ((self.next_u64() >> _U64(11)).astype(np.float64) + 1.0) * (2.0**-53)

    def normal(self) -> np.ndarray:
        # Box-Muller, cosine branch only: two draws per normal keeps the
        # per-address consumption fixed.
        u1 = self.uniform()
        u2 = self.uniform()
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def normal_grid(seed: int, tag: int, units: np.ndarray, periods: np.ndarray) -> np.ndarray:
    """Standard normals on the outer grid ``units x periods``."""
    keys = stream_key(seed, tag, np.asarray(units)[:, None], np.asarray(periods)[None, :])
    return Xoshiro256(keys).normal()


def derive_seed(master: int, index: int) -> int:
    """Per-task seed derived from ``(master, index)``; schedule independent."""
    return int(stream_key(master, BOOTSTRAP, index, 0))


def resample_indices(seed: int, draws: int, n: int) -> np.ndarray:
    """``draws x n`` matrix of indices drawn uniformly with replacement from ``range(n)``.

    Draw ``b`` uses its own stream keyed by ``(seed, b)``.
    """
    keys = stream_key(seed, BOOTSTRAP, np.arange(draws)[:, None], np.zeros((1, 1), dtype=np.int64))
    gen = Xoshiro256(np.broadcast_to(keys, (draws, 1)).copy())
    cols = []
    for _ in range(n):
        cols.append(gen.uniform())
    u = np.concatenate(cols, axis=1) if cols else np.zeros((draws, 0))
    return np.minimum(np.floor(u * n).astype(np.int64), n - 1)
