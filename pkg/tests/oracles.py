"""Independent reference computations used only by the tests.

Nothing here imports the package's numerical code; each function is the
slow, obvious version of something the package does fast.
"""

from __future__ import annotations

import numpy as np


def normal_equations(x, y):
    return np.linalg.solve(x.T @ x, x.T @ y)


def loop_sandwich(x, y, clusters):
    """CR1 sandwich with explicit Python loops over clusters and rows."""
    n, k = x.shape
    beta = normal_equations(x, y)
    e = y - x @ beta
    bread = np.linalg.inv(x.T @ x)
    meat = np.zeros((k, k))
    labels = sorted(set(clusters.tolist()))
    for g in labels:
        s = np.zeros(k)
        for i in range(n):
            if clusters[i] == g:
                s += x[i] * e[i]
        meat += np.outer(s, s)
    G = len(labels)
    return G / (G - 1) * (n - 1) / (n - k) * bread @ meat @ bread


def gradient_ascent_logit(x, y, tol=1e-11, max_iter=2_000_000):
    """Plain fixed-step gradient ascent; the step is safe because the
    logistic Hessian is bounded by X'X / 4."""
    step = 4.0 / np.linalg.eigvalsh(x.T @ x).max()
    beta = np.zeros(x.shape[1])
    for _ in range(max_iter):
        p = 1 / (1 + np.exp(-(x @ beta)))
        g = x.T @ (y - p)
        if np.linalg.norm(g) < tol:
            return beta
        beta = beta + step * g
    raise RuntimeError("gradient ascent did not converge")


def four_means_did(y, treated, post):
    m = lambda a, b: y[(treated == a) & (post == b)].mean()
    return (m(1, 1) - m(1, 0)) - (m(0, 1) - m(0, 0))


_M64 = (1 << 64) - 1


def splitmix64_py(x: int) -> tuple[int, int]:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return x, z ^ (z >> 31)


def xoshiro256ss_py(state: list[int], count: int) -> list[int]:
    """Scalar transcription of the reference xoshiro256** C code."""

    def rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & _M64

    s = list(state)
    out = []
    for _ in range(count):
        out.append((rotl((s[1] * 5) & _M64, 7) * 9) & _M64)
        t = (s[1] << 17) & _M64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
    return out
