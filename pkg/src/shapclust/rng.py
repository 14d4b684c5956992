"""Platform-stable random streams.

Every random draw in the package comes from xoshiro256** seeded through
splitmix64.  A stream is identified by ``(seed, stream_id)``; the initial
splitmix64 state is ``seed ^ mix64(stream_id)`` and the four xoshiro state
words are the next four splitmix64 outputs.

Doubles are built from the top 53 bits of a draw, normals use Box-Muller
on pairs of uniforms (both the cosine and sine branch are used), and
bounded integers use rejection sampling so there is no modulo bias.
"""

from __future__ import annotations

import math

import numba
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# Fixed stream ids, one per consumer, so no two stages ever share a stream.
STREAM_SIMULATE_INPUTS = 1
STREAM_SIMULATE_BETA = 2
STREAM_SIMULATE_LABELS = 3
STREAM_SPLIT = 4
STREAM_FOLDS = 5
STREAM_BACKGROUND = 6
STREAM_EMBED = 7
STREAM_SMOKE = 8


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def mix64(value: int) -> int:
    """Stateless splitmix64 finalizer of ``value``."""
    return splitmix64_next(value & MASK64)[1]


def _initial_state(seed: int, stream_id: int) -> np.ndarray:
    sm = (seed ^ mix64(stream_id)) & MASK64
    words = []
    for _ in range(4):
        sm, out = splitmix64_next(sm)
        words.append(out)
    if not any(words):
        words[0] = 1
    return np.array(words, dtype=np.uint64)


@numba.njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@numba.njit(cache=True)
def xoshiro_next(s):
    """One xoshiro256** step on the 4-word state array ``s`` (in place)."""
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@numba.njit(cache=True)
def xoshiro_uniform(s):
    return float(xoshiro_next(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def xoshiro_below(s, n):
    """Unbiased integer in ``[0, n)`` for ``n >= 1``."""
    bound = np.uint64(n)
    threshold = (np.uint64(0) - bound) % bound
    while True:
        r = xoshiro_next(s)
        if r >= threshold:
            return np.int64(r % bound)


@numba.njit(cache=True)
def _fill_u64(s, out):
    for i in range(out.shape[0]):
        out[i] = xoshiro_next(s)


@numba.njit(cache=True)
def _fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = xoshiro_uniform(s)


@numba.njit(cache=True)
def _fill_normal(s, out):
    n = out.shape[0]
    i = 0
    while i < n:
        u1 = xoshiro_uniform(s)
        u2 = xoshiro_uniform(s)
        radius = math.sqrt(-2.0 * math.log(1.0 - u1))
        angle = 2.0 * math.pi * u2
        out[i] = radius * math.cos(angle)
        if i + 1 < n:
            out[i + 1] = radius * math.sin(angle)
        i += 2


@numba.njit(cache=True)
def _permutation(s, n):
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = xoshiro_below(s, i + 1)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return perm


class RngStream:
    """A seeded xoshiro256** stream.

    Identical ``(seed, stream_id)`` pairs reproduce identical output on any
    platform.  Use :meth:`derive` to hand independent sub-streams to parallel
    units of work.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= seed <= MASK64 and 0 <= stream_id <= MASK64):
            raise ValueError("seed and stream_id must be 64-bit unsigned integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.state = _initial_state(self.seed, self.stream_id)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def derive(self, sub_id: int) -> "RngStream":
        """Independent stream keyed by this stream's id and ``sub_id``."""
        return RngStream(self.seed, mix64(self.stream_id ^ mix64(sub_id + GOLDEN)))

    def next_u64(self) -> int:
        return int(xoshiro_next(self.state))

    def u64(self, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.uint64)
        _fill_u64(self.state, out)
        return out

    def uniform(self, size: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        out = np.empty(size, dtype=np.float64)
        _fill_uniform(self.state, out)
        if low != 0.0 or high != 1.0:
            out = low + (high - low) * out
        return out

    def normal(self, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.float64)
        _fill_normal(self.state, out)
        return out

    def below(self, n: int) -> int:
        if n < 1:
            raise ValueError("n must be >= 1")
        return int(xoshiro_below(self.state, n))

    def permutation(self, n: int) -> np.ndarray:
        return _permutation(self.state, n)

    def choice(self, n: int, m: int) -> np.ndarray:
        """``m`` distinct indices from ``range(n)``, in draw order."""
        if m > n:
            raise ValueError("cannot draw more items than the population holds")
        return self.permutation(n)[:m]
