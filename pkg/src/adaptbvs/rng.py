"""Counter-based random streams.

Every stream is a pair ``(key, counter)`` held in a ``uint64`` array of
length 2.  Draw ``k`` of a stream is the SplitMix64 finaliser applied to
``key + k * 0x9E3779B97F4A7C15``, so a stream is a pure function of its key
and position.  Independent streams (one per chain, one for data) come from
hashing ``(seed, stream_id)`` into a key.

Uniforms use the top 53 bits, shifted by half an ulp, so they lie in the
open interval (0, 1).  Normals use the Marsaglia polar method; the second
variate of each accepted pair is discarded so a stream never carries hidden
state beyond its counter.
"""

import os

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO53_INV = 1.0 / 9007199254740992.0

DATA_STREAM = 0
CHAIN_STREAM_BASE = 1


@nb.njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, nogil=True)
def next_u64(state):
    state[1] += np.uint64(1)
    return mix64(state[0] + state[1] * _GOLDEN)


@nb.njit(cache=True, nogil=True)
def uniform(state):
    return (np.float64(next_u64(state) >> np.uint64(11)) + 0.5) * _TWO53_INV


@nb.njit(cache=True, nogil=True)
def randbelow(state, k):
    """Uniform integer in ``[0, k)``."""
    r = np.int64(uniform(state) * k)
    if r >= k:
        r = k - 1
    return r


@nb.njit(cache=True, nogil=True)
def normal(state):
    while True:
        u = 2.0 * uniform(state) - 1.0
        v = 2.0 * uniform(state) - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            return u * np.sqrt(-2.0 * np.log(s) / s)


@nb.njit(cache=True, nogil=True)
def fill_normal(state, out):
    flat = out.reshape(-1)
    for i in range(flat.size):
        flat[i] = normal(state)


@nb.njit(cache=True, nogil=True)
def fill_uniform(state, out):
    flat = out.reshape(-1)
    for i in range(flat.size):
        flat[i] = uniform(state)


def stream_key(seed, stream_id):
    m = (1 << 64) - 1
    seed = int(seed) & m
    a = int(mix64(np.uint64(seed)))
    b = int(mix64(np.uint64((int(stream_id) * 0x632BE59BD9B4E019 + 1) & m)))
    return int(mix64(np.uint64(a ^ b)))


def entropy_seed():
    return int.from_bytes(os.urandom(8), "little") & ((1 << 63) - 1)


class CounterRNG:
    """A single counter-based stream.

    ``state`` is the ``uint64[2]`` array the compiled kernels consume
    directly, so a ``CounterRNG`` can be handed to jitted code via
    ``rng.state`` and its position advances in place.
    """

    def __init__(self, seed, stream_id=DATA_STREAM):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.state = np.array([stream_key(seed, stream_id), 0], dtype=np.uint64)

    @property
    def position(self):
        return int(self.state[1])

    def uniform(self, size=None):
        if size is None:
            return uniform(self.state)
        out = np.empty(size)
        fill_uniform(self.state, out)
        return out

    def normal(self, size=None):
        if size is None:
            return normal(self.state)
        out = np.empty(size)
        fill_normal(self.state, out)
        return out

    def integers(self, k):
        return int(randbelow(self.state, k))

    def spawn(self, stream_id):
        return CounterRNG(self.seed, stream_id)


def chain_streams(seed, n):
    """Key/counter states for ``n`` chain streams, shape ``(n, 2)``."""
    out = np.zeros((n, 2), dtype=np.uint64)
    for c in range(n):
        out[c, 0] = stream_key(seed, CHAIN_STREAM_BASE + c)
    return out
