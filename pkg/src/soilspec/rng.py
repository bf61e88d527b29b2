"""Seeded 64-bit random streams.

Every random decision in the package is driven by an unsigned 64-bit seed.
Named child streams are derived with :func:`derive_seed` so that e.g. the
train/test split, the model and each tree of an ensemble draw from
independent, reproducible sequences regardless of execution order.
"""

import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# documented stream names
STREAM_SPLIT = "split"
STREAM_MODEL = "model"
STREAM_CV = "cv"
STREAM_SYNTH = "synth"


@numba.njit(cache=True)
def splitmix64_next(state):
    """Advance ``state`` (a 1-element uint64 array) and return the next word."""
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def next_float(state):
    """Uniform double in [0, 1) with 53 random bits."""
    return (splitmix64_next(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def next_below(state, bound):
    """Unbiased integer in [0, bound) by rejection sampling."""
    b = np.uint64(bound)
    limit = np.uint64(0xFFFFFFFFFFFFFFFF) - (np.uint64(0xFFFFFFFFFFFFFFFF) % b)
    while True:
        x = splitmix64_next(state)
        if x < limit:
            return np.int64(x % b)


@numba.njit(cache=True)
def _fisher_yates(n, state):
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = next_below(state, i + 1)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return perm


def make_state(seed):
    return np.array([int(seed) & _MASK64], dtype=np.uint64)


def permutation(n, seed):
    """Fisher-Yates permutation of ``range(n)`` driven by a splitmix64 stream."""
    return _fisher_yates(int(n), make_state(seed))


def _mix(z):
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a(text):
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_seed(seed, *labels):
    """Derive a child seed from ``seed`` and a path of stream labels.

    >>> derive_seed(1, "split") == derive_seed(1, "split")
    True
    """
    h = _mix(int(seed) & _MASK64)
    for label in labels:
        h = _mix(h ^ _fnv1a(str(label)))
    return h


def numpy_rng(seed, *labels):
    """A numpy Generator seeded from a derived child stream."""
    return np.random.default_rng(derive_seed(seed, *labels))
