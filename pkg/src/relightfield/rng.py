"""Counter-based random numbers for the renderer.

Every stochastic decision in the path tracer draws from a stateless stream
keyed by (seed, pixel, sample, draw counter). Values therefore do not depend
on scheduling or thread count, and a path can be replayed exactly, which the
frozen-sample gradient estimator relies on.

The mixing function is the splitmix64 finalizer; all arithmetic wraps
modulo 2**64.
"""

from __future__ import annotations

import numpy as np

from .accel import njit

U64 = np.uint64

_MUL1 = U64(0xBF58476D1CE4E5B9)
_MUL2 = U64(0x94D049BB133111EB)
_GOLDEN = U64(0x9E3779B97F4A7C15)
_STREAM_SALT = U64(0x8BADF00D5EEDFACE)
_KEY2 = U64(0xD1B54A32D192ED03)
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def mix64(x):
    x = (x ^ (x >> U64(30))) * _MUL1
    x = (x ^ (x >> U64(27))) * _MUL2
    return x ^ (x >> U64(31))


@njit(cache=True)
def stream64(seed, a, b):
    """State of the stream identified by (seed, a, b)."""
    h = mix64(U64(seed) ^ _STREAM_SALT)
    h = mix64(h + U64(a) * _GOLDEN)
    h = mix64(h + U64(b) * _KEY2)
    return h


@njit(cache=True)
def rand_u01(state, ctr):
    """Draw number ``ctr`` of the stream, uniform in [0, 1)."""
    x = mix64(state + U64(ctr) * _GOLDEN)
    return float(x >> U64(11)) * _INV_2_53
