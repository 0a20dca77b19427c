"""Sparse occupancy of Z^d: packed site keys and an open-addressing table.

A site ``x`` in Z^d packs into one int64. In d = 1 the key is ``x`` itself;
for d >= 2 each coordinate gets ``63 // d`` bits with a fixed offset, so
moving one step along axis ``i`` adds or subtracts ``axis_stride(d, i)``.

The table maps key -> slot with linear probing and backward-shift deletion
(no tombstones). Capacity is a power of two kept at least twice the number
of stored keys by the caller.
"""

import numpy as np
from numba import njit

EMPTY = np.int64(-(2**63))
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def bits_per_axis(d: int) -> int:
    return 63 // d


def coord_limit(d: int) -> int:
    """Largest |coordinate| a packed key may hold, keeping neighbors packable."""
    if d == 1:
        return 2**62
    return (1 << (bits_per_axis(d) - 1)) - 2


def axis_strides(d: int) -> np.ndarray:
    if d == 1:
        return np.ones(1, dtype=np.int64)
    b = bits_per_axis(d)
    return np.array([1 << (b * i) for i in range(d)], dtype=np.int64)


def pack(site, d: int) -> int:
    site = tuple(int(c) for c in site)
    if len(site) != d:
        raise ValueError(f"site {site} does not have dimension {d}")
    lim = coord_limit(d)
    if any(abs(c) > lim for c in site):
        raise OverflowError(f"site {site} outside the packable range |x| <= {lim}")
    if d == 1:
        return site[0]
    b = bits_per_axis(d)
    off = 1 << (b - 1)
    key = 0
    for i, c in enumerate(site):
        key |= (c + off) << (b * i)
    return key


def unpack(key: int, d: int) -> tuple:
    key = int(key)
    if d == 1:
        return (key,)
    b = bits_per_axis(d)
    off = 1 << (b - 1)
    mask = (1 << b) - 1
    return tuple(((key >> (b * i)) & mask) - off for i in range(d))


@njit(cache=True)
def key_coord(key, d, axis):
    if d == 1:
        return key
    b = 63 // d
    off = np.int64(1) << (b - 1)
    return ((key >> (b * axis)) & ((np.int64(1) << b) - 1)) - off


@njit(cache=True)
def _home(key, mask):
    h = np.uint64(key) * _GOLDEN
    return np.int64(h >> np.uint64(32)) & mask


@njit(cache=True)
def ht_get(keys, vals, key):
    mask = keys.shape[0] - 1
    i = _home(key, mask)
    while True:
        k = keys[i]
        if k == key:
            return vals[i]
        if k == EMPTY:
            return -1
        i = (i + 1) & mask


@njit(cache=True)
def ht_put(keys, vals, key, val):
    mask = keys.shape[0] - 1
    i = _home(key, mask)
    while True:
        k = keys[i]
        if k == EMPTY or k == key:
            keys[i] = key
            vals[i] = val
            return
        i = (i + 1) & mask


@njit(cache=True)
def ht_del(keys, vals, key):
    mask = keys.shape[0] - 1
    i = _home(key, mask)
    while True:
        k = keys[i]
        if k == EMPTY:
            return False
        if k == key:
            break
        i = (i + 1) & mask
    # backward-shift the rest of the probe run into the hole
    j = i
    while True:
        j = (j + 1) & mask
        k = keys[j]
        if k == EMPTY:
            break
        h = _home(k, mask)
        # move k back unless its home lies cyclically in (i, j]
        if (j > i and (h <= i or h > j)) or (j < i and (h <= i and h > j)):
            keys[i] = k
            vals[i] = vals[j]
            i = j
    keys[i] = EMPTY
    vals[i] = -1
    return True


def new_table(capacity: int):
    keys = np.full(capacity, EMPTY, dtype=np.int64)
    vals = np.full(capacity, -1, dtype=np.int64)
    return keys, vals
