"""Exact bounded integers from ``Generator.random()`` inside compiled loops.

numba's ``Generator.integers`` is several times slower than ``random()``.
A 53-bit uniform from ``random()`` is turned into an integer in ``[0, n)``
by rejection, which keeps the result exactly uniform for ``n <= 2**53``.
"""

from numba import njit

_TWO53 = 9007199254740992  # 2**53


@njit(cache=True)
def uniform_index(rng, n):
    limit = _TWO53 - (_TWO53 % n)
    while True:
        m = int(rng.random() * _TWO53)
        if m < limit:
            return m % n
