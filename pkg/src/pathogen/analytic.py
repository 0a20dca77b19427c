"""Closed forms for the non-spatial models and a generic Galton-Watson solver.

For Models 2 and 3 the genealogy of types is a Galton-Watson tree, so the
pathogens survive with positive probability exactly when the mean number of
mutant types founded by a type exceeds one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

UNKNOWN_POSITIVE = "unknown-positive"
ZERO = "zero"


def _check_rates(lam, r):
    if not (lam > 0) or math.isinf(lam):
        raise ValueError(f"lambda must be a positive finite real, got {lam!r}")
    if not (0.0 <= r <= 1.0):
        raise ValueError(f"r must lie in [0, 1], got {r!r}")


@dataclass(frozen=True)
class PhaseVerdict:
    survives: bool
    survival_probability: Union[float, str]

    def __post_init__(self):
        p = self.survival_probability
        positive = p == UNKNOWN_POSITIVE or (not isinstance(p, str) and p > 0)
        if self.survives != positive:
            raise ValueError(f"inconsistent verdict: survives={self.survives}, probability={p!r}")


class OffspringPmf:
    """Law of a nonnegative integer offspring count.

    Either a finite list of probabilities or a callable ``k -> p_k`` that is
    extended lazily. ``mean`` may be ``math.inf``; if omitted it is computed
    from the (truncated) support.
    """

    def __init__(self, probabilities: Union[Sequence[float], Callable[[int], float]],
                 mean: Optional[float] = None):
        self._fn = probabilities if callable(probabilities) else None
        self._finite = None if callable(probabilities) else [float(p) for p in probabilities]
        if self._finite is not None:
            if any(not (0.0 <= p <= 1.0) for p in self._finite):
                raise ValueError("probabilities must lie in [0, 1]")
        self._mean = mean

    def __call__(self, k: int) -> float:
        if k < 0:
            return 0.0
        if self._finite is not None:
            return self._finite[k] if k < len(self._finite) else 0.0
        return float(self._fn(k))

    def support(self, tail: float, max_terms: int = 10**7) -> list:
        """Probabilities p_0..p_K with the omitted tail mass below ``tail``."""
        if self._finite is not None:
            return list(self._finite)
        probs, total = [], 0.0
        while 1.0 - total >= tail:
            if len(probs) >= max_terms:
                raise ValueError(f"tail mass still {1.0 - total:.3g} after {max_terms} terms")
            p = self(len(probs))
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"p_{len(probs)} = {p} is not a probability")
            probs.append(p)
            total += p
        return probs

    @property
    def mean(self) -> float:
        if self._mean is not None:
            return self._mean
        probs = self.support(1e-15)
        return math.fsum(k * p for k, p in enumerate(probs))


def model3_offspring_pmf(k: int, lam: float, r: float) -> float:
    """P(a Model 3 type founds exactly k mutant types) = (r lam)^k / (1 + r lam)^(k+1)."""
    if k < 0 or int(k) != k:
        raise ValueError(f"k must be a nonnegative integer, got {k!r}")
    _check_rates(lam, r)
    m = r * lam
    return (m / (1.0 + m)) ** k / (1.0 + m)


def model3_pmf(lam: float, r: float) -> OffspringPmf:
    _check_rates(lam, r)
    return OffspringPmf(lambda k: model3_offspring_pmf(k, lam, r), mean=r * lam)


def model3_phase(lam: float, r: float) -> PhaseVerdict:
    _check_rates(lam, r)
    m = r * lam
    if m > 1.0:
        return PhaseVerdict(True, 1.0 - 1.0 / m)
    return PhaseVerdict(False, 0.0)


def model2_mean_offspring(lam: float, r: float) -> float:
    """Mean number of mutant types founded by a Model 2 type; ``math.inf`` when divergent."""
    _check_rates(lam, r)
    if r == 0.0:
        return 0.0
    growth = lam * (1.0 - r)
    if growth >= 1.0:
        return math.inf
    return r * lam / (1.0 - growth)


def model2_phase(lam: float, r: float) -> PhaseVerdict:
    _check_rates(lam, r)
    if r == 0.0:
        raise ValueError("Model 2 phase needs r > 0 (with r = 0 no mutant type ever appears)")
    if lam > 1.0:
        return PhaseVerdict(True, UNKNOWN_POSITIVE)
    return PhaseVerdict(False, ZERO)


def bd_chain_survival(p: float) -> float:
    """P(a +1/-1 walk with up-probability p never drops below its start) = (2p - 1)/p."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    if p <= 0.5:
        return 0.0
    return (2.0 * p - 1.0) / p


def model1_chain_bound(lam: float, r: float, n: int) -> float:
    """Comparison-chain survival bound once ``n`` types are alive, for ``n lam r > 1``."""
    _check_rates(lam, r)
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    rate = n * lam * r
    return bd_chain_survival(rate / (1.0 + rate))


def gw_extinction(pmf: OffspringPmf, tol: float = 1e-12, max_iter: int = 10**6) -> float:
    """Minimal fixed point in [0, 1] of the offspring generating function.

    Monotone iteration ``s <- f(s)`` from ``s = 0``. The support is truncated
    once the tail mass drops below ``tol / 10``. Means at most one (with
    ``p_1 < 1``) give certain extinction directly, since iteration converges
    only sublinearly there.
    """
    if not (tol > 0):
        raise ValueError(f"tol must be positive, got {tol!r}")
    probs = pmf.support(tol / 10.0)
    mass = math.fsum(probs)
    if abs(1.0 - mass) > tol:
        raise ValueError(f"pmf mass {mass!r} differs from 1 by more than {tol}")
    mean = pmf.mean
    if mean <= 1.0 and (len(probs) < 2 or probs[1] < 1.0):
        return 1.0
    if len(probs) > 1 and probs[1] == 1.0:
        return 0.0

    def f(s):
        acc = 0.0
        for p in reversed(probs):  # Horner
            acc = acc * s + p
        return acc

    s, prev_step = 0.0, None
    for _ in range(max_iter):
        nxt = f(s)
        step = nxt - s
        s = nxt
        if prev_step is not None and prev_step > 0:
            rho = step / prev_step
            # remaining error of a geometric tail is step * rho / (1 - rho)
            if 0 <= rho < 1 and step * rho / (1.0 - rho) < tol and step < tol:
                break
        elif step < tol:
            break
        prev_step = step
    else:
        raise RuntimeError(f"no convergence within {max_iter} iterations")
    if abs(f(s) - s) > 10 * tol:
        raise RuntimeError(f"fixed-point residual {abs(f(s) - s):.3g} exceeds {10 * tol:.3g}")
    return min(s, 1.0)
