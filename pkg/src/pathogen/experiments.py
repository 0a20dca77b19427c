"""Monte Carlo harness: batched trials, survival estimates, sweeps, bisection.

All randomness is pre-assigned by index. Trial ``i`` of a batch seeded with
``s`` uses ``derive_trial_rng(s, i)``; sweep cell ``c`` and bisection probe
``c`` use the batch seed ``derive_seed(master_seed, c)``. Results therefore do
not depend on how trials are scheduled across workers.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .core import (
    GenealogyRecord,
    Outcome,
    RunOptions,
    SimParams,
    derive_seed,
    derive_trial_rng,
)
from .nonspatial import ns_run
from .spatial import sp_run

ANOMALY_FRACTION = 0.001


class RunAnomaly(RuntimeError):
    """Too many trials hit the event cap; the estimate is attached."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class BracketInvalid(ValueError):
    pass


class UndecidableProbe(RuntimeError):
    pass


def default_trials(params: SimParams) -> int:
    return 2000 if params.model.spatial else 10_000


def run_trial(params: SimParams, rng, options: Optional[RunOptions] = None) -> Outcome:
    if params.model.spatial:
        return sp_run(params, rng, options)
    return ns_run(params, rng, options)


def iter_outcomes(params: SimParams, trials: int, master_seed: int,
                  options: Optional[RunOptions] = None, start: int = 0) -> Iterator[Outcome]:
    for i in range(start, start + trials):
        yield run_trial(params, derive_trial_rng(master_seed, i), options)


def wilson_interval(successes: int, trials: int, confidence: float = 0.99) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("trials must be positive")
    if not (0 <= successes <= trials):
        raise ValueError(f"successes must lie in [0, {trials}], got {successes}")
    if not (0 < confidence < 1):
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    n = trials
    p = successes / n
    z2n = z * z / n
    center = (p + z2n / 2.0) / (1.0 + z2n)
    half = z / (1.0 + z2n) * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return lo, hi


@dataclass
class SurvivalEstimate:
    params: SimParams
    trials: int
    survivors: int
    estimate: float
    ci_low: float
    ci_high: float
    master_seed: int
    confidence: float = 0.99
    event_caps: int = 0
    wall_time: float = 0.0
    anomaly: Optional[str] = None

    @classmethod
    def from_counts(cls, params, trials, survivors, master_seed, confidence=0.99,
                    event_caps=0, wall_time=0.0):
        lo, hi = wilson_interval(survivors, trials, confidence)
        return cls(params, trials, survivors, survivors / trials, lo, hi, master_seed,
                   confidence, event_caps, wall_time)


def _count_chunk(args):
    params, seed, start, stop = args
    survivors = caps = 0
    for i in range(start, stop):
        out = run_trial(params, derive_trial_rng(seed, i))
        survivors += out.survived
        caps += out.event_cap_hit
    return survivors, caps


def count_survivors(params: SimParams, master_seed: int, start: int, stop: int,
                    parallelism: int = 1) -> tuple:
    """(survivors, event-cap hits) over trials ``start .. stop - 1``."""
    if parallelism <= 1 or stop - start < 2:
        return _count_chunk((params, master_seed, start, stop))
    n_chunks = min(stop - start, 4 * parallelism)
    edges = np.linspace(start, stop, n_chunks + 1).astype(int)
    jobs = [(params, master_seed, int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        parts = list(pool.map(_count_chunk, jobs))
    return sum(p[0] for p in parts), sum(p[1] for p in parts)


def estimate_survival(params: SimParams, trials: Optional[int] = None, master_seed: int = 0,
                      parallelism: int = 1, confidence: float = 0.99) -> SurvivalEstimate:
    """Fraction of trials ending in a survival proxy, with a Wilson interval.

    Raises ``RunAnomaly`` when more than 0.1% of trials hit the event cap.
    """
    trials = default_trials(params) if trials is None else trials
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    t0 = time.perf_counter()
    survivors, caps = count_survivors(params, master_seed, 0, trials, parallelism)
    est = SurvivalEstimate.from_counts(params, trials, survivors, master_seed, confidence,
                                       caps, time.perf_counter() - t0)
    _check_caps(est)
    return est


def _check_caps(est):
    if est.event_caps > ANOMALY_FRACTION * est.trials:
        est.anomaly = f"event cap hit in {est.event_caps} of {est.trials} trials"
        raise RunAnomaly(est.anomaly, est)


@dataclass
class SweepResult:
    grid: List[tuple]
    rows: List[SurvivalEstimate]


def sweep(base_params: SimParams, lambda_values: Sequence[float], r_values: Sequence[float],
          trials: Optional[int] = None, master_seed: int = 0, parallelism: int = 1,
          confidence: float = 0.99) -> SweepResult:
    """Estimates over the (lambda, r) grid, lambda outer and r inner.

    Cell ``c`` uses batch seed ``derive_seed(master_seed, c)``. A cell whose
    run is anomalous keeps its row with ``anomaly`` set; the sweep goes on.
    """
    if not lambda_values or not r_values:
        raise ValueError("sweep grids must be nonempty")
    grid = [(float(lam), float(r)) for lam in lambda_values for r in r_values]
    cells = [base_params.replace(lam=lam, r=r) for lam, r in grid]  # validates every cell first
    rows = []
    for c, params in enumerate(cells):
        seed = derive_seed(master_seed, c)
        try:
            rows.append(estimate_survival(params, trials, seed, parallelism, confidence))
        except RunAnomaly as exc:
            rows.append(exc.estimate)
        except (OverflowError, RuntimeError) as exc:
            n = default_trials(params) if trials is None else trials
            rows.append(SurvivalEstimate(params, n, 0, math.nan, math.nan, math.nan, seed,
                                         confidence, anomaly=f"{type(exc).__name__}: {exc}"))
    return SweepResult(grid, rows)


# ---------------------------------------------------------------------------
# bisection


@dataclass
class Probe:
    x: float
    estimate: SurvivalEstimate
    call: str  # "super", "sub"


@dataclass
class BisectionResult:
    axis: str
    fixed_value: float
    lo: float
    hi: float
    probes: List[Probe] = field(default_factory=list)
    decision_threshold: float = 0.01


def survivor_guard(trials: int) -> int:
    return max(3, math.ceil(0.005 * trials))


def classify(est: SurvivalEstimate, threshold: float = 0.01) -> Optional[str]:
    """``"super"``, ``"sub"`` or None when the interval straddles the threshold.

    Supercritical needs a lower confidence bound above zero and at least
    ``max(3, 0.5% of trials)`` survivors; subcritical needs the upper bound
    below ``threshold``.
    """
    if est.survivors >= survivor_guard(est.trials) and est.ci_low > 0:
        return "super"
    if est.ci_high < threshold:
        return "sub"
    return None


ProbeFn = Callable[[float, int, int, int], tuple]


def bisect_on(probe: ProbeFn, make_estimate: Callable[[float, int, int, int], SurvivalEstimate],
              lo: float, hi: float, resolution: float, trials: int, master_seed: int,
              threshold: float = 0.01) -> tuple:
    """Bisection on a Monte Carlo decision rule.

    ``probe(x, seed, start, stop)`` returns (survivors, event caps) over trials
    ``start .. stop - 1``; ``make_estimate(x, trials, survivors, seed)`` wraps
    them. An undecided probe is extended once to four times its trials.
    """
    if not (lo < hi):
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if not (resolution > 0):
        raise ValueError(f"resolution must be positive, got {resolution}")
    probes = []

    def run(x):
        seed = derive_seed(master_seed, len(probes))
        surv, caps = probe(x, seed, 0, trials)
        est = make_estimate(x, trials, surv, seed, caps)
        call = classify(est, threshold)
        if call is None:
            more, more_caps = probe(x, seed, trials, 4 * trials)
            est = make_estimate(x, 4 * trials, surv + more, seed, caps + more_caps)
            call = classify(est, threshold)
        _check_caps(est)
        if call is None:
            raise UndecidableProbe(
                f"probe at {x:.9g} undecided after {est.trials} trials "
                f"({est.survivors} survivors, CI [{est.ci_low:.3g}, {est.ci_high:.3g}])")
        probes.append(Probe(x, est, call))
        return call

    if run(lo) != "sub":
        raise BracketInvalid(f"lower end {lo:.9g} is not classified subcritical")
    if run(hi) != "super":
        raise BracketInvalid(f"upper end {hi:.9g} is not classified supercritical")
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if run(mid) == "super":
            hi = mid
        else:
            lo = mid
    return lo, hi, probes


def bisect_critical(params_template: SimParams, axis: str, lo: float, hi: float,
                    resolution: float, trials_per_probe: Optional[int] = None,
                    master_seed: int = 0, parallelism: int = 1, confidence: float = 0.99,
                    threshold: float = 0.01) -> BisectionResult:
    """Bracket the critical ``lambda`` or ``r`` of a model by bisection.

    The other parameter is held at its value in ``params_template``.
    """
    if axis not in ("lambda", "r"):
        raise ValueError(f"axis must be 'lambda' or 'r', got {axis!r}")
    key = "lam" if axis == "lambda" else "r"
    trials = default_trials(params_template) if trials_per_probe is None else trials_per_probe
    for x in (lo, hi):
        params_template.replace(**{key: x})

    def probe(x, seed, start, stop):
        return count_survivors(params_template.replace(**{key: x}), seed, start, stop, parallelism)

    def make(x, n, surv, seed, caps):
        return SurvivalEstimate.from_counts(params_template.replace(**{key: x}), n, surv, seed,
                                            confidence, caps)

    blo, bhi, probes = bisect_on(probe, make, lo, hi, resolution, trials, master_seed, threshold)
    fixed = params_template.r if axis == "lambda" else params_template.lam
    return BisectionResult(axis, fixed, blo, bhi, probes, threshold)


# ---------------------------------------------------------------------------
# diagnostics


def collect_genealogies(params: SimParams, master_seed: int, min_completed: int,
                        max_trials: int = 10**7) -> List[GenealogyRecord]:
    """Genealogies of successive trials until ``min_completed`` types have died."""
    opts = RunOptions(genealogy=True)
    records, done = [], 0
    for i in range(max_trials):
        rec = run_trial(params, derive_trial_rng(master_seed, i), opts).genealogy
        records.append(rec)
        done += int(rec.completed.sum())
        if done >= min_completed:
            return records
    raise RuntimeError(f"only {done} completed types after {max_trials} trials")


def type1_mutant_offspring(params: SimParams, trials: int, master_seed: int) -> np.ndarray:
    """Mutant-offspring counts of type 1 over independent type-1 lifetimes.

    Each trial stops when type 1 dies. Trials in which a stop bound ends the
    run first leave type 1 open and are left out.
    """
    opts = RunOptions(genealogy=True, stop_at_root_death=True)
    out = []
    for i in range(trials):
        rec = run_trial(params, derive_trial_rng(master_seed, i), opts).genealogy
        if rec.completed[0]:
            out.append(rec.mutant_offspring[0])
    return np.asarray(out, dtype=np.int64)


@dataclass
class GrowthSummary:
    t_probe: float
    threshold: float
    ratios: np.ndarray
    fraction: Optional[float]
    excluded: int = 0

    @property
    def runs(self) -> int:
        return len(self.ratios)


def value_at(series: np.ndarray, t: float, column: int = 1) -> Optional[float]:
    """Value of a sampled piecewise-constant series at time ``t`` (None past its end)."""
    times = series[:, 0]
    if len(times) == 0 or t > times[-1]:
        return None
    i = int(np.searchsorted(times, t, side="right")) - 1
    return float(series[i, column])


def linear_growth_diagnostic(outcomes: Iterable[Outcome], t_probe: float, lam: float,
                             threshold: Optional[float] = None) -> GrowthSummary:
    """Distribution of N(t_probe)/t_probe over surviving runs.

    ``threshold`` defaults to gamma/2 with gamma = min(1, lam/6). Survivors
    whose run ended before ``t_probe`` (population cap) are counted in
    ``excluded``.
    """
    if not (t_probe > 0):
        raise ValueError(f"t_probe must be positive, got {t_probe!r}")
    if threshold is None:
        threshold = min(1.0, lam / 6.0) / 2.0
    ratios, excluded = [], 0
    for out in outcomes:
        if not out.survived:
            continue
        if out.series is None:
            raise ValueError("linear growth diagnostic needs runs recorded with a time series")
        n = value_at(out.series, t_probe)
        if n is None:
            excluded += 1
            continue
        ratios.append(n / t_probe)
    ratios = np.asarray(ratios)
    fraction = float(np.mean(ratios >= threshold)) if len(ratios) else None
    return GrowthSummary(t_probe, threshold, ratios, fraction, excluded)


@dataclass
class TailFit:
    a: np.ndarray
    survival: np.ndarray
    slope: float
    intercept: float


def type_size_tail(records: Iterable[GenealogyRecord]) -> TailFit:
    """Empirical P(max type size > a) and a least-squares line through its log."""
    sizes = np.concatenate([rec.max_size for rec in records])
    if len(sizes) == 0:
        raise ValueError("no type records")
    top = int(sizes.max())
    a = np.arange(0, top)
    counts = np.bincount(sizes, minlength=top + 1)
    # P(max > a) = (# sizes > a) / total
    greater = counts[::-1].cumsum()[::-1]
    surv = greater[1:top + 1] / len(sizes)
    if len(a) < 2:
        return TailFit(a, surv, math.nan, math.nan)
    slope, intercept = np.polyfit(a, np.log(surv), 1)
    return TailFit(a, surv, float(slope), float(intercept))
