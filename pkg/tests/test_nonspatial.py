import math

import numpy as np
import pytest
from scipy import stats

from pathogen.core import RunOptions, SimParams, StopRule, Verdict, derive_trial_rng
from pathogen.nonspatial import (
    Birth,
    NonSpatialState,
    TypeDeath,
    ns_init,
    ns_offspring_histogram,
    ns_run,
    ns_step,
    ns_total_rates,
)


def params(model, lam=1.0, r=0.5, **stop):
    return SimParams(model, lam, r, stop=StopRule(**stop) if stop else StopRule())


def test_init():
    for model in ("m1", "m3"):
        s = ns_init(params(model, 2.0, 0.75))
        assert (s.total, s.type_count, s.counts, s.time) == (1, 1, {1: 1}, 0.0)
    with pytest.raises(ValueError):
        ns_init(SimParams("s1", 1.0, 0.5, dim=1))


@pytest.mark.parametrize("model,death", [("m1", 1.0), ("m2", 2.0), ("m3", 3.0)])
def test_total_rates(model, death):
    p = params(model, 2.0)
    s = NonSpatialState.from_counts(p, {1: 2, 4: 1})
    assert ns_total_rates(s, p) == (6.0, death)


def test_extinct_state_rejected():
    p = params("m1")
    s = ns_init(p)
    rng = derive_trial_rng(0, 0)
    while s.total:
        ns_step(s, p, rng)
    with pytest.raises(ValueError):
        ns_total_rates(s, p)
    with pytest.raises(ValueError):
        ns_step(s, p, rng)


def test_from_counts_validation():
    p = params("m2")
    with pytest.raises(ValueError):
        NonSpatialState.from_counts(p, {1: 0})
    with pytest.raises(ValueError):
        NonSpatialState.from_counts(p, {0: 2})
    with pytest.raises(ValueError):
        NonSpatialState.from_counts(p, {3: 1}, next_type_id=3)


@pytest.mark.parametrize("model", ["m1", "m2", "m3"])
@pytest.mark.parametrize("r", [0.0, 0.3, 1.0])
def test_step_invariants(model, r):
    p = params(model, 1.8, r)
    rng = derive_trial_rng(5, 0)
    s = ns_init(p, genealogy=True)
    issued = {1}
    for _ in range(3000):
        if s.total == 0 or s.total > 400:
            break
        before = s.counts
        nxt = s.next_type_id
        t0 = s.time
        ev = ns_step(s, p, rng)
        after = s.counts
        assert s.time > t0
        assert s.total == sum(after.values())
        assert s.type_count == len(after)
        assert all(c > 0 for c in after.values())
        if isinstance(ev, Birth):
            assert s.total == sum(before.values()) + 1
            assert ev.parent_type in before
            if ev.is_mutant:
                assert ev.child_type == nxt and ev.child_type not in issued
                assert s.next_type_id == nxt + 1
                issued.add(ev.child_type)
            else:
                assert ev.child_type == ev.parent_type
            if r == 0.0:
                assert not ev.is_mutant
            if r == 1.0:
                assert ev.is_mutant
        else:
            assert isinstance(ev, TypeDeath)
            assert ev.victims == before[ev.type_id]
            assert ev.type_id not in after
            assert s.total == sum(before.values()) - ev.victims


def _clone_steps(state, p, n, seed):
    out = []
    for i in range(n):
        c = state.copy()
        t0 = c.time
        out.append((ns_step(c, p, derive_trial_rng(seed, i)), c.time - t0))
    return out


COUNTS = {1: 1, 2: 2, 3: 3, 5: 6}


@pytest.mark.parametrize("model", ["m1", "m2", "m3"])
def test_death_selection_chi_square(model):
    # tiny lambda: nearly every step is a death, at a frozen configuration
    p = params(model, 1e-3, 0.5)
    s = NonSpatialState.from_counts(p, COUNTS)
    deaths = [ev.type_id for ev, _ in _clone_steps(s, p, 12_000, 17) if isinstance(ev, TypeDeath)]
    assert len(deaths) > 10_000
    ids = sorted(COUNTS)
    obs = np.array([deaths.count(t) for t in ids])
    w = np.ones(len(ids)) if model != "m3" else np.array([COUNTS[t] for t in ids], float)
    exp = len(deaths) * w / w.sum()
    assert stats.chisquare(obs, exp).pvalue > 0.001


def test_birth_parent_proportional_to_counts():
    p = params("m1", 50.0, 0.0)
    s = NonSpatialState.from_counts(p, COUNTS)
    parents = [ev.parent_type for ev, _ in _clone_steps(s, p, 12_000, 23) if isinstance(ev, Birth)]
    ids = sorted(COUNTS)
    obs = np.array([parents.count(t) for t in ids])
    w = np.array([COUNTS[t] for t in ids], float)
    assert stats.chisquare(obs, len(parents) * w / w.sum()).pvalue > 0.001


@pytest.mark.parametrize("model", ["m1", "m2", "m3"])
def test_holding_time_mean(model):
    p = params(model, 0.7, 0.5)
    s = NonSpatialState.from_counts(p, COUNTS)
    birth, death = ns_total_rates(s, p)
    waits = np.array([dt for _, dt in _clone_steps(s, p, 10_000, 29)])
    mean = 1.0 / (birth + death)
    assert abs(waits.mean() - mean) < 3 * mean / math.sqrt(len(waits))
    births = sum(isinstance(ev, Birth) for ev, _ in _clone_steps(s, p, 10_000, 31))
    q = birth / (birth + death)
    assert abs(births / 10_000 - q) < 4 * math.sqrt(q * (1 - q) / 10_000)


@pytest.mark.parametrize("n", [1, 4, 12])
def test_model3_type_death_before_mutant_birth(n):
    lam, r = 2.0, 0.4
    p = params("m3", lam, r)
    trials, first_death = 6000, 0
    base = NonSpatialState.from_counts(p, {1: n})
    for i in range(trials):
        s = base.copy()
        rng = derive_trial_rng(37 + n, i)
        while True:
            ev = ns_step(s, p, rng)
            if isinstance(ev, TypeDeath):
                first_death += 1
                break
            if ev.is_mutant:
                break
    q = 1.0 / (1.0 + r * lam)
    assert abs(first_death / trials - q) < 4 * math.sqrt(q * (1 - q) / trials)


def test_model2_two_types_symmetric():
    p = params("m2", 1e-3, 0.5)
    s = NonSpatialState.from_counts(p, {1: 1, 2: 7})
    deaths = [ev.type_id for ev, _ in _clone_steps(s, p, 8000, 41) if isinstance(ev, TypeDeath)]
    frac = deaths.count(1) / len(deaths)
    assert abs(frac - 0.5) < 4 * math.sqrt(0.25 / len(deaths))


def test_model1_single_type_death_empties():
    p = params("m1", 1e-6, 1.0)
    s = ns_init(p)
    ev = ns_step(s, p, derive_trial_rng(0, 3))
    assert isinstance(ev, TypeDeath) and ev.victims == 1 and s.total == 0


def test_subcritical_runs_die():
    for model, lam, r in [("m3", 2.0, 0.4), ("m2", 0.5, 0.5)]:
        p = params(model, lam, r)
        for i in range(200):
            assert ns_run(p, derive_trial_rng(2, i)).verdict is Verdict.EXTINCT


def test_model1_mixture_of_outcomes():
    p = params("m1", 1.0, 0.5)
    verdicts = {ns_run(p, derive_trial_rng(4, i)).verdict for i in range(200)}
    assert verdicts == {Verdict.EXTINCT, Verdict.SURVIVED_PROXY}


def test_population_cap_stops_run():
    p = params("m1", 3.0, 0.5, max_population=500)
    outs = [ns_run(p, derive_trial_rng(6, i)) for i in range(50)]
    capped = [o for o in outs if o.survived]
    assert capped and all(o.final_population == 500 and o.reason.value == "population_cap"
                          for o in capped)


def test_time_horizon_stops_run():
    p = params("m2", 0.95, 0.5, max_time=2.0, max_population=10**6)
    for i in range(50):
        o = ns_run(p, derive_trial_rng(8, i), RunOptions(series=True, stride=0.5))
        if o.survived:
            assert o.time == 2.0 and o.reason.value == "time_horizon"
            assert o.series[-1, 0] == 2.0


def test_series_samples_are_grid_states():
    p = params("m2", 1.3, 0.4, max_time=20.0)
    o = ns_run(p, derive_trial_rng(9, 1), RunOptions(series=True, stride=0.5))
    t = o.series[:, 0]
    grid = t[:-1] if t[-1] % 0.5 else t
    assert np.allclose(grid, 0.5 * np.arange(len(grid)))
    assert o.series[0, 1] == 1 and o.series[0, 2] == 1
    assert np.all(o.series[:, 2] <= o.series[:, 1])


def _check_tree(rec):
    ids = list(rec.type_id)
    assert ids == sorted(ids) and ids[0] == 1
    assert rec.parent_type[0] == 0
    known = set()
    for i, tid in enumerate(ids):
        if i:
            assert rec.parent_type[i] in known
            j = ids.index(rec.parent_type[i])
            assert rec.birth_time[i] >= rec.birth_time[j]
        known.add(tid)
    kids = np.bincount(rec.parent_type[1:], minlength=max(ids) + 1)
    for i, tid in enumerate(ids):
        assert rec.mutant_offspring[i] == kids[tid]
        if not math.isnan(rec.death_time[i]):
            assert rec.death_time[i] > rec.birth_time[i]
    assert np.all(rec.max_size >= 1)


@pytest.mark.parametrize("model", ["m1", "m2", "m3"])
def test_genealogy_is_tree(model):
    p = params(model, 1.6, 0.5, max_population=300)
    for i in range(40):
        o = ns_run(p, derive_trial_rng(12, i), RunOptions(genealogy=True))
        rec = o.genealogy
        _check_tree(rec)
        assert int(np.isnan(rec.death_time).sum()) == o.final_type_count


def test_histogram_r_zero():
    p = params("m3", 1.5, 0.0)
    recs = [ns_run(p, derive_trial_rng(13, i), RunOptions(genealogy=True)).genealogy
            for i in range(100)]
    assert ns_offspring_histogram(recs) == {0: 1.0}


def test_histogram_normalised():
    p = params("m3", 1.0, 1.0)
    recs = [ns_run(p, derive_trial_rng(14, i), RunOptions(genealogy=True)).genealogy
            for i in range(300)]
    h = ns_offspring_histogram(recs)
    assert math.isclose(sum(h.values()), 1.0)
    assert h[0] == pytest.approx(0.5, abs=0.05)


def test_stop_at_root_death():
    p = params("m2", 1.5, 0.5, max_population=10**7)
    for i in range(100):
        o = ns_run(p, derive_trial_rng(15, i), RunOptions(genealogy=True, stop_at_root_death=True))
        rec = o.genealogy
        assert not math.isnan(rec.death_time[0])
        assert o.time == rec.death_time[0]
