"""Exact event-driven simulation of the non-spatial Models 1-3.

Every pathogen gives birth at rate ``lam``; a newborn founds a fresh type
with probability ``r``. Deaths kill a whole type at once:

* M1: death events at total rate 1, victim type uniform over live types;
* M2: each type dies at rate 1, so the next type death happens at total rate
  K and, by exchangeability of i.i.d. exponential clocks, hits a uniform live
  type;
* M3: each pathogen carries a rate-1 clock, so total rate N and the victim
  type is chosen proportionally to its size.

The engine is a direct (Gillespie) method: one exponential holding time at
the aggregate rate, then a categorical choice. Draw order per event is fixed:
holding time, birth-vs-death uniform, selection index (one or more uniforms,
see ``_rand``), and for births with
``0 < r < 1`` a mutation uniform.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np
from numba import njit

from . import _status as st
from ._rand import uniform_index
from .core import (
    GenealogyRecord,
    Outcome,
    RunOptions,
    SimParams,
    StopReason,
    Verdict,
)

# integer scalars
(I_N, I_K, I_NEXT, I_EVENTS, I_TFREE, I_PFREE, I_NSAMP, I_PENDING, I_SAMPK,
 I_ROOT) = range(10)
# float scalars
F_TIME, F_PEND = range(2)


@dataclass(frozen=True)
class Birth:
    at: float
    parent_type: int
    child_type: int
    is_mutant: bool


@dataclass(frozen=True)
class TypeDeath:
    at: float
    type_id: int
    victims: int


@njit(cache=True)
def _advance(rule, lam, r, max_pop, max_time, max_events, max_steps, stop_root,
             iv, fv, t_id, t_count, t_head, t_live, t_pos, t_free,
             p_type, p_next, p_pos, p_list, p_free,
             gen_on, g_parent, g_birth, g_death, g_kids, g_max,
             stride, s_t, s_n, s_k, ev, rng):
    steps = 0
    while True:
        if iv[I_PENDING] == 0:
            if iv[I_N] == 0:
                return st.EXTINCT
            if stop_root and iv[I_ROOT] == 0:
                return st.ROOT_DEAD
            if iv[I_N] >= max_pop:
                return st.POP_CAP
            if iv[I_EVENTS] >= max_events:
                return st.EVENT_CAP
            if steps >= max_steps:
                return st.STEPPED
            if iv[I_TFREE] == 0 or iv[I_PFREE] == 0:
                return st.GROW_SLOTS
            if gen_on and iv[I_NEXT] >= g_parent.shape[0]:
                return st.GROW_GENEALOGY
            n = iv[I_N]
            k = iv[I_K]
            death = 1.0 if rule == 1 else (float(k) if rule == 2 else float(n))
            fv[F_PEND] = fv[F_TIME] + rng.standard_exponential() / (lam * n + death)
            iv[I_PENDING] = 1

        tp = fv[F_PEND]
        if stride > 0.0:
            horizon = min(tp, max_time)
            while iv[I_SAMPK] * stride <= horizon:
                m = iv[I_NSAMP]
                if m >= s_t.shape[0]:
                    return st.GROW_SERIES
                s_t[m] = iv[I_SAMPK] * stride
                s_n[m] = iv[I_N]
                s_k[m] = iv[I_K]
                iv[I_NSAMP] = m + 1
                iv[I_SAMPK] += 1
        if tp > max_time:
            fv[F_TIME] = max_time
            iv[I_PENDING] = 0
            return st.TIME_CAP

        iv[I_PENDING] = 0
        fv[F_TIME] = tp
        n = iv[I_N]
        k = iv[I_K]
        birth = lam * n
        death = 1.0 if rule == 1 else (float(k) if rule == 2 else float(n))
        if rng.random() * (birth + death) < birth:
            # a uniform pathogen is a count-weighted type
            j = p_type[p_list[uniform_index(rng, n)]]
            ptype = t_id[j]
            if r >= 1.0:
                mutant = True
            elif r <= 0.0:
                mutant = False
            else:
                mutant = rng.random() < r
            if mutant:
                nf = iv[I_TFREE] - 1
                j = t_free[nf]
                iv[I_TFREE] = nf
                cid = iv[I_NEXT]
                iv[I_NEXT] = cid + 1
                t_id[j] = cid
                t_count[j] = 0
                t_head[j] = -1
                t_live[k] = j
                t_pos[j] = k
                iv[I_K] = k + 1
                if gen_on:
                    g_parent[cid] = ptype
                    g_birth[cid] = tp
                    g_death[cid] = np.nan
                    g_kids[cid] = 0
                    g_max[cid] = 0
                    g_kids[ptype] += 1
            else:
                cid = ptype
            nf = iv[I_PFREE] - 1
            q = p_free[nf]
            iv[I_PFREE] = nf
            p_type[q] = j
            p_next[q] = t_head[j]
            t_head[j] = q
            p_pos[q] = n
            p_list[n] = q
            t_count[j] += 1
            if gen_on and t_count[j] > g_max[cid]:
                g_max[cid] = t_count[j]
            iv[I_N] = n + 1
            ev[0] = st.EV_BIRTH
            ev[1] = ptype
            ev[2] = cid
            ev[3] = 1 if mutant else 0
        else:
            if rule == 3:
                j = p_type[p_list[uniform_index(rng, n)]]
            else:
                j = t_live[uniform_index(rng, k)]
            victims = t_count[j]
            tid = t_id[j]
            q = t_head[j]
            nf = iv[I_PFREE]
            while q >= 0:
                pos = p_pos[q]
                last = p_list[n - 1]
                p_list[pos] = last
                p_pos[last] = pos
                n -= 1
                p_free[nf] = q
                nf += 1
                q = p_next[q]
            iv[I_PFREE] = nf
            iv[I_N] = n
            t_count[j] = 0
            t_head[j] = -1
            pos = t_pos[j]
            last = t_live[k - 1]
            t_live[pos] = last
            t_pos[last] = pos
            iv[I_K] = k - 1
            t_free[iv[I_TFREE]] = j
            iv[I_TFREE] += 1
            if gen_on:
                g_death[tid] = tp
            if tid == 1:
                iv[I_ROOT] = 0
            ev[0] = st.EV_DEATH
            ev[1] = tid
            ev[2] = victims
            ev[3] = 0
        iv[I_EVENTS] += 1
        steps += 1


def _stack(cap):
    # free-slot stack; popping from the end hands out slot 0 first
    return np.arange(cap - 1, -1, -1, dtype=np.int64)


def _extend(a, extra, fill=0):
    return np.concatenate([a, np.full(extra, fill, dtype=a.dtype)])


class NonSpatialState:
    """Mutable state of one non-spatial trajectory.

    Pathogens sit in a dense list, so a uniform draw from it selects a type
    with probability proportional to its count. Live types sit in a second
    dense list for uniform type selection; each type threads its members on
    a linked list, so a whole-type kill costs O(victims). Slots are recycled;
    type ids never are.
    """

    _ARRAYS = ("t_id", "t_count", "t_head", "t_live", "t_pos", "t_free",
               "p_type", "p_next", "p_pos", "p_list", "p_free")

    def __init__(self, params: SimParams, genealogy: bool = False, capacity: int = 16):
        if params.model.spatial:
            raise ValueError(f"model {params.model.value} is spatial; use the spatial engine")
        self.params = params
        self.iv = np.zeros(10, dtype=np.int64)
        self.fv = np.zeros(2, dtype=np.float64)
        z = lambda: np.zeros(capacity, dtype=np.int64)  # noqa: E731
        self.t_id, self.t_count, self.t_live, self.t_pos = z(), z(), z(), z()
        self.t_head = np.full(capacity, -1, dtype=np.int64)
        self.p_type, self.p_next, self.p_pos, self.p_list = z(), z(), z(), z()
        self.t_free = _stack(capacity)
        self.p_free = _stack(capacity)
        self.iv[I_TFREE] = capacity
        self.iv[I_PFREE] = capacity
        self.genealogy_on = genealogy
        gcap = 64 if genealogy else 0
        self.g_parent = np.zeros(gcap, dtype=np.int64)
        self.g_birth = np.zeros(gcap, dtype=np.float64)
        self.g_death = np.full(gcap, np.nan, dtype=np.float64)
        self.g_kids = np.zeros(gcap, dtype=np.int64)
        self.g_max = np.zeros(gcap, dtype=np.int64)
        self.iv[I_NEXT] = 1
        self.iv[I_ROOT] = 1
        self._set_series(0)
        self.ev = np.zeros(4, dtype=np.int64)

    @classmethod
    def from_counts(cls, params: SimParams, counts: Mapping[int, int], *,
                    next_type_id: Optional[int] = None, time: float = 0.0,
                    genealogy: bool = False) -> "NonSpatialState":
        """Build a state with the given live counts (type id -> count)."""
        if any(c <= 0 for c in counts.values()) or any(t < 1 for t in counts):
            raise ValueError("type ids must be >= 1 and counts strictly positive")
        cap = max(16, 2 * sum(counts.values()))
        state = cls(params, genealogy=genealogy, capacity=cap)
        nxt = max(counts, default=0) + 1 if next_type_id is None else next_type_id
        if nxt <= max(counts, default=0):
            raise ValueError("next_type_id must exceed every live type id")
        state.iv[I_NEXT] = nxt
        state.iv[I_ROOT] = 1 if 1 in counts else 0
        state.fv[F_TIME] = time
        for tid, c in counts.items():
            state._place_type(tid, c)
        if genealogy:
            while state.g_parent.shape[0] <= nxt:
                state._grow_genealogy()
            for tid, c in counts.items():
                state.g_birth[tid] = time
                state.g_max[tid] = c
        return state

    def _place_type(self, tid, c):
        iv = self.iv
        iv[I_TFREE] -= 1
        j = self.t_free[iv[I_TFREE]]
        self.t_id[j] = tid
        self.t_count[j] = c
        self.t_head[j] = -1
        k = iv[I_K]
        self.t_live[k] = j
        self.t_pos[j] = k
        iv[I_K] = k + 1
        for _ in range(c):
            iv[I_PFREE] -= 1
            q = self.p_free[iv[I_PFREE]]
            n = iv[I_N]
            self.p_type[q] = j
            self.p_next[q] = self.t_head[j]
            self.t_head[j] = q
            self.p_pos[q] = n
            self.p_list[n] = q
            iv[I_N] = n + 1

    def _set_series(self, cap):
        self.s_t = np.zeros(cap, dtype=np.float64)
        self.s_n = np.zeros(cap, dtype=np.int64)
        self.s_k = np.zeros(cap, dtype=np.int64)

    def _grow_slots(self):
        cap = self.t_id.shape[0]
        for name in self._ARRAYS:
            if name.endswith("free"):
                continue
            setattr(self, name, _extend(getattr(self, name), cap, -1 if name == "t_head" else 0))
        for name, idx in (("t_free", I_TFREE), ("p_free", I_PFREE)):
            nf = self.iv[idx]
            free = np.zeros(2 * cap, dtype=np.int64)
            free[:cap] = np.arange(2 * cap - 1, cap - 1, -1)
            free[cap:cap + nf] = getattr(self, name)[:nf]
            setattr(self, name, free)
            self.iv[idx] = nf + cap

    def _grow_genealogy(self):
        cap = max(self.g_parent.shape[0], 32)
        self.g_parent = _extend(self.g_parent, cap)
        self.g_birth = _extend(self.g_birth, cap)
        self.g_death = _extend(self.g_death, cap, np.nan)
        self.g_kids = _extend(self.g_kids, cap)
        self.g_max = _extend(self.g_max, cap)

    def _grow_series(self):
        cap = max(self.s_t.shape[0], 64)
        self.s_t = _extend(self.s_t, cap)
        self.s_n = _extend(self.s_n, cap)
        self.s_k = _extend(self.s_k, cap)

    def copy(self) -> "NonSpatialState":
        other = object.__new__(NonSpatialState)
        for name, value in self.__dict__.items():
            setattr(other, name, value.copy() if isinstance(value, np.ndarray) else value)
        return other

    @property
    def time(self) -> float:
        return float(self.fv[F_TIME])

    @property
    def series_length(self) -> int:
        return int(self.iv[I_NSAMP])

    @property
    def total(self) -> int:
        return int(self.iv[I_N])

    @property
    def type_count(self) -> int:
        return int(self.iv[I_K])

    @property
    def next_type_id(self) -> int:
        return int(self.iv[I_NEXT])

    @property
    def events(self) -> int:
        return int(self.iv[I_EVENTS])

    @property
    def counts(self) -> dict:
        slots = self.t_live[: self.iv[I_K]]
        return {int(self.t_id[j]): int(self.t_count[j]) for j in slots}

    @property
    def genealogy(self) -> Optional[GenealogyRecord]:
        if not self.genealogy_on:
            return None
        n = self.next_type_id
        return GenealogyRecord(
            type_id=np.arange(1, n, dtype=np.int64),
            parent_type=self.g_parent[1:n].copy(),
            birth_time=self.g_birth[1:n].copy(),
            death_time=self.g_death[1:n].copy(),
            mutant_offspring=self.g_kids[1:n].copy(),
            max_size=self.g_max[1:n].copy(),
        )

    def _drive(self, rng, max_steps, stride=0.0, stop_root=False, bounded=True) -> int:
        p = self.params
        rule = p.model.rule
        caps = _caps(p, bounded)
        while True:
            code = _advance(rule, float(p.lam), float(p.r), *caps, max_steps, stop_root,
                            self.iv, self.fv, *(getattr(self, a) for a in self._ARRAYS),
                            self.genealogy_on, self.g_parent, self.g_birth, self.g_death,
                            self.g_kids, self.g_max,
                            stride, self.s_t, self.s_n, self.s_k, self.ev, rng)
            if code == st.GROW_SLOTS:
                self._grow_slots()
            elif code == st.GROW_GENEALOGY:
                self._grow_genealogy()
            elif code == st.GROW_SERIES:
                self._grow_series()
            else:
                return code


def _caps(params, bounded):
    if not bounded:
        return 2**62, np.inf, 2**62
    s = params.stop
    return int(s.max_population), float(s.max_time), int(s.max_events)


def ns_init(params: SimParams, rng=None, genealogy: bool = False) -> NonSpatialState:
    """One pathogen of type 1 at time 0. ``rng`` is accepted for symmetry and unused."""
    state = NonSpatialState(params, genealogy=genealogy)
    state._place_type(1, 1)
    state.iv[I_NEXT] = 2
    if genealogy:
        state.g_max[1] = 1
    return state


def ns_total_rates(state: NonSpatialState, params: SimParams) -> tuple:
    n, k = state.total, state.type_count
    if n == 0:
        raise ValueError("population is extinct; no rates")
    death = {1: 1.0, 2: float(k), 3: float(n)}[params.model.rule]
    return params.lam * n, death


def ns_step(state: NonSpatialState, params: SimParams, rng):
    """Advance by exactly one event and return it."""
    if state.total == 0:
        raise ValueError("cannot step an extinct population")
    state.params = params
    state._drive(rng, max_steps=1, bounded=False)
    ev = state.ev
    if ev[0] == st.EV_BIRTH:
        return Birth(state.time, int(ev[1]), int(ev[2]), bool(ev[3]))
    return TypeDeath(state.time, int(ev[1]), int(ev[2]))


_REASONS = {
    st.POP_CAP: StopReason.POPULATION_CAP,
    st.TIME_CAP: StopReason.TIME_HORIZON,
    st.EVENT_CAP: StopReason.EVENT_CAP,
}


def finish_outcome(code, state, series_cols) -> Outcome:
    if code == st.EXTINCT:
        verdict, reason = Verdict.EXTINCT, None
    elif code in _REASONS:
        verdict, reason = Verdict.SURVIVED_PROXY, _REASONS[code]
    elif code == st.ROOT_DEAD:
        # stopped early by request; the verdict reflects the live population
        verdict = Verdict.EXTINCT if state.total == 0 else Verdict.SURVIVED_PROXY
        reason = None
    else:
        raise RuntimeError(f"engine returned unexpected status {code}")
    series = None
    if series_cols is not None:
        m = state.series_length
        cols = [c[:m] for c in series_cols]
        series = np.column_stack(cols).astype(np.float64) if m else np.zeros((0, len(cols)))
        final = [state.time] + [float(c) for c in _final_row(state, len(cols))]
        if m == 0 or state.time > series[-1, 0]:
            series = np.vstack([series, final])
    return Outcome(
        verdict=verdict,
        reason=reason,
        time=state.time,
        final_population=state.total,
        final_type_count=state.type_count,
        events=state.events,
        series=series,
        genealogy=state.genealogy,
    )


def _final_row(state, ncols):
    row = [state.total, state.type_count]
    if ncols == 5:
        row += list(state.extent)
    return row


def ns_run(params: SimParams, rng, options: Optional[RunOptions] = None) -> Outcome:
    """Run one trajectory from a single type-1 pathogen until extinction or a stop bound."""
    options = options or RunOptions()
    state = ns_init(params, rng, genealogy=options.genealogy)
    stride = options.stride if options.series else 0.0
    if options.series:
        state._set_series(64)
    code = state._drive(rng, max_steps=2**62, stride=stride, stop_root=options.stop_at_root_death)
    cols = (state.s_t, state.s_n, state.s_k) if options.series else None
    return finish_outcome(code, state, cols)


def ns_offspring_histogram(records: Iterable[GenealogyRecord]) -> dict:
    """Relative frequencies of mutant-offspring counts over completed types."""
    tally = Counter()
    for rec in records:
        done = rec.completed
        tally.update(rec.mutant_offspring[done].tolist())
    total = sum(tally.values())
    if total == 0:
        return {}
    return {int(k): v / total for k, v in sorted(tally.items())}
