"""Exact event-driven simulation of Models S1-S3 on the unbounded lattice Z^d.

An occupied site ``x`` gives birth onto each empty nearest neighbor at rate
``lam``; the child founds a fresh type with probability ``r``. Whole-type
kills follow the non-spatial rules: S1 at total rate 1 on a uniform live
type, S2 at total rate K on a uniform live type, S3 at total rate N on a
type picked proportionally to its size.

Bookkeeping: every (occupied site, empty neighbor) ordered pair is kept in a
dense list, so the total birth rate is ``lam * len(pairs)`` and a uniform
pick from the list is an exact birth draw. Sites are stored sparsely in an
open-addressing table keyed by packed coordinates; nothing wraps around.

Per-event draw order: holding time, birth-vs-death uniform, selection
integer, and for births with ``0 < r < 1`` a mutation uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from numba import njit

from . import _status as st
from ._rand import uniform_index
from ._hashgrid import (
    axis_strides,
    coord_limit,
    ht_del,
    ht_get,
    ht_put,
    key_coord,
    new_table,
    pack,
    unpack,
)
from .core import GenealogyRecord, Outcome, RunOptions, SimParams
from .nonspatial import TypeDeath, _caps, _extend, _stack, finish_outcome

(I_N, I_K, I_NEXT, I_EVENTS, I_SFREE, I_TFREE, I_BW, I_NSAMP, I_PENDING,
 I_SAMPK, I_ROOT, I_L, I_R) = range(13)
F_TIME, F_PEND = range(2)


@dataclass(frozen=True)
class SpBirth:
    at: float
    parent_site: tuple
    child_site: tuple
    child_type: int
    is_mutant: bool


class CoordinateOverflow(OverflowError):
    pass


@njit(cache=True)
def _neighbor(key, e, strides):
    if e & 1 == 0:
        return key + strides[e >> 1]
    return key - strides[e >> 1]


@njit(cache=True)
def _pair_add(pe, iv, pairs, s_pair):
    b = iv[I_BW]
    pairs[b] = pe
    s_pair[pe] = b
    iv[I_BW] = b + 1


@njit(cache=True)
def _pair_del(pe, iv, pairs, s_pair):
    b = iv[I_BW] - 1
    idx = s_pair[pe]
    last = pairs[b]
    pairs[idx] = last
    s_pair[last] = idx
    s_pair[pe] = -1
    iv[I_BW] = b


@njit(cache=True)
def _advance(rule, lam, r, d, lim, max_pop, max_time, max_events, max_steps, stop_root,
             iv, fv, strides, h_keys, h_vals,
             s_key, s_type, s_next, s_pos, occ, s_free, s_pair, pairs,
             t_id, t_count, t_head, t_live, t_pos, t_free,
             gen_on, g_parent, g_birth, g_death, g_kids, g_max,
             stride, s_t, s_n, s_k, s_l, s_r, ev, rng):
    d2 = 2 * d
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
            if iv[I_SFREE] == 0 or iv[I_TFREE] == 0:
                return st.GROW_SLOTS
            if gen_on and iv[I_NEXT] >= g_parent.shape[0]:
                return st.GROW_GENEALOGY
            n = iv[I_N]
            k = iv[I_K]
            death = 1.0 if rule == 1 else (float(k) if rule == 2 else float(n))
            fv[F_PEND] = fv[F_TIME] + rng.standard_exponential() / (lam * iv[I_BW] + death)
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
                s_l[m] = iv[I_L]
                s_r[m] = iv[I_R]
                iv[I_NSAMP] = m + 1
                iv[I_SAMPK] += 1
        if tp > max_time:
            fv[F_TIME] = max_time
            iv[I_PENDING] = 0
            return st.TIME_CAP

        n = iv[I_N]
        k = iv[I_K]
        birth = lam * iv[I_BW]
        death = 1.0 if rule == 1 else (float(k) if rule == 2 else float(n))
        if rng.random() * (birth + death) < birth:
            pe = pairs[uniform_index(rng, iv[I_BW])]
            x = pe // d2
            e = pe - x * d2
            pkey = s_key[x]
            if d > 1 and abs(key_coord(pkey, d, e >> 1)) >= lim:
                return st.COORD_OVERFLOW
            iv[I_PENDING] = 0
            fv[F_TIME] = tp
            ck = _neighbor(pkey, e, strides)
            j = s_type[x]
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
            nf = iv[I_SFREE] - 1
            c = s_free[nf]
            iv[I_SFREE] = nf
            s_key[c] = ck
            s_type[c] = j
            s_next[c] = t_head[j]
            t_head[j] = c
            s_pos[c] = n
            occ[n] = c
            t_count[j] += 1
            if gen_on and t_count[j] > g_max[cid]:
                g_max[cid] = t_count[j]
            ht_put(h_keys, h_vals, ck, c)
            for f in range(d2):
                s_pair[c * d2 + f] = -1
            for f in range(d2):
                y = ht_get(h_keys, h_vals, _neighbor(ck, f, strides))
                if y >= 0:
                    _pair_del(y * d2 + (f ^ 1), iv, pairs, s_pair)
                else:
                    _pair_add(c * d2 + f, iv, pairs, s_pair)
            iv[I_N] = n + 1
            if d == 1:
                if ck < iv[I_L]:
                    iv[I_L] = ck
                if ck > iv[I_R]:
                    iv[I_R] = ck
            ev[0] = st.EV_BIRTH
            ev[1] = ptype
            ev[2] = cid
            ev[3] = 1 if mutant else 0
            ev[4] = pkey
            ev[5] = ck
        else:
            iv[I_PENDING] = 0
            fv[F_TIME] = tp
            if rule == 3:
                j = s_type[occ[uniform_index(rng, n)]]
            else:
                j = t_live[uniform_index(rng, k)]
            victims = t_count[j]
            tid = t_id[j]
            x = t_head[j]
            while x >= 0:
                key = s_key[x]
                for f in range(d2):
                    if s_pair[x * d2 + f] >= 0:
                        _pair_del(x * d2 + f, iv, pairs, s_pair)
                ht_del(h_keys, h_vals, key)
                pos = s_pos[x]
                last = occ[n - 1]
                occ[pos] = last
                s_pos[last] = pos
                n -= 1
                s_free[iv[I_SFREE]] = x
                iv[I_SFREE] += 1
                for f in range(d2):
                    y = ht_get(h_keys, h_vals, _neighbor(key, f, strides))
                    if y >= 0:
                        _pair_add(y * d2 + (f ^ 1), iv, pairs, s_pair)
                x = s_next[x]
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
            if d == 1 and n > 0:
                lo = iv[I_L]
                while ht_get(h_keys, h_vals, lo) < 0:
                    lo += 1
                iv[I_L] = lo
                hi = iv[I_R]
                while ht_get(h_keys, h_vals, hi) < 0:
                    hi -= 1
                iv[I_R] = hi
            ev[0] = st.EV_DEATH
            ev[1] = tid
            ev[2] = victims
        iv[I_EVENTS] += 1
        steps += 1


@njit(cache=True)
def _rehash(h_keys, h_vals, s_key, occ, n):
    for i in range(n):
        ht_put(h_keys, h_vals, s_key[occ[i]], occ[i])


@njit(cache=True)
def _rebuild_pairs(d, iv, strides, h_keys, h_vals, s_key, occ, s_pair, pairs):
    d2 = 2 * d
    s_pair[:] = -1
    iv[I_BW] = 0
    for i in range(iv[I_N]):
        c = occ[i]
        for f in range(d2):
            if ht_get(h_keys, h_vals, _neighbor(s_key[c], f, strides)) < 0:
                _pair_add(c * d2 + f, iv, pairs, s_pair)


class SpatialState:
    """Mutable state of one lattice trajectory.

    Site and type slots are recycled through free stacks; ``occ`` and
    ``t_live`` are dense lists for uniform site and type picks, and
    ``pairs`` lists every (occupied site, empty neighbor) pair encoded as
    ``slot * 2d + direction``. Direction ``e`` moves along axis ``e // 2``,
    forward when ``e`` is even.
    """

    _SITE = ("s_key", "s_type", "s_next", "s_pos", "occ", "s_free", "s_pair", "pairs")
    _TYPE = ("t_id", "t_count", "t_head", "t_live", "t_pos", "t_free")

    def __init__(self, params: SimParams, genealogy: bool = False, capacity: int = 16):
        if not params.model.spatial:
            raise ValueError(f"model {params.model.value} is non-spatial; use the non-spatial engine")
        if capacity & (capacity - 1):
            raise ValueError("capacity must be a power of two")
        self.params = params
        d = params.dim
        self.d = d
        self.strides = axis_strides(d)
        self.lim = coord_limit(d)
        self.iv = np.zeros(13, dtype=np.int64)
        self.fv = np.zeros(2, dtype=np.float64)
        z = lambda m=1: np.zeros(capacity * m, dtype=np.int64)  # noqa: E731
        self.s_key, self.s_type, self.s_next, self.s_pos, self.occ = z(), z(), z(), z(), z()
        self.s_free = _stack(capacity)
        self.s_pair = np.full(capacity * 2 * d, -1, dtype=np.int64)
        self.pairs = z(2 * d)
        self.t_id, self.t_count, self.t_live, self.t_pos = z(), z(), z(), z()
        self.t_head = np.full(capacity, -1, dtype=np.int64)
        self.t_free = _stack(capacity)
        self.iv[I_SFREE] = capacity
        self.iv[I_TFREE] = capacity
        self.h_keys, self.h_vals = new_table(4 * capacity)
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
        self.ev = np.zeros(6, dtype=np.int64)

    @classmethod
    def from_config(cls, params: SimParams, config: Mapping[tuple, int], *,
                    next_type_id: Optional[int] = None, time: float = 0.0,
                    genealogy: bool = False) -> "SpatialState":
        """State with the given occupancy (site tuple -> type id)."""
        if not config:
            raise ValueError("configuration must be nonempty")
        cap = 16
        while cap < 2 * len(config):
            cap *= 2
        state = cls(params, genealogy=genealogy, capacity=cap)
        ids = set(config.values())
        if min(ids) < 1:
            raise ValueError("type ids must be >= 1")
        nxt = max(ids) + 1 if next_type_id is None else next_type_id
        if nxt <= max(ids):
            raise ValueError("next_type_id must exceed every live type id")
        state.iv[I_NEXT] = nxt
        state.iv[I_ROOT] = 1 if 1 in ids else 0
        state.fv[F_TIME] = time
        slot_of = {}
        for tid in sorted(ids):
            slot_of[tid] = state._new_type(tid)
        for site, tid in config.items():
            state._place(pack(site, state.d), slot_of[tid])
        state._rebuild_pairs()
        if state.d == 1:
            keys = [s[0] for s in config]
            state.iv[I_L], state.iv[I_R] = min(keys), max(keys)
        if genealogy:
            while state.g_parent.shape[0] <= nxt:
                state._grow_genealogy()
            for tid in ids:
                state.g_birth[tid] = time
                state.g_max[tid] = state.t_count[slot_of[tid]]
        return state

    def _new_type(self, tid):
        iv = self.iv
        iv[I_TFREE] -= 1
        j = self.t_free[iv[I_TFREE]]
        self.t_id[j] = tid
        self.t_count[j] = 0
        self.t_head[j] = -1
        k = iv[I_K]
        self.t_live[k] = j
        self.t_pos[j] = k
        iv[I_K] = k + 1
        return j

    def _place(self, key, j):
        iv = self.iv
        iv[I_SFREE] -= 1
        c = self.s_free[iv[I_SFREE]]
        n = iv[I_N]
        self.s_key[c] = key
        self.s_type[c] = j
        self.s_next[c] = self.t_head[j]
        self.t_head[j] = c
        self.s_pos[c] = n
        self.occ[n] = c
        self.t_count[j] += 1
        ht_put(self.h_keys, self.h_vals, key, c)
        iv[I_N] = n + 1

    def _rebuild_pairs(self):
        _rebuild_pairs(self.d, self.iv, self.strides, self.h_keys, self.h_vals,
                       self.s_key, self.occ, self.s_pair, self.pairs)

    def _set_series(self, cap):
        self.s_t = np.zeros(cap, dtype=np.float64)
        self.s_n = np.zeros(cap, dtype=np.int64)
        self.s_k = np.zeros(cap, dtype=np.int64)
        self.s_l = np.zeros(cap, dtype=np.int64)
        self.s_r = np.zeros(cap, dtype=np.int64)

    def _grow_slots(self):
        cap = self.s_key.shape[0]
        d2 = 2 * self.d
        for name in ("s_key", "s_type", "s_next", "s_pos", "occ",
                     "t_id", "t_count", "t_live", "t_pos"):
            setattr(self, name, _extend(getattr(self, name), cap))
        self.t_head = _extend(self.t_head, cap, -1)
        self.s_pair = _extend(self.s_pair, cap * d2, -1)
        self.pairs = _extend(self.pairs, cap * d2)
        for name, idx in (("s_free", I_SFREE), ("t_free", I_TFREE)):
            nf = self.iv[idx]
            free = np.zeros(2 * cap, dtype=np.int64)
            free[:cap] = np.arange(2 * cap - 1, cap - 1, -1)
            free[cap:cap + nf] = getattr(self, name)[:nf]
            setattr(self, name, free)
            self.iv[idx] = nf + cap
        self.h_keys, self.h_vals = new_table(8 * cap)
        _rehash(self.h_keys, self.h_vals, self.s_key, self.occ, self.iv[I_N])

    def _grow_genealogy(self):
        cap = max(self.g_parent.shape[0], 32)
        self.g_parent = _extend(self.g_parent, cap)
        self.g_birth = _extend(self.g_birth, cap)
        self.g_death = _extend(self.g_death, cap, np.nan)
        self.g_kids = _extend(self.g_kids, cap)
        self.g_max = _extend(self.g_max, cap)

    def _grow_series(self):
        cap = max(self.s_t.shape[0], 64)
        for name in ("s_t", "s_n", "s_k", "s_l", "s_r"):
            setattr(self, name, _extend(getattr(self, name), cap))

    def copy(self) -> "SpatialState":
        other = object.__new__(SpatialState)
        for name, value in self.__dict__.items():
            setattr(other, name, value.copy() if isinstance(value, np.ndarray) else value)
        return other

    def _drive(self, rng, max_steps, stride=0.0, stop_root=False, bounded=True) -> int:
        p = self.params
        caps = _caps(p, bounded)
        while True:
            code = _advance(p.model.rule, float(p.lam), float(p.r), self.d, self.lim, *caps,
                            max_steps, stop_root, self.iv, self.fv, self.strides,
                            self.h_keys, self.h_vals,
                            *(getattr(self, a) for a in self._SITE),
                            *(getattr(self, a) for a in self._TYPE),
                            self.genealogy_on, self.g_parent, self.g_birth, self.g_death,
                            self.g_kids, self.g_max,
                            stride, self.s_t, self.s_n, self.s_k, self.s_l, self.s_r,
                            self.ev, rng)
            if code == st.GROW_SLOTS:
                self._grow_slots()
            elif code == st.GROW_GENEALOGY:
                self._grow_genealogy()
            elif code == st.GROW_SERIES:
                self._grow_series()
            elif code == st.COORD_OVERFLOW:
                raise CoordinateOverflow(
                    f"a birth would leave the packable range |x| <= {self.lim} in d={self.d}")
            else:
                return code

    # read-only views -------------------------------------------------------

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
    def boundary_weight(self) -> int:
        return int(self.iv[I_BW])

    @property
    def extent(self) -> tuple:
        """(L, R): leftmost and rightmost occupied coordinate, d = 1 only.

        After extinction the last occupied extent is kept.
        """
        if self.d != 1:
            raise ValueError("extent is tracked in d = 1 only")
        return int(self.iv[I_L]), int(self.iv[I_R])

    @property
    def occupancy(self) -> dict:
        return {unpack(self.s_key[c], self.d): int(self.t_id[self.s_type[c]])
                for c in self.occ[: self.iv[I_N]]}

    @property
    def type_sites(self) -> dict:
        out = {}
        for j in self.t_live[: self.iv[I_K]]:
            sites = set()
            c = self.t_head[j]
            while c >= 0:
                sites.add(unpack(self.s_key[c], self.d))
                c = self.s_next[c]
            out[int(self.t_id[j])] = sites
        return out

    @property
    def counts(self) -> dict:
        return {int(self.t_id[j]): int(self.t_count[j]) for j in self.t_live[: self.iv[I_K]]}

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

    def check_consistency(self) -> list:
        """Recompute every derived quantity from the occupancy; list the mismatches."""
        problems = []
        occ = self.occupancy
        d = self.d
        if len(occ) != self.total:
            problems.append(f"{len(occ)} distinct occupied sites but N = {self.total}")
        ts = self.type_sites
        if len(ts) != self.type_count:
            problems.append(f"{len(ts)} live types but K = {self.type_count}")
        union = set()
        for tid, sites in ts.items():
            if not sites:
                problems.append(f"type {tid} is live with no sites")
            if union & sites:
                problems.append(f"type {tid} shares sites with another type")
            union |= sites
            if any(occ.get(x) != tid for x in sites):
                problems.append(f"type {tid} site set disagrees with occupancy")
            if d == 1 and sites:
                xs = sorted(x[0] for x in sites)
                if xs[-1] - xs[0] + 1 != len(xs):
                    problems.append(f"type {tid} occupies a non-interval {xs}")
        if union != set(occ):
            problems.append("type site sets do not partition the occupied set")
        bw = 0
        for x in occ:
            for axis in range(d):
                for step in (1, -1):
                    y = list(x)
                    y[axis] += step
                    bw += tuple(y) not in occ
        if bw != self.boundary_weight:
            problems.append(f"boundary weight {self.boundary_weight} but recomputed {bw}")
        if d == 1 and occ:
            xs = [x[0] for x in occ]
            if (min(xs), max(xs)) != self.extent:
                problems.append(f"extent {self.extent} but occupied range {(min(xs), max(xs))}")
        if self.type_count and max(ts) >= self.next_type_id:
            problems.append("a live type id is not below next_type_id")
        return problems


def sp_init(params: SimParams, rng=None, genealogy: bool = False) -> SpatialState:
    """Single type-1 pathogen at the origin at time 0."""
    state = SpatialState(params, genealogy=genealogy)
    j = state._new_type(1)
    state._place(pack((0,) * params.dim, params.dim), j)
    state._rebuild_pairs()
    state.iv[I_NEXT] = 2
    if genealogy:
        state.g_max[1] = 1
    return state


def sp_total_rates(state: SpatialState, params: SimParams) -> tuple:
    n, k = state.total, state.type_count
    if n == 0:
        raise ValueError("population is extinct; no rates")
    death = {1: 1.0, 2: float(k), 3: float(n)}[params.model.rule]
    return params.lam * state.boundary_weight, death


def sp_step(state: SpatialState, params: SimParams, rng):
    """Advance by exactly one event and return it."""
    if state.total == 0:
        raise ValueError("cannot step an extinct population")
    state.params = params
    state._drive(rng, max_steps=1, bounded=False)
    ev = state.ev
    if ev[0] == st.EV_BIRTH:
        return SpBirth(state.time, unpack(ev[4], state.d), unpack(ev[5], state.d),
                       int(ev[2]), bool(ev[3]))
    return TypeDeath(state.time, int(ev[1]), int(ev[2]))


def sp_run(params: SimParams, rng, options: Optional[RunOptions] = None) -> Outcome:
    """Run one lattice trajectory from a single pathogen at the origin."""
    options = options or RunOptions()
    state = sp_init(params, rng, genealogy=options.genealogy)
    if options.series:
        state._set_series(64)
    stride = options.stride if options.series else 0.0
    code = state._drive(rng, max_steps=2**62, stride=stride, stop_root=options.stop_at_root_death)
    cols = None
    if options.series:
        cols = (state.s_t, state.s_n, state.s_k)
        if state.d == 1:
            cols += (state.s_l, state.s_r)
    return finish_outcome(code, state, cols)


def sp_type_count_lower_bound_check(state: SpatialState) -> bool:
    """True when at least ceil(sqrt(N)) occupied sites have an empty neighbor (d >= 2)."""
    if state.d < 2:
        raise ValueError("the square-root boundary bound is a d >= 2 property")
    n = state.total
    d2 = 2 * state.d
    occupied = state.occ[:n]
    exposed = sum(1 for c in occupied if (state.s_pair[c * d2:(c + 1) * d2] >= 0).any())
    return exposed >= math.ceil(math.sqrt(n))
