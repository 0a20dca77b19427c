import numpy as np
from hypothesis import given, settings, strategies as st

from pathogen._hashgrid import (
    EMPTY,
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


@st.composite
def sites(draw):
    d = draw(st.integers(1, 4))
    lim = coord_limit(d)
    return d, tuple(draw(st.integers(-lim, lim)) for _ in range(d))


@given(sites())
def test_pack_roundtrip(ds):
    d, x = ds
    key = pack(x, d)
    assert unpack(key, d) == x
    for axis in range(d):
        assert key_coord(np.int64(key), d, axis) == x[axis]


@given(sites())
def test_neighbor_is_stride_offset(ds):
    d, x = ds
    lim = coord_limit(d)
    strides = axis_strides(d)
    for axis in range(d):
        if abs(x[axis]) < lim:
            y = list(x)
            y[axis] += 1
            assert pack(y, d) == pack(x, d) + int(strides[axis])
            y[axis] -= 2
            assert pack(y, d) == pack(x, d) - int(strides[axis])


def test_pack_rejects_out_of_range():
    import pytest
    with pytest.raises(OverflowError):
        pack((coord_limit(2) + 1, 0), 2)
    with pytest.raises(ValueError):
        pack((1, 2), 3)


@settings(max_examples=60)
@given(st.lists(st.tuples(st.sampled_from(["put", "del"]), st.integers(-40, 40)), max_size=300))
def test_table_matches_dict(ops):
    keys, vals = new_table(128)
    ref = {}
    for n, (op, k) in enumerate(ops):
        if op == "put" and (k in ref or len(ref) < 64):
            ht_put(keys, vals, np.int64(k), np.int64(n))
            ref[k] = n
        elif op == "del":
            assert ht_del(keys, vals, np.int64(k)) == (k in ref)
            ref.pop(k, None)
        for q in range(-40, 41):
            assert ht_get(keys, vals, np.int64(q)) == ref.get(q, -1)
    assert int((keys != EMPTY).sum()) == len(ref)
