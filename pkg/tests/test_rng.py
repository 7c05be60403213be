from __future__ import annotations

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from qrt.rng import MASK64, make_rng, split, splitmix64


def test_splitmix64_reference_vector():
    # first output of the reference SplitMix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_split_without_path_is_one_mix():
    assert split(12345) == splitmix64(12345)


def test_split_is_order_sensitive():
    assert split(7, 0, 1) != split(7, 1, 0)
    assert split(7, "a") != split(7, "b")


def test_nested_split_is_not_flat_split():
    assert split(split(9, 1), 2) != split(9, 1, 2)


@given(st.integers(0, MASK64), st.lists(st.one_of(st.integers(0, 2**32), st.text(max_size=8)), max_size=4))
def test_split_deterministic_and_in_range(seed, path):
    a = split(seed, *path)
    assert a == split(seed, *path)
    assert 0 <= a <= MASK64


def test_make_rng_streams_reproduce():
    a = make_rng(3, "x").integers(0, 1 << 30, 16)
    b = make_rng(3, "x").integers(0, 1 << 30, 16)
    c = make_rng(3, "y").integers(0, 1 << 30, 16)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
