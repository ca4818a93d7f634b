import numpy as np
import pytest
from hypothesis import given, strategies as st

from atbp.streams import Streams, as_streams


def test_same_key_same_stream():
    a = Streams(5).rng("posterior", 3).standard_normal(4)
    b = Streams(5).rng("posterior", 3).standard_normal(4)
    np.testing.assert_array_equal(a, b)


def test_keys_and_purposes_separate_streams():
    s = Streams(5)
    draws = [s.rng("posterior", 3).random(), s.rng("posterior", 4).random(), s.rng("predict", 3).random(),
             Streams(6).rng("posterior", 3).random(), s.child("replicate", 0).rng("posterior", 3).random()]
    assert len(set(draws)) == len(draws)


def test_order_independence():
    s = Streams(9)
    forward = [s.rng("predict", i).random() for i in range(5)]
    backward = [s.rng("predict", i).random() for i in reversed(range(5))][::-1]
    assert forward == backward


def test_seed_validation():
    with pytest.raises(ValueError):
        Streams(-1)
    with pytest.raises(ValueError):
        Streams(2**64)
    with pytest.raises(KeyError):
        Streams(0).rng("nonsense")


@given(st.integers(0, 2**64 - 1))
def test_as_streams(seed):
    s = as_streams(seed)
    assert s == Streams(seed)
    assert as_streams(s) is s
