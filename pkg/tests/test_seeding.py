"""Named random streams: reproducibility, tag sensitivity, independence."""

import numpy as np
import pytest

from eamod.seeding import seed_for, stream


def test_equal_arguments_give_identical_streams():
    a = stream(42, "demand", 3).integers(0, 1_000_000, size=64)
    b = stream(42, "demand", 3).integers(0, 1_000_000, size=64)
    np.testing.assert_array_equal(a, b)


def test_any_argument_change_gives_a_different_stream():
    base = stream(42, "demand", 3).integers(0, 1_000_000, size=64)
    for args in ((43, "demand", 3), (42, "supply", 3), (42, "demand", 4),
                 (42, 3, "demand"), (42, "demand")):
        other = stream(*args).integers(0, 1_000_000, size=64)
        assert not np.array_equal(base, other), args


def test_tags_accept_ints_strings_and_numpy_ints():
    a = stream(1, np.int64(5), "x").uniform()
    b = stream(1, 5, "x").uniform()
    assert a == b


def test_invalid_tag_type_raises():
    with pytest.raises(TypeError):
        stream(1, 2.5)
    with pytest.raises(TypeError):
        stream(1, ("tuple",))


def test_seed_for_is_a_seed_sequence():
    seq = seed_for(7, "a", 1)
    assert isinstance(seq, np.random.SeedSequence)
    assert seq.entropy == seed_for(7, "a", 1).entropy


def test_sibling_streams_look_independent():
    # crude independence check: correlation of long sibling streams is tiny
    x = stream(9, "worker", 0).standard_normal(20_000)
    y = stream(9, "worker", 1).standard_normal(20_000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.03
