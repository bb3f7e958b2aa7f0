import numpy as np

from powersplit.rng import stream, substream


def test_stream_is_deterministic():
    a = stream(7, "fit").random(5)
    b = stream(7, "fit").random(5)
    assert np.array_equal(a, b)


def test_paths_give_distinct_streams():
    a = stream(7, "fit").random(5)
    b = stream(7, "predict").random(5)
    c = stream(8, "fit").random(5)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_substream_from_generator_and_seed_agree():
    base = stream(3, "root")
    a = substream(base, "child", 2).random(4)
    b = substream(stream(3, "root"), "child", 2).random(4)
    assert np.array_equal(a, b)


def test_substream_advances_parent_by_one_draw():
    # deriving from a Generator consumes exactly one 64-bit value, keeping
    # later derivations order-deterministic
    base = stream(3, "root")
    twin = stream(3, "root")
    substream(base, "child").random(100)
    twin.integers(0, 2**63 - 1)
    assert np.array_equal(base.random(3), twin.random(3))


def test_mixed_path_types():
    a = substream(11, "a", 0).random(3)
    b = substream(11, "a", 1).random(3)
    assert not np.array_equal(a, b)
