import numpy as np

from ppcm.rng import derive_seed, substream


def test_same_path_same_stream():
    a = substream(7, "x", 3).random(5)
    b = substream(7, "x", 3).random(5)
    np.testing.assert_array_equal(a, b)


def test_different_paths_differ():
    a = substream(7, "x", 3).random(5)
    b = substream(7, "x", 4).random(5)
    c = substream(7, "y", 3).random(5)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_string_paths_are_not_ambiguous():
    # ("ab", "c") and ("a", "bc") must give different streams
    a = substream(0, "ab", "c").random(4)
    b = substream(0, "a", "bc").random(4)
    assert not np.array_equal(a, b)


def test_derive_seed_deterministic():
    assert derive_seed(3, "fit", 1) == derive_seed(3, "fit", 1)
    assert derive_seed(3, "fit", 1) != derive_seed(3, "fit", 2)
