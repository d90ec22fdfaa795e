import numpy as np

from standseg.rng import rng_for, spawn


def test_same_seed_and_label_reproduce():
    a = rng_for(42, "shuffle").random(16)
    b = rng_for(42, "shuffle").random(16)
    assert np.array_equal(a, b)


def test_labels_give_independent_streams():
    a = rng_for(42, "shuffle").random(16)
    b = rng_for(42, "dropout").random(16)
    assert not np.array_equal(a, b)


def test_seeds_give_independent_streams():
    a = rng_for(0, "init").random(16)
    b = rng_for(1, "init").random(16)
    assert not np.array_equal(a, b)


def test_spawn_indexed_substreams():
    a = spawn(7, "sampler", 0).random(8)
    b = spawn(7, "sampler", 1).random(8)
    c = spawn(7, "sampler", 0).random(8)
    assert np.array_equal(a, c)
    assert not np.array_equal(a, b)


def test_spawn_differs_from_parent():
    assert not np.array_equal(rng_for(7, "sampler").random(8), spawn(7, "sampler", 0).random(8))
