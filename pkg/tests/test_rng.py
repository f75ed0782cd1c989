import numpy as np
import pytest

from fedledger.rng import RngStream, derive_key


def test_same_path_same_stream():
    a = RngStream(1, "noise", 3, 5).random(100)
    b = RngStream(1, "noise", 3, 5).random(100)
    assert np.array_equal(a, b)


def test_different_paths_differ():
    a = RngStream(1, "noise", 3, 5).random(100)
    b = RngStream(1, "noise", 3, 6).random(100)
    c = RngStream(2, "noise", 3, 5).random(100)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_label_types_distinguished():
    # The int 1 and the string "1" must map to different streams.
    assert not np.array_equal(RngStream(1).random(10), RngStream("1").random(10))


def test_child_stream_matches_full_path():
    base = RngStream(9, "client")
    assert np.array_equal(base.child(4).random(50), RngStream(9, "client", 4).random(50))


def test_uniform_range():
    u = RngStream(3).uniform(-1.0, 1.0, 10_000)
    assert u.min() >= -1.0 and u.max() < 1.0
    assert abs(u.mean()) < 0.05


def test_normal_moments():
    z = RngStream(4).normal(200_000, sigma=2.0)
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 4.0) < 0.08


def test_normal_zero_sigma():
    assert np.array_equal(RngStream(5).normal(10, sigma=0.0), np.zeros(10))


def test_laplace_moments():
    x = RngStream(6).laplace(scale=1.0, n=200_000)
    assert abs(x.mean()) < 0.02
    # Var of Laplace(b) is 2 b^2.
    assert abs(x.var() - 2.0) < 0.08


def test_permutation_is_a_permutation():
    p = RngStream(8).permutation(257)
    assert sorted(p.tolist()) == list(range(257))


def test_derive_key_stable_and_distinct():
    assert derive_key(1, "a") == derive_key(1, "a")
    assert derive_key(1, "a") != derive_key(1, "b")
    assert len(derive_key(0)) == 32


def test_bad_label_type_rejected():
    with pytest.raises(TypeError):
        RngStream(1.5)
