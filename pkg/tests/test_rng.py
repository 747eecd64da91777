import numpy as np

from ckaprune.rng import Xoshiro256, derive_seed, splitmix64


def test_splitmix64_deterministic():
    s1, out1 = splitmix64(12345)
    s2, out2 = splitmix64(12345)
    assert (s1, out1) == (s2, out2)
    assert 0 <= out1 < 2**64


def test_stream_determinism():
    a = Xoshiro256(99)
    b = Xoshiro256(99)
    assert [a.next_u64() for _ in range(20)] == [b.next_u64() for _ in range(20)]


def test_different_seeds_differ():
    a = Xoshiro256(1)
    b = Xoshiro256(2)
    assert [a.next_u64() for _ in range(4)] != [b.next_u64() for _ in range(4)]


def test_uniform_range_and_mean():
    rng = Xoshiro256(7)
    u = rng.uniforms(20000)
    assert np.all((u >= 0.0) & (u < 1.0))
    assert abs(u.mean() - 0.5) < 0.01


def test_symmetric_uniforms_scale():
    u = Xoshiro256(3).symmetric_uniforms(10000, 0.25)
    assert np.all(np.abs(u) <= 0.25)
    assert abs(u.mean()) < 0.01


def test_randbelow_unbiased_frequencies():
    rng = Xoshiro256(11)
    counts = np.zeros(12, dtype=int)
    n = 12000
    for _ in range(n):
        counts[rng.randbelow(12)] += 1
    expected = n / 12
    sigma = np.sqrt(n * (1 / 12) * (11 / 12))
    assert np.all(np.abs(counts - expected) < 5 * sigma)


def test_derive_seed_spreads():
    seeds = {derive_seed(42, i) for i in range(100)}
    assert len(seeds) == 100
