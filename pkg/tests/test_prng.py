import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from eegemo.prng import MASK64, Xoshiro256, derive_seed, splitmix64


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


def reference_xoshiro(state, n):
    """Plain-integer xoshiro256**, transcribed from the published C code."""
    s = list(state)
    out = []
    for _ in range(n):
        out.append((_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64)
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
    return out


def test_published_vectors():
    g = Xoshiro256(0)
    g.state = np.array([1, 2, 3, 4], dtype=np.uint64)
    assert g.u64(4).tolist() == [11520, 0, 1509978240, 1215971899390074240]
    assert splitmix64(0, 1)[0] == 0xE220A8397B1DCDAF


@given(st.integers(0, 2**64 - 1))
@settings(max_examples=50)
def test_matches_reference(seed):
    g = Xoshiro256(seed)
    assert g.u64(20).tolist() == reference_xoshiro(splitmix64(seed, 4), 20)


def test_chunked_draws_equal_bulk():
    a, b = Xoshiro256(5), Xoshiro256(5)
    assert np.array_equal(a.u64(100), np.concatenate([b.u64(37), b.u64(63)]))


def test_uniform_range_and_mean():
    u = Xoshiro256(1).uniform(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005


def test_normal_moments():
    z = Xoshiro256(2).normal(200_001)
    assert z.shape == (200_001,)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


@given(st.integers(0, 300), st.integers(0, 2**32))
def test_permutation_is_permutation(n, seed):
    p = Xoshiro256(seed).permutation(n)
    assert sorted(p.tolist()) == list(range(n))


def test_derive_seed_distinct():
    seeds = {derive_seed(0, e, b) for e in range(20) for b in range(20)}
    assert len(seeds) == 400
    assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2)
