"""Distribution oracles: closed forms against hand-derived constants and
brute-force enumeration.

The enumeration helpers are the independent route: they know nothing about the
closed-form KL, only how to walk a small discrete support and sum masses.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedklms.distributions import (
    AbsoluteContinuityError,
    BernoulliVector,
    BinarySign,
    DiagonalGaussian,
    TernaryPattern,
    UniformSign,
    kl_block,
    kl_per_coordinate,
)
from fedklms.streams import StreamKey, derive_stream


def enumerate_support(dist):
    """All support points of a small discrete product distribution."""
    if isinstance(dist, BernoulliVector):
        per_coord = [(0.0, 1.0)] * dist.dim
    elif isinstance(dist, TernaryPattern):
        per_coord = [(-1.0, 0.0, 1.0)] * dist.dim
    elif isinstance(dist, (BinarySign, UniformSign)):
        per_coord = [(-1.0, 1.0)] * dist.dim
    else:
        raise TypeError(f"not enumerable: {type(dist).__name__}")
    for point in itertools.product(*per_coord):
        yield np.array(point)


def enumerated_total_mass(dist):
    return sum(np.exp(dist.log_mass(0, dist.dim, x)) for x in enumerate_support(dist))


def enumerated_kl(q, p, lo, hi):
    """Sum_x q(x) (log q(x) - log p(x)) over the restricted support."""
    total = 0.0
    width = hi - lo
    if isinstance(q, BernoulliVector):
        sub = BernoulliVector(q.probs[lo:hi])
    elif isinstance(q, TernaryPattern):
        sub = TernaryPattern(q.p_neg[lo:hi], q.p_zero[lo:hi], q.p_pos[lo:hi])
    elif isinstance(q, BinarySign):
        sub = BinarySign(q.p_plus[lo:hi])
    else:
        raise TypeError(type(q).__name__)
    for x in enumerate_support(sub):
        lq = q.log_mass(lo, hi, x)
        if np.isneginf(lq):
            continue
        lp = p.log_mass(lo, hi, x)
        total += np.exp(lq) * (lq - lp)
    assert width == sub.dim
    return total


# hand-derived constants
LOG_HALF_SQ = -1.3862943611198906  # 2 ln 0.5
LOG_09 = -0.10536051565782628  # ln 0.9
STD_NORMAL_AT_0 = -0.9189385332046727  # -0.5 ln(2 pi)
KL_BERN_09_05 = 0.36806420716849715  # 0.9 ln 1.8 + 0.1 ln 0.2


def test_bernoulli_log_mass_frozen():
    d = BernoulliVector(np.array([0.5, 0.5]))
    assert d.log_mass(0, 2, np.array([0.0, 1.0])) == pytest.approx(LOG_HALF_SQ, abs=1e-12)
    d9 = BernoulliVector(np.array([0.9]))
    assert d9.log_mass(0, 1, np.array([1.0])) == pytest.approx(LOG_09, abs=1e-12)


def test_gaussian_log_density_frozen():
    g = DiagonalGaussian(np.zeros(1), 1.0)
    assert g.log_mass(0, 1, np.array([0.0])) == pytest.approx(STD_NORMAL_AT_0, abs=1e-12)


def test_zero_mass_is_neg_inf_not_error():
    d = BernoulliVector(np.array([1.0]))
    assert np.isneginf(d.log_mass(0, 1, np.array([0.0])))
    t = TernaryPattern(np.array([0.0]), np.array([1.0]), np.array([0.0]))
    assert np.isneginf(t.log_mass(0, 1, np.array([1.0])))


def test_kl_bernoulli_frozen():
    q = BernoulliVector(np.array([0.9]))
    p = BernoulliVector(np.array([0.5]))
    assert kl_per_coordinate(q, p)[0] == pytest.approx(KL_BERN_09_05, abs=1e-12)


def test_kl_gaussian_frozen():
    q = DiagonalGaussian(np.array([0.8]), 1.0)
    p = DiagonalGaussian(np.array([0.0]), 1.0)
    assert kl_per_coordinate(q, p)[0] == pytest.approx(0.32, abs=1e-15)


def test_kl_equal_distributions_is_zero():
    q = BernoulliVector(np.array([0.3, 0.7, 1.0, 0.0]))
    assert kl_block(q, q, 0, 4) == 0.0


def test_kl_sign_vs_uniform():
    q = BinarySign(np.array([0.5]))
    p = UniformSign(1)
    assert kl_per_coordinate(q, p)[0] == pytest.approx(0.0, abs=1e-15)
    q2 = BinarySign(np.array([1.0]))
    assert kl_per_coordinate(q2, p)[0] == pytest.approx(np.log(2.0), abs=1e-15)


def test_absolute_continuity_violation_raises():
    q = BernoulliVector(np.array([0.5]))
    p = BernoulliVector(np.array([0.0]))
    with pytest.raises(AbsoluteContinuityError):
        kl_per_coordinate(q, p)
    # hard 1 on both sides is fine: no client mass outside global support
    both_one = BernoulliVector(np.array([1.0]))
    assert kl_per_coordinate(both_one, both_one)[0] == 0.0


def test_incompatible_kinds_raise():
    with pytest.raises(ValueError):
        kl_per_coordinate(BernoulliVector(np.array([0.5])), UniformSign(1))
    with pytest.raises(ValueError):
        kl_per_coordinate(
            BernoulliVector(np.array([0.5])), BernoulliVector(np.array([0.5, 0.5]))
        )
    with pytest.raises(ValueError):
        kl_per_coordinate(
            DiagonalGaussian(np.zeros(2), 1.0), DiagonalGaussian(np.zeros(2), 2.0)
        )


def test_ternary_validation():
    with pytest.raises(ValueError):
        TernaryPattern(np.array([0.5]), np.array([0.5]), np.array([0.5]))


@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_bernoulli_mass_sums_to_one(seed, dim):
    rng = np.random.default_rng(seed)
    d = BernoulliVector(rng.random(dim))
    assert enumerated_total_mass(d) == pytest.approx(1.0, abs=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_ternary_mass_sums_to_one(seed, dim):
    rng = np.random.default_rng(seed)
    raw = rng.random((3, dim))
    raw /= raw.sum(axis=0)
    d = TernaryPattern(raw[0], raw[1], raw[2])
    assert enumerated_total_mass(d) == pytest.approx(1.0, abs=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_sign_mass_sums_to_one(seed, dim):
    rng = np.random.default_rng(seed)
    assert enumerated_total_mass(BinarySign(rng.random(dim))) == pytest.approx(
        1.0, abs=1e-9
    )
    assert enumerated_total_mass(UniformSign(dim)) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_kl_block_matches_enumeration(seed, dim):
    # closed form vs brute force: the two independent routes must agree
    rng = np.random.default_rng(seed)
    q = BernoulliVector(rng.uniform(0.05, 0.95, dim))
    p = BernoulliVector(rng.uniform(0.05, 0.95, dim))
    lo, hi = 0, dim
    assert kl_block(q, p, lo, hi) == pytest.approx(
        enumerated_kl(q, p, lo, hi), abs=1e-9
    )


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_ternary_kl_matches_enumeration(seed, dim):
    rng = np.random.default_rng(seed)
    raws = []
    for _ in range(2):
        raw = rng.uniform(0.05, 1.0, (3, dim))
        raw /= raw.sum(axis=0)
        raws.append(raw)
    q = TernaryPattern(*raws[0])
    p = TernaryPattern(*raws[1])
    assert kl_block(q, p, 0, dim) == pytest.approx(enumerated_kl(q, p, 0, dim), abs=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_kl_is_nonnegative(seed, dim):
    rng = np.random.default_rng(seed)
    q = BernoulliVector(rng.random(dim))
    p = BernoulliVector(rng.uniform(1e-6, 1.0 - 1e-6, dim))
    assert kl_block(q, p, 0, dim) >= -1e-12
    g_q = DiagonalGaussian(rng.normal(size=dim), 1.5)
    g_p = DiagonalGaussian(rng.normal(size=dim), 1.5)
    assert kl_block(g_q, g_p, 0, dim) >= -1e-12


def test_ternary_scale_invariance():
    # pattern-level mass is unchanged by any magnitude, bit for bit
    probs = (np.array([0.2, 0.5]), np.array([0.3, 0.25]), np.array([0.5, 0.25]))
    x = np.array([1.0, -1.0])
    small = TernaryPattern(*probs, magnitude=1.0)
    large = TernaryPattern(*probs, magnitude=7.25)
    assert small.log_mass(0, 2, x) == large.log_mass(0, 2, x)
    assert np.array_equal(large.scaled(x), 7.25 * x)


def test_sampling_matches_marginals():
    # Bernoulli(0.25) empirical frequency over 10^5 draws
    d = BernoulliVector(np.array([0.25]))
    s = derive_stream(StreamKey(11, (("bern", 0),)))
    x = d.sample(0, 1, s, count=10**5)
    assert x.mean() == pytest.approx(0.25, abs=0.01)

    t = TernaryPattern(np.array([0.2]), np.array([0.5]), np.array([0.3]))
    s = derive_stream(StreamKey(11, (("tern", 0),)))
    y = t.sample(0, 1, s, count=10**5).ravel()
    assert (y == -1).mean() == pytest.approx(0.2, abs=0.01)
    assert (y == 0).mean() == pytest.approx(0.5, abs=0.01)

    g = DiagonalGaussian(np.array([2.0]), 0.5)
    s = derive_stream(StreamKey(11, (("gauss", 0),)))
    z = g.sample(0, 1, s, count=10**5).ravel()
    assert z.mean() == pytest.approx(2.0, abs=0.01)
    assert z.std() == pytest.approx(0.5, abs=0.01)


def test_sample_draw_counts_are_range_local():
    # sampling [2, 5) must not depend on coordinates outside the range
    d = BernoulliVector(np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]))
    key = StreamKey(12, (("rl", 0),))
    a = d.sample(2, 5, derive_stream(key), count=3)
    d2 = BernoulliVector(np.array([0.9, 0.9, 0.3, 0.4, 0.5, 0.9]))
    b = d2.sample(2, 5, derive_stream(key), count=3)
    assert np.array_equal(a, b)


def test_range_validation():
    d = BernoulliVector(np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        d.log_mass(0, 3, np.array([0.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        d.log_mass(1, 1, np.array([]))
    with pytest.raises(ValueError):
        d.log_mass(0, 2, np.array([0.0, 0.5]))  # off-support value
