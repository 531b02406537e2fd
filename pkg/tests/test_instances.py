import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ghdlab import (
    BitString,
    CubePromise,
    PromiseUnreachableError,
    RandomSource,
    SpherePromise,
    SphereVector,
    ghd_label,
    ghs_label,
    hamming_distance,
    repeat_amplify,
    sample_haar,
    sample_pair_at_distance,
    sample_pair_at_ip,
    sample_promise,
)
from ghdlab.instances import haar_rows

bits_lists = st.lists(st.integers(0, 1), min_size=1, max_size=200)


def bs(s: str) -> BitString:
    return BitString.from_bits([int(c) for c in s])


# ---------------------------------------------------------------------------
# BitString representation
# ---------------------------------------------------------------------------


@given(bits_lists)
def test_bits_roundtrip(bits):
    x = BitString.from_bits(bits)
    assert list(x.bits()) == bits
    assert x.n == len(bits)


@given(bits_lists)
def test_hex_roundtrip(bits):
    x = BitString.from_bits(bits)
    assert BitString.from_hex(x.n, x.to_hex()) == x


@given(bits_lists)
def test_int_roundtrip(bits):
    x = BitString.from_bits(bits)
    assert BitString.from_int(x.n, x.to_int()) == x


def test_hex_wire_format():
    # x_1..x_n read MSB-first: 0x0f3 = 0000 1111 0011
    x = BitString.from_hex(12, "0f3")
    assert str(x) == "000011110011"
    assert x.to_json() == {"n": 12, "hex": "0f3"}


def test_bit_is_one_based():
    x = bs("0100")
    assert x.bit(2) == 1
    assert [x.bit(i) for i in (1, 3, 4)] == [0, 0, 0]
    with pytest.raises(IndexError):
        x.bit(0)


def test_weight_and_xor_cross_word_boundary():
    x = BitString.from_int(100, (1 << 100) - 1)
    assert x.weight() == 100
    y = BitString.zeros(100)
    assert hamming_distance(x, y) == 100
    assert (x ^ x).weight() == 0


def test_tail_bits_rejected():
    with pytest.raises(ValueError):
        BitString(4, np.array([16], dtype=np.uint64))


# ---------------------------------------------------------------------------
# Hamming distance
# ---------------------------------------------------------------------------


def test_distance_examples():
    x = bs("0101")
    assert hamming_distance(x, x) == 0
    assert hamming_distance(bs("0000"), bs("1111")) == 4
    assert hamming_distance(bs("0101"), bs("0110")) == 2


def test_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        hamming_distance(bs("01"), bs("011"))


@given(bits_lists, st.randoms(use_true_random=False))
def test_distance_popcount_identity(bits, rnd):
    x = BitString.from_bits(bits)
    y = BitString.from_bits([rnd.randint(0, 1) for _ in bits])
    assert hamming_distance(x, y) == x.weight() + y.weight() - 2 * (x & y).weight()


@given(st.integers(2, 64), st.data())
def test_distance_is_a_metric(n, data):
    draw = lambda: BitString.from_bits(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    x, y, z = draw(), draw(), draw()
    assert hamming_distance(x, y) == hamming_distance(y, x)
    assert hamming_distance(x, z) <= hamming_distance(x, y) + hamming_distance(y, z)
    assert (hamming_distance(x, y) == 0) == (x == y)


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------


def test_ghd_label_examples():
    promise = CubePromise(4, 2)
    assert ghd_label(bs("0000"), bs("0000"), promise) == 0
    assert ghd_label(bs("0000"), bs("1111"), promise) == 1
    assert ghd_label(bs("0000"), bs("1100"), promise) is None


def test_ghd_label_symmetric():
    promise = CubePromise(6, 1)
    gen = RandomSource(3).generator()
    for _ in range(50):
        x, y = BitString.random(6, gen), BitString.random(6, gen)
        assert ghd_label(x, y, promise) == ghd_label(y, x, promise)


def test_ghs_label_examples():
    e1 = SphereVector([1.0, 0.0])
    e2 = SphereVector([0.0, 1.0])
    promise = SpherePromise(2, 0.1)
    assert ghs_label(e1, e1, promise) == 0
    assert ghs_label(e1, SphereVector([-1.0, 0.0]), promise) == 1
    assert ghs_label(e1, e2, promise) is None
    assert ghs_label(e1, e2, promise) == ghs_label(e2, e1, promise)


def test_promise_validation():
    with pytest.raises(ValueError):
        CubePromise(4, 3)  # g > n/2
    with pytest.raises(ValueError):
        SpherePromise(4, 0.0)
    with pytest.raises(ValueError):
        SpherePromise(4, 1.5)


def test_sphere_vector_must_be_unit():
    with pytest.raises(ValueError):
        SphereVector([1.0, 1.0])


# ---------------------------------------------------------------------------
# Haar sampling
# ---------------------------------------------------------------------------


def test_haar_unit_norm():
    rs = RandomSource(11)
    for n in (1, 2, 7, 50):
        v = sample_haar(n, rs.split(n))
        assert abs(np.linalg.norm(v.coords) - 1.0) <= 1e-9


def test_haar_coordinate_means():
    # coordinate variance is 1/n by symmetry; 5 sigma band on the mean
    n, draws = 50, 100_000
    pts = haar_rows(RandomSource(5).generator(), draws, n)
    band = 5.0 * np.sqrt(1.0 / (n * draws))
    assert np.all(np.abs(pts.mean(axis=0)) < band)


def test_haar_zero_sphere():
    pts = haar_rows(RandomSource(6).generator(), 10_000, 1)
    frac = float(np.mean(pts[:, 0] > 0))
    assert abs(frac - 0.5) < 3 * 0.5 / np.sqrt(10_000)
    assert set(np.unique(pts)) == {-1.0, 1.0}


def test_haar_rotation_invariance_ks():
    # R = coordinate permutation + sign flips; first coordinate of R v must
    # match the first coordinate of v in distribution (1% KS level)
    n, draws = 8, 100_000
    pts = haar_rows(RandomSource(7).generator(), draws, n)
    perm = np.array([3, 0, 7, 2, 6, 1, 4, 5])
    signs = np.array([1, -1, 1, 1, -1, -1, 1, -1], dtype=float)
    rotated = pts[:, perm] * signs
    stat = stats.ks_2samp(rotated[:, 0], pts[:, 0])
    assert stat.pvalue > 0.01


# ---------------------------------------------------------------------------
# Promise sampling
# ---------------------------------------------------------------------------


def test_sample_promise_cube_extreme_gap():
    promise = CubePromise(4, 2)  # |dist - 2| >= 2 forces dist in {0, 4}
    rs = RandomSource(8)
    for i in range(200):
        x, y = sample_promise(promise, rs.split(i))
        assert hamming_distance(x, y) in (0, 4)


def test_sample_promise_outputs_satisfy_promise():
    promise = CubePromise(16, 4)
    sphere = SpherePromise(6, 0.3)
    rs = RandomSource(9)
    for i in range(100):
        x, y = sample_promise(promise, rs.split(i))
        assert promise.holds(x, y)
        u, v = sample_promise(sphere, rs.split(1000 + i))
        assert sphere.holds(u, v)


def test_sample_promise_measure_zero_reports():
    with pytest.raises(PromiseUnreachableError):
        sample_promise(SpherePromise(2, 1.0), RandomSource(10), max_attempts=20_000)


def test_cube_promise_acceptance_rate_matches_binomial():
    # Pr(|Bin(16,1/2) - 8| >= 4) = 2 * sum_{d<=4} C(16,d) / 2^16
    from math import comb

    n, g, trials = 16, 4, 50_000
    p_exact = 2 * sum(comb(n, d) for d in range(5)) / 2**n
    gen = RandomSource(12).generator()
    accepted = 0
    for _ in range(trials):
        x, y = BitString.random(n, gen), BitString.random(n, gen)
        accepted += abs(hamming_distance(x, y) - n / 2) >= g
    sigma = np.sqrt(p_exact * (1 - p_exact) / trials)
    assert abs(accepted / trials - p_exact) < 3 * sigma


# ---------------------------------------------------------------------------
# Repetition
# ---------------------------------------------------------------------------


def test_repeat_examples():
    assert str(repeat_amplify(bs("01"), 3)) == "010101"


@given(st.integers(1, 5), st.data())
def test_repeat_multiplies_distance(r, data):
    n = 8
    x = BitString.from_bits(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    y = BitString.from_bits(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    assert hamming_distance(repeat_amplify(x, r), repeat_amplify(y, r)) == r * hamming_distance(x, y)


def test_repeat_blows_up_gapless_pair_to_promise():
    # dist = n/2 + 1 with r = n lands exactly on the GHD(n^2, n) promise edge
    n = 8
    gen = RandomSource(13).generator()
    x, y = sample_pair_at_distance(n, n // 2 + 1, gen)
    X, Y = repeat_amplify(x, n), repeat_amplify(y, n)
    assert X.n == n * n
    promise = CubePromise(n * n, n)
    assert ghd_label(X, Y, promise) == 1


# ---------------------------------------------------------------------------
# Exact-parameter samplers and the random source
# ---------------------------------------------------------------------------


def test_sample_pair_at_distance():
    gen = RandomSource(14).generator()
    for d in (0, 3, 8):
        x, y = sample_pair_at_distance(8, d, gen)
        assert hamming_distance(x, y) == d
    with pytest.raises(ValueError):
        sample_pair_at_distance(8, 9, gen)


def test_sample_pair_at_ip():
    gen = RandomSource(15).generator()
    for ip in (-0.9, 0.0, 0.3, 1.0):
        x, y = sample_pair_at_ip(16, ip, gen)
        assert abs(x.dot(y) - ip) < 1e-9


def test_random_source_reproducible_and_split():
    a = RandomSource(99, 3)
    assert np.array_equal(a.generator().integers(0, 1 << 30, 5),
                          a.generator().integers(0, 1 << 30, 5))
    assert a.split(1) == a.split(1)
    assert a.split(1) != a.split(2)
    assert a.split(1, 2) != a.split(1, 3)


def test_random_source_serialization():
    assert RandomSource(5, 7).to_json() == {"seed": 5, "stream": 7}
