import json
import math
from fractions import Fraction

import numpy as np
import pytest

from ghdlab import (
    BitString,
    CubeDomain,
    CubePromise,
    DeterministicProtocol,
    FixedDistanceCubePairs,
    ProtocolError,
    RandomSource,
    Round,
    UniformCubePairs,
    build_random_net,
    constant_protocol,
    discretize,
    evaluate_error,
    first_bit_then_trivial,
    majority_error,
    max_cost,
    prefix_exchange_protocol,
    protocol_from_json,
    protocol_to_json,
    run,
    sample_haar,
    sample_pair_at_distance,
    sample_promise,
    sampling_protocol,
    sign_label_cube,
    table_protocol,
    trivial_protocol,
)
from ghdlab.protocols import SphereDomain, net_pair_weights


def bs(s):
    return BitString.from_bits([int(c) for c in s])


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def test_trivial_protocol_runs_correctly():
    P = trivial_protocol(8)
    promise = CubePromise(8, 2)
    rs = RandomSource(1)
    for i in range(100):
        x, y = sample_promise(promise, rs.split(i))
        res = run(P, x, y)
        assert res.output == sign_label_cube(x, y)
        assert len(res.transcript) == 1
        assert res.message_sizes == (8,)
    assert max_cost(P) == 8


def test_zero_round_constant_errs_on_far_pairs():
    P = constant_protocol(6, 0)
    x, y = sample_pair_at_distance(6, 5, RandomSource(2).generator())
    res = run(P, x, y)
    assert res.output == 0 != sign_label_cube(x, y)
    assert res.transcript == ()
    assert max_cost(P) == 0


def test_run_rejects_message_overflow():
    dom = CubeDomain(4)

    def too_big(x, t):
        return 3  # two bits, budget is one

    P = DeterministicProtocol(dom, dom, (Round("alice", 1, too_big),), "bob",
                              lambda y, t: 0)
    with pytest.raises(ProtocolError):
        run(P, bs("0000"), bs("0000"))


def test_table_overflow_rejected_at_construction():
    with pytest.raises(ProtocolError):
        Round("alice", 1, np.full((4, 1), 2))


def test_transcript_length_equals_rounds():
    P = prefix_exchange_protocol(6, 3)
    res = run(P, bs("010101"), bs("101010"))
    assert len(res.transcript) == 3


# ---------------------------------------------------------------------------
# Error evaluation
# ---------------------------------------------------------------------------


def test_trivial_error_zero_both_conventions():
    P = trivial_protocol(8)
    assert evaluate_error(P, UniformCubePairs(8), "sign").error_probability == 0.0
    dist = UniformCubePairs(8, CubePromise(8, 2))
    assert evaluate_error(P, dist, "promise").error_probability == 0.0


def test_constant_error_exact_binomial():
    # Pr(dist > 4) on 8 bits = sum_{d=5..8} C(8,d) / 2^8 = 93/256; the sign
    # convention counts dist = n/2 as output 0
    rep = evaluate_error(constant_protocol(8), UniformCubePairs(8), "sign")
    assert rep.error_fraction == Fraction(93, 256)
    assert rep.evaluation == "exhaustive"


def test_exhaustive_matches_monte_carlo():
    P = prefix_exchange_protocol(8, 2)
    dist = UniformCubePairs(8)
    exact = evaluate_error(P, dist, "sign")
    mc = evaluate_error(P, dist, "sign", method="monte-carlo", trials=20_000,
                        rng=RandomSource(3))
    assert abs(mc.error_probability - exact.error_probability) <= mc.half_width + 0.01


def test_promise_convention_requires_promise():
    with pytest.raises(ValueError):
        evaluate_error(trivial_protocol(6), UniformCubePairs(6), "promise")


def test_enumeration_cap_suggests_monte_carlo():
    P = trivial_protocol(10)
    with pytest.raises(ProtocolError, match="Monte Carlo"):
        evaluate_error(P, UniformCubePairs(10), "sign", method="exhaustive",
                       exhaustive_cap=1 << 10)


def test_workers_do_not_change_monte_carlo_result():
    P = prefix_exchange_protocol(8, 2)
    dist = UniformCubePairs(8)
    a = evaluate_error(P, dist, "sign", method="monte-carlo", trials=8192,
                       rng=RandomSource(4), workers=1)
    b = evaluate_error(P, dist, "sign", method="monte-carlo", trials=8192,
                       rng=RandomSource(4), workers=4)
    assert a.error_probability == b.error_probability


# ---------------------------------------------------------------------------
# Sampling protocol
# ---------------------------------------------------------------------------


def test_sampling_protocol_rejects_even_m():
    with pytest.raises(ValueError):
        sampling_protocol(0.1, 4, 20)


def test_majority_error_values():
    assert majority_error(1, 0.4) == pytest.approx(0.4)
    assert majority_error(3, 0.4) == pytest.approx(0.352)
    assert majority_error(3, 0.25) == pytest.approx(0.15625)
    assert majority_error(5, 0.4) == pytest.approx(0.31744)


@pytest.mark.parametrize("m,gamma", [(1, 0.1), (3, 0.1), (3, 0.25)])
def test_sampling_protocol_matches_binomial(m, gamma):
    n = 40
    d_lo = round((0.5 - gamma) * n)
    d_hi = round((0.5 + gamma) * n)
    P = sampling_protocol(gamma, m, n, coin=RandomSource(5))
    dist = FixedDistanceCubePairs(n, (d_lo, d_hi))
    rep = evaluate_error(P, dist, "sign", method="monte-carlo", trials=30_000,
                         rng=RandomSource(6))
    expected = majority_error(m, 0.5 - gamma)
    sigma = math.sqrt(expected * (1 - expected) / rep.trials)
    assert abs(rep.error_probability - expected) <= 3 * sigma
    assert max_cost(P) == m


def test_sampling_protocol_sphere_variant():
    m, ip = 5, 0.5
    P = sampling_protocol(None, m, 8, domain="sphere", coin=RandomSource(7))
    from ghdlab import FixedIpSpherePairs

    dist = FixedIpSpherePairs(8, (ip, -ip))
    rep = evaluate_error(P, dist, "sign", method="monte-carlo", trials=20_000,
                         rng=RandomSource(8))
    p = math.acos(ip) / math.pi  # per-hyperplane disagreement probability
    expected = majority_error(m, p)
    sigma = math.sqrt(expected * (1 - expected) / rep.trials)
    assert abs(rep.error_probability - expected) <= 3 * sigma


# ---------------------------------------------------------------------------
# Builders and serialization
# ---------------------------------------------------------------------------


def test_first_bit_then_trivial_is_exact():
    rep = evaluate_error(first_bit_then_trivial(8), UniformCubePairs(8), "sign")
    assert rep.error_probability == 0.0
    assert rep.rounds == 2


def test_table_protocol_builder_agrees_with_callbacks():
    n = 5

    def msg(x, t):
        return x.bit(1)

    def out(y, t):
        return t[0] ^ y.bit(1)

    P = table_protocol(n, [("alice", 1, msg)], out)
    gen = RandomSource(9).generator()
    for _ in range(50):
        x, y = BitString.random(n, gen), BitString.random(n, gen)
        assert run(P, x, y).output == (x.bit(1) ^ y.bit(1))


def test_protocol_json_roundtrip():
    P = prefix_exchange_protocol(6, 2)
    blob = json.dumps(protocol_to_json(P))
    Q = protocol_from_json(json.loads(blob))
    assert Q.n_rounds == P.n_rounds
    a = evaluate_error(P, UniformCubePairs(6), "sign").error_fraction
    b = evaluate_error(Q, UniformCubePairs(6), "sign").error_fraction
    assert a == b


def test_builtin_by_name():
    P = protocol_from_json({"builtin": "constant0", "n": 6})
    assert evaluate_error(P, UniformCubePairs(6), "sign").error_probability > 0
    with pytest.raises(ProtocolError):
        protocol_from_json({"builtin": "nope", "n": 6})


# ---------------------------------------------------------------------------
# Delta-nets and discretization
# ---------------------------------------------------------------------------


def test_net_rounding_idempotent_and_total():
    net = build_random_net(3, 0.25, RandomSource(10))
    assert net.size > 10
    for i in range(0, net.size, max(1, net.size // 20)):
        assert net.round_index(net.points[i]) == i
    v = sample_haar(3, RandomSource(11))
    idx = net.round_index(v)
    assert 0 <= idx < net.size


def test_net_covering_heuristic():
    net = build_random_net(3, 0.3, RandomSource(12))
    from ghdlab.instances import haar_rows

    pts = haar_rows(RandomSource(13).generator(), 20_000, 3)
    dmin = np.sqrt(np.maximum(2.0 - 2.0 * (pts @ net.points.T).max(axis=1), 0.0))
    assert float(np.mean(dmin <= 0.3)) >= 0.999
    assert float(dmin.max()) <= 0.45


def test_discretize_bounds_inner_product_shift():
    gamma = 0.8
    net = build_random_net(3, gamma / 4, RandomSource(14))
    from ghdlab.instances import haar_rows

    gen = RandomSource(15).generator()
    xs = haar_rows(gen, 10_000, 3)
    ys = haar_rows(gen, 10_000, 3)
    rx = net.points[net.round_many(xs)]
    ry = net.points[net.round_many(ys)]
    shift = np.abs(np.einsum("ij,ij->i", xs, ys) - np.einsum("ij,ij->i", rx, ry))
    assert float(shift.max()) <= 2 * net.delta + 1e-9


def test_discretize_materializes_tables_and_checks_spacing():
    dom = SphereDomain(3)

    def msg(v, t):
        return 0 if v[0] >= 0 else 1

    def out(v, t):
        return t[0]

    P = DeterministicProtocol(dom, dom, (Round("alice", 1, msg),), "bob", out)
    net = build_random_net(3, 0.2, RandomSource(16))
    Q = discretize(P, net, gamma=0.8)
    assert Q.is_table()
    assert Q.rounds[0].fn.shape == (net.size, 1)
    for i in (0, net.size // 2):
        assert Q.rounds[0].fn[i, 0] == (0 if net.points[i][0] >= 0 else 1)
    with pytest.raises(ProtocolError):
        discretize(P, net, gamma=0.5)  # delta = 0.2 > gamma/4 = 0.125


def test_net_pair_weights_sum_to_one():
    net = build_random_net(3, 0.35, RandomSource(17))
    w = net_pair_weights(net, RandomSource(18), samples=50_000)
    assert w.shape == (net.size,)
    assert abs(float(w.sum()) - 1.0) < 1e-12
    assert np.all(w >= 0)
