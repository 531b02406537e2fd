import math

import numpy as np
import pytest

from ghdlab import (
    BitString,
    CubePromise,
    HyperplaneSketchSeed,
    RandomSource,
    Round,
    SphereDomain,
    collision_probability,
    embed_cube_to_sphere,
    gap_transfer_check,
    ghd_label,
    hamming_distance,
    lift_protocol,
    max_cost,
    run,
    sample_pair_at_ip,
    sample_promise,
    sketch_sphere_to_cube,
    trivial_protocol,
)
from ghdlab.protocols import DeterministicProtocol
from ghdlab.reductions import sketch_rows, taylor_arccos_residual


def bs(s):
    return BitString.from_bits([int(c) for c in s])


# ---------------------------------------------------------------------------
# Deterministic embedding
# ---------------------------------------------------------------------------


def test_embed_all_zero():
    v = embed_cube_to_sphere(bs("0000"))
    assert np.allclose(v.coords, [0.5, 0.5, 0.5, 0.5])


def test_embed_midpoint_orthogonal():
    x, y = bs("0000"), bs("0011")
    assert abs(embed_cube_to_sphere(x).dot(embed_cube_to_sphere(y))) < 1e-15


def test_embed_inner_product_identity():
    gen = RandomSource(1).generator()
    for n in (8, 32, 128):
        for _ in range(200):
            x, y = BitString.random(n, gen), BitString.random(n, gen)
            ip = embed_cube_to_sphere(x).dot(embed_cube_to_sphere(y))
            assert abs(ip - (1 - 2 * hamming_distance(x, y) / n)) < 1e-12


# ---------------------------------------------------------------------------
# Collision probability
# ---------------------------------------------------------------------------


def test_collision_probability_values():
    assert collision_probability(1.0) == 0.0
    assert collision_probability(-1.0) == 1.0
    assert collision_probability(0.0) == 0.5
    assert abs(collision_probability(0.5) - 1.0 / 3.0) < 1e-15


def test_collision_probability_monotone_and_clamped():
    grid = np.linspace(-1, 1, 201)
    vals = [collision_probability(float(z)) for z in grid]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert collision_probability(1.0 + 5e-10) == 0.0
    with pytest.raises(ValueError):
        collision_probability(1.1)


def test_taylor_residual_small():
    # arccos(z) = pi/2 - z - z^3/6 + O(z^5); residual below 1e-3 on |z| <= 0.3
    assert taylor_arccos_residual(0.3) <= 1e-3


# ---------------------------------------------------------------------------
# Hyperplane sketching
# ---------------------------------------------------------------------------


def test_sketch_deterministic_and_antisymmetric():
    seed = HyperplaneSketchSeed(512, RandomSource(2))
    x, _ = sample_pair_at_ip(8, 0.0, RandomSource(3).generator())
    s1 = sketch_sphere_to_cube(x, seed)
    s2 = sketch_sphere_to_cube(x, seed)
    assert s1 == s2
    from ghdlab import SphereVector

    neg = sketch_sphere_to_cube(SphereVector(-x.coords), seed)
    assert hamming_distance(s1, neg) == 512  # complement, ties have measure zero


def test_sketch_difference_rate_matches_arccos():
    n_out = 100_000
    gen = RandomSource(4).generator()
    x, y = sample_pair_at_ip(16, 0.3, gen)
    seed = HyperplaneSketchSeed(n_out, RandomSource(5))
    d = hamming_distance(sketch_sphere_to_cube(x, seed), sketch_sphere_to_cube(y, seed))
    p = collision_probability(0.3)
    assert abs(d / n_out - p) <= 3 * math.sqrt(p * (1 - p) / n_out)


def test_sketch_orthogonal_rate_half():
    n_out = 20_000
    gen = RandomSource(6).generator()
    x, y = sample_pair_at_ip(8, 0.0, gen)
    seed = HyperplaneSketchSeed(n_out, RandomSource(7))
    d = hamming_distance(sketch_sphere_to_cube(x, seed), sketch_sphere_to_cube(y, seed))
    assert abs(d / n_out - 0.5) <= 3 * math.sqrt(0.25 / n_out)


def test_sketch_bits_pass_runs_test():
    # Wald-Wolfowitz runs test on the disagreement indicators, 1% level
    n_out = 100_000
    gen = RandomSource(8).generator()
    x, y = sample_pair_at_ip(12, 0.3, gen)
    W = HyperplaneSketchSeed(n_out, RandomSource(9)).hyperplanes(12)
    bits = ((W @ x.coords < 0) != (W @ y.coords < 0)).astype(int)
    n1 = int(bits.sum())
    n0 = n_out - n1
    runs = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    mean = 2.0 * n0 * n1 / n_out + 1.0
    var = (mean - 1.0) * (mean - 2.0) / (n_out - 1.0)
    z = (runs - mean) / math.sqrt(var)
    assert abs(z) < 2.576


def test_seed_serialization_roundtrip():
    seed = HyperplaneSketchSeed(64, RandomSource(10, 3))
    again = HyperplaneSketchSeed.from_json(seed.to_json())
    assert np.array_equal(seed.hyperplanes(5), again.hyperplanes(5))


# ---------------------------------------------------------------------------
# Gap transfer
# ---------------------------------------------------------------------------


def test_gap_transfer_closed_form_and_margin():
    n_out = 10_000
    rep = gap_transfer_check(0.2, n_out, trials=80, rng=RandomSource(11), dim=16)
    p = collision_probability(0.2)
    # per-pair rate variance is p(1-p)/n_out; folding halves nothing material
    sigma = math.sqrt(p * (1 - p) / (80 * n_out))
    assert abs(rep.empirical_rate - rep.closed_form) <= 4 * sigma
    expected_margin = n_out * (0.5 - p)
    sigma_margin = math.sqrt(n_out * p * (1 - p) / 40)
    assert abs(rep.mean_margin - expected_margin) <= 3 * sigma_margin
    assert rep.taylor_residual <= 1e-3


def test_gap_transfer_landing_monotone_in_c0():
    rep = gap_transfer_check(
        0.2, 4000, trials=60, rng=RandomSource(12), c0_grid=[2.0, 4.0, 8.0], dim=16
    )
    rates = [row["landing_rate"] for row in rep.c0_rows]
    assert rates == sorted(rates)
    assert rep.c0_rows[0]["c0"] == 2.0


def test_gap_transfer_validates_gamma():
    with pytest.raises(ValueError):
        gap_transfer_check(0.0, 100, 10, RandomSource(0))


# ---------------------------------------------------------------------------
# Protocol lifting
# ---------------------------------------------------------------------------


def sign_pattern_protocol(dim: int) -> DeterministicProtocol:
    """Sphere protocol: Alice sends her coordinate sign pattern; Bob compares.

    On embedded cube inputs the pattern recovers the string exactly, so the
    lifted protocol solves the cube problem with zero error.
    """
    dom = SphereDomain(dim)

    def msg(v, t):
        return int(sum(1 << i for i in range(dim) if v[i] < 0))

    def out(v, t):
        mine = sum(1 << i for i in range(dim) if v[i] < 0)
        d = int(mine ^ t[0]).bit_count()
        return 0 if 2 * d <= dim else 1

    return DeterministicProtocol(dom, dom, (Round("alice", dim, msg),), "bob", out,
                                 name="sign-pattern")


def test_lift_cube_to_sphere_exact_on_promise():
    n = 16
    P = sign_pattern_protocol(n)
    lifted = lift_protocol("cube-to-sphere", P, gap=4.0)
    promise = CubePromise(n, 4)
    rs = RandomSource(13)
    for i in range(300):
        x, y = sample_promise(promise, rs.split(i))
        assert run(lifted, x, y).output == ghd_label(x, y, promise)
    assert lifted.n_rounds == P.n_rounds
    assert max_cost(lifted) == max_cost(P)


def test_lift_sphere_to_cube_error_bounded_by_sketch_failure():
    n_out, dim, gamma, c0 = 512, 8, 0.25, 4.0
    seed = HyperplaneSketchSeed(n_out, RandomSource(14))
    P = trivial_protocol(n_out, tables=False)
    lifted = lift_protocol("sphere-to-cube", P, gap=gamma, seed=seed,
                           sphere_dim=dim, c0=c0)
    assert lifted.n_rounds == P.n_rounds
    gen = RandomSource(15).generator()
    g_target = gamma * n_out / c0
    errors = landing_failures = 0
    trials = 150
    for t in range(trials):
        ip = gamma if t % 2 == 0 else -gamma
        x, y = sample_pair_at_ip(dim, ip, gen)
        out = run(lifted, x, y).output
        truth = 0 if ip > 0 else 1
        errors += out != truth
        sx = sketch_sphere_to_cube(x, seed)
        sy = sketch_sphere_to_cube(y, seed)
        d = hamming_distance(sx, sy)
        signed = n_out / 2 - d if ip > 0 else d - n_out / 2
        landing_failures += signed < g_target
    assert errors <= landing_failures  # sign flips are a subset of landing misses


def test_lift_preserves_round_count_multiround():
    dom = SphereDomain(4)

    def m1(v, t):
        return 0 if v[0] >= 0 else 1

    def m2(v, t):
        return 0 if v[1] >= 0 else 1

    def out(v, t):
        return t[0] ^ t[1]

    P = DeterministicProtocol(
        dom, dom, (Round("alice", 1, m1), Round("bob", 1, m2)), "alice", out
    )
    lifted = lift_protocol("cube-to-sphere", P, gap=1.0)
    assert lifted.n_rounds == 2
    r = run(lifted, BitString.zeros(4), BitString.zeros(4))
    assert len(r.transcript) == 2


def test_lift_rejects_mismatched_domains():
    with pytest.raises(Exception):
        lift_protocol("cube-to-sphere", trivial_protocol(8), gap=1.0)
    with pytest.raises(Exception):
        lift_protocol("sphere-to-cube", sign_pattern_protocol(8), gap=0.2,
                      seed=HyperplaneSketchSeed(8, RandomSource(0)), sphere_dim=4)
