"""Two-party multi-round protocols: representation, execution, error evaluation.

A deterministic protocol is an ordered list of rounds.  Each round names a
speaker, a message bit budget, and a message function of (speaker's own
input, transcript so far); after the last round the output party maps (own
input, full transcript) to a bit.  Message functions are either explicit
lookup tables (numpy arrays indexed by [input_index, transcript_code],
required for exact exhaustive evaluation and for round elimination) or
plain callables.

Error evaluation supports two conventions, both first-class:

* ``"sign"``      error whenever the output differs from the sign of the
                  (embedded) inner product, over the whole distribution;
* ``"promise"``   error counted only on pairs satisfying the gap promise.

Exhaustive cube evaluation is exact rational arithmetic (integer counts);
Monte Carlo reports a 99% confidence half-width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from .instances import (
    BitString,
    CubePromise,
    SphereVector,
    haar_rows,
    sample_pair_at_distance,
    sample_pair_at_ip,
    sign_label_cube,
)
from .rng import RandomSource
from .util import confidence99_half_width, decode_array, encode_array, run_blocks, split_blocks

__all__ = [
    "ProtocolError",
    "CubeDomain",
    "SphereDomain",
    "NetDomain",
    "Round",
    "DeterministicProtocol",
    "PublicCoinProtocol",
    "RunResult",
    "ErrorReport",
    "run",
    "max_cost",
    "evaluate_error",
    "UniformCubePairs",
    "FixedDistanceCubePairs",
    "FixedIpSpherePairs",
    "NetPairs",
    "trivial_protocol",
    "constant_protocol",
    "sampling_protocol",
    "majority_error",
    "table_protocol",
    "first_bit_then_trivial",
    "prefix_exchange_protocol",
    "DeltaNet",
    "build_random_net",
    "net_pair_weights",
    "discretize",
    "protocol_to_json",
    "protocol_from_json",
]

ALICE = "alice"
BOB = "bob"


class ProtocolError(ValueError):
    """Malformed protocol: overflowing message, bad domain, bad schedule."""


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CubeDomain:
    """Inputs are n-bit strings, encoded as little-endian integers."""

    n: int

    @property
    def size(self) -> int:
        return 1 << self.n

    def encode(self, x) -> int:
        if isinstance(x, BitString):
            if x.n != self.n:
                raise ProtocolError("input dimension mismatch")
            return x.to_int()
        x = int(x)
        if not 0 <= x < self.size:
            raise ProtocolError("input index out of range")
        return x

    def decode(self, idx: int) -> BitString:
        return BitString.from_int(self.n, idx)


@dataclass(frozen=True)
class SphereDomain:
    """Inputs are unit vectors; not enumerable (Monte Carlo only)."""

    dim: int
    size = None

    def encode(self, x) -> np.ndarray:
        coords = x.coords if isinstance(x, SphereVector) else np.asarray(x, dtype=np.float64)
        if coords.shape != (self.dim,):
            raise ProtocolError("input dimension mismatch")
        return coords


@dataclass(frozen=True)
class NetDomain:
    """Inputs are indices into a finite point set on the sphere."""

    points: np.ndarray  # (size, dim), unit rows

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def encode(self, x) -> int:
        if isinstance(x, (int, np.integer)):
            if not 0 <= int(x) < self.size:
                raise ProtocolError("net index out of range")
            return int(x)
        coords = x.coords if isinstance(x, SphereVector) else np.asarray(x, dtype=np.float64)
        return nearest_point(self.points, coords)

    def decode(self, idx: int) -> SphereVector:
        return SphereVector(self.points[idx])


def nearest_point(points: np.ndarray, v: np.ndarray) -> int:
    """Index of the Euclidean-nearest row; ties resolve to the lowest index."""
    return int(np.argmin(np.linalg.norm(points - v[None, :], axis=1)))


Domain = Union[CubeDomain, SphereDomain, NetDomain]


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Round:
    """One message: speaker, bit budget, and the message function.

    ``fn`` is either an ndarray table of shape (domain size, transcript
    codes so far) or a callable (encoded input, transcript tuple) -> int.
    """

    speaker: str
    bits: int
    fn: Union[np.ndarray, Callable[[Any, tuple], int]]

    def __post_init__(self):
        if self.speaker not in (ALICE, BOB):
            raise ProtocolError("speaker must be 'alice' or 'bob'")
        if self.bits < 1:
            raise ProtocolError("message budget must be >= 1 bit")
        if isinstance(self.fn, np.ndarray):
            tbl = np.ascontiguousarray(self.fn)
            if tbl.ndim != 2:
                raise ProtocolError("round table must be 2-d")
            if tbl.size and (tbl.min() < 0 or tbl.max() >= (1 << self.bits)):
                raise ProtocolError("table entry overflows the message budget")
            tbl.setflags(write=False)
            object.__setattr__(self, "fn", tbl)


@dataclass(frozen=True)
class DeterministicProtocol:
    alice_domain: Domain
    bob_domain: Domain
    rounds: tuple[Round, ...]
    output_party: str
    output: Union[np.ndarray, Callable[[Any, tuple], int]]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        if self.output_party not in (ALICE, BOB):
            raise ProtocolError("output_party must be 'alice' or 'bob'")
        if isinstance(self.output, np.ndarray):
            tbl = np.ascontiguousarray(self.output)
            tbl.setflags(write=False)
            object.__setattr__(self, "output", tbl)

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    def is_table(self) -> bool:
        return isinstance(self.output, np.ndarray) and all(
            isinstance(r.fn, np.ndarray) for r in self.rounds
        )

    def domain_of(self, party: str) -> Domain:
        return self.alice_domain if party == ALICE else self.bob_domain


@dataclass(frozen=True)
class PublicCoinProtocol:
    """A deterministic protocol per shared-coin outcome, at zero message cost.

    ``build`` materializes the protocol for one coin draw; evaluation
    derives one coin substream per trial.
    """

    coin: RandomSource
    build: Callable[[np.random.Generator], DeterministicProtocol]
    n_rounds: int
    alice_domain: Domain
    bob_domain: Domain
    name: str = ""

    def realize(self, trial: int) -> DeterministicProtocol:
        return self.build(self.coin.split(trial).generator())


@dataclass(frozen=True)
class RunResult:
    output: int
    transcript: tuple[int, ...]
    message_sizes: tuple[int, ...]  # budgeted bits per message


def _call_fn(fn, inp, t_code: int, t_tuple: tuple) -> int:
    if isinstance(fn, np.ndarray):
        return int(fn[inp, t_code])
    return int(fn(inp, t_tuple))


def run(P: DeterministicProtocol, x, y) -> RunResult:
    """Execute the protocol round by round; raises ProtocolError on overflow."""
    xe = P.alice_domain.encode(x)
    ye = P.bob_domain.encode(y)
    t_code = 0
    transcript: list[int] = []
    sizes: list[int] = []
    for r in P.rounds:
        inp = xe if r.speaker == ALICE else ye
        m = _call_fn(r.fn, inp, t_code, tuple(transcript))
        if not 0 <= m < (1 << r.bits):
            raise ProtocolError(f"message {m} overflows {r.bits}-bit budget")
        transcript.append(m)
        sizes.append(r.bits)
        t_code = (t_code << r.bits) | m
    out_inp = xe if P.output_party == ALICE else ye
    out = _call_fn(P.output, out_inp, t_code, tuple(transcript))
    if out not in (0, 1):
        raise ProtocolError("output must be a bit")
    return RunResult(out, tuple(transcript), tuple(sizes))


def max_cost(P: Union[DeterministicProtocol, PublicCoinProtocol]) -> int:
    """Length of the longest single message, worst case.

    Table rounds report the bits actually needed by the largest table entry;
    callable rounds report the declared budget.
    """
    if isinstance(P, PublicCoinProtocol):
        return max_cost(P.realize(0))
    worst = 0
    for r in P.rounds:
        if isinstance(r.fn, np.ndarray):
            worst = max(worst, int(r.fn.max()).bit_length() if r.fn.size else 0)
        else:
            worst = max(worst, r.bits)
    return worst


# ---------------------------------------------------------------------------
# Vectorized exhaustive execution (table protocols on finite domains)
# ---------------------------------------------------------------------------


def output_matrix(P: DeterministicProtocol) -> np.ndarray:
    """Protocol output for every input pair, shape (|X|, |Y|) uint8.

    Requires table form.  Transcript codes are accumulated in int64, so the
    total message bits must stay below 62.
    """
    if not P.is_table():
        raise ProtocolError("exhaustive execution requires table form")
    X, Y = P.alice_domain.size, P.bob_domain.size
    total_bits = sum(r.bits for r in P.rounds)
    if total_bits > 62:
        raise ProtocolError("transcript exceeds 62 bits; cannot enumerate")
    dtype = np.int32 if total_bits <= 30 else np.int64
    ax = np.arange(X)
    by = np.arange(Y)
    T = np.zeros((X, Y), dtype=dtype)
    for r in P.rounds:
        if r.speaker == ALICE:
            M = r.fn[ax[:, None], T]
        else:
            M = r.fn[by[None, :], T]
        T = ((T << r.bits) | M).astype(dtype, copy=False)
    own = ax[:, None] if P.output_party == ALICE else by[None, :]
    return P.output[own, T].astype(np.uint8)


def cube_distance_matrix(n: int) -> np.ndarray:
    """Hamming distance between every pair of n-bit strings (n <= 16), uint8."""
    if n > 16:
        raise ValueError("distance matrix limited to n <= 16")
    idx = np.arange(1 << n, dtype=np.uint32)
    return np.bitwise_count(idx[:, None] ^ idx[None, :]).astype(np.uint8)


# ---------------------------------------------------------------------------
# Input-pair distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExhaustiveSupport:
    """Pair labels plus support/weights for full enumeration.

    ``mask is None`` means every pair, equal weight.  ``weights`` switches to
    float weights (delta-net Voronoi masses); exact rational arithmetic is
    only available when weights is None.
    """

    labels: np.ndarray
    mask: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None


@dataclass(frozen=True)
class UniformCubePairs:
    """x, y independent uniform n-bit strings, optionally promise-conditioned."""

    n: int
    promise: Optional[CubePromise] = None

    @property
    def domains(self) -> tuple[Domain, Domain]:
        return CubeDomain(self.n), CubeDomain(self.n)

    def enumerate(self) -> ExhaustiveSupport:
        dist = cube_distance_matrix(self.n)
        labels = (2 * dist.astype(np.int32) > self.n).astype(np.uint8)
        mask = None
        if self.promise is not None:
            mask = np.abs(dist - self.n / 2) >= self.promise.g
        return ExhaustiveSupport(labels=labels, mask=mask)

    def sample(self, gen: np.random.Generator):
        while True:
            x = BitString.random(self.n, gen)
            y = BitString.random(self.n, gen)
            if self.promise is None or self.promise.holds(x, y):
                return x, y, sign_label_cube(x, y)


@dataclass(frozen=True)
class FixedDistanceCubePairs:
    """Pairs at Hamming distance drawn uniformly from ``distances``."""

    n: int
    distances: tuple[int, ...]

    @property
    def domains(self) -> tuple[Domain, Domain]:
        return CubeDomain(self.n), CubeDomain(self.n)

    def sample(self, gen: np.random.Generator):
        d = int(self.distances[int(gen.integers(len(self.distances)))])
        x, y = sample_pair_at_distance(self.n, d, gen)
        return x, y, (0 if 2 * d <= self.n else 1)


@dataclass(frozen=True)
class FixedIpSpherePairs:
    """Unit-vector pairs with inner product drawn uniformly from ``ips``."""

    dim: int
    ips: tuple[float, ...]

    @property
    def domains(self) -> tuple[Domain, Domain]:
        return SphereDomain(self.dim), SphereDomain(self.dim)

    def sample(self, gen: np.random.Generator):
        ip = float(self.ips[int(gen.integers(len(self.ips)))])
        x, y = sample_pair_at_ip(self.dim, ip, gen)
        return x, y, (0 if ip >= 0 else 1)


@dataclass(frozen=True)
class NetPairs:
    """Product distribution over net indices with explicit marginal weights."""

    net: "DeltaNet"
    weights_a: np.ndarray
    weights_b: np.ndarray
    gamma: Optional[float] = None  # promise |ip| >= gamma on the net points

    @property
    def domains(self) -> tuple[Domain, Domain]:
        d = NetDomain(self.net.points)
        return d, d

    def enumerate(self) -> ExhaustiveSupport:
        ips = self.net.points @ self.net.points.T
        labels = (ips < 0).astype(np.uint8)
        W = np.asarray(self.weights_a)[:, None] * np.asarray(self.weights_b)[None, :]
        mask = None
        if self.gamma is not None:
            mask = np.abs(ips) >= self.gamma
        return ExhaustiveSupport(labels=labels, mask=mask, weights=W)


# ---------------------------------------------------------------------------
# Error evaluation
# ---------------------------------------------------------------------------

CONVENTIONS = {"sign": "sign-of-inner-product", "promise": "promise-only"}


@dataclass(frozen=True)
class ErrorReport:
    error_probability: float
    convention: str
    evaluation: str
    max_cost: int
    rounds: int
    error_fraction: Optional[Fraction] = None  # exact, when available
    trials: int = 0
    half_width: float = 0.0
    output_party: str = BOB
    name: str = ""

    def to_json(self) -> dict:
        obj = {
            "error_probability": self.error_probability,
            "convention": self.convention,
            "evaluation": self.evaluation,
            "max_cost": self.max_cost,
            "rounds": self.rounds,
            "output_party": self.output_party,
        }
        if self.error_fraction is not None:
            obj["error_exact"] = [
                int(self.error_fraction.numerator),
                int(self.error_fraction.denominator),
            ]
        if self.evaluation.startswith("monte-carlo"):
            obj["trials"] = self.trials
            obj["half_width_99"] = self.half_width
        if self.name:
            obj["protocol"] = self.name
        return obj


def _convention_name(convention: str) -> str:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    return CONVENTIONS[convention]


def evaluate_error(
    P: Union[DeterministicProtocol, PublicCoinProtocol],
    dist,
    convention: str = "sign",
    method: str = "auto",
    trials: int = 100_000,
    rng: Optional[RandomSource] = None,
    workers: int = 1,
    exhaustive_cap: int = 1 << 26,
) -> ErrorReport:
    """Error probability of P under ``dist`` and the named convention.

    ``convention="promise"`` requires the distribution to carry a promise
    (it conditions on the promise region).  Exhaustive mode needs a table
    protocol on enumerable domains with |X|*|Y| below the cap, and is exact
    rational on the cube; otherwise use Monte Carlo with a RandomSource.
    """
    conv = _convention_name(convention)
    if convention == "promise" and getattr(dist, "promise", getattr(dist, "gamma", None)) is None:
        raise ValueError("promise convention needs a promise-conditioned distribution")

    enumerable = (
        isinstance(P, DeterministicProtocol)
        and P.is_table()
        and hasattr(dist, "enumerate")
        and P.alice_domain.size is not None
    )
    if method == "auto":
        method = "exhaustive" if enumerable and P.alice_domain.size * P.bob_domain.size <= exhaustive_cap else "monte-carlo"
    if method == "exhaustive":
        if not enumerable:
            raise ProtocolError("exhaustive evaluation needs an enumerable table protocol")
        if P.alice_domain.size * P.bob_domain.size > exhaustive_cap:
            raise ProtocolError(
                f"{P.alice_domain.size}x{P.bob_domain.size} pairs exceed the "
                f"enumeration cap {exhaustive_cap}; use Monte Carlo"
            )
        return _evaluate_exhaustive(P, dist, convention, conv)
    if rng is None:
        raise ValueError("Monte Carlo evaluation requires a RandomSource")
    return _evaluate_monte_carlo(P, dist, convention, conv, trials, rng, workers)


def _evaluate_exhaustive(P, dist, convention, conv_name) -> ErrorReport:
    support = dist.enumerate()
    out = output_matrix(P)
    err = out != support.labels
    mask = support.mask
    if convention == "sign":
        mask = None  # full support, non-promise pairs labeled by sign
    if support.weights is None:
        if mask is None:
            bad = int(err.sum())
            total = err.size
        else:
            bad = int((err & mask).sum())
            total = int(mask.sum())
        frac = Fraction(bad, total)
        prob = float(frac)
        evaluation = "exhaustive"
    else:
        W = support.weights if mask is None else support.weights * mask
        prob = float((W * err).sum() / W.sum())
        frac = None
        evaluation = "exhaustive-weighted"
    return ErrorReport(
        error_probability=prob,
        convention=conv_name,
        evaluation=evaluation,
        max_cost=max_cost(P),
        rounds=P.n_rounds,
        error_fraction=frac,
        output_party=P.output_party,
        name=P.name,
    )


def _evaluate_monte_carlo(P, dist, convention, conv_name, trials, rng, workers) -> ErrorReport:
    public = isinstance(P, PublicCoinProtocol)

    def one_block(block_idx: int, count: int) -> int:
        gen = rng.split(block_idx).generator()
        errors = 0
        for j in range(count):
            x, y, label = dist.sample(gen)
            base = P.realize((block_idx << 20) | j) if public else P
            if run(base, x, y).output != label:
                errors += 1
        return errors

    blocks = split_blocks(trials, 4096)
    errors = sum(run_blocks(blocks, one_block, workers))
    p_hat = errors / trials
    some = P.realize(0) if public else P
    return ErrorReport(
        error_probability=p_hat,
        convention=conv_name,
        evaluation="monte-carlo",
        max_cost=max_cost(some),
        rounds=P.n_rounds,
        trials=trials,
        half_width=confidence99_half_width(p_hat, trials),
        output_party=some.output_party,
        name=P.name,
    )


# ---------------------------------------------------------------------------
# Built-in protocols
# ---------------------------------------------------------------------------


def trivial_protocol(n: int, tables: Optional[bool] = None) -> DeterministicProtocol:
    """Alice sends her whole input; Bob outputs the sign label."""
    dom = CubeDomain(n)
    if tables is None:
        tables = n <= 13
    if tables:
        msg = np.arange(1 << n, dtype=np.int64)[:, None]
        dist = cube_distance_matrix(n)
        out = (2 * dist.astype(np.int32) > n).astype(np.uint8)
        # output[y, transcript=x]; table is indexed [bob input, transcript]
        return DeterministicProtocol(
            dom, dom, (Round(ALICE, n, msg),), BOB, out.T.copy(), name="trivial"
        )

    def send_all(x: int, t: tuple) -> int:
        return x

    def decide(y: int, t: tuple) -> int:
        d = int(t[0] ^ y).bit_count()
        return 0 if 2 * d <= n else 1

    return DeterministicProtocol(dom, dom, (Round(ALICE, n, send_all),), BOB, decide, name="trivial")


def constant_protocol(n: int, value: int = 0) -> DeterministicProtocol:
    """Zero rounds; Bob outputs a constant."""
    dom = CubeDomain(n)
    out = np.full((1 << n, 1), value, dtype=np.uint8)
    return DeterministicProtocol(dom, dom, (), BOB, out, name=f"constant{value}")


def majority_error(m: int, p: float) -> float:
    """Pr(majority of m iid p-coins comes out wrong) when the truth is the
    minority side: Pr(Bin(m, p) > m/2) for p < 1/2 regime callers."""
    from math import comb

    return float(sum(comb(m, j) * p**j * (1 - p) ** (m - j) for j in range(m // 2 + 1, m + 1)))


def sampling_protocol(
    gamma: float,
    m: int,
    n: int,
    domain: str = "cube",
    coin: Optional[RandomSource] = None,
) -> PublicCoinProtocol:
    """The one-round shared-randomness majority protocol.

    Cube version: the coins pick m coordinates with replacement, Alice sends
    her m bits, Bob outputs the majority of the positionwise disagreements.
    Each compared coordinate disagrees with probability dist/n, which the gap
    promise keeps at 1/2 -+ gamma (gamma in Hamming-fraction units).  Sphere
    version: m Haar hyperplanes instead of coordinates; a hyperplane splits
    the pair with probability arccos(x.y)/pi.
    """
    if m < 1 or m % 2 == 0:
        raise ValueError("m must be odd so the majority is well-defined")
    if coin is None:
        coin = RandomSource(0)
    if domain == "cube":
        dom = CubeDomain(n)

        def build(gen: np.random.Generator) -> DeterministicProtocol:
            idx = gen.integers(0, n, size=m)
            shifts = idx.astype(np.int64)

            def a_msg(x: int, t: tuple) -> int:
                bits = (x >> shifts) & 1
                return int(np.bitwise_or.reduce(bits << np.arange(m, dtype=np.int64)))

            def b_out(y: int, t: tuple) -> int:
                mine = (y >> shifts) & 1
                theirs = (t[0] >> np.arange(m, dtype=np.int64)) & 1
                return 1 if int((mine != theirs).sum()) * 2 > m else 0

            return DeterministicProtocol(dom, dom, (Round(ALICE, m, a_msg),), BOB, b_out)

        return PublicCoinProtocol(coin, build, 1, dom, dom, name=f"sampling(m={m})")

    if domain == "sphere":
        sdom = SphereDomain(n)

        def build_sphere(gen: np.random.Generator) -> DeterministicProtocol:
            W = haar_rows(gen, m, n)

            def a_msg(x: np.ndarray, t: tuple) -> int:
                bits = (W @ x < 0).astype(np.int64)
                return int(np.bitwise_or.reduce(bits << np.arange(m, dtype=np.int64)))

            def b_out(y: np.ndarray, t: tuple) -> int:
                mine = (W @ y < 0).astype(np.int64)
                theirs = (t[0] >> np.arange(m, dtype=np.int64)) & 1
                return 1 if int((mine != theirs).sum()) * 2 > m else 0

            return DeterministicProtocol(sdom, sdom, (Round(ALICE, m, a_msg),), BOB, b_out)

        return PublicCoinProtocol(coin, build_sphere, 1, sdom, sdom, name=f"sampling-sphere(m={m})")

    raise ValueError("domain must be 'cube' or 'sphere'")


def table_protocol(
    n: int,
    round_specs: Sequence[tuple[str, int, Callable[[BitString, tuple], int]]],
    output_fn: Callable[[BitString, tuple], int],
    output_party: str = BOB,
    name: str = "",
) -> DeterministicProtocol:
    """Materialize callables over BitStrings into full lookup tables.

    Convenience for building small exhaustive-mode protocols from readable
    per-round functions of (input BitString, transcript tuple).
    """
    dom = CubeDomain(n)
    size = 1 << n
    strings = [BitString.from_int(n, v) for v in range(size)]
    rounds = []
    trans_shapes: list[int] = []

    def codes_to_tuple(code: int) -> tuple:
        out = []
        for b in reversed(trans_shapes):
            out.append(code & ((1 << b) - 1))
            code >>= b
        return tuple(reversed(out))

    for speaker, bits, fn in round_specs:
        n_trans = 1 << sum(trans_shapes)
        tbl = np.zeros((size, n_trans), dtype=np.int64)
        for t in range(n_trans):
            tt = codes_to_tuple(t)
            for v in range(size):
                tbl[v, t] = fn(strings[v], tt)
        rounds.append(Round(speaker, bits, tbl))
        trans_shapes.append(bits)
    n_trans = 1 << sum(trans_shapes)
    out = np.zeros((size, n_trans), dtype=np.uint8)
    for t in range(n_trans):
        tt = codes_to_tuple(t)
        for v in range(size):
            out[v, t] = output_fn(strings[v], tt)
    return DeterministicProtocol(dom, dom, tuple(rounds), output_party, out, name=name)


def first_bit_then_trivial(n: int) -> DeterministicProtocol:
    """Two Alice rounds: her first coordinate, then her whole string.

    Exact (the second message determines the answer); the redundant first
    message makes it a natural round-elimination specimen.
    """
    dom = CubeDomain(n)
    size = 1 << n
    idx = np.arange(size, dtype=np.int64)
    r1 = Round(ALICE, 1, (idx & 1)[:, None])
    r2 = Round(ALICE, n, np.repeat(idx[:, None], 2, axis=1))
    labels = (2 * cube_distance_matrix(n).astype(np.int32) > n).astype(np.uint8)
    out = np.concatenate([labels.T, labels.T], axis=1)  # [y, m1*2^n + x]
    return DeterministicProtocol(dom, dom, (r1, r2), BOB, out, name="first-bit-then-trivial")


def prefix_exchange_protocol(n: int, k: int, bits_per_round: int = 1) -> DeterministicProtocol:
    """k alternating rounds, each revealing the speaker's next input slice.

    The receiver of the last message outputs the maximum-likelihood sign
    label given its own input and the revealed prefix of the other side:
    0 iff the known disagreements are at most half the revealed positions.
    A lossy protocol with genuinely multi-round structure, handy for
    exercising elimination trajectories.
    """
    if k < 1:
        raise ProtocolError("need k >= 1")
    b = bits_per_round
    if ((k + 1) // 2) * b > n:
        raise ProtocolError("protocol reveals more bits than the input has")
    dom = CubeDomain(n)
    size = 1 << n
    idx = np.arange(size, dtype=np.int64)
    rounds = []
    offsets = {ALICE: 0, BOB: 0}
    reveal = []  # (speaker, offset) per round
    n_trans = 1
    for r in range(k):
        speaker = ALICE if r % 2 == 0 else BOB
        off = offsets[speaker]
        vals = (idx >> off) & ((1 << b) - 1)
        rounds.append(Round(speaker, b, np.repeat(vals[:, None], n_trans, axis=1)))
        reveal.append((speaker, off))
        offsets[speaker] += b
        n_trans <<= b
    output_party = BOB if rounds[-1].speaker == ALICE else ALICE
    other = ALICE if output_party == BOB else BOB
    # reassemble the other party's revealed bits from each transcript code
    codes = np.arange(n_trans, dtype=np.int64)
    revealed = np.zeros(n_trans, dtype=np.int64)
    rev_mask = 0
    shift = k * b
    for (speaker, off), r in zip(reveal, rounds):
        shift -= b
        msg = (codes >> shift) & ((1 << b) - 1)
        if speaker == other:
            revealed |= msg << off
            rev_mask |= ((1 << b) - 1) << off
    own_known = idx & rev_mask
    disagreements = np.bitwise_count(
        (own_known[:, None] ^ revealed[None, :]).astype(np.uint64)
    ).astype(np.int32)
    revealed_count = int(rev_mask).bit_count()
    out = (2 * disagreements > revealed_count).astype(np.uint8)
    return DeterministicProtocol(
        dom, dom, tuple(rounds), output_party, out, name=f"prefix-exchange(k={k})"
    )


# ---------------------------------------------------------------------------
# Delta-nets and sphere-protocol discretization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeltaNet:
    """A finite delta-covering of the sphere with deterministic rounding."""

    delta: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def round_index(self, v) -> int:
        coords = v.coords if isinstance(v, SphereVector) else np.asarray(v, dtype=np.float64)
        return nearest_point(self.points, coords)

    def round_vector(self, v) -> np.ndarray:
        return self.points[self.round_index(v)]

    def round_many(self, vs: np.ndarray) -> np.ndarray:
        # |a-b|^2 = 2 - 2 a.b on the sphere, so nearest = max inner product;
        # argmax ties resolve to the lowest index, matching round_index.
        return np.argmax(vs @ self.points.T, axis=1)


def build_random_net(
    dim: int,
    delta: float,
    rng: RandomSource,
    certify_batch: int = 2048,
    max_points: int = 200_000,
) -> DeltaNet:
    """Grow a net from Haar samples until a fresh test batch is delta-covered.

    The certification is heuristic (the paper only needs nets to exist); the
    returned net is deterministic in (dim, delta, rng).
    """
    if not 0 < delta < 2:
        raise ValueError("need 0 < delta < 2")
    gen = rng.generator()
    points = haar_rows(gen, 1, dim)
    while points.shape[0] < max_points:
        tests = haar_rows(gen, certify_batch, dim)
        # covered iff min distance <= delta  <=>  max ip >= 1 - delta^2/2
        best_ip = (tests @ points.T).max(axis=1)
        uncovered = best_ip < 1.0 - delta * delta / 2.0
        if not np.any(uncovered):
            return DeltaNet(delta, points)
        points = np.vstack([points, tests[uncovered]])
    raise RuntimeError(f"net did not certify within {max_points} points")


def net_pair_weights(net: DeltaNet, rng: RandomSource, samples: int = 200_000) -> np.ndarray:
    """Haar mass of each net point's rounding (Voronoi) cell, by Monte Carlo."""
    gen = rng.generator()
    counts = np.zeros(net.size, dtype=np.int64)
    for block in range(0, samples, 65536):
        m = min(65536, samples - block)
        idx = net.round_many(haar_rows(gen, m, net.dim))
        counts += np.bincount(idx, minlength=net.size)
    return counts / counts.sum()


def discretize(P: DeterministicProtocol, net: DeltaNet, gamma: float) -> DeterministicProtocol:
    """Restrict a sphere protocol to a delta-net, materializing tables.

    Requires net.delta <= gamma/4: rounding both inputs then moves the inner
    product by at most 2*delta <= gamma/2, so a protocol correct at gap
    gamma/2 stays correct at gap gamma.
    """
    if not isinstance(P.alice_domain, SphereDomain):
        raise ProtocolError("discretize expects a sphere-domain protocol")
    if net.delta > gamma / 4 + 1e-12:
        raise ProtocolError("net spacing too coarse: need delta <= gamma/4")
    dom = NetDomain(net.points)
    size = net.size
    rounds = []
    trans_bits: list[int] = []

    def codes_to_tuple(code: int) -> tuple:
        out = []
        for b in reversed(trans_bits):
            out.append(code & ((1 << b) - 1))
            code >>= b
        return tuple(reversed(out))

    for r in P.rounds:
        n_trans = 1 << sum(trans_bits)
        tbl = np.zeros((size, n_trans), dtype=np.int64)
        for t in range(n_trans):
            tt = codes_to_tuple(t)
            for i in range(size):
                tbl[i, t] = _call_fn(r.fn, net.points[i], t, tt)
        rounds.append(Round(r.speaker, r.bits, tbl))
        trans_bits.append(r.bits)
    n_trans = 1 << sum(trans_bits)
    out = np.zeros((size, n_trans), dtype=np.uint8)
    for t in range(n_trans):
        tt = codes_to_tuple(t)
        for i in range(size):
            out[i, t] = _call_fn(P.output, net.points[i], t, tt)
    return DeterministicProtocol(
        dom, dom, tuple(rounds), P.output_party, out, name=P.name or "discretized"
    )


# ---------------------------------------------------------------------------
# Serialization (table protocols and named builtins)
# ---------------------------------------------------------------------------


def _domain_to_json(d: Domain) -> dict:
    if isinstance(d, CubeDomain):
        return {"kind": "cube", "n": d.n}
    if isinstance(d, NetDomain):
        return {"kind": "net", "points": encode_array(d.points)}
    raise ProtocolError("only cube and net domains serialize")


def _domain_from_json(obj: dict) -> Domain:
    if obj["kind"] == "cube":
        return CubeDomain(int(obj["n"]))
    if obj["kind"] == "net":
        return NetDomain(decode_array(obj["points"]))
    raise ProtocolError(f"unknown domain kind {obj['kind']!r}")


def protocol_to_json(P: DeterministicProtocol) -> dict:
    if not P.is_table():
        raise ProtocolError("only table protocols serialize; named builtins go by name")
    return {
        "schema": "ghdlab/protocol-v1",
        "name": P.name,
        "alice_domain": _domain_to_json(P.alice_domain),
        "bob_domain": _domain_to_json(P.bob_domain),
        "rounds": [
            {"speaker": r.speaker, "bits": r.bits, "table": encode_array(r.fn)}
            for r in P.rounds
        ],
        "output_party": P.output_party,
        "output": encode_array(P.output),
    }


def protocol_from_json(obj: dict) -> DeterministicProtocol:
    if "builtin" in obj:
        name = obj["builtin"]
        if name == "trivial":
            return trivial_protocol(int(obj["n"]))
        if name == "constant0":
            return constant_protocol(int(obj["n"]), 0)
        raise ProtocolError(f"unknown builtin {name!r}")
    if obj.get("schema") != "ghdlab/protocol-v1":
        raise ProtocolError("unrecognized protocol schema")
    return DeterministicProtocol(
        _domain_from_json(obj["alice_domain"]),
        _domain_from_json(obj["bob_domain"]),
        tuple(
            Round(r["speaker"], int(r["bits"]), decode_array(r["table"]))
            for r in obj["rounds"]
        ),
        obj["output_party"],
        decode_array(obj["output"]).astype(np.uint8),
        name=obj.get("name", ""),
    )
