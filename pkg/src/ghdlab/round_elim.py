"""Round elimination: drop a protocol's first message by snapping inputs.

One elimination step fixes the most likely first message m1, restricts to
the set A of "good" first-speaker inputs that would have sent m1, and builds
a protocol Q that is P with the first round deleted: the first speaker snaps
their input to the nearest point of A, the receiver pretends m1 arrived.

The step's error growth decomposes into three bad events, measured here
exactly (exhaustive mode, cube or delta-net domains, table protocols):

* BAD1  the input is farther than the snap radius from A;
* BAD2  P itself errs on the snapped pair;
* BAD3  the input is within the radius but snapping flips the true label.

The pointwise inclusion {Q errs} in BAD1 | BAD2 | BAD3 is checked on every
input pair, not just in aggregate, as are the Markov bound on the good-set
mass and the pigeonhole bound on A.  The analytic per-step error recurrence
is reported next to the measured trajectory; its message-length hypothesis
is flagged as vacuous at desk scale rather than asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .instances import BitString, sign_label_cube
from .protocols import (
    ALICE,
    BOB,
    CubeDomain,
    DeterministicProtocol,
    NetDomain,
    NetPairs,
    ProtocolError,
    Round,
    UniformCubePairs,
    output_matrix,
    run,
)
from .rng import RandomSource
from .util import confidence99_half_width

__all__ = [
    "InvariantViolation",
    "RoundElimParams",
    "GoodSet",
    "EliminationReport",
    "sphere_snap_radius",
    "cube_snap_scale",
    "error_recurrence",
    "iterate_recurrence",
    "find_good_inputs",
    "largest_message_class",
    "snap",
    "snap_table",
    "eliminate_round",
    "full_elimination",
]


class InvariantViolation(RuntimeError):
    """A proven invariant (Markov / pigeonhole / union bound) failed: a bug."""


# ---------------------------------------------------------------------------
# Parameters and the error recurrence
# ---------------------------------------------------------------------------


def sphere_snap_radius(c1: int, k: int, n: int) -> float:
    """Euclidean snap radius 2*sqrt((c1 + 6 ln(2k) + 2)/n)."""
    return 2.0 * math.sqrt((c1 + 6.0 * math.log(2 * k) + 2.0) / n)


def cube_snap_scale(k: int, n: int, radius_constant: float = 1024.0) -> float:
    """Normalized cube radius 9*sqrt(n)/((1024 k)^2 log2 k); Hamming radius
    is this value times sqrt(n).  Degenerate at k < 2 (log2 k = 0)."""
    if k < 2:
        raise ValueError("cube radius formula needs k >= 2; pass d1 explicitly")
    return 9.0 * math.sqrt(n) / ((radius_constant * k) ** 2 * math.log2(k))


@dataclass(frozen=True)
class RoundElimParams:
    """Analysis parameters for one elimination step.

    d1 defaults to the mode's formula: the Euclidean radius on the sphere,
    or the normalized cube value whose Hamming radius is d1*sqrt(n).  The
    goodness factor delta defaults to 1 + 1/k.
    """

    k: int
    kappa: int
    c1: int
    mode: str  # "cube" | "sphere"
    n: int
    d1: Optional[float] = None
    goodness_factor: Optional[float] = None
    sphere_c1_constant: float = 1.0  # C1 in c1 <= C1 n/(k^2 ln k) - 7 ln(2k)
    cube_radius_constant: float = 1024.0
    cube_c1_constant: float = 512.0  # c1 <= n/((512 k)^4 log^2 k)

    def __post_init__(self):
        if not 1 <= self.kappa <= self.k:
            raise ValueError("need 1 <= kappa <= k")
        if self.mode not in ("cube", "sphere"):
            raise ValueError("mode must be 'cube' or 'sphere'")
        if self.goodness_factor is None:
            object.__setattr__(self, "goodness_factor", 1.0 + 1.0 / self.k)
        if self.goodness_factor <= 1.0:
            raise ValueError("goodness factor must exceed 1")
        if self.d1 is None:
            if self.mode == "sphere":
                d1 = sphere_snap_radius(self.c1, self.k, self.n)
            else:
                d1 = cube_snap_scale(self.k, self.n, self.cube_radius_constant)
            object.__setattr__(self, "d1", d1)

    @property
    def snap_radius(self) -> float:
        """BAD1 threshold in the domain's own distance units."""
        return self.d1 if self.mode == "sphere" else self.d1 * math.sqrt(self.n)

    def message_hypothesis_holds(self) -> bool:
        """Whether c1 satisfies the lemma's first-message length bound."""
        k = self.k
        if self.mode == "sphere":
            limit = self.sphere_c1_constant * self.n / (k * k * math.log(max(k, 2))) - 7.0 * math.log(2 * k)
        else:
            limit = self.n / ((self.cube_c1_constant * k) ** 4 * math.log2(max(k, 2)) ** 2)
        return self.c1 <= limit


def error_recurrence(eps0: float, k: int, kappa: int) -> float:
    """Closed form (1 + 1/k)^kappa (eps0 + 1/16) - 1/16."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= kappa <= k:
        raise ValueError("need 0 <= kappa <= k")
    return (1.0 + 1.0 / k) ** kappa * (eps0 + 1.0 / 16.0) - 1.0 / 16.0


def iterate_recurrence(eps0: float, k: int, kappa: int) -> float:
    """Apply eps -> (1 + 1/k) eps + 1/(16k) kappa times (reference form)."""
    eps = eps0
    for _ in range(kappa):
        eps = (1.0 + 1.0 / k) * eps + 1.0 / (16.0 * k)
    return eps


# ---------------------------------------------------------------------------
# Good inputs, message classes, snapping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GoodSet:
    """First-speaker inputs whose conditional error is at most delta * eps."""

    indices: np.ndarray
    mass: float
    eps: float
    delta: float
    mass_exact: Optional[Fraction] = None
    eps_exact: Optional[Fraction] = None


def _support_arrays(dist, convention: str):
    """(labels3, mask, weights): labels3 uses 2 for outside-promise pairs."""
    support = dist.enumerate()
    labels3 = support.labels.astype(np.uint8)
    if convention == "promise":
        if support.mask is None:
            raise ValueError("promise convention needs a promise-conditioned distribution")
        labels3 = np.where(support.mask, labels3, np.uint8(2))
        mask = support.mask
    else:
        mask = np.ones_like(labels3, dtype=bool)
    return labels3, mask, support.weights


def find_good_inputs(
    P: DeterministicProtocol,
    dist,
    delta: Union[float, Fraction],
    convention: str = "sign",
    method: str = "exhaustive",
    trials_per_input: int = 2000,
    rng: Optional[RandomSource] = None,
) -> GoodSet:
    """The set {x : Pr_y(P errs | x) <= delta * eps}, with its measure.

    Exhaustive mode is exact; Monte Carlo mode estimates each conditional
    error and refuses when the 99% half-width exceeds delta*eps/10.
    Markov guarantees mass >= 1 - 1/delta, which is asserted.
    """
    if delta <= 1:
        raise ValueError("delta must exceed 1")
    if method == "exhaustive":
        labels3, mask, weights = _support_arrays(dist, convention)
        err = (output_matrix(P) != labels3) & mask
        gs = _goodset_from_matrices(err, mask, weights, delta)
    elif method == "monte-carlo":
        gs = _find_good_monte_carlo(P, dist, float(delta), trials_per_input, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    if gs.mass < 1.0 - 1.0 / float(delta) - 1e-12:
        raise InvariantViolation(
            f"good mass {gs.mass} below Markov bound {1 - 1/float(delta)}"
        )
    return gs


def _find_good_monte_carlo(P, dist, delta, trials_per_input, rng) -> GoodSet:
    if rng is None:
        raise ValueError("Monte Carlo mode requires a RandomSource")
    if not isinstance(dist, UniformCubePairs) or dist.promise is not None:
        raise NotImplementedError("Monte Carlo good-set estimation covers the uniform cube")
    n = dist.n
    size = 1 << n
    gen = rng.generator()
    cond = np.zeros(size)
    for xi in range(size):
        x = BitString.from_int(n, xi)
        errs = 0
        for _ in range(trials_per_input):
            y = BitString.random(n, gen)
            if run(P, x, y).output != sign_label_cube(x, y):
                errs += 1
        cond[xi] = errs / trials_per_input
    eps = float(cond.mean())
    hw = confidence99_half_width(max(eps, 1e-12), trials_per_input)
    if hw > delta * eps / 10.0:
        raise RuntimeError(
            f"half-width {hw:.2e} exceeds delta*eps/10 = {delta * eps / 10:.2e}; "
            f"raise trials_per_input above {trials_per_input}"
        )
    good = np.flatnonzero(cond <= delta * eps)
    return GoodSet(good, len(good) / size, eps, delta)


def _goodset_from_matrices(err, mask, weights, delta) -> GoodSet:
    if weights is None:
        delta_frac = delta if isinstance(delta, Fraction) else Fraction(delta).limit_denominator(10**9)
        err_per_x = err.sum(axis=1)
        tot_per_x = mask.sum(axis=1)
        eps = Fraction(int(err_per_x.sum()), int(mask.sum()))
        thresh = delta_frac * eps
        # integer cross-multiplication keeps the comparison exact
        ok = err_per_x * thresh.denominator <= tot_per_x * thresh.numerator
        ok |= tot_per_x == 0
        good = np.flatnonzero(ok)
        mass_exact = Fraction(len(good), err.shape[0])
        return GoodSet(good, float(mass_exact), float(eps), float(delta),
                       mass_exact=mass_exact, eps_exact=eps)
    wa = weights.sum(axis=1)
    werr = (weights * err).sum(axis=1)
    wtot = (weights * mask).sum(axis=1)
    eps = float(werr.sum() / wtot.sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(wtot > 0, werr / np.maximum(wtot, 1e-300), 0.0)
    good = np.flatnonzero(cond <= float(delta) * eps + 1e-15)
    return GoodSet(good, float(wa[good].sum() / wa.sum()), eps, float(delta))


def largest_message_class(
    P: DeterministicProtocol,
    good: GoodSet,
    weights: Optional[np.ndarray] = None,
) -> tuple[int, np.ndarray]:
    """Partition the good set by first message; return (m1, A) for the
    heaviest class.  Ties resolve to the smallest message value."""
    if P.n_rounds < 1:
        raise ProtocolError("protocol has no first message to classify")
    if len(good.indices) == 0:
        raise ValueError("empty good set")
    r0 = P.rounds[0]
    if not isinstance(r0.fn, np.ndarray):
        raise ProtocolError("largest_message_class needs a table first round")
    msgs = r0.fn[good.indices, 0]
    w = np.ones(len(good.indices)) if weights is None else weights[good.indices]
    masses = np.bincount(msgs, weights=w, minlength=1 << r0.bits)
    m1 = int(np.argmax(masses))  # argmax takes the first (smallest) maximizer
    A = good.indices[msgs == m1]
    # pigeonhole: the heaviest of 2^c1 classes carries >= its average share
    if masses[m1] * (1 << r0.bits) < w.sum() - 1e-9:
        raise InvariantViolation("pigeonhole failed: largest class below average mass")
    return m1, A


def _revbits(values: np.ndarray, n: int) -> np.ndarray:
    """Bit-reversed integers: lexicographic key on coordinates x_1..x_n."""
    v = values.astype(np.uint64)
    out = np.zeros_like(v)
    for _ in range(n):
        out = (out << np.uint64(1)) | (v & np.uint64(1))
        v >>= np.uint64(1)
    return out


def snap_table(domain: Union[CubeDomain, NetDomain], A: np.ndarray):
    """(snapped index, distance to A) for every domain element.

    Cube ties break to the lexicographically smallest string (coordinate
    order x_1, x_2, ...); net ties break to the lowest net index.
    """
    A = np.asarray(A)
    if isinstance(domain, CubeDomain):
        n = domain.n
        idx = np.arange(domain.size, dtype=np.uint32)
        dists = np.bitwise_count(idx[:, None] ^ A[None, :].astype(np.uint32))
        dmin = dists.min(axis=1)
        lex = _revbits(A, n)
        marked = np.where(dists == dmin[:, None], lex[None, :], np.uint64(1) << np.uint64(63))
        choice = np.argmin(marked, axis=1)
        return A[choice], dmin.astype(np.float64)
    if isinstance(domain, NetDomain):
        diffs = domain.points[:, None, :] - domain.points[None, A, :]
        dists = np.linalg.norm(diffs, axis=2)
        dmin = dists.min(axis=1)
        choice = np.argmin(dists, axis=1)  # first minimizer = lowest A index
        return A[choice], dmin
    raise ProtocolError("snap_table supports cube and net domains")


def snap(x, A, metric: str = "hamming"):
    """Nearest element of A to x under the named metric (single query).

    Hamming ties break lexicographically on coordinates; Euclidean ties
    break to the earliest element of A.
    """
    from .instances import BitString, SphereVector, hamming_distance

    items = list(A)
    if not items:
        raise ValueError("A is empty")
    if metric == "hamming":
        best = None
        for a in items:
            d = hamming_distance(x, a)
            key = (d, tuple(a.bits()))
            if best is None or key < best[0]:
                best = (key, a)
        return best[1]
    if metric == "euclidean":
        xv = x.coords if isinstance(x, SphereVector) else np.asarray(x, float)
        best = None
        for i, a in enumerate(items):
            av = a.coords if isinstance(a, SphereVector) else np.asarray(a, float)
            d = float(np.linalg.norm(xv - av))
            if best is None or d < best[0] - 1e-18:
                best = (d, a)
        return best[1]
    raise ValueError("metric must be 'hamming' or 'euclidean'")


# ---------------------------------------------------------------------------
# The elimination step
# ---------------------------------------------------------------------------


@dataclass
class EliminationReport:
    snapped_party: str
    chosen_message: int
    c1: int
    d1: float
    snap_radius: float
    k: int
    kappa: int
    delta: float
    convention: str
    good_mass: float
    measure_A: float
    eps_in: float
    eps_out: float
    bad1: float
    bad2: float
    bad3: float
    bound_rhs: float
    rounds_out: int
    union_bound_pointwise: bool
    hypothesis_vacuous: bool
    recurrence_value: Optional[float] = None  # set by full_elimination
    exact: dict = field(default_factory=dict)  # name -> Fraction, cube mode

    def to_json(self) -> dict:
        obj = {
            k: v
            for k, v in self.__dict__.items()
            if k != "exact" and not isinstance(v, np.generic)
        }
        obj["exact"] = {
            name: [int(f.numerator), int(f.denominator)] for name, f in self.exact.items()
        }
        return obj


def _flip_protocol(P: DeterministicProtocol) -> DeterministicProtocol:
    other = {ALICE: BOB, BOB: ALICE}
    return DeterministicProtocol(
        P.bob_domain,
        P.alice_domain,
        tuple(Round(other[r.speaker], r.bits, r.fn) for r in P.rounds),
        other[P.output_party],
        P.output,
        name=P.name,
    )


def _flip_dist(dist):
    if isinstance(dist, UniformCubePairs):
        return dist
    if isinstance(dist, NetPairs):
        return NetPairs(dist.net, dist.weights_b, dist.weights_a, dist.gamma)
    raise ProtocolError("cannot flip this distribution")


def eliminate_round(
    P: DeterministicProtocol,
    dist,
    params: RoundElimParams,
    convention: str = "sign",
) -> tuple[DeterministicProtocol, EliminationReport]:
    """One elimination step in exhaustive mode.

    Returns the standalone (kappa-1)-round protocol Q and the measured
    report.  Q re-evaluated from scratch reproduces eps_out exactly.
    """
    if P.n_rounds < 1:
        raise ProtocolError("cannot eliminate a round of a 0-round protocol")
    if not P.is_table():
        raise ProtocolError("exact elimination requires table form")
    speaker = P.rounds[0].speaker
    if speaker == BOB:
        # mirror so the snapped party is in the row role, then mirror back
        Qf, rep = eliminate_round(_flip_protocol(P), _flip_dist(dist), params, convention)
        rep.snapped_party = BOB
        return _flip_protocol(Qf), rep

    if P.rounds[0].bits != params.c1:
        raise ValueError(f"params.c1={params.c1} but first message has {P.rounds[0].bits} bits")
    labels3, mask, weights = _support_arrays(dist, convention)
    out_P = output_matrix(P)
    err_P = (out_P != labels3) & mask

    delta = params.goodness_factor
    if delta == 1.0 + 1.0 / params.k:
        delta = Fraction(params.k + 1, params.k)  # keep the default case exact
    good = _goodset_from_matrices(err_P, mask, weights, delta)
    if good.mass < 1.0 - 1.0 / float(delta) - 1e-12:
        raise InvariantViolation(
            f"good mass {good.mass} below Markov bound {1 - 1/float(delta)}"
        )
    wa = None if weights is None else np.asarray(weights).sum(axis=1)
    m1, A = largest_message_class(P, good, weights=wa)

    if weights is None:
        measure_A = Fraction(len(A), out_P.shape[0])
        good_mass = good.mass_exact
        if measure_A < good_mass * Fraction(1, 1 << params.c1):
            raise InvariantViolation("pigeonhole failed: measure(A) below good/2^c1")
    else:
        measure_A = float(wa[A].sum() / wa.sum())
        good_mass = good.mass
        if measure_A < good_mass / (1 << params.c1) - 1e-12:
            raise InvariantViolation("pigeonhole failed: measure(A) below good/2^c1")

    snap_idx, dist_to_A = snap_table(P.alice_domain, A)

    # Q = P minus round 1: slice transcripts at m1, reroute rows through snap
    rounds_q: list[Round] = []
    for r in P.rounds[1:]:
        block = r.fn.shape[1] // (1 << params.c1)
        sliced = r.fn[:, m1 * block : (m1 + 1) * block]
        if r.speaker == ALICE:
            sliced = sliced[snap_idx, :]
        rounds_q.append(Round(r.speaker, r.bits, np.ascontiguousarray(sliced)))
    out_block = P.output.shape[1] // (1 << params.c1)
    out_sliced = P.output[:, m1 * out_block : (m1 + 1) * out_block]
    if P.output_party == ALICE:
        out_sliced = out_sliced[snap_idx, :]
    Q = DeterministicProtocol(
        P.alice_domain,
        P.bob_domain,
        tuple(rounds_q),
        P.output_party,
        np.ascontiguousarray(out_sliced),
        name=(P.name + "-elim") if P.name else "eliminated",
    )

    # measured decomposition over the original pair (x~, y~)
    out_Q = out_P[snap_idx, :]
    err_Q = (out_Q != labels3) & mask
    bad1 = np.broadcast_to((dist_to_A > params.snap_radius + 1e-12)[:, None], mask.shape)
    bad2 = err_P[snap_idx, :]
    bad3 = (~bad1) & (labels3[snap_idx, :] != labels3)
    union_ok = bool(np.all(~err_Q | bad1 | bad2 | bad3))
    if not union_ok:
        raise InvariantViolation("pointwise union bound violated: Q errs outside BAD1|BAD2|BAD3")

    exact: dict = {}
    if weights is None:
        total = int(mask.sum())
        eps_in = Fraction(int(err_P.sum()), total)
        eps_out = Fraction(int(err_Q.sum()), total)
        b1 = Fraction(int((bad1 & mask).sum()), total)
        b2 = Fraction(int((bad2 & mask).sum()), total)
        b3 = Fraction(int((bad3 & mask).sum()), total)
        exact = {
            "eps_in": eps_in, "eps_out": eps_out,
            "bad1": b1, "bad2": b2, "bad3": b3,
            "measure_A": measure_A, "good_mass": good_mass,
        }
        if eps_out > b1 + b2 + b3:
            raise InvariantViolation("eps_out exceeds bad1+bad2+bad3")
    else:
        wsum = float((weights * mask).sum())
        eps_in = float((weights * err_P).sum() / wsum)
        eps_out = float((weights * err_Q).sum() / wsum)
        b1 = float((weights * (bad1 & mask)).sum() / wsum)
        b2 = float((weights * (bad2 & mask)).sum() / wsum)
        b3 = float((weights * (bad3 & mask)).sum() / wsum)
        if eps_out > b1 + b2 + b3 + 1e-12:
            raise InvariantViolation("eps_out exceeds bad1+bad2+bad3")

    report = EliminationReport(
        snapped_party=ALICE,
        chosen_message=m1,
        c1=params.c1,
        d1=params.d1,
        snap_radius=params.snap_radius,
        k=params.k,
        kappa=params.kappa,
        delta=float(delta),
        convention=convention,
        good_mass=float(good_mass),
        measure_A=float(measure_A),
        eps_in=float(eps_in),
        eps_out=float(eps_out),
        bad1=float(b1),
        bad2=float(b2),
        bad3=float(b3),
        bound_rhs=(1.0 + 1.0 / params.k) * float(eps_in) + 1.0 / (16.0 * params.k),
        rounds_out=P.n_rounds - 1,
        union_bound_pointwise=union_ok,
        hypothesis_vacuous=not params.message_hypothesis_holds(),
        exact=exact,
    )
    return Q, report


def full_elimination(
    P: DeterministicProtocol,
    dist,
    k: int,
    convention: str = "sign",
    mode: Optional[str] = None,
    d1: Optional[float] = None,
) -> tuple[DeterministicProtocol, list[EliminationReport]]:
    """Eliminate every round of a k-round protocol, first message each time.

    The snapped role follows the current first speaker, so alternating
    protocols swap roles between steps.  Each report gains a
    ``recurrence_value`` attribute: the analytic trajectory seeded at the
    measured eps_in of step 1, for side-by-side comparison (not asserted).
    """
    if P.n_rounds != k:
        raise ValueError(f"protocol has {P.n_rounds} rounds, expected k={k}")
    if mode is None:
        mode = "cube" if isinstance(P.alice_domain, CubeDomain) else "sphere"
    n = P.alice_domain.n if mode == "cube" else P.alice_domain.dim
    reports: list[EliminationReport] = []
    eps0 = None
    current = P
    for step in range(k):
        kappa = k - step
        params = RoundElimParams(
            k=k, kappa=kappa, c1=current.rounds[0].bits, mode=mode, n=n, d1=d1
        )
        current, rep = eliminate_round(current, dist, params, convention)
        if eps0 is None:
            eps0 = rep.eps_in
        rep.recurrence_value = error_recurrence(eps0, k, step + 1)  # reported, not asserted
        reports.append(rep)
    if current.n_rounds != 0:
        raise InvariantViolation("final protocol is not 0-round")
    return current, reports


def trajectory_rows(reports: list[EliminationReport]) -> list[dict]:
    """CSV-ready rows (kappa, eps, bad1..3, bound_rhs, recurrence)."""
    rows = []
    for rep in reports:
        rows.append(
            {
                "kappa": rep.kappa,
                "eps_in": rep.eps_in,
                "eps_out": rep.eps_out,
                "bad1": rep.bad1,
                "bad2": rep.bad2,
                "bad3": rep.bad3,
                "bound_rhs": rep.bound_rhs,
                "recurrence": rep.recurrence_value if rep.recurrence_value is not None else "",
                "snapped_party": rep.snapped_party,
                "chosen_message": rep.chosen_message,
            }
        )
    return rows
