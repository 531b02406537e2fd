"""Concentration-of-measure bounds paired with estimators that check them.

Every checker returns a BoundCheck bundling the analytic upper bound with
an estimate of the same quantity (Monte Carlo with a 99% confidence radius,
or an exact enumeration with zero radius) and the verdict
``estimate <= bound + half_width``.  These are proven inequalities, so a
false verdict beyond the confidence radius indicates an implementation bug;
the default sweep doubles as a CI gate.

Covered: the spherical cap volume bound exp(-gamma^2 n / 2); the two-sided
concentration product Pr(A) Pr(d(x,A) > t) <= 4 exp(-t^2 n / 4) on the
sphere and its Hamming-cube analogue with bound exp(-c^2); the Chernoff
bound exp(-2c^2) for Hamming caps (exact binomial sums); the inner-product
density of Haar pairs and the near-zero mass bound alpha*sqrt(n); the
perturbed sign-flip bound exp(-alpha^2 n / (8 d1^2)); and the
hypergeometric tail bound exp(-2a^2/m) (exact sums).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

import numpy as np
from scipy import integrate

from .instances import SphereVector, haar_rows
from .rng import RandomSource
from .util import confidence99_half_width

__all__ = [
    "BoundCheck",
    "SphericalCap",
    "FiniteSphereSet",
    "cap_bound",
    "estimate_cap",
    "sphere_concentration_check",
    "hamming_cap_bound",
    "hamming_cap_check",
    "hamming_concentration_check",
    "cube_distances_to_set",
    "log_unit_ball_volume",
    "unit_ball_volume",
    "inner_product_density",
    "near_zero_mass_check",
    "perturbed_sign_flip_check",
    "hypergeometric_tail_check",
    "default_sweep",
    "run_named_check",
]


@dataclass
class BoundCheck:
    """An analytic bound, an estimate of the bounded quantity, a verdict."""

    name: str
    params: dict
    analytic_bound: float
    estimate: float
    half_width: float
    trials: int
    verdict: bool
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "analytic_bound": self.analytic_bound,
            "estimate": self.estimate,
            "half_width_99": self.half_width,
            "trials": self.trials,
            "verdict": bool(self.verdict),
            **({"extra": self.extra} if self.extra else {}),
        }

    def csv_row(self) -> dict:
        return {
            "name": self.name,
            **{k: v for k, v in self.params.items()},
            "bound": self.analytic_bound,
            "estimate": self.estimate,
            "half_width": self.half_width,
            "verdict": int(self.verdict),
        }


def _verdict(estimate: float, bound: float, half_width: float) -> bool:
    return estimate <= bound + half_width


# ---------------------------------------------------------------------------
# Spherical caps (volume bound)
# ---------------------------------------------------------------------------


def cap_bound(gamma: float, n: int) -> float:
    """Upper bound exp(-gamma^2 n / 2) on the Haar mass of {y : x.y >= gamma}."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return math.exp(-gamma * gamma * n / 2.0)


def estimate_cap(
    x: Optional[SphereVector],
    gamma: float,
    n: int,
    trials: int,
    rng: RandomSource,
) -> BoundCheck:
    """Monte Carlo mass of the cap around x (any x, by rotation invariance)."""
    gen = rng.generator()
    axis = x.coords if x is not None else haar_rows(gen, 1, n)[0]
    hits = 0
    for start in range(0, trials, 1 << 16):
        m = min(1 << 16, trials - start)
        hits += int(np.count_nonzero(haar_rows(gen, m, n) @ axis >= gamma))
    p_hat = hits / trials
    hw = confidence99_half_width(p_hat, trials)
    bound = cap_bound(gamma, n)
    return BoundCheck(
        "cap", {"gamma": gamma, "n": n}, bound, p_hat, hw, trials,
        _verdict(p_hat, bound, hw),
    )


# ---------------------------------------------------------------------------
# Two-sided concentration on the sphere
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphericalCap:
    """The set {x : x.axis >= gamma}; gamma <= 0 gives measure >= 1/2."""

    axis: np.ndarray
    gamma: float

    def __post_init__(self):
        axis = np.ascontiguousarray(self.axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.axis >= self.gamma

    def distance(self, pts: np.ndarray) -> np.ndarray:
        """Euclidean (chord) distance to the cap: 2 sin((theta - beta)/2)."""
        theta = np.arccos(np.clip(pts @ self.axis, -1.0, 1.0))
        beta = math.acos(min(max(self.gamma, -1.0), 1.0))
        return 2.0 * np.sin(np.maximum(theta - beta, 0.0) / 2.0)


@dataclass(frozen=True)
class FiniteSphereSet:
    """A finite set of unit vectors; distances by brute force."""

    points: np.ndarray

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.distance(pts) <= 1e-12

    def distance(self, pts: np.ndarray) -> np.ndarray:
        best_ip = np.clip((pts @ self.points.T).max(axis=1), -1.0, 1.0)
        return np.sqrt(np.maximum(2.0 - 2.0 * best_ip, 0.0))


def sphere_concentration_check(
    A: Union[SphericalCap, FiniteSphereSet],
    t: float,
    n: int,
    trials: int,
    rng: RandomSource,
) -> BoundCheck:
    """Check Pr(x in A) * Pr(d(x, A) > t) <= 4 exp(-t^2 n / 4)."""
    if not (hasattr(A, "contains") and hasattr(A, "distance")):
        raise TypeError("A needs membership and distance oracles")
    gen = rng.generator()
    in_A = far = 0
    for start in range(0, trials, 1 << 16):
        m = min(1 << 16, trials - start)
        pts = haar_rows(gen, m, n)
        in_A += int(np.count_nonzero(A.contains(pts)))
        far += int(np.count_nonzero(A.distance(pts) > t))
    p_hat, q_hat = in_A / trials, far / trials
    hw_p = confidence99_half_width(p_hat, trials)
    hw_q = confidence99_half_width(q_hat, trials)
    hw = p_hat * hw_q + q_hat * hw_p + hw_p * hw_q
    est = p_hat * q_hat
    bound = 4.0 * math.exp(-t * t * n / 4.0)
    return BoundCheck(
        "sphere-concentration",
        {"t": t, "n": n, "set": type(A).__name__,
         "set_gamma": getattr(A, "gamma", None)},
        bound, est, hw, trials, _verdict(est, bound, hw),
        extra={"pr_in": p_hat, "pr_far": q_hat},
    )


# ---------------------------------------------------------------------------
# Hamming cube: cap bound (exact) and two-sided concentration (exhaustive)
# ---------------------------------------------------------------------------


def hamming_cap_bound(c: float) -> float:
    """Chernoff bound exp(-2c^2) on 2^-n |{y : dist(x,y) <= n/2 - c sqrt(n)}|."""
    if c <= 0:
        raise ValueError("c must be positive")
    return math.exp(-2.0 * c * c)


def _binomial_head(n: int, m: int) -> int:
    """Sum of C(n, d) for d = 0..m, exact integer (iterative ratios)."""
    if m < 0:
        return 0
    term = 1
    total = 1
    for d in range(m):
        term = term * (n - d) // (d + 1)
        total += term
    return total


def hamming_cap_check(n: int, c: float) -> BoundCheck:
    """Exact cap mass sum_{d <= n/2 - c sqrt(n)} C(n,d) / 2^n vs exp(-2c^2)."""
    cutoff = n / 2.0 - c * math.sqrt(n)
    m = math.floor(cutoff + 1e-12)
    mass = Fraction(_binomial_head(n, m), 1 << n)
    bound = hamming_cap_bound(c)
    verdict = mass <= Fraction(bound)  # exact: float bound is a rational
    return BoundCheck(
        "hamming-cap", {"n": n, "c": c}, bound, float(mass), 0.0, 0, bool(verdict),
        extra={"exact": [int(mass.numerator), int(mass.denominator)]},
    )


def cube_distances_to_set(n: int, members: np.ndarray) -> np.ndarray:
    """Hamming distance from every n-bit string to the set (multi-source BFS)."""
    size = 1 << n
    members = np.asarray(members)
    if members.dtype == bool:
        frontier = np.flatnonzero(members)
    else:
        frontier = members.astype(np.int64)
    if frontier.size == 0:
        raise ValueError("empty set has no distances")
    dist = np.full(size, -1, dtype=np.int16)
    dist[frontier] = 0
    level = 0
    flips = (np.int64(1) << np.arange(n, dtype=np.int64))
    while frontier.size:
        level += 1
        nb = np.unique((frontier[:, None] ^ flips[None, :]).ravel())
        new = nb[dist[nb] < 0]
        dist[new] = level
        frontier = new
    return dist


def hamming_concentration_check(A: np.ndarray, c: float, n: int) -> BoundCheck:
    """Exhaustive check of Pr(x in A) Pr(d(x, A) > c sqrt(n)) <= exp(-c^2).

    A is a boolean mask over {0,1}^n (little-endian integer indexing) or an
    array of member integers; n <= 20 keeps the BFS affordable.
    """
    if n > 20:
        raise ValueError("exhaustive cube concentration limited to n <= 20")
    size = 1 << n
    A = np.asarray(A)
    mask = A if A.dtype == bool else np.isin(np.arange(size), A)
    dist = cube_distances_to_set(n, mask)
    radius = c * math.sqrt(n)
    pr_in = Fraction(int(mask.sum()), size)
    pr_far = Fraction(int(np.count_nonzero(dist > radius + 1e-12)), size)
    est = pr_in * pr_far
    bound = math.exp(-c * c)
    return BoundCheck(
        "hamming-concentration", {"n": n, "c": c, "set_size": int(mask.sum())},
        bound, float(est), 0.0, 0, bool(est <= Fraction(bound)),
        extra={"pr_in": float(pr_in), "pr_far": float(pr_far)},
    )


# ---------------------------------------------------------------------------
# Inner-product density and near-zero mass
# ---------------------------------------------------------------------------


def log_unit_ball_volume(n: int) -> float:
    """log of omega_n, the volume of the n-dimensional Euclidean unit ball."""
    return (n / 2.0) * math.log(math.pi) - math.lgamma(n / 2.0 + 1.0)


def unit_ball_volume(n: int) -> float:
    return math.exp(log_unit_ball_volume(n))


def inner_product_density(n: int, t) -> np.ndarray:
    """Density of x.y for independent Haar x, y on the (n-1)-sphere.

    Proportional to (1 - t^2)^((n-3)/2); the normalization is the ratio
    (n-1) omega_{n-1} / (n omega_n), evaluated in log space so large n do
    not overflow.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    t = np.asarray(t, dtype=np.float64)
    log_norm = (
        math.log(n - 1) - math.log(n)
        + log_unit_ball_volume(n - 1) - log_unit_ball_volume(n)
    )
    expo = (n - 3) / 2.0
    if expo > 0:
        edge = 0.0
    elif expo == 0:
        edge = math.exp(log_norm)
    else:
        edge = math.inf  # n = 2: integrable singularity at t = +/-1
    inside = np.abs(t) < 1.0
    out = np.where(
        inside,
        np.exp(log_norm + expo * np.log1p(-np.square(np.where(inside, t, 0.0)))),
        edge,
    )
    if out.ndim == 0:
        return float(out)
    return out


def near_zero_mass_check(
    alpha: float, n: int, trials: int, rng: RandomSource
) -> BoundCheck:
    """Check Pr(0 <= x.y <= alpha) <= alpha sqrt(n), by sampling and quadrature."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    gen = rng.generator()
    hits = 0
    for start in range(0, trials, 1 << 15):
        m = min(1 << 15, trials - start)
        ips = np.einsum("ij,ij->i", haar_rows(gen, m, n), haar_rows(gen, m, n))
        hits += int(np.count_nonzero((ips >= 0.0) & (ips <= alpha)))
    p_hat = hits / trials
    hw = confidence99_half_width(p_hat, trials)
    quad, quad_err = integrate.quad(lambda t: inner_product_density(n, t), 0.0, min(alpha, 1.0))
    bound = alpha * math.sqrt(n)
    verdict = _verdict(p_hat, bound, hw) and quad <= bound + quad_err + 1e-12
    return BoundCheck(
        "near-zero-mass", {"alpha": alpha, "n": n}, bound, p_hat, hw, trials,
        verdict, extra={"quadrature": quad, "quadrature_err": quad_err},
    )


# ---------------------------------------------------------------------------
# Perturbed sign flips (the snap-flip bound)
# ---------------------------------------------------------------------------


def perturbed_sign_flip_check(
    d: float,
    alpha: float,
    n: int,
    d1: float,
    trials: int,
    rng: RandomSource,
) -> BoundCheck:
    """Check Pr_y(x~.y >= alpha and x.y < 0) <= exp(-alpha^2 n / (8 d1^2)).

    x~ = e1 and x is the canonical vector at Euclidean distance d from it,
    x = (1 - d^2/2, -sqrt(d^2 - d^4/4), 0, ...).  Requires 0 <= d <= d1 <= 1
    and 0 < alpha <= 1/(4 sqrt(n)).  Each sampled event is also checked
    against the implication y_2 > alpha / (2d), which drives the bound.
    """
    if not 0 <= d <= d1 <= 1:
        raise ValueError("need 0 <= d <= d1 <= 1")
    if not 0 < alpha <= 1.0 / (4.0 * math.sqrt(n)):
        raise ValueError("need 0 < alpha <= 1/(4 sqrt(n))")
    x_tilde = np.zeros(n)
    x_tilde[0] = 1.0
    x = np.zeros(n)
    x[0] = 1.0 - d * d / 2.0
    if n > 1:
        x[1] = -math.sqrt(max(d * d - d**4 / 4.0, 0.0))
    gen = rng.generator()
    hits = 0
    implication_ok = True
    for start in range(0, trials, 1 << 15):
        m = min(1 << 15, trials - start)
        Y = haar_rows(gen, m, n)
        event = (Y @ x_tilde >= alpha) & (Y @ x < 0.0)
        hits += int(np.count_nonzero(event))
        if d > 0 and np.any(event):
            implication_ok &= bool(np.all(Y[event, 1] > alpha / (2.0 * d) - 1e-12))
    p_hat = hits / trials
    hw = confidence99_half_width(p_hat, trials)
    bound = math.exp(-alpha * alpha * n / (8.0 * d1 * d1))
    return BoundCheck(
        "sign-flip", {"d": d, "alpha": alpha, "n": n, "d1": d1},
        bound, p_hat, hw, trials,
        _verdict(p_hat, bound, hw) and implication_ok,
        extra={"implication_y2": implication_ok},
    )


# ---------------------------------------------------------------------------
# Hypergeometric tail (the cube elimination's distance engine)
# ---------------------------------------------------------------------------


def hypergeometric_tail_check(
    n: int,
    weight_y: int,
    weight_x: int,
    a: float,
    method: str = "exact",
    trials: int = 0,
    rng: Optional[RandomSource] = None,
) -> BoundCheck:
    """Tail of |x~ intersect y| for a random weight-|x~| set against a fixed
    weight-|y| set: Pr(X <= E[X] - a) <= exp(-2 a^2 / |x~|).

    Exact mode sums hypergeometric terms in rational arithmetic (bit
    reproducible, zero tolerance); Monte Carlo mode samples intersections.
    """
    if not (0 <= weight_y <= n and 1 <= weight_x <= n):
        raise ValueError("weights must lie in [0, n], draw weight >= 1")
    mean = Fraction(weight_x * weight_y, n)
    cut = mean - Fraction(a).limit_denominator(10**12)
    bound = math.exp(-2.0 * a * a / weight_x)
    lo = max(0, weight_x + weight_y - n)
    hi = math.floor(cut) if cut >= lo else lo - 1
    if method == "exact":
        total = math.comb(n, weight_x)
        acc = 0
        for i in range(lo, min(hi, min(weight_x, weight_y)) + 1):
            acc += math.comb(weight_y, i) * math.comb(n - weight_y, weight_x - i)
        tail = Fraction(acc, total)
        return BoundCheck(
            "hypergeometric-tail",
            {"n": n, "weight_y": weight_y, "weight_x": weight_x, "a": a},
            bound, float(tail), 0.0, 0, bool(tail <= Fraction(bound)),
            extra={"mean": float(mean),
                   "exact": [int(tail.numerator), int(tail.denominator)]},
        )
    if method == "monte-carlo":
        if rng is None or trials <= 0:
            raise ValueError("Monte Carlo mode needs rng and trials")
        gen = rng.generator()
        draws = gen.hypergeometric(weight_y, n - weight_y, weight_x, size=trials)
        p_hat = float(np.count_nonzero(draws <= float(cut))) / trials
        hw = confidence99_half_width(p_hat, trials)
        return BoundCheck(
            "hypergeometric-tail",
            {"n": n, "weight_y": weight_y, "weight_x": weight_x, "a": a},
            bound, p_hat, hw, trials, _verdict(p_hat, bound, hw),
            extra={"mean": float(mean)},
        )
    raise ValueError("method must be 'exact' or 'monte-carlo'")


# ---------------------------------------------------------------------------
# Default sweep: the CI gate
# ---------------------------------------------------------------------------


def default_sweep(rng: RandomSource, trials: int = 200_000) -> list[BoundCheck]:
    """One BoundCheck per default grid point across all the bounds above.

    The sphere-concentration grid includes sets of measure below and above
    one half, exercising both branches of the two-sided bound's proof.
    """
    checks: list[BoundCheck] = []
    k = 0

    def sub() -> RandomSource:
        nonlocal k
        k += 1
        return rng.split(k)

    for n in (20, 50, 100):
        for gamma in (0.1, 0.3, 0.5):
            checks.append(estimate_cap(None, gamma, n, trials, sub()))
    e1 = np.zeros(50)
    e1[0] = 1.0
    for gamma in (-0.2, 0.0, 0.3):  # measures above, at, below 1/2
        for t in (0.2, 0.5):
            checks.append(
                sphere_concentration_check(SphericalCap(e1, gamma), t, 50, trials, sub())
            )
    for n in (16, 64, 100, 256, 1000):
        for c in (0.5, 1.0, 2.0):
            checks.append(hamming_cap_check(n, c))
    n16 = 16
    idx = np.arange(1 << n16, dtype=np.uint32)
    weights = np.bitwise_count(idx)
    majority0 = weights < n16 / 2
    gen = rng.split(999).generator()
    random_small = gen.random(1 << n16) < 2.0**-4
    random_small[0] = True  # keep the set non-empty regardless of the draw
    for c in (1.0, 2.0):
        checks.append(hamming_concentration_check(majority0, c, n16))
        checks.append(hamming_concentration_check(random_small, c, n16))
    for alpha, n in ((0.01, 16), (0.05, 100), (0.05, 16)):
        checks.append(near_zero_mass_check(alpha, n, trials, sub()))
    for d, alpha, n, d1 in (
        (0.25, 1.0 / 32.0, 64, 0.25),
        (0.1, 1.0 / 40.0, 100, 0.3),
        (0.0, 1.0 / 40.0, 100, 0.3),
    ):
        checks.append(perturbed_sign_flip_check(d, alpha, n, d1, trials, sub()))
    for n, wy, wx, a in (
        (100, 45, 10, 3.0),
        (100, 50, 20, 5.0),
        (400, 100, 40, 6.0),
        (1000, 450, 100, 20.0),
    ):
        checks.append(hypergeometric_tail_check(n, wy, wx, a))
    return checks


def _axis(n: int) -> np.ndarray:
    v = np.zeros(n)
    v[0] = 1.0
    return v


_NAMED = {
    "cap": lambda p, rng, trials: estimate_cap(None, p["gamma"], int(p["n"]), trials, rng),
    "sphere-concentration": lambda p, rng, trials: sphere_concentration_check(
        SphericalCap(_axis(int(p["n"])), p.get("set_gamma", 0.0)),
        p["t"], int(p["n"]), trials, rng,
    ),
    "hamming-cap": lambda p, rng, trials: hamming_cap_check(int(p["n"]), p["c"]),
    "near-zero-mass": lambda p, rng, trials: near_zero_mass_check(
        p["alpha"], int(p["n"]), trials, rng
    ),
    "sign-flip": lambda p, rng, trials: perturbed_sign_flip_check(
        p["d"], p["alpha"], int(p["n"]), p["d1"], trials, rng
    ),
    "hypergeometric-tail": lambda p, rng, trials: hypergeometric_tail_check(
        int(p["n"]), int(p["weight_y"]), int(p["weight_x"]), p["a"]
    ),
}


def run_named_check(name: str, params: dict, rng: RandomSource, trials: int) -> BoundCheck:
    """Run one check by its sweep name with explicit parameters."""
    if name not in _NAMED:
        raise ValueError(f"unknown check {name!r}; known: {sorted(_NAMED)}")
    return _NAMED[name](params, rng, trials)
