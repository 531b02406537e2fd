"""Cube <-> sphere reductions: deterministic embedding and hyperplane sketching.

Cube to sphere is exact: x maps to ((-1)^{x_i}/sqrt(n))_i, and the embedded
inner product is 1 - 2*dist/n, so a Hamming gap g becomes an inner-product
gap 2g/n.  Sphere to cube is randomized: both parties sketch against the
same sequence of Haar hyperplanes, and each output bit flips independently
between the two inputs with probability arccos(x.y)/pi.  Both directions
also act on whole protocols (preprocess inputs, run the source protocol),
preserving round count and max-cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .instances import BitString, SphereVector, haar_rows, sample_pair_at_ip
from .protocols import (
    CubeDomain,
    DeterministicProtocol,
    ProtocolError,
    Round,
    SphereDomain,
)
from .rng import RandomSource

__all__ = [
    "HyperplaneSketchSeed",
    "embed_cube_to_sphere",
    "collision_probability",
    "sketch_sphere_to_cube",
    "gap_transfer_check",
    "GapTransferReport",
    "lift_protocol",
    "DEFAULT_C0",
]

DEFAULT_C0 = 4.0


def embed_cube_to_sphere(x: BitString) -> SphereVector:
    """The unit vector with coordinate i equal to (-1)^{x_i} / sqrt(n)."""
    signs = 1.0 - 2.0 * x.bits().astype(np.float64)
    return SphereVector(signs / math.sqrt(x.n))


def collision_probability(ip: float, tol: float = 1e-9) -> float:
    """Probability a Haar hyperplane separates unit vectors at inner product ip.

    Equals arccos(ip)/pi: 0 for identical vectors, 1/2 for orthogonal ones,
    1 for antipodal ones.  Values within ``tol`` outside [-1, 1] are clamped;
    anything farther is rejected.
    """
    if abs(ip) > 1.0 + tol:
        raise ValueError(f"inner product {ip} outside [-1, 1]")
    return float(np.arccos(np.clip(ip, -1.0, 1.0)) / np.pi)


@dataclass(frozen=True)
class HyperplaneSketchSeed:
    """Shared randomness for sign sketching: n_out Haar normals from rng.

    Both parties regenerate the same hyperplanes from (seed, stream), so
    the sketch costs no communication.
    """

    n_out: int
    rng: RandomSource

    def __post_init__(self):
        if self.n_out < 1:
            raise ValueError("n_out must be >= 1")

    def hyperplanes(self, dim: int) -> np.ndarray:
        """The (n_out, dim) matrix of unit normals; deterministic in the seed."""
        return haar_rows(self.rng.generator(), self.n_out, dim)

    def to_json(self) -> dict:
        return {"seed": self.rng.seed, "stream": self.rng.stream, "n_out": self.n_out}

    @classmethod
    def from_json(cls, obj: dict) -> "HyperplaneSketchSeed":
        return cls(int(obj["n_out"]), RandomSource(int(obj["seed"]), int(obj["stream"])))


def sketch_sphere_to_cube(x: SphereVector, seed: HyperplaneSketchSeed) -> BitString:
    """Bit i is the sign of x . w_i (0 when >= 0, per the sign convention).

    Under a shared seed, two sketches disagree in each position independently
    with probability collision_probability(x.y).
    """
    W = seed.hyperplanes(x.n)
    return sketch_rows(x.coords[None, :], W)[0]


def sketch_rows(xs: np.ndarray, W: np.ndarray) -> list[BitString]:
    """Sketch many vectors against the same hyperplanes (rows of xs)."""
    dots = xs @ W.T
    bits = (dots < 0).astype(np.uint8)  # sign: 0 when >= 0, 1 otherwise
    return [BitString.from_bits(row) for row in bits]


@dataclass
class GapTransferReport:
    gamma: float
    n_out: int
    trials: int
    empirical_rate: float  # differing-bit rate, -gamma side folded by symmetry
    closed_form: float  # arccos(gamma)/pi
    abs_err: float
    mean_margin: float  # mean of n/2 - dist on the ip=+gamma side
    sign_flip_rate: float  # sketched pair on the wrong side of n/2
    taylor_residual: float  # max |arccos(z) - (pi/2 - z - z^3/6)| on |z| <= gamma
    c0_rows: list[dict]  # per-C0 landing statistics

    def csv_rows(self) -> list[dict]:
        return [
            {
                "gamma": self.gamma,
                "n_out": self.n_out,
                "empirical_rate": self.empirical_rate,
                "closed_form": self.closed_form,
                "abs_err": self.abs_err,
                **row,
            }
            for row in (self.c0_rows or [{}])
        ]


def taylor_arccos_residual(z_max: float, points: int = 2001) -> float:
    """max over |z| <= z_max of |arccos(z) - (pi/2 - z - z^3/6)|."""
    z = np.linspace(-z_max, z_max, points)
    return float(np.max(np.abs(np.arccos(z) - (np.pi / 2 - z - z**3 / 6))))


def gap_transfer_check(
    gamma: float,
    n_out: int,
    trials: int,
    rng: RandomSource,
    c0_grid: Optional[list[float]] = None,
    dim: int = 32,
) -> GapTransferReport:
    """Measure how sketching turns an inner-product gap into a Hamming gap.

    Draws promise pairs at x.y = +/-gamma, sketches each pair under a fresh
    shared seed, and reports: the empirical bit-difference rate against
    arccos(gamma)/pi, the distance margin, and for each candidate C0 the
    fraction of pairs landing on the correct side of the target cube gap
    g = n_out * gamma / C0.
    """
    if not 0 < gamma < 0.5:
        raise ValueError("need 0 < gamma < 1/2")
    gen = rng.generator()
    diff_bits = 0
    margins_pos: list[float] = []
    landing = {c0: 0 for c0 in (c0_grid or [])}
    flips = 0
    for t in range(trials):
        ip = gamma if t % 2 == 0 else -gamma
        x, y = sample_pair_at_ip(dim, ip, gen)
        W = haar_rows(gen, n_out, dim)
        bx = (W @ x.coords) < 0
        by = (W @ y.coords) < 0
        d = int(np.count_nonzero(bx != by))
        diff_bits += d if ip > 0 else n_out - d  # fold the -gamma side
        signed = n_out / 2 - d if ip > 0 else d - n_out / 2
        if ip > 0:
            margins_pos.append(n_out / 2 - d)
        # the sign label calls dist <= n/2 positive side, so ties flip only -gamma
        if (d > n_out / 2) if ip > 0 else (d <= n_out / 2):
            flips += 1
        for c0 in landing:
            g = n_out * gamma / c0
            if signed >= g:
                landing[c0] += 1
    rate = diff_bits / (trials * n_out)
    closed = collision_probability(gamma)
    return GapTransferReport(
        gamma=gamma,
        n_out=n_out,
        trials=trials,
        empirical_rate=rate,
        closed_form=closed,
        abs_err=abs(rate - closed),
        mean_margin=float(np.mean(margins_pos)) if margins_pos else float("nan"),
        sign_flip_rate=flips / trials,
        taylor_residual=taylor_arccos_residual(max(gamma, 0.3)),
        c0_rows=[
            {
                "c0": c0,
                "target_gap": n_out * gamma / c0,
                "landing_rate": landing[c0] / trials,
                "failure_rate": 1.0 - landing[c0] / trials,
            }
            for c0 in sorted(landing)
        ],
    )


def lift_protocol(
    direction: str,
    P: DeterministicProtocol,
    gap: float,
    seed: Optional[HyperplaneSketchSeed] = None,
    sphere_dim: Optional[int] = None,
    c0: float = DEFAULT_C0,
) -> DeterministicProtocol:
    """Solve one problem with a protocol for the other, preserving rounds.

    direction="cube-to-sphere": the result takes n-bit inputs with Hamming
    gap ``gap``, embeds them deterministically (inner-product gap 2*gap/n),
    and runs the sphere protocol P.

    direction="sphere-to-cube": the result takes ``sphere_dim``-dimensional
    unit vectors with inner-product gap ``gap`` = gamma, sketches them under
    the shared ``seed`` into n_out bits, and runs the cube protocol P, which
    should solve the Hamming gap g = gamma * n_out / c0.

    Message budgets, round count, and max-cost are unchanged.
    """
    if direction == "cube-to-sphere":
        if not isinstance(P.alice_domain, SphereDomain):
            raise ProtocolError("cube-to-sphere lift needs a sphere-domain protocol")
        dim = P.alice_domain.dim
        dom = CubeDomain(dim)

        def embed_int(x: int) -> np.ndarray:
            return embed_cube_to_sphere(BitString.from_int(dim, x)).coords

        target_gap = 2.0 * gap / dim
        rounds = tuple(
            Round(r.speaker, r.bits, _compose(r.fn, embed_int, P.rounds[:i]))
            for i, r in enumerate(P.rounds)
        )
        output = _compose(P.output, embed_int, P.rounds)
        return DeterministicProtocol(
            dom, dom, rounds, P.output_party, output,
            name=f"{P.name or 'sphere'}@cube(g={gap:g},gamma={target_gap:g})",
        )

    if direction == "sphere-to-cube":
        if not isinstance(P.alice_domain, CubeDomain):
            raise ProtocolError("sphere-to-cube lift needs a cube-domain protocol")
        if seed is None or sphere_dim is None:
            raise ValueError("sphere-to-cube lift needs a shared seed and sphere_dim")
        if seed.n_out != P.alice_domain.n:
            raise ProtocolError("seed.n_out must match the cube protocol's input length")
        dom = SphereDomain(sphere_dim)

        def sketch_vec(x: np.ndarray) -> int:
            return sketch_sphere_to_cube(SphereVector(x), seed).to_int()

        target_gap = gap * seed.n_out / c0
        rounds = tuple(
            Round(r.speaker, r.bits, _compose(r.fn, sketch_vec, P.rounds[:i]))
            for i, r in enumerate(P.rounds)
        )
        output = _compose(P.output, sketch_vec, P.rounds)
        return DeterministicProtocol(
            dom, dom, rounds, P.output_party, output,
            name=f"{P.name or 'cube'}@sphere(gamma={gap:g},g={target_gap:g})",
        )

    raise ValueError("direction must be 'cube-to-sphere' or 'sphere-to-cube'")


def _compose(fn, transform, earlier_rounds) -> callable:
    """Wrap a message/output function so inputs pass through ``transform``.

    Table functions index by transcript code, which is rebuilt from the
    transcript tuple using the earlier rounds' bit widths.
    """
    bits = [r.bits for r in earlier_rounds]

    def lifted(x, t: tuple) -> int:
        inner = transform(x)
        if isinstance(fn, np.ndarray):
            code = 0
            for b, m in zip(bits, t):
                code = (code << b) | m
            return int(fn[inner, code])
        return int(fn(inner, t))

    return lifted
