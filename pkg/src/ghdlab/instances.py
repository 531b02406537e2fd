"""Inputs for the gap-Hamming problems on the cube and on the sphere.

The cube problem asks whether two n-bit strings have Hamming distance below
n/2 - g or above n/2 + g; the sphere variant asks for the sign of the inner
product of two unit vectors promised to satisfy |x.y| >= gamma.  This module
holds the input types, the promise predicates and labels, and seeded samplers
for the uniform / Haar / promise-conditioned input distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .rng import RandomSource

__all__ = [
    "BitString",
    "SphereVector",
    "CubePromise",
    "SpherePromise",
    "PromiseUnreachableError",
    "hamming_distance",
    "ghd_label",
    "ghs_label",
    "sign_label_cube",
    "sign_from_ip",
    "sample_haar",
    "sample_promise",
    "sample_pair_at_distance",
    "sample_pair_at_ip",
    "repeat_amplify",
]

_WORD = 64


class PromiseUnreachableError(RuntimeError):
    """Rejection sampling exhausted its attempt budget."""


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RandomSource):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomSource or Generator, got {type(rng)!r}")


# ---------------------------------------------------------------------------
# Bit strings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BitString:
    """An n-bit string packed 64 bits per word, little-endian within a word.

    Coordinate i (1-based, as in x_1..x_n) lives at bit (i-1) % 64 of word
    (i-1) // 64.  Values are immutable after construction.
    """

    n: int
    words: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.shape != (_nwords(self.n),):
            raise ValueError(f"expected {_nwords(self.n)} words for n={self.n}")
        tail = self.n % _WORD
        if tail and int(words[-1]) >> tail:
            raise ValueError("set bits beyond position n")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    # -- constructors -------------------------------------------------------

    @classmethod
    def zeros(cls, n: int) -> "BitString":
        return cls(n, np.zeros(_nwords(n), dtype=np.uint64))

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "BitString":
        arr = np.asarray(list(bits), dtype=np.uint8)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("bits must be a non-empty 1-d sequence")
        if np.any(arr > 1):
            raise ValueError("bits must be 0/1")
        padded = np.zeros(_nwords(arr.size) * _WORD, dtype=np.uint8)
        padded[: arr.size] = arr
        words = np.packbits(padded, bitorder="little").view(np.uint64)
        return cls(arr.size, words)

    @classmethod
    def from_int(cls, n: int, value: int) -> "BitString":
        """Bits from the little-endian integer encoding (bit i-1 = x_i)."""
        if not 0 <= value < (1 << n):
            raise ValueError("value out of range for n bits")
        raw = value.to_bytes(_nwords(n) * 8, "little")
        return cls(n, np.frombuffer(raw, dtype="<u8").astype(np.uint64))

    @classmethod
    def from_hex(cls, n: int, hexstr: str) -> "BitString":
        """Decode the wire format: x_1..x_n read MSB-first from hex digits."""
        value = int(hexstr, 16)
        if value >= (1 << n):
            raise ValueError("hex value out of range for n bits")
        rev = int(format(value, f"0{n}b")[::-1], 2)
        return cls.from_int(n, rev)

    @classmethod
    def random(cls, n: int, rng) -> "BitString":
        gen = _as_generator(rng)
        words = gen.integers(0, 2**64, size=_nwords(n), dtype=np.uint64)
        return cls(n, _mask_tail(words, n))

    # -- views --------------------------------------------------------------

    def bits(self) -> np.ndarray:
        """Coordinates x_1..x_n as a uint8 array."""
        return np.unpackbits(self.words.view(np.uint8), bitorder="little")[: self.n]

    def bit(self, i: int) -> int:
        """Coordinate x_i, 1-based."""
        if not 1 <= i <= self.n:
            raise IndexError("coordinate out of range")
        return (int(self.words[(i - 1) // _WORD]) >> ((i - 1) % _WORD)) & 1

    def to_int(self) -> int:
        """Little-endian integer encoding (bit i-1 = x_i)."""
        return int.from_bytes(self.words.astype("<u8").tobytes(), "little")

    def to_hex(self) -> str:
        """Wire format: x_1..x_n read MSB-first, ceil(n/4) lowercase digits."""
        msb_first = int(format(self.to_int(), f"0{self.n}b")[::-1], 2)
        return format(msb_first, f"0{(self.n + 3) // 4}x")

    def to_json(self) -> dict:
        return {"n": self.n, "hex": self.to_hex()}

    @classmethod
    def from_json(cls, obj: dict) -> "BitString":
        return cls.from_hex(int(obj["n"]), obj["hex"])

    # -- arithmetic ---------------------------------------------------------

    def weight(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def __xor__(self, other: "BitString") -> "BitString":
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        return BitString(self.n, np.bitwise_xor(self.words, other.words))

    def __and__(self, other: "BitString") -> "BitString":
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        return BitString(self.n, np.bitwise_and(self.words, other.words))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BitString)
            and self.n == other.n
            and bool(np.array_equal(self.words, other.words))
        )

    def __hash__(self) -> int:
        return hash((self.n, self.words.tobytes()))

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits())


def _nwords(n: int) -> int:
    return (n + _WORD - 1) // _WORD


def _mask_tail(words: np.ndarray, n: int) -> np.ndarray:
    tail = n % _WORD
    if tail:
        words = words.copy()
        words[-1] &= np.uint64((1 << tail) - 1)
    return words


def hamming_distance(x: BitString, y: BitString) -> int:
    """Number of positions where x and y differ; equals |x|+|y|-2|x AND y|."""
    if x.n != y.n:
        raise ValueError("dimension mismatch")
    return int(np.bitwise_count(np.bitwise_xor(x.words, y.words)).sum())


def repeat_amplify(x: BitString, r: int) -> BitString:
    """Concatenate r copies of x; multiplies every pairwise distance by r."""
    if r < 1:
        raise ValueError("r must be >= 1")
    bits = x.bits()
    return BitString.from_bits(np.tile(bits, r))


# ---------------------------------------------------------------------------
# Sphere vectors
# ---------------------------------------------------------------------------

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class SphereVector:
    """A unit vector in R^n (Euclidean norm 1 within 1e-9)."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if coords.ndim != 1 or coords.size < 1:
            raise ValueError("coords must be a 1-d sequence, n >= 1")
        norm = float(np.linalg.norm(coords))
        if abs(norm - 1.0) > _NORM_TOL:
            raise ValueError(f"not a unit vector: |v| = {norm!r}")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.coords.size

    def dot(self, other: "SphereVector") -> float:
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        return float(self.coords @ other.coords)

    def to_json(self) -> list:
        return [float(c) for c in self.coords]

    @classmethod
    def from_json(cls, obj) -> "SphereVector":
        return cls(np.asarray(obj, dtype=np.float64))


# ---------------------------------------------------------------------------
# Promises and labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CubePromise:
    """|distance - n/2| >= g, distances in Hamming units."""

    n: int
    g: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.g <= self.n / 2:
            raise ValueError("need 0 <= g <= n/2")

    def holds(self, x: BitString, y: BitString) -> bool:
        return abs(hamming_distance(x, y) - self.n / 2) >= self.g


@dataclass(frozen=True)
class SpherePromise:
    """|x.y| >= gamma, gamma in inner-product units."""

    n: int
    gamma: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("need 0 < gamma <= 1")

    def holds(self, x: SphereVector, y: SphereVector) -> bool:
        return abs(x.dot(y)) >= self.gamma


def ghd_label(x: BitString, y: BitString, promise: CubePromise) -> Optional[int]:
    """0 if dist <= n/2 - g, 1 if dist >= n/2 + g, None outside the promise."""
    if x.n != y.n:
        raise ValueError("dimension mismatch")
    d = hamming_distance(x, y)
    if d <= promise.n / 2 - promise.g:
        return 0
    if d >= promise.n / 2 + promise.g:
        return 1
    return None


def ghs_label(x: SphereVector, y: SphereVector, promise: SpherePromise) -> Optional[int]:
    """0 if x.y >= gamma, 1 if x.y <= -gamma, None outside the promise."""
    ip = x.dot(y)
    if ip >= promise.gamma:
        return 0
    if ip <= -promise.gamma:
        return 1
    return None


def sign_from_ip(ip: float) -> int:
    """The sign convention used throughout: 0 when ip >= 0, else 1."""
    return 0 if ip >= 0 else 1


def sign_label_cube(x: BitString, y: BitString) -> int:
    """Sign of the embedded inner product 1 - 2*dist/n: 0 iff dist <= n/2."""
    return 0 if 2 * hamming_distance(x, y) <= x.n else 1


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


def sample_haar(n: int, rng) -> SphereVector:
    """Rotation-invariant unit vector: normalized iid standard Gaussians."""
    gen = _as_generator(rng)
    return SphereVector(haar_rows(gen, 1, n)[0])


def haar_rows(gen: np.random.Generator, count: int, n: int) -> np.ndarray:
    """(count, n) array of independent Haar-distributed unit vectors."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = gen.standard_normal((count, n))
    norms = np.linalg.norm(g, axis=1)
    while np.any(norms == 0.0):  # probability-zero degenerate draws
        bad = norms == 0.0
        g[bad] = gen.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(g, axis=1)
    return g / norms[:, None]


def sample_promise(
    promise: Union[CubePromise, SpherePromise],
    rng,
    max_attempts: int = 10**6,
    batch: int = 4096,
):
    """Pair uniform on the promise region, by rejection from the product measure.

    Raises PromiseUnreachableError once max_attempts candidate pairs were
    rejected (e.g. a measure-zero promise region).
    """
    gen = _as_generator(rng)
    attempts = 0
    nw = None
    while attempts < max_attempts:
        m = min(batch, max_attempts - attempts)
        attempts += m
        if isinstance(promise, CubePromise):
            if nw is None:
                nw = _nwords(promise.n)
            xs = gen.integers(0, 2**64, size=(m, nw), dtype=np.uint64)
            ys = gen.integers(0, 2**64, size=(m, nw), dtype=np.uint64)
            tail = promise.n % _WORD
            if tail:
                mask = np.uint64((1 << tail) - 1)
                xs[:, -1] &= mask
                ys[:, -1] &= mask
            dist = np.bitwise_count(np.bitwise_xor(xs, ys)).sum(axis=1)
            ok = np.abs(dist - promise.n / 2) >= promise.g
            if np.any(ok):
                i = int(np.argmax(ok))
                return BitString(promise.n, xs[i]), BitString(promise.n, ys[i])
        else:
            xs = haar_rows(gen, m, promise.n)
            ys = haar_rows(gen, m, promise.n)
            ok = np.abs(np.einsum("ij,ij->i", xs, ys)) >= promise.gamma
            if np.any(ok):
                i = int(np.argmax(ok))
                return SphereVector(xs[i]), SphereVector(ys[i])
    raise PromiseUnreachableError(
        f"no promise pair found in {max_attempts} attempts; "
        "the promise region may have (near-)zero measure"
    )


def sample_pair_at_distance(n: int, dist: int, rng) -> tuple[BitString, BitString]:
    """Uniform pair at exactly the given Hamming distance."""
    if not 0 <= dist <= n:
        raise ValueError("distance out of range")
    gen = _as_generator(rng)
    x = BitString.random(n, gen)
    flip = BitString.from_bits(
        np.isin(np.arange(n), gen.choice(n, size=dist, replace=False)).astype(np.uint8)
    )
    return x, x ^ flip


def sample_pair_at_ip(n: int, ip: float, rng) -> tuple[SphereVector, SphereVector]:
    """Haar x and a uniform y on the slice {y : x.y = ip}."""
    if abs(ip) > 1:
        raise ValueError("|ip| must be <= 1")
    if n == 1 and abs(ip) != 1:
        raise ValueError("the 0-sphere only admits ip = +/-1")
    gen = _as_generator(rng)
    x = haar_rows(gen, 1, n)[0]
    if abs(ip) == 1.0:
        return SphereVector(x), SphereVector(np.copysign(1.0, ip) * x)
    while True:
        u = gen.standard_normal(n)
        u -= (u @ x) * x
        norm = float(np.linalg.norm(u))
        if norm > 0:
            break
    u /= norm
    y = ip * x + np.sqrt(1.0 - ip * ip) * u
    y /= np.linalg.norm(y)  # defensive renormalization against drift
    return SphereVector(x), SphereVector(y)
