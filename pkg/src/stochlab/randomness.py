"""Seeded, splittable random streams and elementary sampling algorithms.

Every stochastic routine in the package takes a :class:`RandomStream`.
Streams are backed by the counter-based Philox generator; child streams are
keyed by hashing the parent key together with the child index, so replicas
can be run independently and in any order without changing results.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import ConvergenceError, DomainError, ParameterError

_MASK64 = (1 << 64) - 1
REJECTION_TRIAL_CAP = 10**6
KNUTH_YAO_BITS = 64


def _derive_key(material: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(material, digest_size=16).digest(), "little")


class RandomStream:
    """Deterministic random stream with explicit splitting.

    ``RandomStream(seed)`` always produces the same sequence. ``split(i)``
    returns an independent child; children with distinct indices have
    distinct Philox keys and therefore disjoint output sequences.
    """

    def __init__(self, seed: int = 0, *, _key: int | None = None):
        seed = int(seed)
        if not 0 <= seed <= _MASK64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = _key if _key is not None else _derive_key(b"stochlab/root/" + seed.to_bytes(8, "little"))
        self._bitgen = np.random.Philox(key=self.key)
        self.gen = np.random.Generator(self._bitgen)
        self._bits = 0
        self._nbits = 0

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, key={self.key:#034x})"

    def split(self, index: int) -> "RandomStream":
        index = int(index)
        if index < 0:
            raise ParameterError("split index must be nonnegative")
        material = self.key.to_bytes(16, "little") + index.to_bytes(8, "little")
        return RandomStream(self.seed, _key=_derive_key(b"stochlab/split/" + material))

    def spawn(self, count: int) -> list["RandomStream"]:
        return [self.split(i) for i in range(count)]

    @property
    def counter(self) -> int:
        """Philox block counter; advances as draws are made."""
        state = self._bitgen.state["state"]["counter"]
        return int(sum(int(c) << (64 * i) for i, c in enumerate(state)))

    def next_u64(self) -> int:
        return int(self._bitgen.random_raw())

    def next_uniform(self) -> float:
        return float(self.gen.random())

    def next_bit(self) -> int:
        if self._nbits == 0:
            self._bits = self.next_u64()
            self._nbits = 64
        bit = self._bits & 1
        self._bits >>= 1
        self._nbits -= 1
        return bit

    def kernel_seed(self) -> int:
        """A 32-bit seed for compiled kernels that keep their own generator."""
        return self.next_u64() >> 33


def next_uniform(stream: RandomStream) -> float:
    return stream.next_uniform()


# --- transformation methods -------------------------------------------------


def inverse_cdf_sample(u: float, quantile: Callable[[float], float]) -> float:
    if not 0.0 <= u < 1.0:
        raise DomainError(f"u must lie in [0, 1), got {u}")
    return quantile(u)


def exponential_quantile(rate: float) -> Callable[[float], float]:
    if rate <= 0:
        raise ParameterError("exponential rate must be positive")
    return lambda u: -math.log1p(-u) / rate


def box_muller(u1: float, u2: float) -> tuple[float, float]:
    if not 0.0 < u1 <= 1.0:
        raise DomainError(f"u1 must lie in (0, 1], got {u1}")
    radius = math.sqrt(-2.0 * math.log(u1))
    angle = 2.0 * math.pi * u2
    return radius * math.cos(angle), radius * math.sin(angle)


def standard_normal(stream: RandomStream) -> float:
    return box_muller(1.0 - stream.next_uniform(), stream.next_uniform())[0]


def rejection_sample(stream: RandomStream, density: Callable[[float], float], bound: float,
                     support: tuple[float, float]) -> tuple[float, int]:
    """Von Neumann rejection from the box ``support x [0, bound]``.

    ``bound`` must dominate the density on the support; this cannot be
    checked in general and is the caller's responsibility.
    """
    a, b = support
    if bound <= 0 or not a < b:
        raise ParameterError("need bound > 0 and a < b")
    width = b - a
    for trial in range(1, REJECTION_TRIAL_CAP + 1):
        x = a + width * stream.next_uniform()
        y = bound * stream.next_uniform()
        if y <= density(x):
            return x, trial
    raise ConvergenceError(f"no acceptance in {REJECTION_TRIAL_CAP} trials; is the bound valid?")


# --- alias method -------------------------------------------------------------


@dataclass(frozen=True)
class AliasTable:
    thresholds: tuple[Fraction, ...]
    aliases: tuple[int, ...]
    _thr: np.ndarray = field(repr=False, compare=False)
    _alias: np.ndarray = field(repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.thresholds)

    def masses(self) -> list[Fraction]:
        """Outcome probabilities implied by the table, in exact arithmetic."""
        n = self.n
        out = [Fraction(0)] * n
        for i, (t, j) in enumerate(zip(self.thresholds, self.aliases)):
            out[i] += t / n
            out[j] += (1 - t) / n
        return out


def alias_build(weights: Sequence) -> AliasTable:
    """Walker/Vose table built in rational arithmetic (linear time).

    Cells whose scaled weight is exactly 1 are treated as small.
    """
    w = [Fraction(x) for x in weights]
    if not w or any(x < 0 for x in w):
        raise ParameterError("weights must be a nonempty nonnegative vector")
    total = sum(w)
    if total == 0:
        raise ParameterError("weights must have a positive sum")
    n = len(w)
    scaled = [x * n / total for x in w]
    thresholds: list[Fraction] = [Fraction(1)] * n
    aliases = list(range(n))
    small = [i for i, p in enumerate(scaled) if p <= 1]
    large = [i for i, p in enumerate(scaled) if p > 1]
    while small and large:
        lo = small.pop()
        hi = large.pop()
        thresholds[lo] = scaled[lo]
        aliases[lo] = hi
        scaled[hi] = scaled[hi] + scaled[lo] - 1
        (small if scaled[hi] <= 1 else large).append(hi)
    # leftovers have scaled weight exactly 1
    for i in small + large:
        thresholds[i] = Fraction(1)
        aliases[i] = i
    return AliasTable(tuple(thresholds), tuple(aliases),
                      np.array([float(t) for t in thresholds]), np.array(aliases, dtype=np.int64))


def alias_sample(table: AliasTable, stream: RandomStream, size: int | None = None):
    n = table.n
    if size is None:
        i = min(int(stream.next_uniform() * n), n - 1)
        return i if stream.next_uniform() < table._thr[i] else int(table._alias[i])
    cells = stream.gen.integers(0, n, size=size)
    keep = stream.gen.random(size) < table._thr[cells]
    return np.where(keep, cells, table._alias[cells])


# --- Knuth-Yao ------------------------------------------------------------------


def _dyadic_digits(probabilities: Sequence) -> list[int]:
    probs = [Fraction(p) for p in probabilities]
    if not probs or any(p < 0 for p in probs):
        raise ParameterError("probabilities must be a nonempty nonnegative vector")
    if abs(sum(probs) - 1) > Fraction(1, 10**9):
        raise ParameterError("probabilities must sum to 1")
    scale = 1 << KNUTH_YAO_BITS
    return [min(math.floor(p * scale), scale) for p in probs]


def knuth_yao_sample(probabilities: Sequence, coin: RandomStream) -> tuple[int, int]:
    """Sample an index using fair coin flips on the discrete distribution tree.

    Binary expansions are truncated at 64 bits; a walk that falls off the
    truncated tree restarts, so the bias per outcome is below 2**-64.
    Returns ``(index, flips)``.
    """
    digits = _dyadic_digits(probabilities)
    for i, m in enumerate(digits):
        if m == 1 << KNUTH_YAO_BITS:
            return i, 0
    flips = 0
    while True:
        d = 0
        for level in range(KNUTH_YAO_BITS):
            shift = KNUTH_YAO_BITS - 1 - level
            d = 2 * d + (1 - coin.next_bit())
            flips += 1
            for i, m in enumerate(digits):
                d -= (m >> shift) & 1
                if d == -1:
                    return i, flips


# --- geometric constructions ----------------------------------------------------


def sphere_uniform(stream: RandomStream, dimension: int) -> np.ndarray:
    if dimension < 1:
        raise ParameterError("dimension must be >= 1")
    while True:
        v = stream.gen.standard_normal(dimension)
        norm = np.linalg.norm(v)
        if norm > 0:
            return v / norm


def sorted_uniforms(stream: RandomStream, n: int) -> np.ndarray:
    """Uniform order statistics from normalized exponential spacings."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    spacings = -np.log1p(-stream.gen.random(n + 1))
    return np.cumsum(spacings)[:-1] / spacings.sum()


# --- named distributions --------------------------------------------------------


class Distribution:
    """Base for the tagged distribution specs; ``draw`` uses elementary constructions."""

    mean: float
    variance: float

    def draw(self, stream: RandomStream):
        raise NotImplementedError


def _positive(name, value):
    if not value > 0:
        raise ParameterError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class Uniform(Distribution):
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ParameterError("Uniform needs a < b")

    mean = property(lambda self: (self.a + self.b) / 2)
    variance = property(lambda self: (self.b - self.a) ** 2 / 12)

    def draw(self, stream):
        return self.a + (self.b - self.a) * stream.next_uniform()


@dataclass(frozen=True)
class Exponential(Distribution):
    rate: float = 1.0

    def __post_init__(self):
        _positive("rate", self.rate)

    mean = property(lambda self: 1 / self.rate)
    variance = property(lambda self: 1 / self.rate**2)

    def draw(self, stream):
        return inverse_cdf_sample(stream.next_uniform(), exponential_quantile(self.rate))


@dataclass(frozen=True)
class Normal(Distribution):
    mu: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if self.var < 0:
            raise ParameterError("Normal variance must be >= 0")

    mean = property(lambda self: self.mu)
    variance = property(lambda self: self.var)

    def draw(self, stream):
        return self.mu + math.sqrt(self.var) * standard_normal(stream)


@dataclass(frozen=True)
class Poisson(Distribution):
    lam: float = 1.0

    def __post_init__(self):
        _positive("lam", self.lam)

    mean = property(lambda self: self.lam)
    variance = property(lambda self: self.lam)

    def draw(self, stream):
        # count exponential arrivals before time 1
        count, clock = 0, 0.0
        while True:
            clock += -math.log1p(-stream.next_uniform()) / self.lam
            if clock >= 1.0:
                return count
            count += 1


@dataclass(frozen=True)
class Gamma(Distribution):
    """Gamma law with scale ``scale`` and integer shape ``shape``."""

    scale: float = 1.0
    shape: int = 1

    def __post_init__(self):
        _positive("scale", self.scale)
        if int(self.shape) != self.shape or self.shape < 1:
            raise ParameterError("Gamma shape must be an integer >= 1")

    mean = property(lambda self: self.shape * self.scale)
    variance = property(lambda self: self.shape * self.scale**2)

    def draw(self, stream):
        return sum(-math.log1p(-stream.next_uniform()) for _ in range(self.shape)) * self.scale


@dataclass(frozen=True)
class Dirichlet(Distribution):
    alpha: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        if len(self.alpha) < 2 or any(not a > 0 for a in self.alpha):
            raise ParameterError("Dirichlet needs at least two positive parameters")

    @property
    def mean(self):
        s = sum(self.alpha)
        return np.array(self.alpha) / s

    @property
    def variance(self):
        a = np.array(self.alpha)
        s = a.sum()
        return a * (s - a) / (s**2 * (s + 1))

    def draw(self, stream):
        parts = []
        for a in self.alpha:
            if float(a).is_integer():
                parts.append(Gamma(1.0, int(a)).draw(stream))
            else:
                parts.append(float(stream.gen.standard_gamma(a)))
        parts = np.array(parts)
        return parts / parts.sum()


@dataclass(frozen=True)
class Cauchy(Distribution):
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        _positive("scale", self.scale)

    mean = property(lambda self: math.nan)
    variance = property(lambda self: math.inf)

    def draw(self, stream):
        return self.loc + self.scale * math.tan(math.pi * (stream.next_uniform() - 0.5))


@dataclass(frozen=True)
class Gumbel(Distribution):
    scale: float = 1.0

    def __post_init__(self):
        _positive("scale", self.scale)

    mean = property(lambda self: self.scale * np.euler_gamma)
    variance = property(lambda self: (math.pi * self.scale) ** 2 / 6)

    def draw(self, stream):
        u = 1.0 - stream.next_uniform()
        return -self.scale * math.log(-math.log(u)) if u < 1.0 else math.inf


@dataclass(frozen=True)
class LogNormal(Distribution):
    mu: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if self.var < 0:
            raise ParameterError("LogNormal variance must be >= 0")

    mean = property(lambda self: math.exp(self.mu + self.var / 2))
    variance = property(lambda self: (math.exp(self.var) - 1) * math.exp(2 * self.mu + self.var))

    def draw(self, stream):
        return math.exp(Normal(self.mu, self.var).draw(stream))


@dataclass(frozen=True)
class Geometric(Distribution):
    """Number of trials up to and including the first success."""

    p: float = 0.5

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ParameterError("Geometric p must lie in (0, 1]")

    mean = property(lambda self: 1 / self.p)
    variance = property(lambda self: (1 - self.p) / self.p**2)

    def draw(self, stream):
        if self.p == 1:
            return 1
        u = stream.next_uniform()
        return max(1, math.ceil(math.log1p(-u) / math.log1p(-self.p)))


@dataclass(frozen=True)
class Binomial(Distribution):
    n: int = 1
    p: float = 0.5

    def __post_init__(self):
        if self.n < 0 or not 0 <= self.p <= 1:
            raise ParameterError("Binomial needs n >= 0 and p in [0, 1]")

    mean = property(lambda self: self.n * self.p)
    variance = property(lambda self: self.n * self.p * (1 - self.p))

    def draw(self, stream):
        return int(np.count_nonzero(stream.gen.random(self.n) < self.p))


@dataclass(frozen=True)
class Discrete(Distribution):
    weights: tuple = (1.0,)
    table: AliasTable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "table", alias_build(self.weights))

    @property
    def probabilities(self):
        w = np.array([float(x) for x in self.weights])
        return w / w.sum()

    @property
    def mean(self):
        return float(np.arange(len(self.weights)) @ self.probabilities)

    @property
    def variance(self):
        k = np.arange(len(self.weights))
        return float(k**2 @ self.probabilities) - self.mean**2

    def draw(self, stream):
        return alias_sample(self.table, stream)


def sample(dist: Distribution, stream: RandomStream):
    return dist.draw(stream)
