"""Exact solvers for classical combinatorial probability problems.

All rational results are :class:`fractions.Fraction` values; floats appear
only where the answer is irrational (branching extinction).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import ConvergenceError, ParameterError

DEFAULT_ORDER = 128
MAX_PATTERN_LENGTH = 32


# --- truncated power series -------------------------------------------------------


@dataclass(frozen=True)
class PowerSeries:
    coefficients: tuple[Fraction, ...]

    def __init__(self, coefficients: Sequence, order: int | None = None):
        coeffs = [Fraction(c) for c in coefficients]
        if order is None:
            order = max(len(coeffs) - 1, 0)
        coeffs = (coeffs + [Fraction(0)] * (order + 1))[: order + 1]
        object.__setattr__(self, "coefficients", tuple(coeffs))

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    @classmethod
    def x(cls, order: int = DEFAULT_ORDER) -> "PowerSeries":
        return cls([0, 1], order)

    @classmethod
    def constant(cls, value, order: int = DEFAULT_ORDER) -> "PowerSeries":
        return cls([value], order)

    def __add__(self, other):
        if not isinstance(other, PowerSeries):
            other = PowerSeries.constant(other, self.order)
        order = min(self.order, other.order)
        return PowerSeries([a + b for a, b in zip(self.coefficients, other.coefficients)], order)

    __radd__ = __add__

    def __mul__(self, other):
        if not isinstance(other, PowerSeries):
            return PowerSeries([c * Fraction(other) for c in self.coefficients], self.order)
        return series_mul(self, other)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        result = PowerSeries.constant(1, self.order)
        for _ in range(k):
            result = result * self
        return result

    def __call__(self, value):
        acc = Fraction(0) if isinstance(value, (int, Fraction)) else 0.0
        for c in reversed(self.coefficients):
            acc = acc * value + c
        return acc


def series_mul(a: PowerSeries, b: PowerSeries) -> PowerSeries:
    order = min(a.order, b.order)
    out = [Fraction(0)] * (order + 1)
    for i, ai in enumerate(a.coefficients):
        if ai == 0:
            continue
        for j in range(order + 1 - i):
            out[i + j] += ai * b.coefficients[j]
    return PowerSeries(out, order)


def series_compose(a: PowerSeries, b: PowerSeries) -> PowerSeries:
    """a(b(x)) truncated; b must have zero constant term."""
    if b.coefficients[0] != 0:
        raise ParameterError("inner series must have zero constant term")
    order = min(a.order, b.order)
    result = PowerSeries.constant(0, order)
    for c in reversed(a.coefficients):
        result = series_mul(result, b) + c
    return result


def coeff(a: PowerSeries, k: int) -> Fraction:
    if k < 0:
        raise ParameterError("coefficient index must be >= 0")
    return a.coefficients[k] if k <= a.order else Fraction(0)


def solve_series(equation: Callable[[PowerSeries], PowerSeries], order: int = DEFAULT_ORDER) -> PowerSeries:
    """Fixed point of ``l = equation(l)`` by iteration; each pass fixes one more coefficient."""
    current = PowerSeries.constant(0, order)
    for _ in range(order + 2):
        nxt = equation(current)
        if nxt.coefficients == current.coefficients:
            return nxt
        current = nxt
    return current


def bracket_series(order: int = DEFAULT_ORDER) -> PowerSeries:
    """Generating function of balanced bracket strings, x marking each bracket."""
    x = PowerSeries.x(order)
    return solve_series(lambda l: 1 + (x * l) ** 2, order)


# --- ballots, queues, derangements ---------------------------------------------------


def ballot_probability(a: int, b: int) -> Fraction:
    if not a > b >= 0:
        raise ParameterError("ballot needs a > b >= 0")
    return Fraction(a - b, a + b)


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def queue_no_wait_probability(n: int) -> Fraction:
    """Chance that a ticket queue with n fifty-holders and n hundred-holders never stalls."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    return Fraction(catalan(n), math.comb(2 * n, n))


def derangements(n: int) -> int:
    if n < 0:
        raise ParameterError("n must be >= 0")
    prev, cur = 1, 0
    if n == 0:
        return 1
    for k in range(2, n + 1):
        prev, cur = cur, (k - 1) * (prev + cur)
    return cur


def hat_match_moments(n: int) -> tuple[Fraction, Fraction]:
    """Mean and variance of the number of fixed points of a uniform permutation."""
    if n < 0:
        raise ParameterError("n must be >= 0")
    # E[F] = n * 1/n, E[F(F-1)] = n(n-1) * 1/(n(n-1))
    mean = Fraction(1) if n >= 1 else Fraction(0)
    second_factorial = Fraction(1) if n >= 2 else Fraction(0)
    return mean, second_factorial + mean - mean**2


def lucky_tickets(half_digits: int, base: int = 10) -> int:
    if half_digits < 1 or base < 2:
        raise ParameterError("need half_digits >= 1 and base >= 2")
    poly = [1]
    for _ in range(2 * half_digits):
        nxt = [0] * (len(poly) + base - 1)
        for i, c in enumerate(poly):
            for d in range(base):
                nxt[i + d] += c
        poly = nxt
    return poly[half_digits * (base - 1)]


# --- Penney games -----------------------------------------------------------------

_SYMBOLS = {"H": "H", "T": "T", "O": "H", "P": "T", "0": "H", "1": "T"}


def _normalize_pattern(pattern: str) -> str:
    try:
        out = "".join(_SYMBOLS[ch] for ch in pattern.upper())
    except KeyError as exc:
        raise ParameterError(f"pattern {pattern!r} has a symbol outside H/T") from exc
    if not out or len(out) > MAX_PATTERN_LENGTH:
        raise ParameterError(f"pattern length must be 1..{MAX_PATTERN_LENGTH}")
    return out


def _solve_linear(matrix: list[list[Fraction]], rhs: list[list[Fraction]]) -> list[list[Fraction]]:
    """Gauss-Jordan elimination over the rationals with several right-hand sides."""
    n = len(matrix)
    a = [row[:] + r[:] for row, r in zip(matrix, rhs)]
    for col in range(n):
        pivot = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[pivot] = a[pivot], a[col]
        inv = 1 / a[col][col]
        a[col] = [v * inv for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [v - f * w for v, w in zip(a[r], a[col])]
    return [row[n:] for row in a]


def penney_multi(patterns: Sequence[str]) -> list[Fraction]:
    """Probability that each pattern is the first to appear in fair coin tossing."""
    pats = [_normalize_pattern(p) for p in patterns]
    if len(pats) < 2:
        raise ParameterError("need at least two patterns")
    for i, a in enumerate(pats):
        for j, b in enumerate(pats):
            if i != j and a in b:
                raise ParameterError(f"pattern {a} occurs inside {b}; the game is degenerate")
    prefixes = sorted({p[:k] for p in pats for k in range(len(p))}, key=lambda s: (len(s), s))
    index = {s: i for i, s in enumerate(prefixes)}
    winner = {p: i for i, p in enumerate(pats)}

    def advance(state: str, symbol: str):
        s = state + symbol
        for p in pats:
            if s.endswith(p):
                return ("win", winner[p])
        while s not in index:
            s = s[1:]
        return ("move", index[s])

    n = len(prefixes)
    matrix = [[Fraction(int(r == c)) for c in range(n)] for r in range(n)]
    rhs = [[Fraction(0)] * len(pats) for _ in range(n)]
    half = Fraction(1, 2)
    for s, r in index.items():
        for symbol in "HT":
            kind, target = advance(s, symbol)
            if kind == "win":
                rhs[r][target] += half
            else:
                matrix[r][target] -= half
    solution = _solve_linear(matrix, rhs)
    return solution[index[""]]


def penney_win_probability(first: str, second: str) -> Fraction:
    return penney_multi([first, second])[0]


# --- necklaces, matchboxes, coupons ----------------------------------------------------


def _totient(n: int) -> int:
    return sum(1 for k in range(1, n + 1) if math.gcd(k, n) == 1)


def polya_necklaces(n: int, k: int, m: int | None = None) -> int:
    """Number of rotation classes of n-bead necklaces in k colors.

    With ``m`` given, counts only classes with exactly m beads of the first color.
    """
    if n < 1 or k < 1:
        raise ParameterError("need n >= 1 and k >= 1")
    divisors = [d for d in range(1, n + 1) if n % d == 0]
    if m is None:
        total = sum(_totient(d) * k ** (n // d) for d in divisors)
    else:
        if not 0 <= m <= n:
            raise ParameterError("need 0 <= m <= n")
        total = 0
        for d in divisors:
            if m % d == 0:
                cycles = n // d
                total += _totient(d) * math.comb(cycles, m // d) * (k - 1) ** ((n - m) // d)
    assert total % n == 0
    return total // n


def banach_matchbox(n: int, k: int) -> Fraction:
    """Chance that k matches remain in the other box when one is first found empty."""
    if n < 1 or not 0 <= k <= n:
        raise ParameterError("need n >= 1 and 0 <= k <= n")
    draws = 2 * n - k
    return Fraction(math.comb(draws, n), 2**draws)


def harmonic(n: int) -> Fraction:
    return sum((Fraction(1, k) for k in range(1, n + 1)), Fraction(0))


def coupon_moments(N: int) -> dict[str, Fraction]:
    if N < 1:
        raise ParameterError("N must be >= 1")
    first_repeat = Fraction(0)
    term = Fraction(1)
    for n in range(N + 1):
        first_repeat += term
        term = term * (N - n) / N
    return {"mean_first_repeat": first_repeat, "mean_full_set": N * harmonic(N)}


# --- branching processes -------------------------------------------------------------

MAX_PGF_ITERATIONS = 10**6


def branching_extinction(offspring_pmf: Sequence[float], tol: float = 1e-12) -> float:
    """Smallest fixed point of the offspring generating function on [0, 1]."""
    pmf = np.asarray(offspring_pmf, dtype=float)
    if pmf.ndim != 1 or pmf.size == 0 or np.any(pmf < 0) or abs(pmf.sum() - 1) > 1e-9:
        raise ParameterError("offspring pmf must be a nonnegative vector summing to 1")
    if pmf.size > 1 and pmf[1] == 1.0:
        return 0.0  # exactly one child each generation: the line never ends
    mean = float(np.arange(pmf.size) @ pmf)
    if mean <= 1.0:
        return 1.0
    coeffs = pmf[::-1]
    q = 0.0
    for _ in range(MAX_PGF_ITERATIONS):
        nxt = float(np.polyval(coeffs, q))
        if abs(nxt - q) <= tol:
            return nxt
        q = nxt
    raise ConvergenceError("generating-function iteration did not converge")


# --- permutations ---------------------------------------------------------------------


@dataclass(frozen=True)
class PermutationStats:
    n: int
    mean_cycles: Fraction
    records_mean: Fraction
    records_variance: Fraction

    def mean_cycles_len_r(self, r: int) -> Fraction:
        if r < 1:
            raise ParameterError("cycle length must be >= 1")
        return Fraction(1, r) if r <= self.n else Fraction(0)

    @property
    def prisoners_success(self) -> Fraction:
        """Success chance of the cycle-following strategy with n/2 boxes opened each."""
        if self.n % 2:
            raise ParameterError("the prisoners game needs even n")
        return 1 - sum((Fraction(1, k) for k in range(self.n // 2 + 1, self.n + 1)), Fraction(0))


def permutation_stats(n: int) -> PermutationStats:
    """Cycle and record statistics of a uniform random permutation.

    Records are counted among positions 2..n (a new maximum after the first element).
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    return PermutationStats(
        n=n,
        mean_cycles=harmonic(n),
        records_mean=sum((Fraction(1, k) for k in range(2, n + 1)), Fraction(0)),
        records_variance=sum((Fraction(k - 1, k * k) for k in range(2, n + 1)), Fraction(0)),
    )


def cycle_lengths(perm: Sequence[int]) -> list[int]:
    seen = [False] * len(perm)
    out = []
    for start in range(len(perm)):
        if seen[start]:
            continue
        length, i = 0, start
        while not seen[i]:
            seen[i] = True
            i = perm[i]
            length += 1
        out.append(length)
    return out


def records_after_first(seq: Sequence) -> int:
    best, count = seq[0], 0
    for v in seq[1:]:
        if v > best:
            best, count = v, count + 1
    return count


def enumerate_permutation_stats(n: int) -> dict[str, Fraction]:
    """Brute-force averages over all n! permutations; only for small n."""
    total = math.factorial(n)
    cyc = rec = rec2 = win = 0
    for perm in itertools.permutations(range(n)):
        lengths = cycle_lengths(perm)
        cyc += len(lengths)
        r = records_after_first(perm)
        rec += r
        rec2 += r * r
        win += max(lengths) <= n // 2
    mean = Fraction(rec, total)
    return {
        "mean_cycles": Fraction(cyc, total),
        "records_mean": mean,
        "records_variance": Fraction(rec2, total) - mean**2,
        "prisoners_success": Fraction(win, total),
    }
