"""Simulators that cross-check the exact combinatorial answers."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import ParameterError
from .exact import (_normalize_pattern, ballot_probability, banach_matchbox, coupon_moments, derangements,
                    hat_match_moments, penney_win_probability, permutation_stats)
from .harness import Outcome, Table, check_within, experiment
from .limits import full_set_times
from .randomness import RandomStream
from .stats import mean_stderr, proportion_stderr


def _pattern_bits(pattern: str) -> tuple[int, int]:
    p = _normalize_pattern(pattern)
    return int("".join("1" if ch == "H" else "0" for ch in p), 2), len(p)


@njit(cache=True)
def _penney_games(a_bits, a_len, b_bits, b_len, games, seed):
    np.random.seed(seed)
    a_mask = (1 << a_len) - 1
    b_mask = (1 << b_len) - 1
    wins = 0
    for _ in range(games):
        window = 0
        flips = 0
        while True:
            window = ((window << 1) | (np.random.random() < 0.5)) & 0xFFFFFFFFFF
            flips += 1
            if flips >= a_len and (window & a_mask) == a_bits:
                wins += 1
                break
            if flips >= b_len and (window & b_mask) == b_bits:
                break
    return wins


def penney_simulation(first: str, second: str, games: int, stream: RandomStream) -> float:
    """Fraction of fair-coin games in which ``first`` appears before ``second``."""
    a, la = _pattern_bits(first)
    b, lb = _pattern_bits(second)
    return _penney_games(a, la, b, lb, games, stream.kernel_seed()) / games


@njit(cache=True)
def _prisoners(n, trials, seed):
    np.random.seed(seed)
    wins = 0
    seen = np.zeros(n, dtype=np.bool_)
    for _ in range(trials):
        perm = np.random.permutation(n)
        seen[:] = False
        longest = 0
        for s in range(n):
            if seen[s]:
                continue
            length = 0
            i = s
            while not seen[i]:
                seen[i] = True
                i = perm[i]
                length += 1
            longest = max(longest, length)
        wins += longest <= n // 2
    return wins


def prisoners_simulation(n: int, trials: int, stream: RandomStream) -> float:
    """Success frequency of the cycle-following strategy (each opens n/2 boxes)."""
    if n % 2:
        raise ParameterError("the prisoners game needs even n")
    return _prisoners(n, trials, stream.kernel_seed()) / trials


@njit(cache=True)
def _fixed_points(n, trials, seed):
    np.random.seed(seed)
    out = np.empty(trials, dtype=np.int64)
    for t in range(trials):
        perm = np.random.permutation(n)
        c = 0
        for i in range(n):
            c += perm[i] == i
        out[t] = c
    return out


def fixed_point_counts(n: int, trials: int, stream: RandomStream) -> np.ndarray:
    return _fixed_points(n, trials, stream.kernel_seed())


@njit(cache=True)
def _matchbox(n, trials, seed):
    np.random.seed(seed)
    out = np.empty(trials, dtype=np.int64)
    for t in range(trials):
        left = n
        right = n
        while True:
            if np.random.random() < 0.5:
                if left == 0:
                    out[t] = right
                    break
                left -= 1
            else:
                if right == 0:
                    out[t] = left
                    break
                right -= 1
    return out


def matchbox_simulation(n: int, trials: int, stream: RandomStream) -> np.ndarray:
    """Matches left in the other box when a box is first found empty."""
    return _matchbox(n, trials, stream.kernel_seed())


def ballot_simulation(a: int, b: int, trials: int, stream: RandomStream) -> float:
    """Frequency with which the winner stays strictly ahead throughout the count."""
    votes = np.concatenate([np.ones(a, dtype=np.int64), -np.ones(b, dtype=np.int64)])
    ahead = 0
    for _ in range(trials):
        path = np.cumsum(stream.gen.permutation(votes))
        ahead += bool(np.all(path > 0))
    return ahead / trials


@experiment("penney", "exact", replicas=100_000, first="OPO", second="OOP")
def _penney_experiment(p, replicas, stream):
    """Penney's game: exact first-occurrence odds against simulated games."""
    exact = penney_win_probability(p["first"], p["second"])
    freq = penney_simulation(p["first"], p["second"], replicas, stream)
    return Outcome(freq, proportion_stderr(freq, replicas),
                   [check_within("first pattern wins (simulated)", float(exact), freq, 0.01)],
                   extra={"exact": str(exact)})


@experiment("prisoners", "exact", replicas=100_000, n=100)
def _prisoners_experiment(p, replicas, stream):
    """Hundred prisoners: cycle-following success against the harmonic-sum formula."""
    exact = permutation_stats(p["n"]).prisoners_success
    freq = prisoners_simulation(p["n"], replicas, stream)
    return Outcome(freq, proportion_stderr(freq, replicas),
                   [check_within("success frequency", float(exact), freq, 0.01)], extra={"exact": float(exact)})


@experiment("coupon", "exact", replicas=100_000, N=50)
def _coupon_experiment(p, replicas, stream):
    """Coupon collector: simulated full-set time against N H_N."""
    exact = float(coupon_moments(p["N"])["mean_full_set"])
    times = full_set_times(p["N"], replicas, stream)
    est, se = mean_stderr(times)
    return Outcome(est, se, [check_within("mean full-set time", exact, est, 0.02 * exact)], extra={"exact": exact})


@experiment("matches", "exact", replicas=100_000, n=10, hats=20, ballot_a=7, ballot_b=4)
def _matches_experiment(p, replicas, stream):
    """Matchbox, hat-check and ballot answers against simulation (4 standard errors)."""
    n = p["n"]
    pmf = [float(banach_matchbox(n, k)) for k in range(n + 1)]
    left = matchbox_simulation(n, replicas, stream.split(0))
    exact_mean = sum(k * q for k, q in enumerate(pmf))
    est, se = mean_stderr(left)
    checks = [check_within("matchbox mean remaining", exact_mean, est, 4 * se),
              check_within("matchbox pmf total", 1.0, sum(pmf), 1e-12)]
    hats = p["hats"]
    fixed = fixed_point_counts(hats, replicas, stream.split(1))
    d = derangements(hats) / math.factorial(hats)
    f0 = float(np.mean(fixed == 0))
    checks.append(check_within("no hat returned", d, f0, 4 * proportion_stderr(d, replicas)))
    mean, var = hat_match_moments(hats)
    m, mse = mean_stderr(fixed)
    checks.append(check_within("mean hats returned", float(mean), m, 4 * mse))
    trials = min(replicas, 20_000)
    a, b = p["ballot_a"], p["ballot_b"]
    q = float(ballot_probability(a, b))
    freq = ballot_simulation(a, b, trials, stream.split(2))
    checks.append(check_within("ballot leader always ahead", q, freq, 4 * proportion_stderr(q, trials)))
    return Outcome(est, se, checks, table=Table(["k", "pmf", "frequency"],
                   [[k, pmf[k], float(np.mean(left == k))] for k in range(n + 1)]))
