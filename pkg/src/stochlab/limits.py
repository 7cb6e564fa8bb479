"""Desk-scale checks of classical limit theorems.

Each public ``*_check`` function runs a registered experiment through the
harness and returns its :class:`~stochlab.harness.Report`.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numba
import numpy as np

from .errors import ParameterError
from .harness import (Outcome, Series, check_at_least, check_at_most, check_within, experiment,
                      run_experiment)
from .stats import (EmpiricalCdf, ks_distance, loglog_slope, mean_stderr, normal_cdf,
                    proportion_stderr, quantile_tail_slope)

BERRY_ESSEEN_CONSTANT = 0.7056


def _log_binom_pmf(n: int, p: float) -> np.ndarray:
    k = np.arange(n + 1)
    lg = np.array([math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) for i in k])
    with np.errstate(divide="ignore"):
        return lg + k * math.log(p) + (n - k) * math.log1p(-p)


# --- Berry-Esseen ----------------------------------------------------------------


def berry_esseen_quantities(p: float, n: int) -> dict:
    """Exact and approximate win probability for n games of +-1 stakes won with probability p."""
    if not 0 < p < 1 or n < 1:
        raise ParameterError("need 0 < p < 1 and n >= 1")
    pmf = np.exp(_log_binom_pmf(n, p))
    wins = np.arange(n + 1)
    total = 2 * wins - n
    exact = float(pmf[total > 0].sum())
    drift = 2 * p - 1
    sigma = 2 * math.sqrt(p * (1 - p))
    approx = float(normal_cdf(n * drift / (sigma * math.sqrt(n))))
    z = (total - n * drift) / (sigma * math.sqrt(n))
    cdf_at = np.cumsum(pmf)
    cdf_left = cdf_at - pmf
    phi = normal_cdf(z)
    sup = float(max(np.max(np.abs(cdf_at - phi)), np.max(np.abs(cdf_left - phi))))
    third = p * (1 - drift) ** 3 + (1 - p) * (1 + drift) ** 3
    bound = BERRY_ESSEEN_CONSTANT * third / (sigma**3 * math.sqrt(n))
    return {"exact": exact, "normal": approx, "sup_distance": sup, "bound": bound}


@experiment("berry-esseen", "limits", p=18 / 38, n=361)
def _berry_esseen(params, replicas, stream):
    """Exact binomial win probability versus the normal approximation and its error bound."""
    q = berry_esseen_quantities(params["p"], params["n"])
    checks = [
        check_within("normal approximation vs exact tail", q["exact"], q["normal"], 0.005),
        check_at_most("sup CDF distance under the Berry-Esseen bound", q["sup_distance"], q["bound"]),
    ]
    return Outcome(q["exact"], 0.0, checks, extra=q)


def berry_esseen_check(p: float, n: int):
    return run_experiment("berry-esseen", p=p, n=n)


# --- Poisson approximation ----------------------------------------------------------


def bernoulli_sum_pmf(p_list) -> np.ndarray:
    pmf = np.array([1.0])
    for p in p_list:
        pmf = np.convolve(pmf, [1 - p, p])
    return pmf


def poisson_pmf(lam: float, size: int) -> np.ndarray:
    k = np.arange(size)
    if lam == 0:
        return (k == 0).astype(float)
    return np.exp(k * math.log(lam) - lam - np.array([math.lgamma(i + 1) for i in k]))


def poisson_tv(p_list) -> tuple[float, float]:
    """Total variation (half L1) between a Bernoulli sum and the matching Poisson law, and the bound."""
    p = np.asarray(p_list, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ParameterError("probabilities must lie in [0, 1]")
    exact = bernoulli_sum_pmf(p)
    pois = poisson_pmf(float(p.sum()), exact.size)
    tail = max(1.0 - pois.sum(), 0.0)
    tv = 0.5 * (np.abs(exact - pois).sum() + tail)
    return float(tv), float(2 * np.sum(p**2))


@experiment("poisson-approx", "limits", p=0.01, copies=100)
def _poisson_approx(params, replicas, stream):
    """Exact total variation between a Bernoulli sum and a Poisson law against the bound."""
    tv, bound = poisson_tv([params["p"]] * params["copies"])
    return Outcome(tv, 0.0, [check_at_most("total variation under 2 sum p^2", tv, bound)],
                   extra={"bound": bound})


def poisson_approx_check(p_list):
    tv, bound = poisson_tv(p_list)
    from .harness import Report

    return Report("poisson-approx", {"p_list": list(map(float, p_list))}, 0, 1, tv, 0.0,
                  [check_at_most("total variation under 2 sum p^2", tv, bound)], 0.0, extra={"bound": bound})


# --- maxima -----------------------------------------------------------------------

EXTREME_FAMILIES = ("pareto", "bounded", "exponential")


def normalized_maxima(family: str, param: float, n: int, replicas: int, stream) -> np.ndarray:
    if family not in EXTREME_FAMILIES:
        raise ParameterError(f"family must be one of {EXTREME_FAMILIES}")
    if not param > 0 or n < 10:
        raise ParameterError("need a positive parameter and n >= 10")
    out = np.empty(replicas)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, replicas, chunk):
        rows = min(chunk, replicas - start)
        u = stream.gen.random((rows, n))
        if family == "pareto":
            m = ((1.0 - u) ** (-1.0 / param)).max(axis=1)
            out[start:start + rows] = m / n ** (1.0 / param)
        elif family == "bounded":
            m = (-(u ** (1.0 / param))).max(axis=1)
            out[start:start + rows] = m * n ** (1.0 / param)
        else:
            m = (-np.log1p(-u) / param).max(axis=1)
            out[start:start + rows] = m - math.log(n) / param
    return out


def max_stable_cdf(family: str, param: float):
    if family == "pareto":
        return lambda y: np.where(np.asarray(y) > 0, np.exp(-np.maximum(y, 1e-300) ** (-param)), 0.0)
    if family == "bounded":
        return lambda y: np.where(np.asarray(y) < 0, np.exp(-np.abs(y) ** param), 1.0)
    return lambda y: np.exp(-np.exp(-param * np.asarray(y)))


@experiment("extreme-value", "limits", replicas=10_000, family="exponential", param=1.0, n=1000)
def _extreme_value(params, replicas, stream):
    """KS distance of normalized maxima to the matching max-stable law."""
    fam, param = params["family"], params["param"]
    y = normalized_maxima(fam, param, params["n"], replicas, stream)
    d = ks_distance(y, max_stable_cdf(fam, param))
    return Outcome(d, 0.0, [check_at_most("KS distance to the max-stable limit", d, 0.02)])


def extreme_value_check(family: str, param: float, n: int, replicas: int, seed: int = 0):
    return run_experiment("extreme-value", seed=seed, replicas=replicas, family=family, param=param, n=n)


# --- arcsine law ------------------------------------------------------------------


@numba.njit(cache=True)
def _positive_steps(n, replicas, seed):
    np.random.seed(seed)
    out = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        s = 0
        pos = 0
        for _ in range(n):
            prev = s
            s += 1 if np.random.random() < 0.5 else -1
            if prev + s > 0:
                pos += 1
        out[r] = pos
    return out


def positive_time_fractions(n: int, replicas: int, stream) -> np.ndarray:
    """Fraction of the n steps a simple walk spends above zero (a step counts if either end is positive)."""
    if n < 2 or n % 2:
        raise ParameterError("n must be even and >= 2")
    return _positive_steps(n, replicas, stream.kernel_seed()) / n


def arcsine_cdf(x):
    return 2 / math.pi * math.asin(math.sqrt(min(max(x, 0.0), 1.0)))


def discrete_arcsine_pmf(n: int) -> np.ndarray:
    """Exact law of the number of positive steps (always even) in an n-step walk."""
    half = n // 2
    k = np.arange(half + 1)
    log_u = np.array([math.lgamma(2 * j + 1) - 2 * math.lgamma(j + 1) - 2 * j * math.log(2) for j in k])
    pmf = np.exp(log_u + log_u[::-1])
    return pmf


@experiment("arcsine", "limits", replicas=10_000, n=10_000, x=0.2)
def _arcsine(params, replicas, stream):
    """Fraction of time a random walk is positive against the arcsine law."""
    n, x = params["n"], params["x"]
    frac = positive_time_fractions(n, replicas, stream)
    emp = float(np.mean(frac < x))
    exact = float(discrete_arcsine_pmf(n)[np.arange(n // 2 + 1) * 2 < x * n].sum())
    se = proportion_stderr(emp, replicas)
    checks = [
        check_within("empirical vs arcsine limit", arcsine_cdf(x), emp, 0.01),
        check_within("empirical vs exact discrete law (4 se)", exact, emp, max(4 * se, 1e-12)),
    ]
    grid = np.linspace(0, 1, 101)
    ecdf = EmpiricalCdf(frac)
    series = [Series("empirical", grid.tolist(), ecdf(grid).tolist()),
              Series("arcsine", grid.tolist(), [arcsine_cdf(g) for g in grid])]
    return Outcome(emp, se, checks, series=series)


def arcsine_check(n: int, x: float, replicas: int, seed: int = 0):
    return run_experiment("arcsine", seed=seed, replicas=replicas, n=n, x=x)


# --- Petersburg game -------------------------------------------------------------------


def petersburg_totals(n: int, replicas: int, stream) -> np.ndarray:
    """Total payout of n games paying 2^k when the first head is on toss k.

    The number of games ending on each toss is drawn by successive binomial
    thinning, which is exact and independent of n in cost.
    """
    if n < 2:
        raise ParameterError("n must be >= 2")
    totals = np.zeros(replicas)
    remaining = np.full(replicas, n, dtype=np.int64)
    k = 1
    while remaining.any():
        ended = stream.gen.binomial(remaining, 0.5)
        totals += ended * 2.0**k
        remaining -= ended
        k += 1
    return totals


def petersburg_statistic(n, replicas, stream):
    return petersburg_totals(n, replicas, stream) / (n * math.log2(n))


def petersburg_truncated_mean(m: int) -> float:
    """Mean payout of one game when payouts above 2^m are dropped."""
    return float(sum(2.0**k * 2.0**-k for k in range(1, m + 1)))


@experiment("petersburg", "limits", replicas=200, n=2**20, n_ref=2**10)
def _petersburg(params, replicas, stream):
    """Median of total payout over n log2 n; should drift toward 1 as n grows."""
    big = petersburg_statistic(params["n"], replicas, stream.split(0))
    ref = petersburg_statistic(params["n_ref"], replicas, stream.split(1))
    med, med_ref = float(np.median(big)), float(np.median(ref))
    checks = [
        check_within("median statistic in [0.8, 1.4]", 1.1, med, 0.3),
        check_at_most("median moves toward 1 as n grows", abs(med - 1), abs(med_ref - 1)),
    ]
    iqr = np.subtract(*np.quantile(big, [0.75, 0.25]))
    return Outcome(med, float(1.2533 * iqr / 1.349 / math.sqrt(replicas)), checks,
                   extra={"median_ref": med_ref})


def petersburg_check(n: int, replicas: int, seed: int = 0):
    return run_experiment("petersburg", seed=seed, replicas=replicas, n=n)


# --- Wigner semicircle -----------------------------------------------------------------


def semicircle_moment(k: int) -> float:
    if k % 2:
        return 0.0
    r = k // 2
    return math.factorial(2 * r) / (4**r * math.factorial(r) * math.factorial(r + 1))


def trace_moments(dim: int, kmax: int, stream) -> np.ndarray:
    """(1/n) tr(A^k), k = 1..kmax, for a symmetric +-1 matrix scaled by 1/(2 sqrt n)."""
    signs = np.where(stream.gen.random((dim, dim)) < 0.5, -1.0, 1.0)
    a = np.triu(signs) + np.triu(signs, 1).T
    a /= 2 * math.sqrt(dim)
    out = np.empty(kmax)
    power = np.eye(dim)
    for k in range(kmax):
        power = power @ a
        out[k] = np.trace(power) / dim
    return out


@experiment("wigner", "limits", replicas=20, dim=400, r=2)
def _wigner(params, replicas, stream):
    """Trace moments of random sign matrices against semicircle moments."""
    dim, r = params["dim"], params["r"]
    if dim < 10 or r < 1:
        raise ParameterError("need dim >= 10 and r >= 1")
    samples = np.array([trace_moments(dim, 2 * r, stream.split(i)) for i in range(replicas)])
    checks = []
    for k in range(1, 2 * r + 1):
        m, se = mean_stderr(samples[:, k - 1])
        target = semicircle_moment(k)
        tol = 0.03 * target if target else max(4 * se, 1e-12)
        checks.append(check_within(f"moment {k}", target, m, tol))
    m2, se2 = mean_stderr(samples[:, 1])
    return Outcome(m2, se2, checks)


def wigner_check(dim: int, r: int, replicas: int, seed: int = 0):
    return run_experiment("wigner", seed=seed, replicas=replicas, dim=dim, r=r)


# --- Holtsmark ---------------------------------------------------------------------------


def ball_radius(density: float, n_stars: int) -> float:
    """Radius of the ball holding n_stars at the given density: (4/3) pi R^3 = n / density."""
    return (3 * n_stars / (4 * math.pi * density)) ** (1 / 3)


def star_forces(density: float, n_stars: int, replicas: int, stream) -> tuple[np.ndarray, np.ndarray]:
    """Magnitudes of the total and nearest-star inverse-square force at the ball centre."""
    if not density > 0:
        raise ParameterError("density must be positive")
    if n_stars == 0:
        return np.zeros(replicas), np.zeros(replicas)
    radius = ball_radius(density, n_stars)
    total = np.empty(replicas)
    nearest = np.empty(replicas)
    chunk = max(1, 1_000_000 // n_stars)
    for start in range(0, replicas, chunk):
        rows = min(chunk, replicas - start)
        d = stream.gen.standard_normal((rows, n_stars, 3))
        d /= np.linalg.norm(d, axis=2, keepdims=True)
        r = radius * stream.gen.random((rows, n_stars)) ** (1 / 3)
        force = (d / (r**2)[..., None]).sum(axis=1)
        total[start:start + rows] = np.linalg.norm(force, axis=1)
        nearest[start:start + rows] = 1.0 / r.min(axis=1) ** 2
    return total, nearest


@experiment("holtsmark", "limits", replicas=100_000, density=1.0, n_stars=200)
def _holtsmark(params, replicas, stream):
    """Tail exponent of the total gravitational force from uniformly scattered stars."""
    total, nearest = star_forces(params["density"], params["n_stars"], replicas, stream)
    # below the 98th percentile higher-order tail corrections steepen the slope
    slope = quantile_tail_slope(total, 0.98, 0.998)
    slope_near = quantile_tail_slope(nearest, 0.98, 0.998)
    checks = [check_within("total force tail slope", -1.5, slope, 0.1),
              check_within("nearest star tail slope", -1.5, slope_near, 0.1)]
    grid = np.geomspace(*np.quantile(total, [0.5, 0.999]), 40)
    surv = 1 - EmpiricalCdf(total)(grid)
    return Outcome(slope, 0.0, checks, series=[Series("P(|F| > f)", grid.tolist(), surv.tolist())],
                   loglog=True, extra={"nearest_slope": slope_near})


def holtsmark_check(density: float, n_stars: int, replicas: int, seed: int = 0):
    return run_experiment("holtsmark", seed=seed, replicas=replicas, density=density, n_stars=n_stars)


# --- return times ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _first_returns(replicas, horizon, seed):
    np.random.seed(seed)
    out = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        s = 0
        t = 0
        while True:
            s += 1 if np.random.random() < 0.5 else -1
            t += 1
            if s == 0 or t >= horizon:
                break
        out[r] = t if s == 0 else 0
    return out


def first_return_times(replicas: int, horizon: int, stream) -> np.ndarray:
    """First return times to 0 of a simple walk; 0 marks walks censored at the horizon."""
    if horizon < 2 or horizon % 2:
        raise ParameterError("horizon must be even and >= 2")
    return _first_returns(replicas, horizon, stream.kernel_seed())


def first_return_pmf(m: int) -> float:
    """Exact probability that the first return happens at time 2m."""
    m = int(m)
    if m <= 1000:
        return float(Fraction(math.comb(2 * m, m), 4**m * (2 * m - 1)))
    return math.exp(math.lgamma(2 * m + 1) - 2 * math.lgamma(m + 1) - 2 * m * math.log(2)) / (2 * m - 1)


def return_tail_slope(times, replicas: int, m_lo: int = 10, m_hi: int = 500, bins: int = 12) -> float:
    half = times[times > 0] // 2
    edges = np.unique(np.round(np.geomspace(m_lo, m_hi + 1, bins + 1)).astype(int))
    counts = np.histogram(half, bins=edges)[0]
    density = counts / (replicas * np.diff(edges))
    centers = np.array([np.exp(np.mean(np.log(np.arange(a, b)))) for a, b in zip(edges[:-1], edges[1:])])
    return loglog_slope(centers, density)[0]


@experiment("return-time", "limits", replicas=1_000_000, horizon=10_000)
def _return_time(params, replicas, stream):
    """First return time of a simple walk: exact small values and the m^(-3/2) tail."""
    horizon = params["horizon"]
    times = first_return_times(replicas, horizon, stream)
    capped = np.where(times > 0, times, horizon)
    p2 = float(np.mean(times == 2))
    slope = return_tail_slope(times, replicas)
    mean, se = mean_stderr(capped)
    checks = [check_within("P(return at 2) (4 se)", 0.5, p2, 4 * proportion_stderr(0.5, replicas)),
              check_within("tail slope over m in [10, 500]", -1.5, slope, 0.1)]
    ms = np.arange(1, 201)
    emp = [np.mean(times == 2 * m) for m in ms]
    series = [Series("empirical", ms.tolist(), [float(e) for e in emp]),
              Series("exact", ms.tolist(), [first_return_pmf(m) for m in ms])]
    return Outcome(mean, se, checks, series=series, loglog=True, extra={"slope": slope})


def return_time_check(horizon: int, replicas: int, seed: int = 0):
    return run_experiment("return-time", seed=seed, replicas=replicas, horizon=horizon)


# --- coupon collector ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _first_repeats(N, replicas, seed):
    np.random.seed(seed)
    out = np.empty(replicas, dtype=np.int64)
    stamp = np.zeros(N, dtype=np.int64)
    for r in range(replicas):
        t = 0
        while True:
            t += 1
            c = np.random.randint(0, N)
            if stamp[c] == r + 1:
                break
            stamp[c] = r + 1
        out[r] = t
    return out


@numba.njit(cache=True)
def _full_sets(N, replicas, seed):
    np.random.seed(seed)
    out = np.empty(replicas, dtype=np.int64)
    stamp = np.zeros(N, dtype=np.int64)
    for r in range(replicas):
        t = 0
        seen = 0
        while seen < N:
            t += 1
            c = np.random.randint(0, N)
            if stamp[c] != r + 1:
                stamp[c] = r + 1
                seen += 1
        out[r] = t
    return out


def first_repeat_times(N: int, replicas: int, stream) -> np.ndarray:
    """Index of the draw that first repeats a coupon, with N equally likely coupons."""
    return _first_repeats(N, replicas, stream.kernel_seed())


def full_set_times(N: int, replicas: int, stream) -> np.ndarray:
    return _full_sets(N, replicas, stream.kernel_seed())


def no_repeat_probability(N: int, n: int) -> float:
    """P(the first n draws are all distinct) = prod_{j<n} (1 - j/N)."""
    return float(np.prod(1.0 - np.arange(n) / N))


@experiment("coupon-rayleigh", "limits", replicas=100_000, N=10_000, t=1.0)
def _coupon_rayleigh(params, replicas, stream):
    """Scaled first-repeat time of the coupon collector against the Rayleigh tail."""
    N, t = params["N"], params["t"]
    if N < 100 or t < 0:
        raise ParameterError("need N >= 100 and t >= 0")
    x = first_repeat_times(N, replicas, stream)
    emp = float(np.mean(x > t * math.sqrt(N)))
    exact = no_repeat_probability(N, math.floor(t * math.sqrt(N)))
    se = proportion_stderr(exact, replicas)
    checks = [check_within("Rayleigh tail", math.exp(-t * t / 2), emp, 0.02),
              check_within("exact product formula (4 se)", exact, emp, max(4 * se, 1e-12))]
    return Outcome(emp, se, checks, extra={"exact": exact})


def coupon_rayleigh_check(N: int, t: float, replicas: int = 100_000, seed: int = 0):
    return run_experiment("coupon-rayleigh", seed=seed, replicas=replicas, N=N, t=t)


# --- log-normal fragmentation ------------------------------------------------------------------


def fragment_log_sizes(rate: float, a: float, sigma: float, t: float, replicas: int, stream,
                       s0: float = 1.0) -> np.ndarray:
    """log Z(t) for a particle losing a random share at each Poisson split.

    Each log-retention ln(1 - D) is minus a gamma variable with mean -a and
    variance sigma^2, so the retained share always lies in (0, 1).
    """
    if not (rate > 0 and sigma > 0 and t >= 0 and a < 0):
        raise ParameterError("need rate, sigma > 0, t >= 0 and a < 0")
    splits = stream.gen.poisson(rate * t, size=replicas)
    shape = a * a / sigma**2
    scale = sigma**2 / -a
    total = stream.gen.gamma(shape * np.maximum(splits, 0), scale) if splits.any() else np.zeros(replicas)
    total = np.where(splits > 0, total, 0.0)
    return math.log(s0) - total


@experiment("lognormal-fragmentation", "limits", replicas=10_000, rate=1.0, a=-0.1, sigma=0.1, t=100.0)
def _fragmentation(params, replicas, stream):
    """Particle size after Poisson many random splits against the log-normal law."""
    lam, a, sigma, t = params["rate"], params["a"], params["sigma"], params["t"]
    logs = fragment_log_sizes(lam, a, sigma, t, replicas, stream)
    mu = lam * t * a
    var = lam * t * (a * a + sigma * sigma)
    m, se = mean_stderr(logs)
    if var == 0:
        return Outcome(m, se, [check_within("size unchanged", 0.0, m, 0.0)])
    d = ks_distance(logs, lambda y: normal_cdf((np.asarray(y) - mu) / math.sqrt(var)))
    checks = [check_within("mean of log size (4 se)", mu, m, 4 * math.sqrt(var / replicas)),
              check_at_most("KS distance of log size to normal", d, 0.02)]
    return Outcome(m, se, checks)


def lognormal_fragmentation_check(rate: float, a: float, sigma: float, t: float, replicas: int, seed: int = 0):
    return run_experiment("lognormal-fragmentation", seed=seed, replicas=replicas, rate=rate, a=a, sigma=sigma, t=t)
