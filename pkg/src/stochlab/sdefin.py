"""Geometric Brownian motion, Euler schemes, Monte Carlo pricing and binomial trees.

Prices are for a stock following ``S(t) = s0 exp(a t + sigma W(t))``; the
continuous rate used for discounting is ``mu = a + sigma**2 / 2``, so the
process solves ``dS = mu S dt + sigma S dW``. Cost is always counted as the
number of Gaussian increments drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .errors import ArbitrageError, DomainError, ParameterError
from .harness import Outcome, Series, Table, check_at_least, check_at_most, check_within, experiment
from .randomness import RandomStream
from .stats import ks_distance, mean_stderr, normal_cdf

CHUNK = 1 << 16
MIN_LEVEL_SAMPLES = 100


@dataclass(frozen=True)
class GbmParams:
    s0: float
    drift: float
    volatility: float

    def __post_init__(self):
        if not self.s0 > 0:
            raise ParameterError("s0 must be positive")
        if not self.volatility >= 0:
            raise ParameterError("volatility must be nonnegative")

    @classmethod
    def from_rate(cls, s0: float, rate: float, volatility: float) -> "GbmParams":
        return cls(s0, rate - volatility**2 / 2, volatility)

    @property
    def rate(self) -> float:
        return self.drift + self.volatility**2 / 2


@dataclass(frozen=True)
class OptionSpec:
    strike: float
    maturity: float

    def __post_init__(self):
        if not self.strike >= 0:
            raise ParameterError("strike must be nonnegative")
        if not self.maturity > 0:
            raise ParameterError("maturity must be positive")

    def payoff(self, prices):
        return np.maximum(np.asarray(prices, dtype=float) - self.strike, 0.0)


def call_payoff(strike: float, rate: float, maturity: float) -> Callable:
    """Discounted European call payoff as a vectorized function of the terminal price."""
    discount = math.exp(-rate * maturity)
    return lambda s: discount * np.maximum(s - strike, 0.0)


def identity_payoff(s):
    return np.asarray(s, dtype=float)


@dataclass(frozen=True)
class MlmcPlan:
    refinement: int
    depth: int
    samples: tuple[int, ...]
    maturity: float

    def __post_init__(self):
        if self.refinement < 2:
            raise ParameterError("refinement factor must be at least 2")
        if len(self.samples) != self.depth + 1 or min(self.samples) < 1:
            raise ParameterError("need at least one sample on each level 0..depth")

    @property
    def step_sizes(self) -> list[float]:
        return [self.maturity * float(self.refinement) ** -l for l in range(self.depth + 1)]

    @property
    def cost(self) -> int:
        return sum(n * self.refinement**l for l, n in enumerate(self.samples))


@dataclass
class PriceEstimate:
    estimate: float
    stderr: float
    cost: int
    samples: int
    steps: int = 0


@dataclass
class MlmcResult:
    estimate: float
    stderr: float
    cost: int
    plan: MlmcPlan
    variances: list[float]
    level_means: list[float]


# exact GBM and the generic Euler scheme

def gbm_exact(params: GbmParams, t: float, stream: RandomStream, size: int | None = None):
    if t < 0:
        raise DomainError("time must be nonnegative")
    z = stream.gen.standard_normal(size)
    return params.s0 * np.exp(params.drift * t + params.volatility * math.sqrt(t) * z)


def _step_count(h: float, maturity: float) -> int:
    if not h > 0:
        raise ParameterError("step size must be positive")
    steps = maturity / h
    n = int(round(steps))
    if n < 1 or abs(steps - n) > 1e-9 * max(1.0, steps):
        raise ParameterError(f"step size {h} does not divide the horizon {maturity}")
    return n


def euler_path(drift: Callable, diffusion: Callable, s0: float, h: float, maturity: float,
               stream: RandomStream) -> np.ndarray:
    """One Euler-Maruyama path on the grid ``0, h, ..., maturity``.

    ``drift`` and ``diffusion`` are called as ``f(s, t)``.
    """
    n = _step_count(h, maturity)
    dw = stream.gen.normal(0.0, math.sqrt(h), n)
    path = np.empty(n + 1)
    path[0] = s0
    for i in range(n):
        t = i * h
        s = path[i]
        path[i + 1] = s + drift(s, t) * h + diffusion(s, t) * dw[i]
    return path


@njit(cache=True)
def _gbm_levels(s0, rate, vol, maturity, fine_steps, refine, count, seed, coupled):
    """Euler terminal values on the fine grid and, from the same increments, the
    coarse grid (``fine_steps / refine`` steps) and the exact solution."""
    np.random.seed(seed)
    h = maturity / fine_steps
    sq = math.sqrt(h)
    fine = np.empty(count)
    coarse = np.empty(count)
    exact = np.empty(count)
    for i in range(count):
        sf = s0
        sc = s0
        w = 0.0
        acc = 0.0
        for k in range(fine_steps):
            dw = sq * np.random.standard_normal()
            sf += rate * sf * h + vol * sf * dw
            w += dw
            if coupled:
                acc += dw
                if (k + 1) % refine == 0:
                    sc += rate * sc * h * refine + vol * sc * acc
                    acc = 0.0
        fine[i] = sf
        coarse[i] = sc
        exact[i] = s0 * math.exp((rate - 0.5 * vol * vol) * maturity + vol * w)
    return fine, coarse, exact


def gbm_euler_terminals(params: GbmParams, maturity: float, fine_steps: int, count: int,
                        stream: RandomStream, refine: int = 0):
    """Terminal Euler values for ``count`` paths, with optional coupled coarse values.

    With ``refine > 0`` the coarse path uses the sums of ``refine`` consecutive
    fine increments. The exact terminal value driven by the same Brownian path
    is returned as the third array.
    """
    if refine and fine_steps % refine:
        raise ParameterError("refinement factor must divide the fine step count")
    parts = [[], [], []]
    left = count
    while left > 0:
        m = min(left, CHUNK)
        out = _gbm_levels(params.s0, params.rate, params.volatility, maturity, fine_steps,
                          max(refine, 1), m, stream.kernel_seed(), refine > 0)
        for acc, arr in zip(parts, out):
            acc.append(arr)
        left -= m
    fine, coarse, exact = (np.concatenate(p) for p in parts)
    return fine, (coarse if refine else None), exact


def multilevel_terminals(params: GbmParams, maturity: float, finest: int, refine: int, count: int,
                         stream: RandomStream) -> np.ndarray:
    """Euler terminal values on every level 0..finest driven by shared increments.

    Column ``l`` uses ``refine**l`` steps; all columns come from the same
    finest-level Brownian increments, so level differences telescope.
    """
    n = refine**finest
    h = maturity / n
    dw = stream.gen.normal(0.0, math.sqrt(h), (count, n))
    out = np.empty((count, finest + 1))
    for l in range(finest + 1):
        block = refine ** (finest - l)
        inc = dw.reshape(count, refine**l, block).sum(axis=2)
        s = np.full(count, float(params.s0))
        step = h * block
        for k in range(refine**l):
            s = s + params.rate * s * step + params.volatility * s * inc[:, k]
        out[:, l] = s
    return out


# plain Monte Carlo

def mc_price(payoff: Callable, params: GbmParams, h: float, samples: int, stream: RandomStream,
             maturity: float = 1.0) -> PriceEstimate:
    steps = _step_count(h, maturity)
    if samples < 1:
        raise ParameterError("need at least one sample")
    fine, _, _ = gbm_euler_terminals(params, maturity, steps, samples, stream)
    est, se = mean_stderr(payoff(fine))
    if samples == 1:
        se = 0.0
    return PriceEstimate(est, se, samples * steps, samples, steps)


def mc_price_to_accuracy(payoff: Callable, params: GbmParams, eps: float, stream: RandomStream,
                         maturity: float = 1.0, pilot: int = 10_000) -> PriceEstimate:
    """Plain Monte Carlo sized for root-MSE ``eps``: step ``h ~ eps`` and
    ``N = 2 V / eps**2`` with V from a pilot run (pilot cost included)."""
    if not eps > 0:
        raise ParameterError("accuracy must be positive")
    steps = max(1, math.ceil(maturity / eps))
    h = maturity / steps
    first = mc_price(payoff, params, h, pilot, stream, maturity)
    var = (first.stderr**2) * pilot
    n = max(pilot, math.ceil(2.0 * var / eps**2))
    main = mc_price(payoff, params, h, n, stream, maturity)
    return PriceEstimate(main.estimate, main.stderr, main.cost + first.cost, n, steps)


def weak_error_ratio(payoff: Callable, params: GbmParams, h: float, samples: int, stream: RandomStream,
                     maturity: float = 1.0) -> tuple[float, float, float]:
    """Weak errors of Euler at ``h`` and ``h/2`` measured against the exact
    solution on the same Brownian paths; returns ``(err_h, err_h2, ratio)``."""
    steps = _step_count(h / 2, maturity)
    if steps % 2:
        raise ParameterError("h/2 must divide the horizon")
    half, full, exact = gbm_euler_terminals(params, maturity, steps, samples, stream, refine=2)
    fx = payoff(exact)
    e1 = float(np.mean(payoff(full) - fx))
    e2 = float(np.mean(payoff(half) - fx))
    return e1, e2, e1 / e2


def mse_fit(payoff: Callable, params: GbmParams, exact_value: float, sample_sizes: Sequence[int],
            step_sizes: Sequence[float], repeats: int, stream: RandomStream, maturity: float = 1.0) -> dict:
    """Fit measured MSE over an (N, h) grid to ``C1/N + C2 h**2``.

    Each MSE is averaged over ``repeats`` independent estimators. Returns the
    fitted constants, the coefficient of determination and the raw grid.
    """
    rows = []
    for n in sample_sizes:
        for h in step_sizes:
            steps = _step_count(h, maturity)
            fine, _, _ = gbm_euler_terminals(params, maturity, steps, n * repeats, stream)
            means = payoff(fine).reshape(repeats, n).mean(axis=1)
            rows.append((n, h, float(np.mean((means - exact_value) ** 2))))
    grid = np.array(rows)
    design = np.column_stack([1.0 / grid[:, 0], grid[:, 1] ** 2])
    coef, *_ = np.linalg.lstsq(design, grid[:, 2], rcond=None)
    resid = grid[:, 2] - design @ coef
    total = grid[:, 2] - grid[:, 2].mean()
    r2 = 1.0 - float(resid @ resid) / float(total @ total)
    return {"c1": float(coef[0]), "c2": float(coef[1]), "r2": r2, "grid": grid}


# multilevel Monte Carlo

def _level_sums(payoff, params, maturity, level, refine, count, stream):
    fine_steps = refine**level
    fine, coarse, _ = gbm_euler_terminals(params, maturity, fine_steps, count, stream,
                                          refine=refine if level else 0)
    y = payoff(fine) if level == 0 else payoff(fine) - payoff(coarse)
    return float(y.sum()), float((y * y).sum())


def level_variances(payoff: Callable, params: GbmParams, levels: int, refine: int, samples: int,
                    stream: RandomStream, maturity: float = 1.0) -> list[float]:
    """Sample variance of the level correction ``f(fine) - f(coarse)`` for levels 0..levels."""
    out = []
    for l in range(levels + 1):
        s, q = _level_sums(payoff, params, maturity, l, refine, samples, stream)
        out.append((q - s * s / samples) / (samples - 1))
    return out


def mlmc_price(payoff: Callable, params: GbmParams, eps: float, stream: RandomStream, refine: int = 4,
               maturity: float = 1.0, pilot: int = 1000, depth: int | None = None) -> MlmcResult:
    """Multilevel estimate with root-MSE target ``eps``.

    The depth is ``ceil(log(1/eps) / log M)`` unless given. Pilot runs
    measure each level's variance; samples are then allocated by
    ``N_l = 2 eps**-2 sqrt(V_l h_l) sum_k sqrt(V_k / h_k)`` (at least 100),
    which minimizes the increment count subject to variance ``eps**2 / 2``.
    Pilot samples are reused, so the cost counts every increment drawn once.
    """
    if not eps > 0:
        raise ParameterError("accuracy must be positive")
    if refine < 2:
        raise ParameterError("refinement factor must be at least 2")
    if depth is None:
        depth = max(0, math.ceil(math.log(1.0 / eps) / math.log(refine) - 1e-12))
    pilot = max(pilot, 2)
    sums = []
    for l in range(depth + 1):
        sums.append(list(_level_sums(payoff, params, maturity, l, refine, pilot, stream)) + [pilot])
    h = [maturity * float(refine) ** -l for l in range(depth + 1)]
    var = [max((q - s * s / n) / (n - 1), 0.0) for s, q, n in sums]
    total = sum(math.sqrt(v / hl) for v, hl in zip(var, h))
    for l in range(depth + 1):
        want = max(MIN_LEVEL_SAMPLES, math.ceil(2.0 / eps**2 * math.sqrt(var[l] * h[l]) * total))
        extra = want - sums[l][2]
        if extra > 0:
            s, q = _level_sums(payoff, params, maturity, l, refine, extra, stream)
            sums[l][0] += s
            sums[l][1] += q
            sums[l][2] += extra
    means = [s / n for s, _, n in sums]
    var = [max((q - s * s / n) / (n - 1), 0.0) for s, q, n in sums]
    plan = MlmcPlan(refine, depth, tuple(int(n) for _, _, n in sums), maturity)
    se = math.sqrt(sum(v / n for v, (_, _, n) in zip(var, sums)))
    return MlmcResult(float(sum(means)), se, plan.cost, plan, var, means)


# binomial trees and the closed form

def crr_price(payoff, s0, u, d, r, n: int):
    """Cox-Ross-Rubinstein price of a claim paying ``payoff`` after ``n`` periods.

    ``payoff`` is a function of the terminal price, an :class:`OptionSpec`,
    or a sequence of the ``n+1`` terminal values indexed by the number of up
    moves. With rational inputs (int/Fraction) the result is exact.
    """
    if n < 1:
        raise ParameterError("need at least one period")
    if not d < r < u:
        raise ArbitrageError(f"no-arbitrage requires d < r < u, got d={d}, r={r}, u={u}")
    if isinstance(payoff, OptionSpec):
        payoff = payoff.payoff
    if callable(payoff):
        values = None
    else:
        values = list(payoff)
        if len(values) != n + 1:
            raise ParameterError(f"need {n + 1} terminal values, got {len(values)}")
    rational = all(isinstance(x, (int, Fraction)) for x in (s0, u, d, r))
    if rational and values is not None and all(isinstance(v, (int, Fraction)) for v in values):
        s0, u, d, r = map(Fraction, (s0, u, d, r))
        p = (r - d) / (u - d)
        total = sum(math.comb(n, k) * p**k * (1 - p) ** (n - k) * Fraction(values[k]) for k in range(n + 1))
        return total / r**n
    p = (r - d) / (u - d)
    k = np.arange(n + 1)
    if values is None:
        prices = s0 * np.exp(k * math.log(u) + (n - k) * math.log(d))
        values = np.asarray(payoff(prices), dtype=float)
    else:
        values = np.asarray(values, dtype=float)
    lg = np.array([math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) for i in range(n + 1)])
    with np.errstate(divide="ignore"):
        logw = lg + k * math.log(p) + (n - k) * math.log1p(-p) - n * math.log(r)
    return float(np.sum(np.exp(logw) * values))


def crr_scheme(sigma: float, mu: float, maturity: float, n: int) -> tuple[float, float, float]:
    """Up, down and per-period growth factors for an ``n``-period tree on ``[0, maturity]``."""
    dt = maturity / n
    return math.exp(sigma * math.sqrt(dt)), math.exp(-sigma * math.sqrt(dt)), math.exp(mu * dt)


def black_scholes_call(s0: float, strike: float, sigma: float, mu: float, maturity: float) -> float:
    if sigma < 0 or not maturity > 0:
        raise ParameterError("need sigma >= 0 and maturity > 0")
    discount = math.exp(-mu * maturity)
    if strike == 0:
        return float(s0)
    if sigma == 0:
        return max(0.0, s0 - strike * discount)
    vt = sigma * math.sqrt(maturity)
    d1 = (math.log(s0 / strike) + (mu + sigma**2 / 2) * maturity) / vt
    d2 = d1 - vt
    phi = lambda x: 0.5 * math.erfc(-x / math.sqrt(2))
    return s0 * phi(d1) - strike * discount * phi(d2)


def crr_convergence(s0: float, strike: float, sigma: float, mu: float, maturity: float,
                    periods: Sequence[int]) -> list[float]:
    """``|CRR_n - Black-Scholes|`` for each ``n`` under the exponential up/down scheme."""
    bs = black_scholes_call(s0, strike, sigma, mu, maturity)
    option = OptionSpec(strike, maturity)
    out = []
    for n in periods:
        u, d, r = crr_scheme(sigma, mu, maturity, n)
        out.append(abs(crr_price(option, s0, u, d, r, n) - bs))
    return out


# experiments

@experiment("gbm", "sde", replicas=100_000, s0=1.0, drift=0.1, volatility=0.3, t=2.0)
def _gbm_experiment(p, replicas, stream):
    """Exact GBM sampling: log-drift recovery and log-normal law."""
    params = GbmParams(p["s0"], p["drift"], p["volatility"])
    t = p["t"]
    s = gbm_exact(params, t, stream, replicas)
    logs = np.log(s / params.s0)
    est = float(logs.mean() / t)
    tol = 4 * params.volatility / math.sqrt(replicas * t)
    sd = params.volatility * math.sqrt(t)
    ks = ks_distance(logs, lambda x: normal_cdf((x - params.drift * t) / sd)) if sd > 0 else 0.0
    return Outcome(est, float(logs.std(ddof=1) / t / math.sqrt(replicas)), [
        check_within("log-drift estimate", params.drift, est, tol),
        check_at_most("KS distance of log S(t)", ks, 0.01),
    ])


@experiment("euler-weak", "sde", replicas=1_000_000, s0=100.0, rate=0.05, volatility=0.2, h=0.25)
def _euler_weak_experiment(p, replicas, stream):
    """Euler weak-error ratio between step h and h/2 (first order)."""
    params = GbmParams.from_rate(p["s0"], p["rate"], p["volatility"])
    e1, e2, ratio = weak_error_ratio(identity_payoff, params, p["h"], replicas, stream)
    exact1 = params.s0 * ((1 + params.rate * p["h"]) ** round(1 / p["h"]) - math.exp(params.rate))
    return Outcome(ratio, 0.0, [
        check_at_least("weak-error ratio", ratio, 1.6),
        check_at_most("weak-error ratio", ratio, 2.5),
        check_within("weak error at h vs closed form", exact1, e1, 0.1 * abs(exact1)),
    ], extra={"errors": [e1, e2]})


@experiment("mc-mse", "sde", replicas=200, s0=100.0, rate=0.5, volatility=0.2,
            sample_sizes=(100.0, 1000.0, 10000.0), step_sizes=(0.25, 0.125, 0.0625))
def _mc_mse_experiment(p, replicas, stream):
    """Plain Monte Carlo MSE over an (N, h) grid against C1/N + C2 h^2."""
    params = GbmParams.from_rate(p["s0"], p["rate"], p["volatility"])
    exact = params.s0 * math.exp(params.rate)
    fit = mse_fit(identity_payoff, params, exact, [int(n) for n in p["sample_sizes"]], p["step_sizes"],
                  replicas, stream)
    g = fit["grid"]
    return Outcome(fit["r2"], 0.0, [check_at_least("MSE model R^2", fit["r2"], 0.9)],
                   table=Table(["N", "h", "mse"], g.tolist()),
                   extra={"c1": fit["c1"], "c2": fit["c2"]})


def _standard_call(p):
    params = GbmParams.from_rate(p["s0"], p["rate"], p["volatility"])
    payoff = call_payoff(p["strike"], p["rate"], p["maturity"])
    bs = black_scholes_call(p["s0"], p["strike"], p["volatility"], p["rate"], p["maturity"])
    return params, payoff, bs


@experiment("mc-cost", "sde", s0=100.0, strike=100.0, rate=0.05, volatility=0.2, maturity=1.0, eps=0.1)
def _mc_cost_experiment(p, replicas, stream):
    """Plain Monte Carlo cost growth when the accuracy target is halved."""
    params, payoff, bs = _standard_call(p)
    a = mc_price_to_accuracy(payoff, params, p["eps"], stream, p["maturity"])
    b = mc_price_to_accuracy(payoff, params, p["eps"] / 2, stream, p["maturity"])
    ratio = b.cost / a.cost
    return Outcome(ratio, 0.0, [
        check_at_least("cost ratio", ratio, 6.0),
        check_at_most("cost ratio", ratio, 11.0),
    ], extra={"costs": [a.cost, b.cost], "prices": [a.estimate, b.estimate], "black_scholes": bs})


@experiment("mlmc", "sde", s0=100.0, strike=100.0, rate=0.05, volatility=0.2, maturity=1.0, eps=0.01,
            refine=4, variance_samples=100_000, cost_eps=0.04)
def _mlmc_experiment(p, replicas, stream):
    """Multilevel Monte Carlo call price, level variance decay and cost growth."""
    params, payoff, bs = _standard_call(p)
    m, eps, T = p["refine"], p["eps"], p["maturity"]
    var = level_variances(payoff, params, 5, m, p["variance_samples"], stream.split(0), T)
    checks = []
    for l in range(1, 5):
        ratio = var[l + 1] / var[l]
        checks.append(check_at_least(f"V{l + 1}/V{l}", ratio, 1 / (2 * m)))
        checks.append(check_at_most(f"V{l + 1}/V{l}", ratio, 2 / m))
    ml = mlmc_price(payoff, params, eps, stream.split(1), m, T)
    checks.append(check_within("MLMC vs Black-Scholes", bs, ml.estimate, 3 * eps))
    coarse_eps = p["cost_eps"]
    ml_coarse = mlmc_price(payoff, params, coarse_eps, stream.split(2), m, T)
    ml_fine = mlmc_price(payoff, params, coarse_eps / 2, stream.split(3), m, T)
    mc_coarse = mc_price_to_accuracy(payoff, params, coarse_eps, stream.split(4), T)
    mc_fine = mc_price_to_accuracy(payoff, params, coarse_eps / 2, stream.split(5), T)
    ml_growth = ml_fine.cost / ml_coarse.cost
    mc_growth = mc_fine.cost / mc_coarse.cost
    checks.append(check_at_most("MLMC cost growth minus MC cost growth", ml_growth - mc_growth, -1e-9))
    combined = 4 * math.hypot(ml_fine.stderr, mc_fine.stderr)
    checks.append(check_within("MLMC vs plain MC", mc_fine.estimate, ml_fine.estimate, combined))
    rows = [[l, ml.plan.samples[l], ml.variances[l], ml.level_means[l]] for l in range(ml.plan.depth + 1)]
    return Outcome(ml.estimate, ml.stderr, checks, table=Table(["level", "samples", "variance", "mean"], rows),
                   series=[Series("level variance", list(range(len(var))), var)],
                   extra={"black_scholes": bs, "level_variances": var, "cost": ml.cost,
                          "mlmc_growth": ml_growth, "mc_growth": mc_growth,
                          "mlmc_costs": [ml_coarse.cost, ml_fine.cost], "mc_costs": [mc_coarse.cost, mc_fine.cost]})


@experiment("crr", "sde", s0=100.0, strike=100.0, rate=0.05, volatility=0.2, maturity=1.0, periods=1000)
def _crr_experiment(p, replicas, stream):
    """Binomial-tree call price converging to the Black-Scholes formula."""
    bs = black_scholes_call(p["s0"], p["strike"], p["volatility"], p["rate"], p["maturity"])
    ladder = [10, 100, p["periods"]]
    errs = crr_convergence(p["s0"], p["strike"], p["volatility"], p["rate"], p["maturity"], ladder)
    checks = [check_at_most(f"relative error at n={p['periods']}", errs[-1] / bs, 1e-3)]
    for a, b, na, nb in zip(errs, errs[1:], ladder, ladder[1:]):
        checks.append(check_at_most(f"error at n={nb} minus error at n={na}", b - a, -1e-15))
    return Outcome(bs + 0.0, 0.0, checks, table=Table(["n", "abs_error"], [[n, e] for n, e in zip(ladder, errs)]),
                   series=[Series("|CRR - BS|", ladder, errs)], loglog=True, extra={"black_scholes": bs})
