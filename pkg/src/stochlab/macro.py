"""Continuous-time Markov population models and their mean-field limits.

Reaction networks follow mass-action scaling: a reaction with input vector
``alpha`` fires at rate ``N^(1 - sum alpha) * K * prod n_i (n_i - 1) ...``.
The mean-field ODE is integrated with classical RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import ConvergenceError, ParameterError
from .exact import PowerSeries, branching_extinction
from .harness import (Check, Outcome, Series, Table, check_at_least, check_at_most, check_within, experiment,
                      run_experiment)
from .randomness import RandomStream
from .stats import loglog_slope, mean_stderr, proportion_stderr


# --- reaction networks ------------------------------------------------------------------


@dataclass(frozen=True)
class ReactionNetwork:
    species: tuple[str, ...]
    alpha: np.ndarray  # reactions x species, consumed
    beta: np.ndarray  # reactions x species, produced
    rates: np.ndarray
    scale: int = 1

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.alpha, dtype=np.int64))
        b = np.atleast_2d(np.asarray(self.beta, dtype=np.int64))
        k = np.asarray(self.rates, dtype=float).ravel()
        m = len(self.species)
        if a.shape != b.shape or a.shape[1] != m or a.shape[0] != k.size or k.size == 0:
            raise ParameterError("alpha, beta and rates must describe at least one reaction over all species")
        if np.any(a < 0) or np.any(b < 0) or np.any(k < 0) or self.scale < 1:
            raise ParameterError("stoichiometry and rates must be nonnegative, scale >= 1")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "rates", k)

    @property
    def stoichiometry(self) -> np.ndarray:
        return self.beta - self.alpha

    def with_scale(self, scale: int) -> "ReactionNetwork":
        return replace(self, scale=int(scale))

    def scaled_rates(self) -> np.ndarray:
        order = self.alpha.sum(axis=1)
        return self.rates * float(self.scale) ** (1.0 - order)


def _falling(n: int, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= n - j
    return max(out, 0.0)


def propensity(net: ReactionNetwork, counts: Sequence[int]) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    factors = net.scaled_rates()
    out = np.empty(len(factors))
    for r, row in enumerate(net.alpha):
        out[r] = factors[r] * math.prod(_falling(int(n), int(a)) for n, a in zip(counts, row))
    return out


def conservation_laws(net: ReactionNetwork) -> list[list[Fraction]]:
    """Basis of vectors mu with (beta - alpha) mu = 0, in exact arithmetic."""
    rows = [[Fraction(int(v)) for v in r] for r in net.stoichiometry]
    m = len(net.species)
    pivots = []
    r = 0
    for c in range(m):
        pivot = next((i for i in range(r, len(rows)) if rows[i][c] != 0), None)
        if pivot is None:
            continue
        rows[r], rows[pivot] = rows[pivot], rows[r]
        rows[r] = [v / rows[r][c] for v in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[r])]
        pivots.append(c)
        r += 1
    free = [c for c in range(m) if c not in pivots]
    basis = []
    for f in free:
        vec = [Fraction(0)] * m
        vec[f] = Fraction(1)
        for i, c in enumerate(pivots):
            vec[c] = -rows[i][f]
        basis.append(vec)
    return basis


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    absorbed: bool = False

    def table(self, columns: Sequence[str]) -> Table:
        return Table(["time", *columns],
                     [[float(t), *map(float, s)] for t, s in zip(self.times, self.states)])


MAX_SSA_EVENTS = 100_000_000
MAX_RECORDED_EVENTS = 1 << 24


@numba.njit(cache=True)
def _ssa_kernel(alpha, stoich, factors, x0, t0, t_end, grid, seed, record, max_events):
    # max_events bounds the recorded buffer, or the total event count in grid mode
    np.random.seed(seed)
    n_react, m = alpha.shape
    x = x0.copy()
    t = t0
    gout = np.empty((grid.size, m), dtype=np.int64)
    gi = 0
    cap = max_events + 1 if record else 1
    ev_t = np.empty(cap)
    ev_x = np.empty((cap, m), dtype=np.int64)
    n_ev = 0
    if record:
        ev_t[0] = t
        ev_x[0] = x
        n_ev = 1
    prop = np.empty(n_react)
    absorbed = False
    overflow = False
    events = 0
    while True:
        total = 0.0
        for r in range(n_react):
            a = factors[r]
            for i in range(m):
                for j in range(alpha[r, i]):
                    a *= x[i] - j
            if a < 0.0:
                a = 0.0
            prop[r] = a
            total += a
        if total <= 0.0:
            absorbed = True
            t_next = np.inf
        else:
            t_next = t - np.log(1.0 - np.random.random()) / total
        while gi < grid.size and grid[gi] < t_next:
            gout[gi] = x
            gi += 1
        if t_next > t_end:
            break
        u = np.random.random() * total
        acc = 0.0
        chosen = n_react - 1
        for r in range(n_react):
            acc += prop[r]
            if u < acc:
                chosen = r
                break
        for i in range(m):
            x[i] += stoich[chosen, i]
        t = t_next
        events += 1
        if not record and events > max_events:
            overflow = True
            break
        if record:
            if n_ev == cap:
                overflow = True
                break
            ev_t[n_ev] = t
            ev_x[n_ev] = x
            n_ev += 1
    return gout, ev_t[:n_ev], ev_x[:n_ev], absorbed, overflow


def _ssa(net, state0, t0, t_end, grid, seed, record):
    if not t_end > t0:
        raise ParameterError("t_end must exceed the start time")
    x0 = np.asarray(state0, dtype=np.int64)
    if x0.shape != (len(net.species),) or np.any(x0 < 0):
        raise ParameterError("initial counts must be a nonnegative vector over the species")
    max_events = 1 << 16 if record else MAX_SSA_EVENTS
    while True:
        out = _ssa_kernel(net.alpha, net.stoichiometry, net.scaled_rates(), x0, float(t0), float(t_end),
                          np.asarray(grid, dtype=float), seed, record, max_events)
        if not out[4]:
            return out
        max_events *= 4
        if not record or max_events > MAX_RECORDED_EVENTS:
            raise ConvergenceError(f"more than {max_events // 4} events before t_end; the network may explode")


def ssa_run(net: ReactionNetwork, state0, t_end: float, stream: RandomStream, t0: float = 0.0) -> Trajectory:
    """Exact event-by-event trajectory (Gillespie direct method)."""
    _, times, states, absorbed, _ = _ssa(net, state0, t0, t_end, np.empty(0), stream.kernel_seed(), True)
    return Trajectory(times, states, absorbed)


def ssa_grid(net: ReactionNetwork, state0, grid, stream: RandomStream, t0: float = 0.0) -> np.ndarray:
    """States of one exact trajectory observed at the given increasing times."""
    grid = np.asarray(grid, dtype=float)
    gout, *_ = _ssa(net, state0, t0, float(grid[-1]), grid, stream.kernel_seed(), False)
    return gout


def mean_field(net: ReactionNetwork) -> Callable[[np.ndarray], np.ndarray]:
    stoich = net.stoichiometry.astype(float)
    alpha = net.alpha
    k = net.rates

    def rhs(c):
        c = np.asarray(c, dtype=float)
        flux = k * np.prod(c[None, :] ** alpha, axis=1)
        return flux @ stoich

    return rhs


def integrate(rhs, c0, t_end: float, dt: float, t0: float = 0.0) -> Trajectory:
    """Classical fourth-order Runge-Kutta on a uniform grid ending exactly at t_end."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    steps = max(1, math.ceil((t_end - t0) / dt - 1e-9))
    h = (t_end - t0) / steps
    c = np.asarray(c0, dtype=float).copy()
    out = np.empty((steps + 1, c.size))
    out[0] = c
    for i in range(steps):
        k1 = rhs(c)
        k2 = rhs(c + 0.5 * h * k1)
        k3 = rhs(c + 0.5 * h * k2)
        k4 = rhs(c + h * k3)
        c = c + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = c
    return Trajectory(t0 + h * np.arange(steps + 1), out)


def ehrenfest_network(N: int, rate: float = 1.0) -> ReactionNetwork:
    return ReactionNetwork(("A", "B"), [[1, 0], [0, 1]], [[0, 1], [1, 0]], [rate, rate], N)


def schlogl_network(N: int) -> ReactionNetwork:
    """One-species network whose mean field is dc/dt = -(c - 1)^3."""
    return ReactionNetwork(("R",), [[0], [2], [1], [3]], [[1], [3], [0], [2]], [1.0, 3.0, 3.0, 1.0], N)


def kurtz_gap(net: ReactionNetwork, N: int, t_end: float, seeds: int, c0, stream: RandomStream,
              dt: float = 0.01) -> float:
    """Median over seeds of max_t |n(t)/N - c(t)| on a grid of spacing dt."""
    if N < 10:
        raise ParameterError("N must be >= 10")
    net = net.with_scale(N)
    ode = integrate(mean_field(net), c0, t_end, dt)
    start = np.rint(np.asarray(c0, dtype=float) * N).astype(np.int64)
    gaps = []
    for s in range(seeds):
        states = ssa_grid(net, start, ode.times, stream.split(s))
        gaps.append(np.max(np.abs(states / N - ode.states)))
    return float(np.median(gaps))


@experiment("kurtz", "macro", replicas=20, model="ehrenfest", t_end=10.0, sizes=(100.0, 1000.0, 10000.0))
def _kurtz(params, replicas, stream):
    """Gap between scaled Gillespie paths and the mean-field ODE for growing N."""
    model = params["model"]
    if model == "ehrenfest":
        net, c0 = ehrenfest_network(1), [1.0, 0.0]
    elif model == "schlogl":
        net, c0 = schlogl_network(1), [0.0]
    else:
        raise ParameterError("model must be ehrenfest or schlogl")
    sizes = [int(s) for s in params["sizes"]]
    gaps = [kurtz_gap(net, n, params["t_end"], replicas, c0, stream.split(i)) for i, n in enumerate(sizes)]
    checks = [check_at_most(f"gap at N={b} not above gap at N={a}", gb, ga)
              for (a, ga), (b, gb) in zip(zip(sizes, gaps), zip(sizes[1:], gaps[1:]))]
    return Outcome(gaps[-1], 0.0, checks, series=[Series("median gap", sizes, gaps)], loglog=True,
                   extra={"gaps": gaps})


# --- Ehrenfest -----------------------------------------------------------------------------


@numba.njit(cache=True)
def _ehrenfest_returns(N, returns, seed):
    np.random.seed(seed)
    out = np.empty(returns, dtype=np.int64)
    for r in range(returns):
        i = N
        steps = 0
        while True:
            if np.random.random() * N < i:
                i -= 1
            else:
                i += 1
            steps += 1
            if i == N:
                break
        out[r] = steps
    return out


@numba.njit(cache=True)
def _ehrenfest_histogram(N, samples, thin, seed):
    np.random.seed(seed)
    hist = np.zeros(N + 1, dtype=np.int64)
    i = N // 2
    for _ in range(samples):
        for _ in range(thin):
            if np.random.random() * N < i:
                i -= 1
            else:
                i += 1
        hist[i] += 1
    return hist


def ehrenfest_return_times(N: int, returns: int, stream) -> np.ndarray:
    """Embedded-chain steps between visits to the state with every flea in the first dog."""
    return _ehrenfest_returns(N, returns, stream.kernel_seed())


def ehrenfest_histogram(N: int, samples: int, stream, thin: int = 51) -> np.ndarray:
    """Occupancy counts of the embedded chain sampled every ``thin`` jumps.

    ``thin`` must be odd: the chain has period 2, and odd thinning visits both
    parity classes equally, whose mixture is the Binomial(N, 1/2) law.
    """
    if thin % 2 == 0:
        raise ParameterError("thin must be odd")
    return _ehrenfest_histogram(N, samples, thin, stream.kernel_seed())


def chi_square_statistic(counts, probs, min_expected: float = 5.0) -> tuple[float, int]:
    """Pearson statistic after pooling cells with small expectation; returns (stat, dof)."""
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(probs, dtype=float) * counts.sum()
    pooled_o, pooled_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(counts, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            pooled_o.append(acc_o)
            pooled_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        pooled_o[-1] += acc_o
        pooled_e[-1] += acc_e
    o, e = np.array(pooled_o), np.array(pooled_e)
    return float(((o - e) ** 2 / e).sum()), len(o) - 1


def chi_square_quantile(dof: int, level: float = 0.99) -> float:
    """Wilson-Hilferty approximation to the chi-square quantile."""
    z = {0.95: 1.6448536269514722, 0.99: 2.3263478740408408, 0.999: 3.090232306167813}[level]
    a = 2.0 / (9.0 * dof)
    return dof * (1 - a + z * math.sqrt(a)) ** 3


def binomial_half_pmf(N: int) -> np.ndarray:
    return np.array([math.comb(N, k) for k in range(N + 1)], dtype=float) / 2.0**N


def ehrenfest_concentration(N: int, replicas: int, stream, c: float = 10.0) -> float:
    """Fraction of runs with |n1 - n2|/N <= 5/sqrt(N) at time c*N, started with all fleas on one dog."""
    net = ehrenfest_network(N)
    hits = 0
    for r in range(replicas):
        n1, n2 = ssa_grid(net, [N, 0], [c * N], stream.split(r))[0]
        hits += abs(n1 - n2) / N <= 5 / math.sqrt(N)
    return hits / replicas


@dataclass(frozen=True)
class EhrenfestModel:
    """N fleas on two dogs; each flea jumps at rate 1."""

    N: int

    @property
    def network(self) -> ReactionNetwork:
        return ehrenfest_network(self.N)

    def stationary_law(self) -> np.ndarray:
        return binomial_half_pmf(self.N)

    def return_time_check(self, returns: int, stream) -> Check:
        mean, _ = mean_stderr(ehrenfest_return_times(self.N, returns, stream))
        return check_within("mean embedded return time within 10% of 2^N", 2.0**self.N, mean, 0.1 * 2.0**self.N)

    def stationary_check(self, samples: int, stream, thin: int = 51) -> Check:
        stat, dof = chi_square_statistic(ehrenfest_histogram(self.N, samples, stream, thin), self.stationary_law())
        return check_at_most("chi-square vs Binomial(N, 1/2) at 1%", stat, chi_square_quantile(dof))

    def concentration_check(self, replicas: int, stream, c: float = 10.0) -> Check:
        return check_at_least("P(|n1-n2|/N <= 5/sqrt N) at t = 10N",
                              ehrenfest_concentration(self.N, replicas, stream, c), 0.99)


def ehrenfest(N: int) -> EhrenfestModel:
    if N < 2:
        raise ParameterError("Ehrenfest model needs N >= 2")
    return EhrenfestModel(int(N))


@experiment("ehrenfest", "macro", replicas=10_000, N=100, return_N=10, hist_N=20, hist_samples=1_000_000,
            conc_N=100, conc_replicas=1000, t_end=5.0)
def _ehrenfest(params, replicas, stream):
    """Ehrenfest fleas: return time 2^N, binomial stationary law, concentration, sample path.

    ``N`` sizes the emitted sample path; the return-time check uses ``return_N``
    because the mean return time grows like 2^N.
    """
    N = params["return_N"]
    times = ehrenfest_return_times(N, replicas, stream.split(0))
    mean, se = mean_stderr(times)
    hN = params["hist_N"]
    hist = ehrenfest_histogram(hN, params["hist_samples"], stream.split(1))
    stat, dof = chi_square_statistic(hist, binomial_half_pmf(hN))
    conc = ehrenfest_concentration(params["conc_N"], params["conc_replicas"], stream.split(2))
    checks = [check_within("mean embedded return time within 10% of 2^N", 2.0**N, mean, 0.1 * 2.0**N),
              check_at_most("chi-square vs Binomial(N, 1/2) at 1%", stat, chi_square_quantile(dof)),
              check_at_least("P(|n1-n2|/N <= 5/sqrt N) at t = 10N", conc, 0.99)]
    path = ssa_run(ehrenfest_network(params["N"]), [params["N"], 0], params["t_end"], stream.split(3))
    return Outcome(mean, se, checks, table=path.table(["n1", "n2"]),
                   series=[Series("n1", path.times.tolist(), path.states[:, 0].tolist())])


# --- money exchange ----------------------------------------------------------------------------


@numba.njit(cache=True)
def _money(wealth, steps, seed):
    np.random.seed(seed)
    n = wealth.size
    for _ in range(steps):
        i = np.random.randint(0, n)
        j = np.random.randint(0, n - 1)
        if j >= i:
            j += 1
        pot = 0
        if wealth[i] > 0:
            wealth[i] -= 1
            pot += 1
        if wealth[j] > 0:
            wealth[j] -= 1
            pot += 1
        if np.random.random() < 0.5:
            wealth[i] += pot
        else:
            wealth[j] += pot
    return wealth


def money_exchange(N: int, mean_wealth: int, steps: int, stream) -> np.ndarray:
    """Final wealths after ``steps`` pairwise games; each step is one random pair.

    Both players stake a coin unless bankrupt, and a fair coin picks who takes the pot.
    """
    if N < 2 or N % 2 or mean_wealth < 1:
        raise ParameterError("need even N >= 2 and mean wealth >= 1")
    return _money(np.full(N, mean_wealth, dtype=np.int64), steps, stream.kernel_seed())


def wealth_slope(wealth, mean_wealth: int, s_max_factor: float = 5.0) -> float:
    """Slope of log c_s against s, weighting each cell by the square root of its count."""
    counts = np.bincount(wealth)
    s = np.arange(counts.size)
    keep = (s <= s_max_factor * mean_wealth) & (counts > 0)
    return float(np.polyfit(s[keep], np.log(counts[keep] / wealth.size), 1, w=np.sqrt(counts[keep]))[0])


@experiment("money", "macro", N=10_000, mean_wealth=5, horizon_factor=20.0)
def _money_exp(params, replicas, stream):
    """Wealth distribution under random pairwise coin games; exponential with mean s."""
    N, s = params["N"], params["mean_wealth"]
    steps = int(params["horizon_factor"] * N * math.log(N))
    w = money_exchange(N, s, steps, stream)
    slope = wealth_slope(w, s)
    # every exchange is reversible with probability 1/2, so the stationary law is
    # exactly geometric with ratio s/(s+1); exp(-1/s) is its large-s form
    exact = math.log(s / (s + 1))
    checks = [check_within("total coins conserved", s * N, int(w.sum()), 0),
              check_within("exponential slope within 10% of -1/s", -1 / s, slope, 0.1 / s),
              check_within("slope within 3% of log(s/(s+1))", exact, slope, 0.03 * abs(exact))]
    counts = np.bincount(w)
    return Outcome(slope, 0.0, checks, series=[Series("c_s", list(range(counts.size)), (counts / N).tolist())])


# --- Kac ring ----------------------------------------------------------------------------------


def kac_ring(n: int, mu: float, t: int, stream, replicas: int = 1, flip_p: float | None = None,
             marks: np.ndarray | None = None) -> np.ndarray:
    """(N_white - N_black)/n for t = 0..t, one row per replica, all balls white initially.

    Marks are drawn i.i.d. with density mu per replica unless ``marks`` is given.
    """
    if not 0 <= mu <= 1 or t < 0:
        raise ParameterError("need 0 <= mu <= 1 and t >= 0")
    if marks is None:
        marks = stream.gen.random((replicas, n)) < mu
    marks = np.atleast_2d(marks)
    sign = np.where(marks, -1, 1).astype(np.int8)
    colors = np.ones(marks.shape, dtype=np.int8)
    out = np.empty((marks.shape[0], t + 1))
    out[:, 0] = colors.mean(axis=1)
    for step in range(1, t + 1):
        colors = np.roll(colors * sign, 1, axis=1)
        if flip_p:
            colors = np.where(stream.gen.random(colors.shape) < flip_p, -colors, colors).astype(np.int8)
        out[:, step] = colors.mean(axis=1)
    return out


@experiment("kac", "macro", replicas=1000, n=10_000, mu=0.1, t=20)
def _kac(params, replicas, stream):
    """Kac ring color imbalance averaged over random mark sets against (1 - 2 mu)^t."""
    n, mu, t = params["n"], params["mu"], params["t"]
    if t > n / 100:
        raise ParameterError("the decay law is checked only for t <= n/100")
    traj = kac_ring(n, mu, t, stream, replicas)
    m, se = mean_stderr(traj[:, -1])
    target = (1 - 2 * mu) ** t
    ts = list(range(t + 1))
    return Outcome(m, se, [check_within("mean imbalance (4 se)", target, m, 4 * se)],
                   table=Table(["t", "mean_imbalance"], [[s, float(v)] for s, v in zip(ts, traj.mean(axis=0))]),
                   series=[Series("simulated", ts, traj.mean(axis=0).tolist()),
                           Series("(1-2mu)^t", ts, [(1 - 2 * mu) ** s for s in ts])])


# --- majority rule ------------------------------------------------------------------------------


@numba.njit(cache=True)
def _majority(N, plus_real, runs, seed):
    np.random.seed(seed)
    base = int(np.floor(plus_real))
    frac = plus_real - base
    winners = np.empty(runs, dtype=np.int64)
    times = np.empty(runs, dtype=np.int64)
    denom = N * (N - 1.0) * (N - 2.0)
    for r in range(runs):
        k = base + (1 if np.random.random() < frac else 0)
        steps = 0
        while 0 < k < N:
            steps += 1
            up = 3.0 * k * (k - 1.0) * (N - k) / denom
            down = 3.0 * k * (N - k) * (N - k - 1.0) / denom
            u = np.random.random()
            if u < up:
                k += 1
            elif u < up + down:
                k -= 1
        winners[r] = 1 if k == N else -1
        times[r] = steps
    return winners, times


def majority_rule(N: int, plus_fraction: float, stream, runs: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Consensus spin and number of triple draws until consensus, per run.

    Only the count of +1 agents matters: a draw of three distinct agents
    moves it by one when the triple is mixed. When plus_fraction * N is not an
    integer the starting count is randomized between its floor and ceiling so
    its mean is exactly plus_fraction * N.
    """
    if N < 3 or not 0 <= plus_fraction <= 1:
        raise ParameterError("need N >= 3 and plus_fraction in [0, 1]")
    return _majority(N, float(plus_fraction * N), runs, stream.kernel_seed())


@experiment("majority", "macro", replicas=10_000, N=101, plus_fraction=0.5)
def _majority_exp(params, replicas, stream):
    """Majority-rule opinion dynamics: symmetric consensus and absorption time."""
    winners, times = majority_rule(params["N"], params["plus_fraction"], stream, replicas)
    share = float(np.mean(winners == 1))
    se = proportion_stderr(0.5, replicas)
    checks = []
    if params["plus_fraction"] == 0.5:
        checks.append(check_within("share of +1 consensus (4 se)", 0.5, share, 4 * se))
    return Outcome(share, se, checks, extra={"median_time": float(np.median(times))})


# --- PageRank walkers ---------------------------------------------------------------------------


def _strongly_connected(P: np.ndarray) -> bool:
    adj = P > 0
    n = adj.shape[0]
    for mat in (adj, adj.T):
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.nonzero(mat[i])[0]:
                if j not in seen:
                    seen.add(int(j))
                    frontier.append(int(j))
        if len(seen) != n:
            return False
    return True


def power_iteration(P, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary row vector of an irreducible stochastic matrix.

    Iterates the lazy chain (I + P)/2, which has the same stationary law and
    no periodicity.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0):
        raise ParameterError("P must be a square row-stochastic matrix")
    if not _strongly_connected(P):
        raise ConvergenceError("P is reducible; the stationary vector is not unique")
    lazy = 0.5 * (P + np.eye(P.shape[0]))
    p = np.full(P.shape[0], 1.0 / P.shape[0])
    # a step change of tol can leave an error of tol / (1 - |lambda_2|); run on
    # until the change is far below tol or stops shrinking at rounding level
    target = tol * 1e-3
    floor = 64 * np.finfo(float).eps
    stalled = 0
    best = np.inf
    for _ in range(max_iter):
        nxt = p @ lazy
        nxt /= nxt.sum()
        change = np.abs(nxt - p).sum()
        p = nxt
        if change <= target:
            return p
        if change < best:
            best, stalled = change, 0
        else:
            stalled += 1
        if best <= floor and stalled >= 50:
            return p
    raise ConvergenceError("power iteration did not converge")


@numba.njit(cache=True)
def _walkers(cum, N, steps, start, seed):
    np.random.seed(seed)
    n = cum.shape[0]
    occ = np.zeros(n)
    for _ in range(N):
        i = start
        for _ in range(steps):
            u = np.random.random()
            j = 0
            while j < n - 1 and u >= cum[i, j]:
                j += 1
            i = j
        occ[i] += 1
    return occ / N


def pagerank_walkers(P, N: int, t: int, stream, start: int = 0) -> np.ndarray:
    """Occupancy fractions of N independent walkers after t jumps from node ``start``."""
    P = np.asarray(P, dtype=float)
    return _walkers(np.cumsum(P, axis=1), N, t, start, stream.kernel_seed())


def walker_occupancy(P, N: int, t: int, stream, start: int = 0) -> np.ndarray:
    """Occupancy of N independent walkers drawn from its exact law, Multinomial(N, e_start P^t)."""
    P = np.asarray(P, dtype=float)
    dist = np.linalg.matrix_power(P, t)[start]
    return stream.gen.multinomial(N, dist / dist.sum()) / N


def chain_matrix(n: int = 10) -> np.ndarray:
    """Birth-death chain on n nodes with drift toward the low end and holding at the ends."""
    P = np.zeros((n, n))
    for i in range(n):
        up, down = 0.3, 0.5
        if i + 1 < n:
            P[i, i + 1] = up
        if i > 0:
            P[i, i - 1] = down
        P[i, i] = 1.0 - P[i].sum()
    return P


def walker_bound(N: int, sigma: float = 0.01) -> float:
    return (2 * math.sqrt(2) + 4 * math.sqrt(math.log(1 / sigma))) / math.sqrt(N)


@experiment("pagerank", "macro", replicas=1000, N=10_000, t=60, nodes=10)
def _pagerank(params, replicas, stream):
    """Independent walkers on a small chain concentrate around the stationary vector."""
    P = chain_matrix(params["nodes"])
    p = power_iteration(P)
    bound = walker_bound(params["N"])
    dists = np.array([np.linalg.norm(walker_occupancy(P, params["N"], params["t"], stream.split(r)) - p)
                      for r in range(replicas)])
    within = float(np.mean(dists <= bound))
    return Outcome(within, proportion_stderr(within, replicas),
                   [check_at_least("share of runs inside the concentration bound", within, 0.99)],
                   extra={"stationary": p.tolist(), "median_distance": float(np.median(dists))})


# --- taxis ---------------------------------------------------------------------------------------


def _logsumexp(values) -> float:
    values = np.asarray(values, dtype=float)
    top = values.max()
    return float(top + math.log(np.exp(values - top).sum()))


def taxi_exact(N: int, M: int, lam: float = 1.0, nu: float = 1.0) -> float:
    """Rejection probability in the closed taxi network (product-form solution).

    With rho = N lam / nu, it is a ratio of sums over the k taxis parked at
    stations, weighted by the ways to spread them and by rho^(M-k)/(M-k)!.
    """
    if N < 2 or M < 0 or not (lam > 0 and nu > 0):
        raise ParameterError("need N >= 2, M >= 0, lam, nu > 0")
    rho = N * lam / nu

    def log_terms(shift):
        return [math.lgamma(N - shift + k + 1) - math.lgamma(k + 1) - math.lgamma(N - shift + 1)
                + (M - k) * math.log(rho) - math.lgamma(M - k + 1) for k in range(M + 1)]

    return math.exp(_logsumexp(log_terms(2)) - _logsumexp(log_terms(1)))


def taxi_asymptotic(r: float, lam: float = 1.0, nu: float = 1.0) -> float:
    """Large-N rejection probability with r taxis per station."""
    a = lam / nu + r + 1
    return 1 - 2 * r / (a + math.sqrt(a * a - 4 * lam * r / nu))


@numba.njit(cache=True)
def _taxi(N, M, lam, nu, arrivals, burn_in, seed):
    np.random.seed(seed)
    wait = np.zeros(N, dtype=np.int64)
    for k in range(M):
        wait[k % N] += 1
    moving = 0
    seen = 0
    rejected = 0
    while seen < arrivals + burn_in:
        total = N * lam + moving * nu
        u = np.random.random() * total
        if u < N * lam:
            i = int(u / lam)
            if i >= N:
                i = N - 1
            if seen >= burn_in and wait[i] == 0:
                rejected += 1
            if wait[i] > 0:
                wait[i] -= 1
                moving += 1
            seen += 1
        else:
            moving -= 1
            wait[np.random.randint(0, N)] += 1
    return rejected / arrivals


def taxi_simulate(N: int, M: int, lam: float, nu: float, arrivals: int, stream, burn_in: int = 100_000) -> float:
    """Discrete-event estimate of the share of clients finding no taxi."""
    return float(_taxi(N, M, lam, nu, arrivals, burn_in, stream.kernel_seed()))


def taxi_network(N: int, M: int, lam: float, nu: float, stream=None, arrivals: int = 1_000_000) -> dict:
    out = {"exact": taxi_exact(N, M, lam, nu), "asymptotic": taxi_asymptotic(M / N, lam, nu)}
    if stream is not None:
        out["simulated"] = taxi_simulate(N, M, lam, nu, arrivals, stream)
    return out


@experiment("taxi", "macro", N=5, M=10, lam=1.0, nu=1.0, arrivals=1_000_000, big_N=100, big_M=100)
def _taxi_exp(params, replicas, stream):
    """Taxi network rejection probability: product-form formula, simulation and large-N limit."""
    res = taxi_network(params["N"], params["M"], params["lam"], params["nu"], stream, params["arrivals"])
    big = taxi_network(params["big_N"], params["big_M"], params["lam"], params["nu"])
    se = proportion_stderr(res["exact"], params["arrivals"])
    checks = [check_within("exact vs simulated", res["exact"], res["simulated"], 0.01),
              check_within("exact vs asymptotic at large N", big["exact"], big["asymptotic"], 0.02)]
    return Outcome(res["simulated"], se, checks, extra={**res, "big": big})


# --- branching ---------------------------------------------------------------------------------------


def _check_pmf(pmf) -> np.ndarray:
    pmf = np.asarray(pmf, dtype=float)
    if pmf.ndim != 1 or np.any(pmf < 0) or abs(pmf.sum() - 1) > 1e-9:
        raise ParameterError("offspring pmf must be nonnegative and sum to 1")
    return pmf / pmf.sum()


def branching_sim(offspring_pmf, generations: int, stream, replicas: int | None = None,
                  cap: int = 10_000) -> np.ndarray:
    """Generation sizes of Galton-Watson processes started from one individual.

    Returns shape (generations + 1,) for a single run or (replicas, generations + 1).
    Sizes are clipped at ``cap``; from that many individuals extinction is
    practically impossible for supercritical laws.
    """
    pmf = _check_pmf(offspring_pmf)
    single = replicas is None
    reps = 1 if single else replicas
    sizes = np.zeros((reps, generations + 1), dtype=np.int64)
    pop = np.ones(reps, dtype=np.int64)
    sizes[:, 0] = pop
    kids = np.arange(pmf.size)
    for g in range(1, generations + 1):
        counts = stream.gen.multinomial(pop, pmf)
        pop = np.minimum(counts @ kids, cap)
        sizes[:, g] = pop
    return sizes[0] if single else sizes


def pgf_iterate(offspring_pmf, n: int, order: int = 64) -> PowerSeries:
    """Generating function of generation n, built as G(G(...G(z))).

    The outer map is a polynomial, so composing with an inner series that has
    a nonzero constant term is still exact up to ``order``.
    """
    g = [Fraction(p) for p in offspring_pmf]
    current = PowerSeries.x(order)
    for _ in range(n):
        acc = PowerSeries.constant(0, order)
        for c in reversed(g):
            acc = acc * current + c
        current = acc
    return current


@experiment("branching", "macro", replicas=100_000, p=2 / 3, trials=3, generations=30)
def _branching(params, replicas, stream):
    """Binomial offspring branching process: extinction frequency against the PGF fixed point."""
    k = params["trials"]
    pmf = [math.comb(k, j) * params["p"] ** j * (1 - params["p"]) ** (k - j) for j in range(k + 1)]
    sizes = branching_sim(pmf, params["generations"], stream, replicas)
    freq = float(np.mean(sizes[:, -1] == 0))
    q = branching_extinction(pmf)
    checks = [check_within("extinction frequency", q, freq, 0.005)]
    if k == 3 and abs(params["p"] - 2 / 3) < 1e-15:
        checks.append(check_within("survival vs (9 - sqrt 27)/4", (9 - math.sqrt(27)) / 4, 1 - q, 1e-10))
    return Outcome(freq, proportion_stderr(freq, replicas), checks, extra={"exact": q})


# --- Chialvo -------------------------------------------------------------------------------------------


@numba.njit(cache=True)
def _chialvo(n, steps, burn_in, threshold, seed):
    np.random.seed(seed)
    fit = np.random.random(n)
    durations = np.zeros(steps, dtype=np.int64)
    n_aval = 0
    current = 0
    sample = np.empty(n * 100)
    n_sample = 0
    every = max(1, steps // 100)
    for step in range(burn_in + steps):
        imin = 0
        for i in range(1, n):
            if fit[i] < fit[imin]:
                imin = i
        active = fit[imin] < threshold
        fit[imin] = np.random.random()
        fit[np.random.randint(0, n)] = np.random.random()
        fit[np.random.randint(0, n)] = np.random.random()
        if step < burn_in:
            continue
        if active:
            current += 1
        elif current > 0:
            durations[n_aval] = current
            n_aval += 1
            current = 0
        if (step - burn_in) % every == 0 and n_sample + n <= sample.size:
            sample[n_sample:n_sample + n] = fit
            n_sample += n
    return durations[:n_aval], sample[:n_sample]


def chialvo(n_agents: int, steps: int, stream, burn_in: int | None = None, threshold: float = 1 / 3) -> dict:
    """Mean-field evolution toy model: the least fit and two random agents get fresh fitness.

    Returns the threshold estimate (x-intercept of a line fitted to the upper
    part of the fitness CDF), avalanche durations, their tail exponent and a
    fitness snapshot sample.
    """
    if n_agents < 100:
        raise ParameterError("n_agents must be >= 100")
    if burn_in is None:
        burn_in = 20 * n_agents
    durations, sample = _chialvo(n_agents, steps, burn_in, threshold, stream.kernel_seed())
    xs = np.sort(sample)
    lo, hi = np.searchsorted(xs, [0.5, 0.95])
    ys = np.arange(lo, hi) / xs.size
    slope, icpt = np.polyfit(xs[lo:hi], ys, 1)
    estimate = -icpt / slope
    exponent = avalanche_exponent(durations)
    return {"threshold": float(estimate), "tau": exponent, "durations": durations, "fitness": sample}


def avalanche_exponent(durations, lo: int = 2, hi: int | None = None) -> float:
    """Exponent tau of P(duration = d) ~ d^-tau on log bins from lo up to the 99.9th percentile."""
    durations = np.asarray(durations)
    if hi is None:
        hi = int(np.quantile(durations, 0.999))
    edges = np.unique(np.round(np.geomspace(lo, hi + 1, 16)).astype(int))
    counts = np.histogram(durations, bins=edges)[0]
    density = counts / np.diff(edges)
    centers = np.sqrt(edges[:-1] * (edges[1:] - 1))
    return -loglog_slope(centers, density)[0]


@experiment("chialvo", "macro", n_agents=1000, steps=2_000_000)
def _chialvo_exp(params, replicas, stream):
    """Mean-field evolution model: fitness threshold 1/3 and avalanche exponent 3/2."""
    res = chialvo(params["n_agents"], params["steps"], stream)
    checks = [check_within("fitness threshold", 1 / 3, res["threshold"], 0.03),
              check_within("avalanche duration exponent", 1.5, res["tau"], 0.2)]
    return Outcome(res["threshold"], 0.0, checks, extra={"tau": res["tau"]})
