"""Markov chain Monte Carlo kernels and the optimization chains built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import ConvergenceError, DomainError, ParameterError
from .harness import Outcome, check_at_least, check_at_most, check_within, experiment
from .randomness import RandomStream, sphere_uniform
from .stats import ks_distance, mean_stderr, proportion_stderr

# --- Metropolis-Hastings on finite spaces ---------------------------------------------------


def metropolis_rule(z):
    return min(z, 1)


def barker_rule(z):
    return z / (1 + z)


ACCEPTANCE_RULES: dict[str, Callable] = {"metropolis": metropolis_rule, "barker": barker_rule}


def _is_exact(values) -> bool:
    return all(isinstance(v, (int, Fraction)) for v in values)


def mh_kernel(weights: Sequence, proposal, rule: str = "metropolis"):
    """Transition matrix of the Metropolis-Hastings chain for a finite target.

    With integer or Fraction inputs the matrix is built in exact rational
    arithmetic (a list of lists of Fractions); otherwise as a float array.
    """
    accept = ACCEPTANCE_RULES[rule]
    n = len(weights)
    q = [list(row) for row in proposal]
    if len(q) != n or any(len(row) != n for row in q):
        raise ParameterError("proposal must be n x n for n target states")
    if any(w <= 0 for w in weights):
        raise ParameterError("target weights must be positive")
    exact = _is_exact(weights) and all(_is_exact(row) for row in q)
    one = Fraction(1) if exact else 1.0
    for i in range(n):
        for j in range(i + 1, n):
            if q[i][j] != q[j][i]:
                raise ParameterError("proposal matrix must be symmetric")
    w = [Fraction(x) if exact else float(x) for x in weights]
    kernel = [[0 * one] * n for _ in range(n)]
    for i in range(n):
        off = 0 * one
        for j in range(n):
            if j != i and q[i][j]:
                kernel[i][j] = q[i][j] * accept(w[j] / w[i])
                off += kernel[i][j]
        kernel[i][i] = one - off
    return kernel if exact else np.array(kernel, dtype=float)


def detailed_balance_defect(weights, kernel) -> float:
    """max_ij |pi_i p_ij - pi_j p_ji| (exactly zero for exact inputs when balance holds)."""
    n = len(weights)
    if _is_exact(weights):
        weights = [Fraction(w) for w in weights]
    total = sum(weights)
    pi = [w / total for w in weights]
    worst = 0
    for i in range(n):
        for j in range(n):
            worst = max(worst, abs(pi[i] * kernel[i][j] - pi[j] * kernel[j][i]))
    return worst


@numba.njit(cache=True)
def _run_chain(cum, start, steps, seed):
    np.random.seed(seed)
    n = cum.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    i = start
    for _ in range(steps):
        u = np.random.random()
        j = 0
        while j < n - 1 and u >= cum[i, j]:
            j += 1
        i = j
        counts[i] += 1
    return counts


def chain_occupancy(kernel, steps: int, stream, start: int = 0) -> np.ndarray:
    P = np.array([[float(v) for v in row] for row in kernel])
    return _run_chain(np.cumsum(P, axis=1), start, steps, stream.kernel_seed()) / steps


# --- 1-D Ising chain, heat bath ------------------------------------------------------------------


def ising_energy(spins) -> int:
    """Number of disagreeing neighbour pairs (spins include both fixed ends)."""
    s = np.asarray(spins)
    return int(np.sum(s[:-1] != s[1:]))


@numba.njit(cache=True)
def _glauber(spins, beta, updates, record_every, seed):
    np.random.seed(seed)
    n = spins.size
    n_rec = updates // record_every if record_every > 0 else 0
    energies = np.empty(n_rec, dtype=np.int64)
    codes = np.empty(n_rec, dtype=np.int64)
    hit = -1
    rec = 0
    for step in range(updates):
        k = 1 + np.random.randint(0, n - 2)
        # energy difference of setting +1 versus -1 at site k
        agree_plus = (spins[k - 1] == 1) + (spins[k + 1] == 1)
        e_plus = 2 - agree_plus
        e_minus = agree_plus
        p = 1.0 / (1.0 + np.exp(-beta * (e_minus - e_plus)))
        spins[k] = 1 if np.random.random() < p else -1
        if hit < 0:
            ground = True
            for i in range(1, n - 1):
                if spins[i] != 1:
                    ground = False
                    break
            if ground:
                hit = step + 1
        if record_every > 0 and (step + 1) % record_every == 0:
            e = 0
            code = 0
            for i in range(n - 1):
                if spins[i] != spins[i + 1]:
                    e += 1
            for i in range(1, n - 1):
                code = 2 * code + (1 if spins[i] == 1 else 0)
            energies[rec] = e
            codes[rec] = code
            rec += 1
    return spins, energies, codes, hit


@dataclass
class IsingRun:
    spins: np.ndarray
    energies: np.ndarray
    codes: np.ndarray
    ground_hit: int  # update count at first visit to all +1, or -1


def glauber_ising_1d(n: int, beta: float, updates: int, stream, start=None, record_every: int = 0) -> IsingRun:
    """Heat-bath dynamics on n sites with both end spins fixed at +1.

    Each update picks an interior site uniformly and sets it to +1 with
    probability exp(-beta H+) / (exp(-beta H+) + exp(-beta H-)).
    ``codes`` encode the interior spins as binary numbers (+1 -> 1).
    """
    if n < 3 or beta < 0:
        raise ParameterError("need n >= 3 and beta >= 0")
    spins = np.ones(n, dtype=np.int64)
    if start is not None:
        spins[1:-1] = np.asarray(start, dtype=np.int64)
    out = _glauber(spins, float(beta), int(updates), int(record_every), stream.kernel_seed())
    return IsingRun(*out)


def ising_gibbs(n: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Gibbs probabilities and energies of all 2^(n-2) interior configurations, by code."""
    m = n - 2
    energies = np.empty(2**m, dtype=np.int64)
    for code in range(2**m):
        interior = [1 if (code >> (m - 1 - i)) & 1 else -1 for i in range(m)]
        energies[code] = ising_energy([1, *interior, 1])
    w = np.exp(-beta * energies)
    return w / w.sum(), energies


def ising_mixing_bound(n: int, beta: float) -> float:
    return n * n * math.log2(beta * math.e)


@experiment("ising", "mcmc", replicas=100, n=20, beta=5.0, factor=10.0)
def _ising(params, replicas, stream):
    """Heat-bath Ising chain from all -1: time to reach the +1 ground state."""
    n, beta = params["n"], params["beta"]
    budget = int(params["factor"] * ising_mixing_bound(n, beta))
    hits = []
    for r in range(replicas):
        run = glauber_ising_1d(n, beta, budget, stream.split(r), start=-np.ones(n - 2))
        hits.append(run.ground_hit)
    hits = np.array(hits)
    share = float(np.mean(hits > 0))
    return Outcome(share, proportion_stderr(share, replicas),
                   [check_at_least("share reaching the ground state within budget", share, 0.95)],
                   extra={"budget": budget, "median_hit": float(np.median(hits[hits > 0])) if share else -1})


# --- Hit-and-Run -------------------------------------------------------------------------------

BISECTION_STEPS = 60


def _chord_end(member, x, d, scale):
    lo, hi = 0.0, scale
    while member(x + hi * d):
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            raise DomainError("body appears unbounded along a direction")
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if member(x + mid * d):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-9 * max(1.0, hi):
            break
    return lo


def hit_and_run(membership: Callable[[np.ndarray], bool], start, steps: int, stream,
                scale: float = 1.0) -> np.ndarray:
    """Hit-and-Run chain: uniform direction, then a uniform point on the chord."""
    x = np.asarray(start, dtype=float).copy()
    if not membership(x):
        raise DomainError("start point is outside the body")
    out = np.empty((steps, x.size))
    for k in range(steps):
        d = sphere_uniform(stream, x.size)
        t_hi = _chord_end(membership, x, d, scale)
        t_lo = -_chord_end(membership, x, -d, scale)
        if t_hi - t_lo <= 0:
            raise DomainError("chord has zero length; the body is degenerate")
        x = x + (t_lo + (t_hi - t_lo) * stream.next_uniform()) * d
        out[k] = x
    return out


# --- simulated annealing -------------------------------------------------------------------------

ANNEALING_DT = 1e-2


def _numeric_gradient(f, x, h=1e-5):
    grad = np.empty_like(x)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = h
        grad[..., i] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


def _reflect(x, lo, hi):
    span = hi - lo
    y = np.mod(x - lo, 2 * span)
    return lo + np.where(y > span, 2 * span - y, y)


def simulated_annealing(f: Callable, lower, upper, c: float, steps: int, stream, runs: int = 1,
                        grad: Callable | None = None, start=None, dt: float = ANNEALING_DT) -> dict:
    """Langevin annealing dx = -grad f dt + sqrt(2 T(t)) dW with T(t) = c / ln(2 + t).

    ``f`` maps an array of shape (runs, d) to shape (runs,). Paths reflect at
    the box walls. Returns best visited points and values per run plus the
    final positions.
    """
    if c <= 0:
        raise ParameterError("c must be positive")
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lo.size
    if start is None:
        x = lo + (hi - lo) * stream.gen.random((runs, d))
    else:
        x = np.broadcast_to(np.asarray(start, dtype=float), (runs, d)).copy()
    gradient = grad or (lambda y: _numeric_gradient(f, y))
    best_x = x.copy()
    best_f = f(x)
    for k in range(steps):
        temp = c / math.log(2 + k * dt)
        x = x - gradient(x) * dt + math.sqrt(2 * temp * dt) * stream.gen.standard_normal((runs, d))
        x = _reflect(x, lo, hi)
        fx = f(x)
        better = fx < best_f
        best_f = np.where(better, fx, best_f)
        best_x[better] = x[better]
    return {"best_x": best_x, "best_f": best_f, "final_x": x}


def _double_well(x):
    return (x[..., 0] ** 2 - 1) ** 2 + 0.2 * x[..., 0]


@experiment("annealing", "mcmc", replicas=100, c=2.0, steps=10_000)
def _annealing(params, replicas, stream):
    """Annealing on the tilted double well (x^2-1)^2 + 0.2x: share of runs ending in the deep basin."""
    res = simulated_annealing(_double_well, [-2.0], [2.0], params["c"], params["steps"], stream, runs=replicas)
    share = float(np.mean(res["best_x"][:, 0] < 0))
    return Outcome(share, proportion_stderr(share, replicas),
                   [check_at_least("share of runs whose best point is in the global basin", share, 0.9)])


# --- monotone random search ----------------------------------------------------------------------


def log_uniform_radius(r_min: float, r_max: float):
    """Step-length sampler with density proportional to 1/r on [r_min, r_max]."""
    ratio = math.log(r_max / r_min)
    return lambda stream: r_min * math.exp(ratio * stream.next_uniform())


def monotone_random_search(f: Callable, x0, radius_sampler, steps: int, stream, optimum=None,
                           eps: float | None = None) -> dict:
    """Accept a centrally symmetric random step only when f does not increase.

    Returns the best point, the value trace and the first step at which the
    iterate lies within ``eps`` of ``optimum`` (or -1).
    """
    x = np.asarray(x0, dtype=float).copy()
    fx = f(x)
    trace = np.empty(steps + 1)
    trace[0] = fx
    hit = -1
    if optimum is not None and eps is not None and np.linalg.norm(x - optimum) <= eps:
        hit = 0
    for k in range(1, steps + 1):
        y = x + radius_sampler(stream) * sphere_uniform(stream, x.size)
        fy = f(y)
        if fy <= fx:
            x, fx = y, fy
        trace[k] = fx
        if hit < 0 and optimum is not None and np.linalg.norm(x - optimum) <= eps:
            hit = k
    return {"best": x, "trace": trace, "hit": hit}


def search_hitting_time(x0, eps: float, stream, r_min: float = 1e-6, r_max: float = 2.0,
                        max_steps: int = 1_000_000) -> int:
    """Steps for monotone search on the sphere function to enter the eps-ball around 0."""
    x = np.asarray(x0, dtype=float).copy()
    fx = float(x @ x)
    sampler = log_uniform_radius(r_min, r_max)
    for k in range(1, max_steps + 1):
        y = x + sampler(stream) * sphere_uniform(stream, x.size)
        fy = float(y @ y)
        if fy <= fx:
            x, fx = y, fy
            if fx <= eps * eps:
                return k
    raise ConvergenceError("search did not reach the target ball")


@experiment("random-search", "mcmc", replicas=200, eps=1e-3, distance=1.0, dim=2)
def _random_search(params, replicas, stream):
    """Monotone random search on the sphere function: hitting time versus ln(rho/eps) + 2."""
    x0 = np.zeros(params["dim"])
    x0[0] = params["distance"]
    times = np.array([search_hitting_time(x0, params["eps"], stream.split(r)) for r in range(replicas)])
    m, se = mean_stderr(times)
    bound = math.log(params["distance"] / params["eps"]) + 2
    return Outcome(m, se, [check_at_least("mean hitting time above ln(rho/eps) + 2", m, bound)])


# --- substitution cipher ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CipherProblem:
    bigram: np.ndarray
    ciphertext: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.bigram, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(np.abs(P.sum(axis=1) - 1) > 1e-12):
            raise ParameterError("bigram matrix must be square and row-stochastic")
        text = np.asarray(self.ciphertext, dtype=np.int64)
        if text.size == 0:
            raise ParameterError("ciphertext must be nonempty")
        if text.min() < 0 or text.max() >= P.shape[0]:
            raise ParameterError("ciphertext symbols must index the alphabet")
        object.__setattr__(self, "bigram", P)
        object.__setattr__(self, "ciphertext", text)

    @property
    def alphabet(self) -> int:
        return self.bigram.shape[0]


def sample_bigram_text(P, length: int, stream, start: int = 0) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    cum = np.cumsum(P, axis=1)
    u = stream.gen.random(length)
    out = np.empty(length, dtype=np.int64)
    s = start
    for k in range(length):
        s = min(int(np.searchsorted(cum[s], u[k], side="right")), P.shape[0] - 1)
        out[k] = s
    return out


def random_bigram_chain(m: int, stream, concentration: float = 0.3) -> np.ndarray:
    return stream.gen.dirichlet(np.full(m, concentration), size=m)


def _pair_counts(text, m):
    counts = np.zeros((m, m))
    np.add.at(counts, (text[:-1], text[1:]), 1)
    return counts


def cipher_log_likelihood(problem: CipherProblem, decode) -> float:
    """log L = sum_k log p(f(x_k), f(x_{k+1})) for the decoding map f."""
    logp = np.log(np.maximum(problem.bigram, 1e-300))
    f = np.asarray(decode)
    counts = _pair_counts(problem.ciphertext, problem.alphabet)
    return float(np.sum(counts * logp[np.ix_(f, f)]))


def _frequency_start(problem: CipherProblem) -> np.ndarray:
    m = problem.alphabet
    freq = np.bincount(problem.ciphertext, minlength=m)
    evals, evecs = np.linalg.eig(problem.bigram.T)
    pi = np.abs(np.real(evecs[:, np.argmin(np.abs(evals - 1))]))
    f = np.empty(m, dtype=np.int64)
    f[np.argsort(-freq, kind="stable")] = np.argsort(-pi, kind="stable")
    return f


def cipher_mcmc(problem: CipherProblem, iterations: int, stream, start=None, restarts: int = 10) -> dict:
    """Metropolis search over decoding permutations with random transposition proposals.

    The iteration budget is split over ``restarts`` independent chains; the
    first starts from ``start`` (default: match ciphertext symbol frequencies
    to the chain's stationary frequencies), the others from random
    permutations. Returns the best permutation seen and the best-so-far
    log-likelihood trace.
    """
    m = problem.alphabet
    logp = np.log(np.maximum(problem.bigram, 1e-300))
    counts = _pair_counts(problem.ciphertext, m)
    restarts = max(1, min(restarts, iterations))
    best, best_f = -math.inf, None
    trace = np.empty(iterations + 1)
    k = 0
    for chain in range(restarts):
        if chain == 0:
            f = _frequency_start(problem) if start is None else np.asarray(start, dtype=np.int64).copy()
        else:
            f = stream.gen.permutation(m)
        cur = float(np.sum(counts * logp[np.ix_(f, f)]))
        if cur > best:
            best, best_f = cur, f.copy()
        if chain == 0:
            trace[0] = best
        budget = iterations // restarts + (1 if chain < iterations % restarts else 0)
        for _ in range(budget):
            a, b = stream.gen.choice(m, 2, replace=False)
            g = f.copy()
            g[a], g[b] = f[b], f[a]
            new = float(np.sum(counts * logp[np.ix_(g, g)]))
            if new >= cur or stream.next_uniform() < math.exp(new - cur):
                f, cur = g, new
                if cur > best:
                    best, best_f = cur, f.copy()
            k += 1
            trace[k] = best
    return {"decode": best_f, "log_likelihood": best, "trace": trace}


def decoding_accuracy(decode, ciphertext, plaintext) -> float:
    return float(np.mean(np.asarray(decode)[np.asarray(ciphertext)] == np.asarray(plaintext)))


@experiment("cipher", "mcmc", replicas=10, symbols=15, length=10_000, iterations=10_000)
def _cipher(params, replicas, stream):
    """Substitution-cipher decoding by MCMC on a synthetic bigram chain with known key."""
    m = params["symbols"]
    good = 0
    accs = []
    for r in range(replicas):
        s = stream.split(r)
        P = random_bigram_chain(m, s.split(0))
        plain = sample_bigram_text(P, params["length"], s.split(1))
        key = s.split(2).gen.permutation(m)
        cipher = np.argsort(key)[plain]  # decoding map is key
        res = cipher_mcmc(CipherProblem(P, cipher), params["iterations"], s.split(3))
        acc = decoding_accuracy(res["decode"], cipher, plain)
        accs.append(acc)
        good += acc >= 0.9
    return Outcome(float(np.mean(accs)), 0.0,
                   [check_at_least("seeds reaching 90% symbol accuracy", good, 0.8 * replicas)],
                   extra={"accuracies": accs})
