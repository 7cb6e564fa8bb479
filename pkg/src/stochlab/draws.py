"""Sampling experiments: elementary constructions checked against their laws."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .harness import Outcome, Table, check_at_most, check_within, experiment
from .randomness import (Binomial, Cauchy, Dirichlet, Discrete, Exponential, Gamma, Geometric, Gumbel, LogNormal,
                         Normal, Poisson, Uniform, alias_build, alias_sample, knuth_yao_sample, rejection_sample)
from .stats import mean_stderr, proportion_stderr


def _draws(dist, stream, count):
    return np.array([dist.draw(stream) for _ in range(count)])


@experiment("memoryless", "sample", replicas=100_000, rate=1.0)
def _memoryless(p, replicas, stream):
    """Exponential memorylessness: P(X >= 2 | X >= 1) = e^-rate."""
    x = _draws(Exponential(p["rate"]), stream, replicas)
    cond = float(np.mean(x[x >= 1] >= 2))
    return Outcome(cond, proportion_stderr(cond, int((x >= 1).sum())),
                   [check_within("P(X>=2 | X>=1)", math.exp(-p["rate"]), cond, 0.01)])


@experiment("poisson-race", "sample", replicas=100_000, lam=1.0)
def _poisson_race(p, replicas, stream):
    """Poisson counts from exponential arrivals before time 1."""
    z = _draws(Poisson(p["lam"]), stream, replicas)
    f0 = float(np.mean(z == 0))
    m, se = mean_stderr(z)
    return Outcome(f0, proportion_stderr(f0, replicas), [
        check_within("P(Z=0)", math.exp(-p["lam"]), f0, 0.01),
        check_within("mean count", p["lam"], m, 4 * se),
    ])


@experiment("rejection", "sample", replicas=100_000)
def _rejection(p, replicas, stream):
    """Rejection sampling of density 2x on [0,1] under bound 2: mean trials and mean value."""
    out = [rejection_sample(stream, lambda x: 2 * x, 2.0, (0.0, 1.0)) for _ in range(replicas)]
    xs = np.array([v for v, _ in out])
    trials = np.array([t for _, t in out])
    m, se = mean_stderr(trials)
    xm, xse = mean_stderr(xs)
    return Outcome(m, se, [check_within("mean trials", 2.0, m, 0.05),
                           check_within("mean value", 2 / 3, xm, 4 * xse)])


def conformance_suite():
    return [Uniform(-1.0, 3.0), Exponential(2.0), Normal(1.0, 2.0), Poisson(3.0), Gamma(2.0, 3),
            LogNormal(0.0, 0.5), Gumbel(1.5), Geometric(0.3), Binomial(10, 0.4),
            Discrete((Fraction(1, 2), Fraction(1, 3), Fraction(1, 6)))]


@experiment("conformance", "sample", replicas=100_000)
def _conformance(p, replicas, stream):
    """Empirical mean and variance of every finite-moment law within 5 standard errors."""
    checks, rows = [], []
    for i, dist in enumerate(conformance_suite()):
        x = _draws(dist, stream.split(i), replicas).astype(float)
        m, se = mean_stderr(x)
        dev2 = (x - x.mean()) ** 2
        v, vse = mean_stderr(dev2)
        v *= replicas / (replicas - 1)
        name = type(dist).__name__
        checks.append(check_within(f"{name} mean", float(dist.mean), m, 5 * se))
        checks.append(check_within(f"{name} variance", float(dist.variance), v, 5 * vse))
        rows.append([i, float(dist.mean), m, float(dist.variance), v])
    d = _draws(Dirichlet((1.0, 1.0, 1.0)), stream.split(99), 1000)
    checks.append(check_at_most("Dirichlet normalization error", float(np.max(np.abs(d.sum(axis=1) - 1))), 1e-12))
    median = float(np.median(_draws(Cauchy(0.0, 1.0), stream.split(100), 1000)))
    checks.append(check_within("Cauchy median", 0.0, median, 0.2))
    return Outcome(float(len(rows)), 0.0, checks,
                   table=Table(["law", "mean", "sample_mean", "variance", "sample_variance"], rows))


@experiment("alias", "sample", replicas=100_000, weights=(1.0, 2.0, 3.0, 4.0, 0.0, 5.0))
def _alias(p, replicas, stream):
    """Alias table: exact rational reconstruction and sampled frequencies."""
    weights = [Fraction(w).limit_denominator(10**9) for w in p["weights"]]
    table = alias_build(weights)
    total = sum(weights)
    target = [w / total for w in weights]
    gap = max(abs(a - b) for a, b in zip(table.masses(), target))
    idx = alias_sample(table, stream, replicas)
    freq = np.bincount(idx, minlength=len(weights)) / replicas
    checks = [check_within("reconstruction gap", 0.0, float(gap), 0.0)]
    for i, q in enumerate(target):
        q = float(q)
        checks.append(check_within(f"frequency of {i}", q, freq[i], 5 * proportion_stderr(q, replicas) + 1e-12))
    return Outcome(float(freq[0]), proportion_stderr(float(freq[0]), replicas), checks)


@experiment("knuth-yao", "sample", replicas=20_000, probabilities=(0.5, 0.25, 0.125, 0.125))
def _knuth_yao(p, replicas, stream):
    """Knuth-Yao coin-flip sampler: frequencies and mean flips within entropy + 2."""
    probs = [Fraction(x).limit_denominator(2**40) for x in p["probabilities"]]
    out = [knuth_yao_sample(probs, stream) for _ in range(replicas)]
    idx = np.array([i for i, _ in out])
    flips = np.array([f for _, f in out])
    freq = np.bincount(idx, minlength=len(probs)) / replicas
    entropy = -sum(float(q) * math.log2(q) for q in probs if q > 0)
    checks = [check_within(f"frequency of {i}", float(q), freq[i], 5 * proportion_stderr(float(q), replicas))
              for i, q in enumerate(probs)]
    mflips, se = mean_stderr(flips)
    checks.append(check_at_most("mean flips minus entropy", mflips - 4 * se - entropy, 2.0))
    return Outcome(mflips, se, checks, extra={"entropy": entropy})
