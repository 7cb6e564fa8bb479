import itertools
import math

import numpy as np
import pytest
from scipy import stats as sps

from stochlab.errors import ParameterError, UnknownExperiment
from stochlab.harness import ExperimentPlan, run, run_experiment
from stochlab.limits import (
    arcsine_cdf, berry_esseen_quantities, discrete_arcsine_pmf, first_return_pmf, first_return_times,
    fragment_log_sizes, no_repeat_probability, normalized_maxima, petersburg_truncated_mean,
    poisson_approx_check, poisson_tv, semicircle_moment, star_forces,
)
from stochlab.randomness import RandomStream
from stochlab.stats import EmpiricalCdf, ks_distance

# --- harness


def test_run_is_deterministic():
    plan = ExperimentPlan("arcsine", {"n": 200}, replicas=500, seed=3)
    assert run(plan).to_json(include_elapsed=False) == run(plan).to_json(include_elapsed=False)


def test_unknown_experiment():
    with pytest.raises(UnknownExperiment):
        run(ExperimentPlan("no-such-thing"))
    with pytest.raises(ParameterError):
        ExperimentPlan("arcsine", replicas=0)


def test_stderr_scaling():
    # doubling replicas: factor in [1.2, 1.7]; quadrupling: within 1.5x of 2
    doubled, quadrupled = [], []
    for seed in range(5):
        se1 = run_experiment("lognormal-fragmentation", seed=seed, replicas=2000).stderr
        se2 = run_experiment("lognormal-fragmentation", seed=seed, replicas=4000).stderr
        se4 = run_experiment("lognormal-fragmentation", seed=seed, replicas=8000).stderr
        doubled.append(se1 / se2)
        quadrupled.append(se1 / se4)
    assert 1.2 <= np.median(doubled) <= 1.7
    assert 2 / 1.5 <= np.median(quadrupled) <= 2 * 1.5


# --- KS distance


def test_ks_point_mass():
    assert ks_distance([0.3], lambda x: (np.asarray(x) >= 0.3).astype(float)) == 0.0


def test_ks_shift_and_empty():
    u = RandomStream(1).gen.random(1000)
    assert ks_distance(u, lambda x: np.clip(np.asarray(x) - 0.2, 0, 1)) >= 0.2
    with pytest.raises(ParameterError):
        EmpiricalCdf([])


def test_ks_uniform_below_null_quantile():
    gen = RandomStream(2).gen
    n = 1000
    i = np.arange(1, n + 1)
    null = []
    for _ in range(2000):
        v = np.sort(gen.random(n))
        null.append(max(np.max(i / n - v), np.max(v - (i - 1) / n)))
    q99 = np.quantile(null, 0.99)
    assert ks_distance(gen.random(n), lambda x: np.clip(x, 0, 1)) < q99
    # the library and the textbook formula agree on an arbitrary sample
    v = gen.random(n)
    s = np.sort(v)
    assert ks_distance(v, lambda x: np.clip(x, 0, 1)) == pytest.approx(
        max(np.max(i / n - s), np.max(s - (i - 1) / n)), abs=1e-12)


# --- Berry-Esseen


def test_berry_esseen_roulette():
    q = berry_esseen_quantities(18 / 38, 361)
    exact = sum(sps.binom.pmf(k, 361, 18 / 38) for k in range(181, 362))
    assert q["exact"] == pytest.approx(exact, abs=1e-12)
    assert abs(q["normal"] - exact) <= 0.005
    assert abs(q["exact"] - 0.158) < 0.005
    assert q["sup_distance"] <= q["bound"]


def test_berry_esseen_lower_constant():
    q = berry_esseen_quantities(0.5, 100)
    assert q["sup_distance"] >= (2 * math.pi) ** -0.5 / (2 * math.sqrt(100))


@pytest.mark.parametrize("n,p", list(itertools.product([25, 100, 400], [0.3, 0.5])))
def test_berry_esseen_bound_never_violated(n, p):
    q = berry_esseen_quantities(p, n)
    assert q["sup_distance"] <= q["bound"]
    assert run_experiment("berry-esseen", p=p, n=n).check("sup CDF").passed


# --- Poisson approximation


def test_poisson_tv_against_scipy():
    tv, bound = poisson_tv([0.01] * 100)
    assert bound == pytest.approx(0.02)
    k = np.arange(0, 101)
    oracle = 0.5 * (np.abs(sps.binom.pmf(k, 100, 0.01) - sps.poisson.pmf(k, 1.0)).sum() + sps.poisson.sf(100, 1.0))
    assert tv == pytest.approx(oracle, abs=1e-12)
    assert tv < 0.01
    assert poisson_tv([0.0] * 20)[0] == 0.0
    assert poisson_approx_check([0.01] * 100).passed


@pytest.mark.parametrize("seed", range(5))
def test_poisson_bound_random_instances(seed):
    p = RandomStream(seed).gen.random(30) * 0.3
    tv, bound = poisson_tv(p)
    assert 0 <= tv <= bound


# --- extreme values


@pytest.mark.parametrize("family,param", [("exponential", 1.0), ("pareto", 2.0), ("bounded", 1.0)])
def test_extreme_value_families(family, param):
    r = run_experiment("extreme-value", seed=4, family=family, param=param, n=1000, replicas=10_000)
    assert r.passed, r.checks


def test_extreme_value_errors():
    with pytest.raises(ParameterError):
        normalized_maxima("gaussian", 1.0, 100, 10, RandomStream(0))
    with pytest.raises(ParameterError):
        normalized_maxima("pareto", 1.0, 5, 10, RandomStream(0))


# --- arcsine


def test_arcsine_limit_values():
    assert arcsine_cdf(0.5) == pytest.approx(0.5)
    assert arcsine_cdf(1.0) == 1.0
    assert arcsine_cdf(0.2) == pytest.approx(0.2952, abs=1e-4)


def test_discrete_arcsine_law_by_enumeration():
    n = 10
    counts = np.zeros(n // 2 + 1)
    for steps in itertools.product((-1, 1), repeat=n):
        path = np.concatenate([[0], np.cumsum(steps)])
        positive = int(np.sum(path[:-1] + path[1:] > 0))
        counts[positive // 2] += 1
    assert np.allclose(discrete_arcsine_pmf(n), counts / 2**n, atol=1e-14)


def test_arcsine_experiment():
    r = run_experiment("arcsine", seed=5)
    assert r.passed, r.checks
    assert abs(r.estimate - 0.2952) <= 0.01


# --- Petersburg


def test_petersburg():
    assert [petersburg_truncated_mean(m) for m in (1, 5, 10)] == [1.0, 5.0, 10.0]
    r = run_experiment("petersburg", seed=6)
    assert 0.8 <= r.estimate <= 1.4
    assert r.passed


# --- Wigner


def test_semicircle_moments():
    assert semicircle_moment(2) == 0.25
    assert semicircle_moment(4) == 0.125
    assert semicircle_moment(6) == pytest.approx(5 / 64)
    assert semicircle_moment(3) == 0.0


def test_wigner_experiment():
    r = run_experiment("wigner", seed=7, dim=400, r=2, replicas=20)
    assert r.passed, r.checks


# --- Holtsmark


def test_holtsmark():
    total, nearest = star_forces(1.0, 0, 5, RandomStream(0))
    assert np.all(total == 0) and np.all(nearest == 0)
    r = run_experiment("holtsmark", seed=8)
    assert r.passed, r.checks


# --- return times


def test_first_return_pmf_by_enumeration():
    for m in range(1, 6):
        hits = 0
        for steps in itertools.product((-1, 1), repeat=2 * m):
            s = np.cumsum(steps)
            hits += s[-1] == 0 and np.all(s[:-1] != 0)
        assert first_return_pmf(m) == pytest.approx(hits / 4**m, abs=1e-14)
    assert first_return_pmf(1) == 0.5


def test_return_time_experiment_and_divergent_mean():
    assert run_experiment("return-time", seed=9).passed
    short = first_return_times(10_000, 10_000, RandomStream(10))
    long = first_return_times(10_000, 1_000_000, RandomStream(10))
    mean_short = np.where(short > 0, short, 10_000).mean()
    mean_long = np.where(long > 0, long, 1_000_000).mean()
    assert mean_long > mean_short
    with pytest.raises(ParameterError):
        first_return_times(10, 7, RandomStream(0))


# --- coupon collector Rayleigh limit


def test_coupon_rayleigh():
    assert no_repeat_probability(10_000, 0) == 1.0
    r = run_experiment("coupon-rayleigh", seed=11)
    assert abs(r.estimate - math.exp(-0.5)) <= 0.02
    assert r.passed


# --- fragmentation


def test_fragmentation():
    assert np.all(fragment_log_sizes(1.0, -0.1, 0.1, 0.0, 100, RandomStream(0)) == 0.0)
    r = run_experiment("lognormal-fragmentation", seed=12)
    assert r.passed, r.checks
    with pytest.raises(ParameterError):
        fragment_log_sizes(1.0, 0.1, 0.1, 1.0, 10, RandomStream(0))
