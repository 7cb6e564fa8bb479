import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stochlab.errors import ArbitrageError, DomainError, ParameterError
from stochlab.randomness import RandomStream
from stochlab.sdefin import (
    GbmParams,
    MlmcPlan,
    OptionSpec,
    black_scholes_call,
    call_payoff,
    crr_convergence,
    crr_price,
    crr_scheme,
    euler_path,
    gbm_euler_terminals,
    gbm_exact,
    identity_payoff,
    level_variances,
    mc_price,
    mc_price_to_accuracy,
    mlmc_price,
    multilevel_terminals,
    weak_error_ratio,
)


def bs_oracle(s0, strike, sigma, mu, maturity):
    vt = sigma * math.sqrt(maturity)
    d1 = (math.log(s0 / strike) + (mu + sigma**2 / 2) * maturity) / vt
    return s0 * stats.norm.cdf(d1) - strike * math.exp(-mu * maturity) * stats.norm.cdf(d1 - vt)


# parameter types

def test_gbm_params_validate():
    with pytest.raises(ParameterError):
        GbmParams(0.0, 0.1, 0.2)
    with pytest.raises(ParameterError):
        GbmParams(1.0, 0.1, -0.2)
    p = GbmParams.from_rate(1.0, 0.05, 0.2)
    assert p.drift == pytest.approx(0.05 - 0.02)
    assert p.rate == pytest.approx(0.05)


def test_option_spec_validates_and_pays():
    with pytest.raises(ParameterError):
        OptionSpec(-1.0, 1.0)
    with pytest.raises(ParameterError):
        OptionSpec(1.0, 0.0)
    assert OptionSpec(10.0, 1.0).payoff([5.0, 10.0, 13.0]).tolist() == [0.0, 0.0, 3.0]


def test_mlmc_plan_cost_and_steps():
    plan = MlmcPlan(4, 2, (100, 50, 10), 2.0)
    assert plan.step_sizes == [2.0, 0.5, 0.125]
    assert plan.cost == 100 + 50 * 4 + 10 * 16
    with pytest.raises(ParameterError):
        MlmcPlan(1, 0, (1,), 1.0)
    with pytest.raises(ParameterError):
        MlmcPlan(2, 1, (5, 0), 1.0)


# exact GBM

def test_gbm_without_volatility_is_deterministic(stream):
    s = gbm_exact(GbmParams(2.0, 0.3, 0.0), 1.5, stream, 10)
    assert np.allclose(s, 2.0 * math.exp(0.45), rtol=0, atol=1e-14)


def test_gbm_rejects_negative_time(stream):
    with pytest.raises(DomainError):
        gbm_exact(GbmParams(1.0, 0.1, 0.2), -1.0, stream)


def test_gbm_log_drift_and_law(stream):
    a, sigma, t, n = 0.1, 0.3, 2.0, 100_000
    s = gbm_exact(GbmParams(1.0, a, sigma), t, stream, n)
    logs = np.log(s)
    assert abs(logs.mean() / t - a) <= 4 * sigma / math.sqrt(n * t)
    ks = stats.kstest(logs, stats.norm(a * t, sigma * math.sqrt(t)).cdf).statistic
    assert ks < 0.01


# Euler scheme

def test_euler_zero_diffusion_tracks_exponential(stream):
    a, T = 0.7, 1.0
    errors = []
    for n in (100, 200, 400):
        path = euler_path(lambda s, t: a * s, lambda s, t: 0.0, 1.0, T / n, T, stream)
        assert path[-1] == pytest.approx((1 + a * T / n) ** n, rel=1e-12)
        errors.append(abs(path[-1] - math.exp(a * T)))
    # first-order convergence: halving h roughly halves the error
    assert errors[0] / errors[1] == pytest.approx(2.0, rel=0.05)
    assert errors[1] / errors[2] == pytest.approx(2.0, rel=0.05)
    assert errors[0] < 0.01


def test_euler_uses_one_increment_per_step():
    s = RandomStream(3)
    path = euler_path(lambda x, t: 0.0, lambda x, t: 1.0, 0.0, 0.125, 2.0, s)
    assert len(path) == 17
    ref = RandomStream(3).gen.normal(0.0, math.sqrt(0.125), 16)
    assert np.allclose(np.diff(path), ref, rtol=0, atol=1e-15)


@pytest.mark.parametrize("h", [0.0, -0.1, 0.3])
def test_euler_rejects_bad_steps(stream, h):
    with pytest.raises(ParameterError):
        euler_path(lambda s, t: s, lambda s, t: s, 1.0, h, 1.0, stream)


def test_euler_terminals_match_generic_scheme_in_law(stream):
    params = GbmParams.from_rate(1.0, 0.05, 0.2)
    fine, coarse, exact = gbm_euler_terminals(params, 1.0, 4, 50_000, stream, refine=2)
    # E of the Euler terminal value is exactly (1 + r h)^n
    assert fine.mean() == pytest.approx((1 + 0.05 / 4) ** 4, abs=5 * fine.std() / math.sqrt(fine.size))
    assert coarse.mean() == pytest.approx((1 + 0.05 / 2) ** 2, abs=5 * coarse.std() / math.sqrt(coarse.size))
    assert exact.mean() == pytest.approx(math.exp(0.05), abs=5 * exact.std() / math.sqrt(exact.size))
    with pytest.raises(ParameterError):
        gbm_euler_terminals(params, 1.0, 5, 10, stream, refine=2)


def test_weak_error_ratio_is_first_order(stream):
    params = GbmParams.from_rate(100.0, 0.05, 0.2)
    e1, e2, ratio = weak_error_ratio(identity_payoff, params, 0.25, 1_000_000, stream)
    assert 1.6 <= ratio <= 2.5
    assert e1 == pytest.approx(100 * ((1 + 0.05 / 4) ** 4 - math.exp(0.05)), rel=0.1)


# plain Monte Carlo

def test_mc_price_without_volatility_has_no_error(stream):
    params = GbmParams(1.0, 0.05, 0.0)
    res = mc_price(identity_payoff, params, 0.25, 1000, stream)
    assert res.stderr == 0.0
    assert res.estimate == pytest.approx((1 + 0.05 / 4) ** 4, rel=1e-14)
    assert res.cost == 4000 and res.samples == 1000 and res.steps == 4


def test_mc_price_errors(stream):
    params = GbmParams(1.0, 0.05, 0.1)
    with pytest.raises(ParameterError):
        mc_price(identity_payoff, params, 0.3, 10, stream)
    with pytest.raises(ParameterError):
        mc_price(identity_payoff, params, 0.25, 0, stream)


def test_mc_price_to_accuracy_picks_dividing_step(stream):
    params = GbmParams.from_rate(100.0, 0.05, 0.2)
    res = mc_price_to_accuracy(call_payoff(100.0, 0.05, 1.0), params, 0.3, stream)
    assert res.steps == math.ceil(1 / 0.3)
    assert abs(res.estimate - bs_oracle(100.0, 100.0, 0.2, 0.05, 1.0)) < 4 * res.stderr + 1.0


def test_mc_cost_grows_like_inverse_cube(stream):
    params = GbmParams.from_rate(100.0, 0.05, 0.2)
    payoff = call_payoff(100.0, 0.05, 1.0)
    a = mc_price_to_accuracy(payoff, params, 0.1, stream)
    b = mc_price_to_accuracy(payoff, params, 0.05, stream)
    assert 6 <= b.cost / a.cost <= 11


# multilevel Monte Carlo

def test_mlmc_single_level_is_plain_mc():
    params = GbmParams.from_rate(100.0, 0.05, 0.2)
    payoff = call_payoff(100.0, 0.05, 1.0)
    ml = mlmc_price(payoff, params, 0.5, RandomStream(11), depth=0, pilot=5000)
    n = ml.plan.samples[0]
    # the pilot and the top-up come from the same stream in sequence
    plain_a = mc_price(payoff, params, 1.0, 5000, RandomStream(11))
    s = RandomStream(11)
    first = gbm_euler_terminals(params, 1.0, 1, 5000, s)[0]
    rest = gbm_euler_terminals(params, 1.0, 1, n - 5000, s)[0] if n > 5000 else np.empty(0)
    values = payoff(np.concatenate([first, rest]))
    assert ml.plan.depth == 0
    assert ml.estimate == pytest.approx(values.mean(), rel=1e-12)
    assert ml.cost == n
    assert plain_a.estimate == pytest.approx(payoff(first).mean(), rel=1e-12)


def test_mlmc_level_variances_decay_like_h(stream):
    params = GbmParams.from_rate(100.0, 0.05, 0.2)
    payoff = call_payoff(100.0, 0.05, 1.0)
    m = 4
    var = level_variances(payoff, params, 5, m, 100_000, stream)
    for l in range(1, 5):
        assert 1 / (2 * m) <= var[l + 1] / var[l] <= 2 / m


def test_mlmc_matches_black_scholes(stream):
    params = GbmParams.from_rate(100.0, 0.05, 0.2)
    payoff = call_payoff(100.0, 0.05, 1.0)
    ml = mlmc_price(payoff, params, 0.01, stream)
    assert ml.plan.depth == math.ceil(math.log(100) / math.log(4))
    assert min(ml.plan.samples) >= 100
    assert abs(ml.estimate - bs_oracle(100.0, 100.0, 0.2, 0.05, 1.0)) <= 3 * 0.01


def test_mlmc_telescopes_to_finest_level(stream):
    params = GbmParams.from_rate(100.0, 0.05, 0.2)
    payoff = call_payoff(100.0, 0.05, 1.0)
    levels = multilevel_terminals(params, 1.0, 3, 4, 2000, stream)
    f = payoff(levels)
    telescoped = f[:, 0].mean() + sum((f[:, l] - f[:, l - 1]).mean() for l in range(1, 4))
    assert telescoped == pytest.approx(f[:, 3].mean(), rel=1e-12)


def test_coupled_coarse_path_sums_fine_increments():
    params = GbmParams.from_rate(1.0, 0.05, 0.2)
    levels = multilevel_terminals(params, 1.0, 2, 2, 1, RandomStream(5))
    dw = RandomStream(5).gen.normal(0.0, math.sqrt(0.25), (1, 4))[0]

    def euler(incs, h):
        s = 1.0
        for d in incs:
            s = s + 0.05 * s * h + 0.2 * s * d
        return s

    assert levels[0, 2] == pytest.approx(euler(dw, 0.25), rel=1e-14)
    assert levels[0, 1] == pytest.approx(euler([dw[0] + dw[1], dw[2] + dw[3]], 0.5), rel=1e-14)
    assert levels[0, 0] == pytest.approx(euler([dw.sum()], 1.0), rel=1e-14)


def test_mlmc_agrees_with_plain_mc(stream):
    params = GbmParams.from_rate(100.0, 0.05, 0.2)
    payoff = call_payoff(100.0, 0.05, 1.0)
    ml = mlmc_price(payoff, params, 0.05, stream.split(0))
    mc = mc_price_to_accuracy(payoff, params, 0.05, stream.split(1))
    assert abs(ml.estimate - mc.estimate) <= 4 * math.hypot(ml.stderr, mc.stderr)


def test_mlmc_rejects_bad_arguments(stream):
    params = GbmParams(1.0, 0.0, 0.1)
    with pytest.raises(ParameterError):
        mlmc_price(identity_payoff, params, 0.0, stream)
    with pytest.raises(ParameterError):
        mlmc_price(identity_payoff, params, 0.1, stream, refine=1)


# binomial trees

def replicating_price(cu, cd, u, d, r):
    """Price from the hedge: hold delta shares and b bonds with the same payoffs."""
    a = np.array([[u, r], [d, r]], dtype=float)
    delta, bond = np.linalg.solve(a, [cu, cd])
    return delta + bond


def test_crr_one_period_replication():
    price = crr_price([0, 1], 1, 2, Fraction(1, 2), 1, 1)
    assert price == Fraction(1, 3)
    assert float(price) == pytest.approx(replicating_price(1, 0, 2, 0.5, 1), abs=1e-15)


@given(st.floats(-5, 5), st.floats(-5, 5),
       st.fractions(Fraction(1, 10), Fraction(9, 10)), st.fractions(Fraction(1, 20), Fraction(1, 2)))
@settings(max_examples=60, deadline=None)
def test_crr_one_period_formula(cu, cd, d, gap):
    r = d + gap
    u = r + gap
    p = (r - d) / (u - d)
    expected = (float(p) * cu + (1 - float(p)) * cd) / float(r)
    got = crr_price([cd, cu], 1.0, float(u), float(d), float(r), 1)
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(replicating_price(cu, cd, float(u), float(d), float(r)), abs=1e-9)


@pytest.mark.parametrize("n", [1, 3, 7])
def test_crr_constant_payoff_is_discounted(n):
    r = Fraction(21, 20)
    assert crr_price([5] * (n + 1), 100, Fraction(6, 5), Fraction(4, 5), r, n) == 5 / r**n
    assert crr_price(lambda s: np.full_like(s, 5.0), 100.0, 1.2, 0.8, 1.05, n) == pytest.approx(5 / 1.05**n)


def test_crr_monotone_in_spot_and_strike():
    u, d, r = crr_scheme(0.2, 0.05, 1.0, 50)
    by_spot = [crr_price(OptionSpec(100.0, 1.0), s, u, d, r, 50) for s in np.linspace(50, 150, 21)]
    by_strike = [crr_price(OptionSpec(x, 1.0), 100.0, u, d, r, 50) for x in np.linspace(50, 150, 21)]
    assert all(b >= a for a, b in zip(by_spot, by_spot[1:]))
    assert all(b <= a for a, b in zip(by_strike, by_strike[1:]))


@given(st.floats(0.1, 2.0), st.floats(0.01, 1.0), st.integers(1, 500))
@settings(max_examples=60, deadline=None)
def test_crr_scheme_risk_neutral_probability_in_unit_interval(sigma, mu, n):
    u, d, r = crr_scheme(sigma, mu, 1.0, n)
    if d < r < u:
        p = (r - d) / (u - d)
        assert 0 < p < 1


@pytest.mark.parametrize("d,r,u", [(1.0, 1.0, 2.0), (0.5, 2.0, 2.0), (0.5, 3.0, 2.0)])
def test_crr_rejects_arbitrage(d, r, u):
    with pytest.raises(ArbitrageError):
        crr_price([0, 1], 1.0, u, d, r, 1)


def test_crr_needs_a_period_and_matching_values():
    with pytest.raises(ParameterError):
        crr_price([1], 1.0, 2.0, 0.5, 1.0, 0)
    with pytest.raises(ParameterError):
        crr_price([1, 2, 3], 1.0, 2.0, 0.5, 1.0, 1)


# Black-Scholes

def test_black_scholes_matches_independent_formula():
    for s0, x, sigma, mu, t in [(100, 100, 0.2, 0.05, 1), (90, 110, 0.4, 0.01, 2), (120, 80, 0.1, 0.1, 0.5)]:
        assert black_scholes_call(s0, x, sigma, mu, t) == pytest.approx(bs_oracle(s0, x, sigma, mu, t), rel=1e-12)


def test_black_scholes_edge_cases():
    assert black_scholes_call(100.0, 0.0, 0.2, 0.05, 1.0) == 100.0
    for x in (80.0, 105.0, 110.0):
        limit = max(0.0, 100 * math.exp(0.05) - x) / math.exp(0.05)
        assert black_scholes_call(100.0, x, 0.0, 0.05, 1.0) == pytest.approx(limit, abs=1e-12)
        assert black_scholes_call(100.0, x, 1e-6, 0.05, 1.0) == pytest.approx(limit, abs=1e-6)
    with pytest.raises(ParameterError):
        black_scholes_call(100.0, 100.0, -0.1, 0.05, 1.0)
    with pytest.raises(ParameterError):
        black_scholes_call(100.0, 100.0, 0.1, 0.05, 0.0)


def test_crr_converges_to_black_scholes():
    bs = bs_oracle(100, 100, 0.2, 0.05, 1)
    u, d, r = crr_scheme(0.2, 0.05, 1.0, 1000)
    assert abs(crr_price(OptionSpec(100.0, 1.0), 100.0, u, d, r, 1000) - bs) / bs <= 1e-3
    errs = crr_convergence(100.0, 100.0, 0.2, 0.05, 1.0, [10, 100, 1000])
    assert errs[0] > errs[1] > errs[2]


def test_sde_experiments_are_reproducible():
    from stochlab.harness import run_experiment
    a = run_experiment("crr", seed=4)
    b = run_experiment("crr", seed=4)
    assert a.passed
    assert a.to_json(include_elapsed=False) == b.to_json(include_elapsed=False)
