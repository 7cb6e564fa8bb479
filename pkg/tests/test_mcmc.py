import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochlab.errors import DomainError, ParameterError
from stochlab.harness import run_experiment
from stochlab.macro import chi_square_quantile, chi_square_statistic
from stochlab.mcmc import (
    ACCEPTANCE_RULES, CipherProblem, chain_occupancy, cipher_log_likelihood, cipher_mcmc, decoding_accuracy,
    detailed_balance_defect, glauber_ising_1d, hit_and_run, ising_gibbs, log_uniform_radius, mh_kernel,
    monotone_random_search, random_bigram_chain, sample_bigram_text, search_hitting_time, simulated_annealing,
)
from stochlab.randomness import RandomStream
from stochlab.stats import ks_distance

# --- Metropolis-Hastings kernels


def _uniform_proposal(n):
    return [[Fraction(1, n)] * n for _ in range(n)]


def test_uniform_target_kernel_is_proposal():
    q = [[Fraction(1, 2), Fraction(1, 4), Fraction(1, 4)],
         [Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)],
         [Fraction(1, 4), Fraction(1, 4), Fraction(1, 2)]]
    assert mh_kernel([1, 1, 1], q, "metropolis") == q


@pytest.mark.parametrize("rule", ["metropolis", "barker"])
def test_three_state_detailed_balance(rule):
    w = [1, 2, 3]
    k = mh_kernel(w, _uniform_proposal(3), rule)
    pi = [Fraction(x, 6) for x in w]
    for i in range(3):
        assert sum(k[i]) == 1
        for j in range(3):
            assert pi[i] * k[i][j] == pi[j] * k[j][i]
    assert detailed_balance_defect(w, k) == 0


@st.composite
def finite_targets(draw):
    n = draw(st.integers(2, 6))
    weights = draw(st.lists(st.integers(1, 50), min_size=n, max_size=n))
    raw = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            raw[i][j] = raw[j][i] = Fraction(draw(st.integers(0, 5)), 5 * n)
    for i in range(n):
        raw[i][i] = 1 - sum(raw[i][j] for j in range(n) if j != i)
    return weights, raw


@settings(max_examples=100, deadline=None)
@given(finite_targets(), st.sampled_from(["metropolis", "barker"]))
def test_detailed_balance_exact_property(target, rule):
    weights, proposal = target
    k = mh_kernel(weights, proposal, rule)
    assert all(sum(row) == 1 for row in k)
    assert all(v >= 0 for row in k for v in row)
    assert detailed_balance_defect(weights, k) == 0


def test_float_kernel_balance_tolerance():
    w = [0.3, 1.7, 2.2, 0.9]
    k = mh_kernel(w, np.full((4, 4), 0.25), "barker")
    assert detailed_balance_defect(w, k) <= 1e-12
    assert np.allclose(k.sum(axis=1), 1.0, atol=1e-12)


def test_asymmetric_proposal_rejected():
    with pytest.raises(ParameterError):
        mh_kernel([1, 2], [[Fraction(1, 2), Fraction(1, 2)], [Fraction(1, 4), Fraction(3, 4)]])


def test_acceptance_rule_ratio():
    for name, rule in ACCEPTANCE_RULES.items():
        for z in np.geomspace(1e-6, 1e6, 121):
            assert rule(z) / rule(1 / z) == pytest.approx(z, rel=1e-12), name


def test_five_state_occupancy():
    w = np.array([1, 2, 3, 4, 5], dtype=float)
    pi = w / w.sum()
    k = mh_kernel([1, 2, 3, 4, 5], _uniform_proposal(5))
    runs = np.array([chain_occupancy(k, 10_000, RandomStream(1).split(r)) for r in range(100)])
    mean = runs.mean(axis=0)
    se = runs.std(axis=0, ddof=1) / math.sqrt(runs.shape[0])
    assert np.all(np.abs(mean - pi) <= 4 * se)


# --- Glauber-Ising


def test_ising_infinite_temperature_energy():
    n = 10
    probs, energies = ising_gibbs(n, 0.0)
    assert float(probs @ energies) == pytest.approx((n - 1) / 2)
    run = glauber_ising_1d(n, 0.0, 8 * 1_000_000, RandomStream(2), record_every=8)
    e = run.energies.astype(float)
    batches = e[: e.size // 100 * 100].reshape(100, -1).mean(axis=1)
    assert abs(e.mean() - (n - 1) / 2) <= 4 * batches.std(ddof=1) / 10


@pytest.mark.parametrize("n,beta", [(6, 1.0), (8, 0.7)])
def test_ising_stationary_gibbs(n, beta):
    probs, _ = ising_gibbs(n, beta)
    run = glauber_ising_1d(n, beta, 200_000 * 40, RandomStream(n), record_every=40)
    counts = np.bincount(run.codes, minlength=probs.size)
    stat, dof = chi_square_statistic(counts, probs)
    assert stat <= chi_square_quantile(dof)


def test_ising_ground_state_experiment():
    assert run_experiment("ising", seed=3).passed
    with pytest.raises(ParameterError):
        glauber_ising_1d(2, 1.0, 10, RandomStream(0))


# --- Hit-and-Run


def _square(x):
    return 0.0 <= x[0] <= 1.0 and 0.0 <= x[1] <= 1.0


def _ball(x):
    return float(x @ x) <= 1.0


def test_hit_and_run_square():
    pts = hit_and_run(_square, [0.5, 0.5], 100_000, RandomStream(4))
    assert all(_square(p) for p in pts)
    batches = pts.reshape(100, -1, 2).mean(axis=1)
    se = batches.std(axis=0, ddof=1) / 10
    assert np.all(np.abs(pts.mean(axis=0) - 0.5) <= 4 * se)


def test_hit_and_run_ball_radial_law():
    pts = hit_and_run(_ball, [0.0, 0.0, 0.0], 30_000, RandomStream(5))
    r3 = np.linalg.norm(pts, axis=1) ** 3
    assert ks_distance(r3[::3], lambda x: np.clip(x, 0, 1)) < 0.02


def test_hit_and_run_errors():
    with pytest.raises(DomainError):
        hit_and_run(_square, [2.0, 0.5], 10, RandomStream(0))
    point = np.array([0.3, 0.3])
    with pytest.raises(DomainError):
        hit_and_run(lambda x: bool(np.array_equal(x, point)), point, 1, RandomStream(0))


# --- annealing


def test_annealing_parabola():
    res = simulated_annealing(lambda x: (x**2).sum(axis=-1), [-5.0], [5.0], 1.0, 10_000, RandomStream(6),
                              runs=100)
    assert np.mean(np.abs(res["best_x"][:, 0]) <= 0.1) >= 0.95


def test_annealing_constant_objective_is_pure_diffusion():
    res = simulated_annealing(lambda x: np.zeros(x.shape[0]), [-1e6], [1e6], 1.0, 500, RandomStream(7),
                              runs=2000, start=[0.0])
    disp = res["final_x"][:, 0]
    assert abs(disp.mean()) <= 4 * disp.std(ddof=1) / math.sqrt(disp.size)


def test_annealing_double_well_experiment():
    assert run_experiment("annealing", seed=8).passed
    with pytest.raises(ParameterError):
        simulated_annealing(lambda x: x[..., 0], [0.0], [1.0], 0.0, 10, RandomStream(0))


# --- monotone random search


def test_random_search_trace_nonincreasing():
    res = monotone_random_search(lambda x: float(x @ x), [1.0, -2.0], log_uniform_radius(1e-6, 2.0), 2000,
                                 RandomStream(9), optimum=np.zeros(2), eps=1e-2)
    assert np.all(np.diff(res["trace"]) <= 0)
    assert res["hit"] > 0


def test_random_search_lower_bound_and_trend():
    assert run_experiment("random-search", seed=10).passed
    coarse = [search_hitting_time([1.0, 0.0], 1e-2, RandomStream(11).split(r)) for r in range(200)]
    fine = [search_hitting_time([1.0, 0.0], 1e-3, RandomStream(12).split(r)) for r in range(200)]
    assert np.median(fine) > np.median(coarse)


# --- cipher


def test_cipher_identity_control():
    s = RandomStream(13)
    P = random_bigram_chain(15, s.split(0))
    text = sample_bigram_text(P, 10_000, s.split(1))
    res = cipher_mcmc(CipherProblem(P, text), 10_000, s.split(2), start=np.arange(15))
    assert decoding_accuracy(res["decode"], text, text) >= 0.95


def test_cipher_best_so_far():
    s = RandomStream(14)
    P = random_bigram_chain(10, s.split(0))
    plain = sample_bigram_text(P, 3000, s.split(1))
    key = s.split(2).gen.permutation(10)
    problem = CipherProblem(P, np.argsort(key)[plain])
    start = s.split(3).gen.permutation(10)
    res = cipher_mcmc(problem, 2000, s.split(4), start=start)
    assert res["log_likelihood"] >= cipher_log_likelihood(problem, start)
    assert res["log_likelihood"] == pytest.approx(cipher_log_likelihood(problem, res["decode"]))
    assert np.all(np.diff(res["trace"]) >= 0)


def test_cipher_experiment():
    assert run_experiment("cipher", seed=15).passed


def test_cipher_problem_validation():
    P = np.full((3, 3), 1 / 3)
    with pytest.raises(ParameterError):
        CipherProblem(P, [])
    with pytest.raises(ParameterError):
        CipherProblem(np.full((3, 3), 0.3), [0, 1])
