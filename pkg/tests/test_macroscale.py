import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrolocal.certificates import build_covariance_partial
from macrolocal.conic import CertificateKind, membership_q1
from macrolocal.errors import ContractError, PreconditionError, ShapeError
from macrolocal.macroscale import (
    IntensitySample,
    SimulationConfig,
    analytic_covariance,
    convergence_report,
    covariance_submatrix,
    empirical_covariance,
    gaussian_global_sample,
    global_covariance_labels,
    ks_pvalue,
    marginal_block,
    simulate_intensities,
)
from macrolocal.scenario import (
    CHSH_OPTIMAL_ANGLES,
    CHSH_SCENARIO,
    Scenario,
    deterministic_behavior,
    singlet_behavior,
    uniform_behavior,
)

from helpers import perfectly_correlated, random_nosignaling


def test_uniform_block():
    m = analytic_covariance(uniform_behavior(CHSH_SCENARIO), 0, 1).matrix
    assert np.allclose(np.diag(m), 0.25)
    assert m[0, 1] == -0.25 and m[2, 3] == -0.25
    assert np.all(m[:2, 2:] == 0.0)


def test_perfectly_correlated_block():
    m = analytic_covariance(perfectly_correlated(), 1, 0).matrix
    assert np.array_equal(m[:2, 2:], [[0.25, -0.25], [-0.25, 0.25]])


def test_deterministic_block_is_zero():
    m = analytic_covariance(deterministic_behavior(CHSH_SCENARIO, [1, 0], [0, 1]), 1, 1).matrix
    assert np.all(m == 0.0)


def test_setting_pair_checked():
    with pytest.raises(ShapeError):
        analytic_covariance(uniform_behavior(CHSH_SCENARIO), 2, 0)
    with pytest.raises(ContractError):
        SimulationConfig(0, 10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_analytic_equals_certificate_block(seed):
    b = random_nosignaling(np.random.default_rng(seed))
    for x in range(2):
        for y in range(2):
            blk = analytic_covariance(b, x, y).matrix
            assert np.max(np.abs(blk - covariance_submatrix(b, x, y))) <= 1e-12
            assert np.allclose(blk, blk.T) and np.linalg.eigvalsh(blk)[0] >= -1e-10


def test_single_pair_deterministic_sample_is_zero():
    b = deterministic_behavior(CHSH_SCENARIO, [0, 0], [1, 1])
    s = simulate_intensities(b, SimulationConfig(1, 1))
    assert np.all(s.values == 0.0)


def test_zero_sum_and_determinism():
    b = singlet_behavior(*CHSH_OPTIMAL_ANGLES)
    cfg = SimulationConfig(500, 300, seed=17, setting_pair=(1, 0))
    s1, s2 = simulate_intensities(b, cfg), simulate_intensities(b, cfg)
    assert np.array_equal(s1.values, s2.values)
    assert np.max(np.abs(s1.values[:, :2].sum(axis=1))) <= 1e-9
    assert np.max(np.abs(s1.values[:, 2:].sum(axis=1))) <= 1e-9
    other = simulate_intensities(b, SimulationConfig(500, 300, seed=18, setting_pair=(1, 0)))
    assert not np.array_equal(other.values, s1.values)


def test_trials_are_independent_streams():
    # a longer run extends a shorter one with the same seed
    b = uniform_behavior(CHSH_SCENARIO)
    short = simulate_intensities(b, SimulationConfig(50, 10, seed=3))
    long = simulate_intensities(b, SimulationConfig(50, 25, seed=3))
    assert np.array_equal(long.values[:10], short.values)


def test_uniform_cross_covariance_near_zero():
    b = uniform_behavior(CHSH_SCENARIO)
    s = simulate_intensities(b, SimulationConfig(10_000, 10_000, seed=1))
    emp = empirical_covariance(s).matrix
    assert np.max(np.abs(emp[:2, 2:])) <= 5 / math.sqrt(10_000)


def test_constant_sample_covariance_is_zero():
    s = IntensitySample(np.ones((5, 3)), ("a", "b", "c"), (0, 0))
    emp = empirical_covariance(s)
    assert np.all(emp.matrix == 0.0)


def test_two_trial_covariance_by_hand():
    v = np.array([0.3, -1.2, 2.0])
    s = IntensitySample(np.array([v, -v]), ("a", "b", "c"), (0, 0))
    emp = empirical_covariance(s)
    # mean 0, deviations +-v: sum of outer products 2 v v^T over T - 1 = 1
    assert np.allclose(emp.matrix, 2 * np.outer(v, v), atol=1e-15)
    # the two centered products coincide, so their spread is zero
    assert np.allclose(emp.standard_errors, 0.0)
    with pytest.raises(ContractError):
        empirical_covariance(IntensitySample(v[None], ("a", "b", "c"), (0, 0)))


def test_gaussian_zero_and_identity():
    z = gaussian_global_sample(np.zeros((3, 3)), 100, seed=1)
    assert np.all(z.values == 0.0)
    t = 20_000
    g = gaussian_global_sample(np.eye(4), t, seed=2)
    emp = empirical_covariance(g).matrix
    assert np.max(np.abs(emp - np.eye(4))) <= 5 / math.sqrt(t)
    again = gaussian_global_sample(np.eye(4), t, seed=2)
    assert np.array_equal(g.values, again.values)
    with pytest.raises(PreconditionError):
        gaussian_global_sample(-np.eye(2), 10)


def test_gaussian_singlet_global_model():
    b = singlet_behavior(*CHSH_OPTIMAL_ANGLES)
    res = membership_q1(b, CertificateKind.COVARIANCE)
    assert res.feasible
    labels = global_covariance_labels(b)
    g = gaussian_global_sample(res.completion, 20_000, seed=5, labels=labels)
    for x in range(2):
        for y in range(2):
            block = marginal_block(g, x, y, 2)
            rep = convergence_report(block, analytic_covariance(b, x, y))
            assert rep.within_4se, rep.max_z_score


def test_csv_export():
    b = uniform_behavior(Scenario(1, 1, 2))
    s = simulate_intensities(b, SimulationConfig(4, 2, seed=0))
    lines = s.to_csv().splitlines()
    assert lines[0] == "trial,setting_pair,outcome_label,value"
    assert len(lines) == 1 + 2 * 4
    assert lines[1].split(",")[:3] == ["1", "1:1", "A:1:0"]


def test_ks_pvalue_limits():
    rng = np.random.default_rng(0)
    x = rng.normal(size=5000)
    assert ks_pvalue(x, 1.0) > 0.01
    assert ks_pvalue(x + 0.3, 1.0) < 1e-6
    # lattice data: counts over sqrt(N) for a binomial
    n = 2500
    lat = (rng.binomial(n, 0.5, size=5000) - n / 2) / math.sqrt(n)
    assert ks_pvalue(lat, 0.5, 1 / math.sqrt(n)) > 0.01


def test_error_scales_like_inverse_root_t():
    b = singlet_behavior(*CHSH_OPTIMAL_ANGLES)
    exact = analytic_covariance(b, 0, 0).matrix

    def max_error(trials, seed):
        s = simulate_intensities(b, SimulationConfig(1000, trials, seed=seed))
        return float(np.max(np.abs(empirical_covariance(s).matrix - exact)))

    # each estimate averages several independent seeds so the ratio is stable
    small = np.mean([max_error(1_000, 1000 + k) for k in range(40)])
    big = np.mean([max_error(100_000, k) for k in range(4)])
    assert 5 <= small / big <= 20
