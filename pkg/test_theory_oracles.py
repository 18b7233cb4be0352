"""
Tests for the theory oracles: exact and Monte Carlo gradients, baselines,
variance comparisons, clip-KL and block-update bounds
"""

import math
import sys

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.agents_envs import (
    EnvSpec, LogLinearPolicy, VotingTaskEnv, make_hint_env, make_pivotal_env, make_rng,
)
from src.oracles.estimators import (
    EstimatorSpec, baseline_search, exact_gradient, exact_optimal_baseline, mc_gradient,
    variance_comparison,
)
from src.oracles.scenarios import (
    OracleRefusal, coupled_answers, freerider_scenario, hint_scenario, random_scenario,
    strong_partner_scenario, voting_scenario,
)
from src.oracles.trust_region import (
    PreconditionError, TabularMDP, block_gain_check, c_gamma, clip_kl_check, induced_mdp,
    max_state_kl, perturb_policy, random_mdp, random_policy,
)
from src.validator import ValidationError
from src.verification import (
    SUITES, baseline_suite, kl_suite, pivotality_suite, run_suites, trust_region_suite,
    unbiasedness_suite, variance_suite,
)
from testing_utils import collect, raises, run_tests


def _bandit_scenario():
    env = VotingTaskEnv(1, 2, 1, [0])
    return voting_scenario(env, [LogLinearPolicy(1, 2)], active=1)


def test_exact_gradient_bandit():
    assert_allclose(exact_gradient(_bandit_scenario()), [0.25, -0.25], atol=1e-15)


def test_exact_gradient_vanishes_without_influence():
    assert_allclose(exact_gradient(freerider_scenario()), 0.0, atol=1e-15)


def test_scenario_probabilities_sum_to_one():
    rng = make_rng(0)
    for scenario in (freerider_scenario(), hint_scenario(rng, pairing='common'), strong_partner_scenario()):
        assert_allclose(scenario.probs.sum(), 1.0, atol=1e-12)
        assert scenario.scores.shape[0] == scenario.outcome_count


def test_coupled_answers():
    assert_allclose(coupled_answers(np.array([0.3, 0.7]), np.array([0.3, 0.7])), [[0.3, 0.0], [0.0, 0.7]])
    assert_allclose(coupled_answers(np.array([0.5, 0.5]), np.array([1.0, 0.0])), [[0.5, 0.0], [0.5, 0.0]])
    rng = make_rng(1)
    for _ in range(50):
        a, b = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        joint = coupled_answers(a, b)
        assert_allclose(joint.sum(axis=1), a, atol=1e-12)
        assert_allclose(joint.sum(axis=0), b, atol=1e-12)


def test_enumeration_cap_refuses():
    env = make_pivotal_env()
    policies = EnvSpec(preset='pivotal').build_policies(env)
    with raises(OracleRefusal, 'cap'):
        voting_scenario(env, policies, active=1, max_outcomes=4)


def test_freerider_counterfactual_estimator_is_exact():
    estimate = mc_gradient(EstimatorSpec('counterfactual', 500), freerider_scenario(), make_rng(2))
    assert_array_equal(estimate.mean, 0.0)
    assert estimate.variance == 0.0


def test_mc_gradient_unbiased():
    rng = make_rng(3)
    scenario = hint_scenario(rng, pairing='independent')
    target = exact_gradient(scenario)
    for kind in ('shared', 'counterfactual'):
        estimate = mc_gradient(EstimatorSpec(kind, 20000), scenario, rng)
        assert np.all(np.abs(estimate.mean - target) <= 4 * estimate.standard_error + 1e-12)


def test_estimator_spec_validation():
    with raises(ValidationError):
        EstimatorSpec('advantage', 10)
    with raises(ValidationError):
        EstimatorSpec('shared', 1)


def test_baseline_formula_matches_grid():
    rng = make_rng(4)
    scenario = strong_partner_scenario()
    report = baseline_search(scenario, rng, samples=50000)
    assert report.agree
    assert abs(report.formula - exact_optimal_baseline(scenario)) <= 0.02


def test_strong_partner_variance_separation():
    report = variance_comparison(strong_partner_scenario(), make_rng(5), samples=20000,
                                 bootstrap=True, resamples=200)
    assert report.condition_holds
    assert report.var_cf < report.var_shared
    assert report.separated
    assert report.implication_holds


def test_freerider_variance_is_zero():
    report = variance_comparison(freerider_scenario(), make_rng(6), samples=2000)
    assert report.var_cf == 0.0
    assert report.var_shared > 0.0


def test_random_scenarios_satisfy_implication():
    rng = make_rng(7)
    for _ in range(10):
        assert variance_comparison(random_scenario(rng), rng, samples=5000).implication_holds


def test_clip_kl_example():
    check = clip_kl_check([0.5, 0.5], [0.6, 0.4], 0.2)
    assert check.ratio_in_bounds and check.holds
    assert_allclose(check.kl, 0.020411, atol=1e-6)
    assert_allclose(check.bound, 0.223144, atol=1e-6)

    outside = clip_kl_check([0.5, 0.5], [0.9, 0.1], 0.2)
    assert not outside.ratio_in_bounds
    assert outside.holds

    with raises(ValidationError):
        clip_kl_check([0.5, 0.6], [0.5, 0.5])


def test_c_gamma():
    assert_allclose(c_gamma(0.9), 254.558, atol=1e-3)
    with raises(ValidationError):
        c_gamma(1.0)


def test_block_gain_identity():
    rng = make_rng(8)
    mdp = random_mdp(rng, 3, 2, 0.9)
    pi = random_policy(rng, 3, 2)
    report = block_gain_check(mdp, pi, pi, 0.0)
    assert abs(report.lhs) <= 1e-12 and abs(report.delta_l) <= 1e-12
    assert report.holds


def test_block_gain_random_mdps():
    rng = make_rng(9)
    for trial in range(40):
        gamma = (0.5, 0.9)[trial % 2]
        mdp = random_mdp(rng, int(rng.integers(2, 6)), int(rng.integers(2, 5)), gamma)
        old = random_policy(rng, mdp.states, mdp.actions)
        new = perturb_policy(old, rng, 0.3)
        assert block_gain_check(mdp, old, new, max_state_kl(old, new)).holds


def test_block_gain_preconditions():
    rng = make_rng(10)
    mdp = random_mdp(rng, 3, 3, 0.5)
    old = random_policy(rng, 3, 3)
    new = perturb_policy(old, rng, 1.0)
    with raises(PreconditionError, 'delta_kl'):
        block_gain_check(mdp, old, new, 0.5 * max_state_kl(old, new))
    big = random_mdp(rng, 9, 8, 0.5)
    pi = random_policy(rng, 9, 8)
    with raises(ValidationError, 'exceeds'):
        block_gain_check(big, pi, pi, 0.0)


def test_tabular_mdp_validation():
    with raises(ValidationError):
        TabularMDP(np.full((2, 2, 2), 0.4), np.zeros((2, 2)), 0.9, [0.5, 0.5])
    with raises(ValidationError):
        TabularMDP(np.full((2, 2, 2), 0.5), np.zeros((2, 2)), 1.0, [0.5, 0.5])


def test_tabular_value_matches_geometric_series():
    mdp = TabularMDP(np.full((1, 2, 1), 1.0), [[1.0, 0.0]], 0.9, [1.0])
    assert_allclose(mdp.objective([[1.0, 0.0]]), 10.0, rtol=1e-12)
    assert_allclose(mdp.objective([[0.5, 0.5]]), 5.0, rtol=1e-12)


def test_induced_voting_mdp():
    env = make_pivotal_env()
    policies = EnvSpec(preset='pivotal').build_policies(env)
    mdp = induced_mdp(env, policies, active=2, gamma=0.9)
    for p in range(env.prompts):
        truth = env.truth[p]
        assert_allclose(mdp.reward[p, truth], 0.99, atol=1e-12)
        assert_allclose(mdp.reward[p, 1 - truth], 0.81, atol=1e-12)
    with raises(ValidationError, 'Agent 1'):
        induced_mdp(make_hint_env(), EnvSpec(preset='hint').build_policies(), active=1, gamma=0.9)


def test_suites_pass_at_small_sizes():
    rng = make_rng(11)
    checks = [
        unbiasedness_suite(rng, samples=5000),
        variance_suite(rng, samples=5000, sweep=10),
        baseline_suite(rng, samples=50000),
        kl_suite(rng, trials=500),
        trust_region_suite(rng, trials=40),
        pivotality_suite(rng, samples=20000),
    ]
    for results in checks:
        assert results
        for result in results:
            assert result.passed, result


def test_variance_sweep_states_its_scope():
    sweep = [r for r in variance_suite(make_rng(14), samples=500, sweep=2)
             if r.name == 'variance/implication-sweep']
    assert len(sweep) == 1
    detail = sweep[0].detail
    assert detail.startswith('2 randomized scenarios')
    assert 'K in {2, 3}' in detail and 'independently paired' in detail
    assert 'excluded: common-pairing dyads and K >= 4 panels' in detail


def test_run_suites_selects_one():
    results = run_suites('kl', 3)
    assert all(r.name.startswith('kl/') for r in results)
    assert set(SUITES) == {'unbiasedness', 'variance', 'baseline', 'kl', 'trust-region', 'pivotality'}
    assert math.isfinite(results[0].measured)


def main():
    return run_tests("THEORY ORACLE TESTS", collect(globals()))


if __name__ == '__main__':
    sys.exit(main())
