"""
Verification Suites Module
Batteries of oracle checks consumed by `verify` and by the test modules
"""

import itertools
import math
from dataclasses import dataclass, asdict
from typing import Callable, Dict, List

import numpy as np

from src.agents_envs import (
    VotingTaskEnv, EnvSpec, accuracy_policy, make_pivotal_env, spawn_rngs,
)
from src.oracles.estimators import (
    EstimatorSpec, baseline_search, exact_gradient, exact_optimal_baseline, mc_gradient,
    variance_comparison,
)
from src.oracles.scenarios import (
    freerider_scenario, random_scenario, strong_partner_scenario, unbiasedness_battery,
)
from src.oracles.trust_region import (
    block_gain_check, c_gamma, clip_kl_check, induced_mdp, max_state_kl, perturb_policy,
    policy_improvement_step, random_mdp, random_policy,
)
from src.topologies.voting import collect_votes, counterfactual_rewards, is_pivotal
from src.logger import get_logger

logger = get_logger('Verification')

Z_BOUND = 4.0
SWEEP_SCOPE = (
    'voting panels with K in {2, 3} and independently paired dyads; '
    'excluded: common-pairing dyads and K >= 4 panels, where the variance condition '
    'does not by itself order the two variances'
)


@dataclass(frozen=True)
class VerificationResult:
    name: str
    passed: bool
    measured: float
    bound: float
    detail: str = ''

    def to_dict(self) -> dict:
        return asdict(self)


def _max_z(mean: np.ndarray, se: np.ndarray, target: np.ndarray) -> float:
    """Largest componentwise |mean - target| / SE; exact agreement with zero SE scores 0"""
    diff = np.abs(mean - target)
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 1e-12, np.inf, 0.0))
    return float(z.max()) if z.size else 0.0


def unbiasedness_suite(rng: np.random.Generator, samples: int = 10 ** 5) -> List[VerificationResult]:
    """Shared and counterfactual MC means against the enumerated gradient; E[g R_cf] against 0"""
    results = []
    for scenario in unbiasedness_battery(rng):
        target = exact_gradient(scenario)
        for kind in ('shared', 'counterfactual'):
            estimate = mc_gradient(EstimatorSpec(kind, samples), scenario, rng)
            z = _max_z(estimate.mean, estimate.standard_error, target)
            results.append(VerificationResult(f'unbiasedness/{scenario.name}/{kind}', z <= Z_BOUND, z, Z_BOUND))

        rows = scenario.draw(samples, rng)
        values = scenario.scores[rows] * scenario.cf_rewards[rows][:, None]
        se = values.std(axis=0, ddof=1) / math.sqrt(samples)
        z = _max_z(values.mean(axis=0), se, np.zeros(values.shape[1]))
        results.append(VerificationResult(f'unbiasedness/{scenario.name}/baseline-term', z <= Z_BOUND, z, Z_BOUND))
    return results


def variance_suite(rng: np.random.Generator, samples: int = 10 ** 5, sweep: int = 100) -> List[VerificationResult]:
    """Strong-partner separation, freerider zero variance and the randomized implication sweep"""
    results = []
    report = variance_comparison(strong_partner_scenario(), rng, samples, bootstrap=True)
    results.append(VerificationResult(
        'variance/strong-partner', report.condition_holds and report.separated and report.implication_holds,
        report.var_cf - report.var_shared, 0.0,
        f'var_cf={report.var_cf:.6g} var_shared={report.var_shared:.6g} ci=[{report.ci_low:.3g}, {report.ci_high:.3g}]',
    ))

    freerider = variance_comparison(freerider_scenario(), rng, samples)
    results.append(VerificationResult(
        'variance/freerider', freerider.var_cf == 0.0 and freerider.var_cf <= freerider.var_shared,
        freerider.var_cf, 0.0, f'var_shared={freerider.var_shared:.6g}',
    ))

    violations = 0
    for _ in range(sweep):
        if not variance_comparison(random_scenario(rng), rng, samples).implication_holds:
            violations += 1
    results.append(VerificationResult('variance/implication-sweep', violations == 0, violations, 0,
                                      f'{sweep} randomized scenarios over {SWEEP_SCOPE}'))
    return results


def baseline_suite(rng: np.random.Generator, samples: int = 10 ** 5) -> List[VerificationResult]:
    """Ratio formula for b* against the grid argmin of empirical variance"""
    results = []
    for scenario in unbiasedness_battery(rng):
        report = baseline_search(scenario, rng, samples)
        gap = abs(report.formula - report.grid_argmin)
        results.append(VerificationResult(
            f'baseline/{scenario.name}', report.agree, gap, 0.02,
            f'formula={report.formula:.4f} grid={report.grid_argmin:.2f} exact={exact_optimal_baseline(scenario):.4f}',
        ))
    return results


def kl_suite(rng: np.random.Generator, trials: int = 10 ** 4, clip_eps: float = 0.2) -> List[VerificationResult]:
    """Ratio-bounded policy pairs never exceed the clip-induced KL bound"""
    example = clip_kl_check([0.5, 0.5], [0.6, 0.4], clip_eps)
    results = [VerificationResult('kl/example', example.ratio_in_bounds and example.holds, example.kl, example.bound)]

    violations = accepted = 0
    worst = 0.0
    while accepted < trials:
        actions = int(rng.integers(2, 9))
        old = rng.dirichlet(np.ones(actions))
        new = old * (1.0 + clip_eps * rng.uniform(-1.0, 1.0, actions))
        new /= new.sum()
        check = clip_kl_check(old, new, clip_eps)
        if not check.ratio_in_bounds:
            continue
        accepted += 1
        worst = max(worst, check.kl)
        violations += not check.holds
    results.append(VerificationResult('kl/randomized', violations == 0, violations, 0,
                                      f'{trials} pairs, max KL {worst:.6g} vs bound {example.bound:.6f}'))
    return results


def trust_region_suite(rng: np.random.Generator, trials: int = 500) -> List[VerificationResult]:
    """Block-update gain bound on random MDPs and on an induced voting MDP"""
    closed_form = 2 * 0.9 * math.sqrt(2) / 0.01
    results = [VerificationResult('trust-region/c-gamma', abs(c_gamma(0.9) - closed_form) <= 1e-9,
                                  c_gamma(0.9), closed_form)]

    violations = 0
    for trial in range(trials):
        gamma = (0.5, 0.9)[trial % 2]
        states = int(rng.integers(2, 9))
        actions = int(rng.integers(2, 9))
        mdp = random_mdp(rng, states, actions, gamma)
        old = random_policy(rng, states, actions)
        if trial % 4 < 2:
            new = perturb_policy(old, rng, float(rng.uniform(0.0, 0.5)))
        else:
            new = policy_improvement_step(mdp, old, float(rng.uniform(0.0, 1.0)))
        report = block_gain_check(mdp, old, new, max_state_kl(old, new))
        violations += not report.holds
    results.append(VerificationResult('trust-region/random-mdps', violations == 0, violations, 0,
                                      f'{trials} MDPs, gamma in (0.5, 0.9)'))

    env = make_pivotal_env()
    policies = EnvSpec(preset='pivotal').build_policies(env)
    mdp = induced_mdp(env, policies, active=2, gamma=0.9)
    old = policies[2].all_probs()
    new = policy_improvement_step(mdp, old, 0.5)
    report = block_gain_check(mdp, old, new, max_state_kl(old, new))
    results.append(VerificationResult('trust-region/induced-voting-mdp', report.holds, report.lhs, report.rhs,
                                      f'delta_L={report.delta_l:.6g}'))
    return results


def pivotality_suite(rng: np.random.Generator, samples: int = 10 ** 5) -> List[VerificationResult]:
    """Exhaustive delta/pivotality equivalence, majority lift and pivotal rate"""
    exceptions = 0
    for answers_count in (2, 3, 4):
        for answers in itertools.product(range(answers_count), repeat=3):
            for truth in range(answers_count):
                _, _, deltas = counterfactual_rewards(answers, truth)
                for i in range(3):
                    exceptions += (deltas[i] != 0) != is_pivotal(answers, truth, i)
    results = [VerificationResult('pivotality/equivalence', exceptions == 0, exceptions, 0, 'K=3, |A| <= 4')]

    p = 0.6
    env = VotingTaskEnv(1, 2, 3, [0])
    policies = [accuracy_policy(1, 2, [0], p) for _ in range(3)]
    batch = collect_votes(env, policies, [0], samples, rng)
    expected = 3 * p ** 2 - 2 * p ** 3
    z = abs(batch.team_rewards.mean() - expected) / math.sqrt(expected * (1 - expected) / samples)
    results.append(VerificationResult('pivotality/majority-lift', z <= 3.0, float(batch.team_rewards.mean()),
                                      expected, f'z={z:.3f}'))

    env = make_pivotal_env()
    policies = EnvSpec(preset='pivotal').build_policies(env)
    exact = _exact_pivotal_rate(env, policies, agent=2)
    batch = collect_votes(env, policies, [0], samples, rng)
    pivotal = (batch.deltas[0, :, 2] != 0).astype(float)
    se = pivotal.std(ddof=1) / math.sqrt(samples)
    z = abs(pivotal.mean() - exact) / se if se > 0 else 0.0
    results.append(VerificationResult('pivotality/pivotal-rate', z <= 3.0, float(pivotal.mean()), exact,
                                      f'z={z:.3f}'))
    return results


def _exact_pivotal_rate(env: VotingTaskEnv, policies, agent: int, prompt: int = 0) -> float:
    tables = [p.probs(prompt) for p in policies]
    rate = 0.0
    for answers in itertools.product(range(env.answers), repeat=env.agents):
        if is_pivotal(answers, env.truth[prompt], agent):
            rate += float(np.prod([t[a] for t, a in zip(tables, answers)]))
    return rate


SUITES: Dict[str, Callable[[np.random.Generator], List[VerificationResult]]] = {
    'unbiasedness': unbiasedness_suite,
    'variance': variance_suite,
    'baseline': baseline_suite,
    'kl': kl_suite,
    'trust-region': trust_region_suite,
    'pivotality': pivotality_suite,
}


def run_suites(suite: str, seed: int) -> List[VerificationResult]:
    """
    Run one suite or 'all'

    Each suite draws from its own Philox stream split from the seed, so a
    suite's results do not depend on which other suites ran.
    """
    names = list(SUITES) if suite == 'all' else [suite]
    streams = dict(zip(SUITES, spawn_rngs(seed, len(SUITES))))
    results = []
    for name in names:
        logger.info(f"Running verification suite '{name}' (seed {seed})")
        for result in SUITES[name](streams[name]):
            logger.log_verification(result)
            results.append(result)
    return results
