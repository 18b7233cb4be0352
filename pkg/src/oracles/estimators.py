"""
Gradient Estimator Oracle Module
Exact gradients, Monte Carlo estimators, optimal scalar baselines and
shared-versus-counterfactual variance comparisons
"""

import inspect
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from src.config import TrainingConfig
from src.oracles.scenarios import OracleRefusal, Scenario
from src.validator import Validator
from src.logger import get_logger

logger = get_logger('Estimators')

ESTIMATOR_KINDS = ('shared', 'counterfactual', 'baseline')

BASELINE_TOLERANCE = 0.02

__all__ = [
    'OracleRefusal', 'EstimatorSpec', 'GradientEstimate', 'BaselineReport', 'VarianceReport',
    'exact_gradient', 'mc_gradient', 'optimal_baseline', 'exact_optimal_baseline',
    'baseline_search', 'variance_comparison',
]


@dataclass(frozen=True)
class EstimatorSpec:
    """Which reward multiplies the score: R, R - R_cf, or R - b"""
    kind: str
    samples: int
    baseline: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', Validator.validate_choice('kind', self.kind, ESTIMATOR_KINDS))
        object.__setattr__(self, 'samples', Validator.validate_int_range('samples', self.samples, 2))
        object.__setattr__(self, 'baseline', Validator.validate_finite('baseline', self.baseline))

    def weights(self, scenario: Scenario, rows: np.ndarray) -> np.ndarray:
        team = scenario.team_rewards[rows]
        if self.kind == 'shared':
            return team
        if self.kind == 'counterfactual':
            return team - scenario.cf_rewards[rows]
        return team - self.baseline


def exact_gradient(scenario: Scenario) -> np.ndarray:
    """Sum over outcomes of P(outcome) * R * score"""
    return scenario.probs @ (scenario.team_rewards[:, None] * scenario.scores)


@dataclass(frozen=True)
class GradientEstimate:
    mean: np.ndarray
    variance: float
    standard_error: np.ndarray
    samples: int


def mc_gradient(estimator: EstimatorSpec, scenario: Scenario, rng: np.random.Generator) -> GradientEstimate:
    """
    Monte Carlo mean of the estimator over independent draws

    The variance is the trace of the sample covariance.
    """
    rows = scenario.draw(estimator.samples, rng)
    values = scenario.scores[rows] * estimator.weights(scenario, rows)[:, None]
    per_dim = values.var(axis=0, ddof=1)
    return GradientEstimate(
        mean=values.mean(axis=0),
        variance=float(per_dim.sum()),
        standard_error=np.sqrt(per_dim / estimator.samples),
        samples=estimator.samples,
    )


def exact_optimal_baseline(scenario: Scenario) -> float:
    """b* = E[|g|^2 R] / E[|g|^2] by enumeration"""
    norms = (scenario.scores ** 2).sum(axis=1)
    denominator = float(scenario.probs @ norms)
    if denominator <= 0.0:
        raise OracleRefusal(f"Scenario {scenario.name}: |g|^2 is identically zero")
    return float(scenario.probs @ (norms * scenario.team_rewards)) / denominator


@dataclass(frozen=True)
class BaselineReport:
    formula: float
    grid_argmin: float
    samples: int

    @property
    def agree(self) -> bool:
        return abs(self.formula - self.grid_argmin) <= BASELINE_TOLERANCE


def baseline_search(scenario: Scenario, rng: np.random.Generator, samples: int = 10 ** 4,
                    grid_step: float = 0.01) -> BaselineReport:
    """
    Ratio estimate of b* next to the argmin of empirical Var(g (R - b)) over b in [0, 1]

    Var(b) = S0 - 2 b S1 + b^2 S2 - |u - b v|^2 with S0 = mean(|g|^2 R^2),
    S1 = mean(|g|^2 R), S2 = mean(|g|^2), u = mean(g R), v = mean(g).

    Raises:
        OracleRefusal: If every sampled score is zero
    """
    Validator.validate_int_range('samples', samples, 2)
    rows = scenario.draw(samples, rng)
    g = scenario.scores[rows]
    r = scenario.team_rewards[rows]
    norms = (g ** 2).sum(axis=1)
    s2 = norms.mean()
    if s2 <= 0.0:
        raise OracleRefusal(f"Scenario {scenario.name}: |g|^2 is identically zero")
    s0 = (norms * r ** 2).mean()
    s1 = (norms * r).mean()
    u = (g * r[:, None]).mean(axis=0)
    v = g.mean(axis=0)

    grid = np.round(np.arange(0.0, 1.0 + grid_step / 2, grid_step), 10)
    variance = s0 - 2 * grid * s1 + grid ** 2 * s2 - (u @ u - 2 * grid * (u @ v) + grid ** 2 * (v @ v))
    return BaselineReport(float(s1 / s2), float(grid[np.argmin(variance)]), samples)


def optimal_baseline(scenario: Scenario, rng: np.random.Generator, samples: int = 10 ** 4) -> float:
    return baseline_search(scenario, rng, samples).formula


def _bootstrap_ci(values: np.ndarray, rng: np.random.Generator, resamples: int) -> Tuple[float, float]:
    # scipy renamed random_state to rng in 1.15
    seed_kw = 'rng' if 'rng' in inspect.signature(stats.bootstrap).parameters else 'random_state'
    result = stats.bootstrap((values,), np.mean, n_resamples=resamples, confidence_level=0.95,
                             method='percentile', vectorized=True, batch=50, **{seed_kw: rng})
    return float(result.confidence_interval.low), float(result.confidence_interval.high)


@dataclass(frozen=True)
class VarianceReport:
    var_shared: float
    var_cf: float
    condition_lhs: float
    condition_rhs: float
    baseline: float
    se_difference: float
    ci_low: Optional[float]
    ci_high: Optional[float]
    samples: int

    @property
    def condition_holds(self) -> bool:
        return self.condition_lhs <= self.condition_rhs

    @property
    def implication_holds(self) -> bool:
        """condition_holds implies var_cf <= var_shared + 3 SE"""
        return (not self.condition_holds) or self.var_cf <= self.var_shared + 3.0 * self.se_difference

    @property
    def separated(self) -> bool:
        """Bootstrap 95% CI of var_cf - var_shared lies strictly below zero"""
        return self.ci_high is not None and self.ci_high < 0.0


def variance_comparison(scenario: Scenario, rng: np.random.Generator, samples: int = 10 ** 5,
                        bootstrap: bool = False,
                        resamples: int = TrainingConfig.BOOTSTRAP_RESAMPLES) -> VarianceReport:
    """
    Var(g * Delta) against Var(g * R) on shared draws

    The condition compares E[|g|^2 (R_cf - b*)^2] with E[|g|^2 b*^2], both
    estimated on the same draws. Per-draw variance contributions give the
    standard error of the difference; bootstrap adds a percentile CI.
    """
    Validator.validate_int_range('samples', samples, 2)
    rows = scenario.draw(samples, rng)
    g = scenario.scores[rows]
    r = scenario.team_rewards[rows]
    r_cf = scenario.cf_rewards[rows]
    norms = (g ** 2).sum(axis=1)

    b_star = float((norms * r).sum() / norms.sum()) if norms.sum() > 0 else float(r.mean())
    lhs = float((norms * (r_cf - b_star) ** 2).mean())
    rhs = float((norms * b_star ** 2).mean())

    shared = g * r[:, None]
    counterfactual = g * (r - r_cf)[:, None]
    d_shared = ((shared - shared.mean(axis=0)) ** 2).sum(axis=1)
    d_cf = ((counterfactual - counterfactual.mean(axis=0)) ** 2).sum(axis=1)
    diff = d_cf - d_shared
    se = float(diff.std(ddof=1) / math.sqrt(samples))

    ci_low = ci_high = None
    if bootstrap:
        if np.all(diff == diff[0]):
            ci_low = ci_high = float(diff[0])
        else:
            ci_low, ci_high = _bootstrap_ci(diff, rng, resamples)

    report = VarianceReport(float(d_shared.mean()), float(d_cf.mean()), lhs, rhs, b_star, se,
                            ci_low, ci_high, samples)
    logger.debug(f"Variance comparison {scenario.name}: shared={report.var_shared:.6g} "
                 f"cf={report.var_cf:.6g} condition={report.condition_holds}")
    return report
