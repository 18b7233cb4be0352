"""
Counterfactual credit machinery
Marginal contributions, EMA statistics, shaped rewards, group-relative
advantages and the clipped surrogate term, independent of topology.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from src.validator import Validator, ValidationError
from src.logger import get_logger

logger = get_logger('CreditCore')

DEFAULT_EPSILON = 1e-8

# Largest double below 1; saturated tanh/sigmoid values are pinned here.
UNIT_CEIL = float(np.nextafter(1.0, 0.0))

ArrayLike = Union[float, Sequence[float], np.ndarray]


def marginal_contribution(team_reward: float, counterfactual_reward: float) -> float:
    """
    Credit of one agent on one rollout: team reward minus counterfactual reward

    Raises:
        ValidationError: If either reward is not finite
    """
    team_reward = Validator.validate_finite('team_reward', team_reward)
    counterfactual_reward = Validator.validate_finite('counterfactual_reward', counterfactual_reward)
    return team_reward - counterfactual_reward


@dataclass
class MarginalContribution:
    """Delta of one (agent, rollout) pair"""
    agent_id: int
    rollout_id: int
    team_reward: float
    counterfactual_reward: float
    delta: float = field(init=False)

    def __post_init__(self):
        self.delta = marginal_contribution(self.team_reward, self.counterfactual_reward)


@dataclass
class RunningStats:
    """
    Exponential moving average of a reward stream's mean and variance.

    Standardization treats the stats as (mean 0, std 1) until
    observed_count reaches min_samples.
    """
    mean: float = 0.0
    variance: float = 0.0
    decay: float = 0.99
    observed_count: int = 0
    min_samples: int = 50

    def __post_init__(self):
        Validator.validate_open_unit('decay', self.decay)
        Validator.validate_int_range('min_samples', self.min_samples, 1)
        if self.variance < 0:
            raise ValidationError(f"Invalid variance: {self.variance}. Must be >= 0", 'variance')

    @property
    def active(self) -> bool:
        return self.observed_count >= self.min_samples

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def update(self, batch_values: ArrayLike) -> 'RunningStats':
        """Fold one batch into the EMA (population batch variance)"""
        return ema_update(self, batch_values)

    def copy(self) -> 'RunningStats':
        return RunningStats(self.mean, self.variance, self.decay, self.observed_count, self.min_samples)


def ema_update(stats: RunningStats, batch_values: ArrayLike) -> RunningStats:
    """
    Update EMA statistics in place with one batch and return them

    Args:
        stats: Statistics to update (single writer)
        batch_values: Non-empty batch of finite reals

    Returns:
        The same RunningStats instance

    Raises:
        ValidationError: If the batch is empty or holds a non-finite value
    """
    values = np.asarray(batch_values, dtype=float).ravel()
    if values.size == 0:
        logger.log_validation_error('batch_values', '[]', 'Must not be empty')
        raise ValidationError("Invalid batch_values: empty batch", 'batch_values')
    if not np.all(np.isfinite(values)):
        logger.log_validation_error('batch_values', values.tolist(), 'Must be finite')
        raise ValidationError("Invalid batch_values: non-finite entry", 'batch_values')

    lam = stats.decay
    stats.mean = lam * stats.mean + (1.0 - lam) * float(values.mean())
    stats.variance = max(0.0, lam * stats.variance + (1.0 - lam) * float(values.var()))
    stats.observed_count += int(values.size)
    return stats


def standardize(delta: ArrayLike, stats: RunningStats, epsilon: float = DEFAULT_EPSILON):
    """
    z = (delta - mean) / (std + epsilon), or delta unchanged before activation

    Works elementwise on arrays.
    """
    Validator.validate_positive('epsilon', epsilon)
    if not stats.active:
        return delta if np.isscalar(delta) else np.asarray(delta, dtype=float)
    z = (np.asarray(delta, dtype=float) - stats.mean) / (stats.std + epsilon)
    return float(z) if np.ndim(z) == 0 else z


@dataclass(frozen=True)
class ShapingConfig:
    """Sensitivity alpha and numerical guard epsilon for reward shaping"""
    alpha: float = 1.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        Validator.validate_positive('alpha', self.alpha)
        Validator.validate_positive('epsilon', self.epsilon)


def shape(z: ArrayLike, alpha: float = 1.0):
    """Bounded shaped reward tanh(alpha * z), strictly inside (-1, 1)"""
    Validator.validate_positive('alpha', alpha)
    r = np.clip(np.tanh(alpha * np.asarray(z, dtype=float)), -UNIT_CEIL, UNIT_CEIL)
    return float(r) if np.ndim(r) == 0 else r


def group_advantage(shaped_rewards: ArrayLike, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """
    Within-prompt group-relative advantages

    Subtracts the group mean and divides by the sample (N-1) standard deviation
    plus epsilon. A constant group yields exact zeros.

    Raises:
        ValidationError: If the group has fewer than 2 members
    """
    Validator.validate_positive('epsilon', epsilon)
    rewards = np.asarray(shaped_rewards, dtype=float).ravel()
    Validator.validate_group_size('samples_per_prompt', rewards.size)

    if np.all(rewards == rewards[0]):
        return np.zeros_like(rewards)
    return (rewards - rewards.mean()) / (rewards.std(ddof=1) + epsilon)


@dataclass
class AdvantageBatch:
    """Shaped rewards and normalized advantages for one agent on one prompt"""
    shaped_rewards: np.ndarray
    advantages: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    @classmethod
    def from_shaped(cls, shaped_rewards: ArrayLike, epsilon: float = DEFAULT_EPSILON) -> 'AdvantageBatch':
        shaped = np.asarray(shaped_rewards, dtype=float).ravel()
        return cls(shaped, group_advantage(shaped, epsilon), epsilon)

    def __len__(self):
        return len(self.advantages)


def shaped_advantages(deltas: ArrayLike, stats: RunningStats, shaping: ShapingConfig,
                      update_stats: bool = True) -> AdvantageBatch:
    """
    standardize -> shape -> group_advantage for one agent on one prompt

    Statistics are read before they are updated with this group.
    """
    deltas = np.asarray(deltas, dtype=float).ravel()
    z = standardize(deltas, stats, shaping.epsilon)
    batch = AdvantageBatch.from_shaped(shape(z, shaping.alpha), shaping.epsilon)
    if update_stats:
        ema_update(stats, deltas)
    return batch


def _validate_ratio(ratio: float, clip_eps: float) -> float:
    ratio = Validator.validate_finite('ratio', ratio)
    if ratio <= 0:
        logger.log_validation_error('ratio', ratio, 'Must be greater than 0')
        raise ValidationError(f"Invalid ratio: {ratio}. Must be greater than 0", 'ratio')
    Validator.validate_open_unit('clip_eps', clip_eps)
    return ratio


def clipped_surrogate(ratio: float, advantage: float, clip_eps: float = 0.2) -> float:
    """
    Clipped policy-gradient loss term: -min(rA, clip(r, 1-eps, 1+eps) A)

    Raises:
        ValidationError: If ratio <= 0 or clip_eps outside (0, 1)
    """
    ratio = _validate_ratio(ratio, clip_eps)
    clipped = min(max(ratio, 1.0 - clip_eps), 1.0 + clip_eps)
    return -min(ratio * advantage, clipped * advantage)


def clipped_surrogate_grad(ratio: ArrayLike, advantage: ArrayLike, clip_eps: float = 0.2):
    """
    Derivative of the surrogate objective min(rA, clip(r)A) with respect to r

    Zero on the clipped branch, the advantage otherwise. Accepts scalars or
    equally shaped arrays.

    Raises:
        ValidationError: If a ratio is non-finite or <= 0, or clip_eps outside (0, 1)
    """
    Validator.validate_open_unit('clip_eps', clip_eps)
    ratios = np.asarray(ratio, dtype=float)
    advantages = np.asarray(advantage, dtype=float)
    bad = ~np.isfinite(ratios) | (ratios <= 0)
    if np.any(bad):
        value = ratios[bad][0] if ratios.ndim else float(ratios)
        logger.log_validation_error('ratio', value, 'Must be finite and greater than 0')
        raise ValidationError(f"Invalid ratio: {value}. Must be finite and greater than 0", 'ratio')

    clipped = ((advantages > 0) & (ratios > 1.0 + clip_eps)) | ((advantages < 0) & (ratios < 1.0 - clip_eps))
    grad = np.where(clipped, 0.0, advantages)
    return float(grad) if grad.ndim == 0 else grad
