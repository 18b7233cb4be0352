"""
Think-Solve Dyad Module
Joint rollouts with solo counterfactuals, Agent-1 marginal credit and
Agent-2's gated fusion of joint and solo reward signals
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import expit

from src.agents_envs import LogLinearPolicy, SequentialTaskEnv
from src.credit_core import (
    AdvantageBatch, RunningStats, ShapingConfig, UNIT_CEIL, DEFAULT_EPSILON,
    ema_update, group_advantage, shaped_advantages, standardize,
)
from src.validator import Validator, ValidationError
from src.logger import get_logger

logger = get_logger('Sequential')

PAIRINGS = ('independent', 'common')

UNIT_FLOOR = float(np.nextafter(0.0, 1.0))


@dataclass(frozen=True)
class SequentialRollout:
    """One joint rollout paired with one solo counterfactual answer"""
    prompt: int
    message: int
    answer: int
    joint_reward: float
    solo_answer: int
    solo_reward: float
    agent1_logprob: float
    agent2_logprob: float
    agent2_solo_logprob: float

    @property
    def delta(self) -> float:
        return self.joint_reward - self.solo_reward


@dataclass
class SequentialBatch:
    """
    Rollouts for B prompts with N samples each, stored as (B, N) arrays

    agent2_contexts are the message-conditioned contexts Agent 2 acted in;
    solo_contexts are the empty-message contexts of the counterfactual answers.
    """
    prompts: np.ndarray
    messages: np.ndarray
    answers: np.ndarray
    solo_answers: np.ndarray
    joint_rewards: np.ndarray
    solo_rewards: np.ndarray
    agent2_contexts: np.ndarray
    solo_contexts: np.ndarray
    agent1_logprobs: np.ndarray
    agent2_logprobs: np.ndarray
    agent2_solo_logprobs: np.ndarray

    @property
    def deltas(self) -> np.ndarray:
        return self.joint_rewards - self.solo_rewards

    def rollouts(self, row: int) -> List[SequentialRollout]:
        return [
            SequentialRollout(
                int(self.prompts[row, j]), int(self.messages[row, j]), int(self.answers[row, j]),
                float(self.joint_rewards[row, j]), int(self.solo_answers[row, j]),
                float(self.solo_rewards[row, j]), float(self.agent1_logprobs[row, j]),
                float(self.agent2_logprobs[row, j]), float(self.agent2_solo_logprobs[row, j]),
            )
            for j in range(self.prompts.shape[1])
        ]


def draw_pairs(env: SequentialTaskEnv, policy1: LogLinearPolicy, policy2: LogLinearPolicy,
               prompts, samples: int, rng: np.random.Generator,
               pairing: str = 'independent') -> SequentialBatch:
    """
    Sample N joint rollouts and N solo answers for each prompt

    Draw order: one uniform per rollout for every message, then one per
    rollout for every joint answer, then (independent pairing only) one per
    rollout for every solo answer. With common pairing the solo answer reuses
    the joint answer's uniform, so solo and joint answers coincide whenever
    the two Agent-2 contexts carry the same distribution.

    Args:
        env: Sequential task
        policy1: Message sender over (prompt) contexts
        policy2: Answerer over env.agent2_contexts
        prompts: Prompt ids, one row per prompt
        samples: Rollouts per prompt (N >= 2)
        rng: Generator
        pairing: 'common' or 'independent'
    """
    Validator.validate_group_size('samples_per_prompt', samples)
    pairing = Validator.validate_choice('solo_pairing', pairing, PAIRINGS)
    if policy1.contexts != env.prompts or policy1.actions != env.messages:
        raise ValidationError("policy1 shape does not match (prompts, messages)", 'policy1')
    if policy2.contexts != env.agent2_contexts or policy2.actions != env.answers:
        raise ValidationError("policy2 shape does not match (agent2_contexts, answers)", 'policy2')

    prompts = np.repeat(np.asarray(prompts, dtype=int).ravel(), samples)
    shape = (prompts.size // samples, samples)

    messages = policy1.sample_many(prompts, rng)
    ctx2 = env.agent2_context_many(prompts, messages)
    u_joint = rng.random(prompts.size)
    answers = policy2.sample_many(ctx2, rng, uniforms=u_joint)

    solo_ctx = env.agent2_context_many(prompts)
    u_solo = u_joint if pairing == 'common' else rng.random(prompts.size)
    solo_answers = policy2.sample_many(solo_ctx, rng, uniforms=u_solo)

    logp1 = policy1.all_log_probs()
    logp2 = policy2.all_log_probs()
    return SequentialBatch(
        prompts=prompts.reshape(shape),
        messages=messages.reshape(shape),
        answers=answers.reshape(shape),
        solo_answers=solo_answers.reshape(shape),
        joint_rewards=env.rewards(prompts, answers).reshape(shape),
        solo_rewards=env.rewards(prompts, solo_answers).reshape(shape),
        agent2_contexts=ctx2.reshape(shape),
        solo_contexts=solo_ctx.reshape(shape),
        agent1_logprobs=logp1[prompts, messages].reshape(shape),
        agent2_logprobs=logp2[ctx2, answers].reshape(shape),
        agent2_solo_logprobs=logp2[solo_ctx, solo_answers].reshape(shape),
    )


def collect_pairs(env: SequentialTaskEnv, policy1: LogLinearPolicy, policy2: LogLinearPolicy,
                  prompt: int, samples: int, rng: np.random.Generator,
                  pairing: str = 'independent') -> List[SequentialRollout]:
    """N rollouts for one prompt; the j-th joint sample is paired with the j-th solo sample"""
    prompt = Validator.validate_index('prompt', prompt, env.prompts)
    return draw_pairs(env, policy1, policy2, [prompt], samples, rng, pairing).rollouts(0)


@dataclass
class GateState:
    """EMA statistics behind Agent 2's trust gate"""
    delta_stats: RunningStats = field(default_factory=RunningStats)
    joint_stats: RunningStats = field(default_factory=RunningStats)
    solo_stats: RunningStats = field(default_factory=RunningStats)
    eta: float = 1.0

    def __post_init__(self):
        Validator.validate_positive('eta', self.eta)

    @classmethod
    def create(cls, decay: float = 0.99, min_samples: int = 50, eta: float = 1.0) -> 'GateState':
        return cls(RunningStats(decay=decay, min_samples=min_samples),
                   RunningStats(decay=decay, min_samples=min_samples),
                   RunningStats(decay=decay, min_samples=min_samples), eta)


def trust_gate(gate: GateState, epsilon: float = DEFAULT_EPSILON) -> float:
    """
    g = sigmoid(eta * mu / (sigma + epsilon)) from the Agent-1 delta statistics

    Returns 0.5 until the delta statistics are active. Always strictly inside (0, 1).
    """
    Validator.validate_positive('epsilon', epsilon)
    stats = gate.delta_stats
    if not stats.active:
        return 0.5
    g = expit(gate.eta * stats.mean / (stats.std + epsilon))
    return float(np.clip(g, UNIT_FLOOR, UNIT_CEIL))


def agent1_advantages(rollouts: List[SequentialRollout], delta_stats: RunningStats,
                      shaping: ShapingConfig, update_stats: bool = True) -> AdvantageBatch:
    if not rollouts:
        raise ValidationError("rollouts must not be empty", 'rollouts')
    return shaped_advantages([r.delta for r in rollouts], delta_stats, shaping, update_stats)


def fused_scores(joint_rewards, solo_rewards, gate: GateState, gate_value: float,
                 epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """r2 = g * z_joint + (1 - g) * z_solo"""
    z_joint = standardize(np.asarray(joint_rewards, dtype=float), gate.joint_stats, epsilon)
    z_solo = standardize(np.asarray(solo_rewards, dtype=float), gate.solo_stats, epsilon)
    return gate_value * z_joint + (1.0 - gate_value) * z_solo


def agent2_advantages(rollouts: List[SequentialRollout], gate: GateState,
                      epsilon: float = DEFAULT_EPSILON, gate_value: Optional[float] = None,
                      update_stats: bool = True) -> AdvantageBatch:
    """
    Group-relative advantages of the fused joint/solo score

    Args:
        rollouts: One prompt's N rollouts
        gate: Gate statistics, read before being updated
        epsilon: Numerical guard
        gate_value: Fixed g in [0, 1]; defaults to trust_gate(gate)
        update_stats: Fold this group into joint_stats and solo_stats
    """
    if not rollouts:
        raise ValidationError("rollouts must not be empty", 'rollouts')
    if gate_value is None:
        gate_value = trust_gate(gate, epsilon)
    else:
        gate_value = Validator.validate_closed_unit('gate_value', gate_value)

    joint = [r.joint_reward for r in rollouts]
    solo = [r.solo_reward for r in rollouts]
    batch = AdvantageBatch.from_shaped(fused_scores(joint, solo, gate, gate_value, epsilon), epsilon)
    if update_stats:
        ema_update(gate.joint_stats, joint)
        ema_update(gate.solo_stats, solo)
    return batch


@dataclass
class SequentialCredit:
    """Per-agent (B, N) advantages for one batch plus report values"""
    advantages: List[np.ndarray]
    mean_deltas: List[float]
    gate_value: float


def batch_advantages(batch: SequentialBatch, gate: GateState, shaping: ShapingConfig,
                     credit_mode: str = 'ccpo') -> SequentialCredit:
    """
    Advantages for both agents over a whole batch

    Every prompt is standardized with the pre-update statistics and the
    gate value is fixed for the batch; all three EMAs then absorb the batch once.
    Shared mode gives both agents the group-normalized team reward.
    The reported Agent-2 delta is the mean joint reward (no answer scores 0).
    """
    eps = shaping.epsilon
    g = trust_gate(gate, eps)
    rows = range(batch.prompts.shape[0])

    if credit_mode == 'shared':
        shared = np.stack([group_advantage(batch.joint_rewards[b], eps) for b in rows])
        advantages = [shared, shared.copy()]
    else:
        a1 = np.stack([
            shaped_advantages(batch.deltas[b], gate.delta_stats, shaping, update_stats=False).advantages
            for b in rows
        ])
        a2 = np.stack([
            group_advantage(fused_scores(batch.joint_rewards[b], batch.solo_rewards[b], gate, g, eps), eps)
            for b in rows
        ])
        advantages = [a1, a2]

    ema_update(gate.delta_stats, batch.deltas)
    ema_update(gate.joint_stats, batch.joint_rewards)
    ema_update(gate.solo_stats, batch.solo_rewards)

    return SequentialCredit(
        advantages=advantages,
        mean_deltas=[float(batch.deltas.mean()), float(batch.joint_rewards.mean())],
        gate_value=g,
    )
