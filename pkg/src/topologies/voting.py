"""
Voting Panel Module
Plurality-or-abstain aggregation, removal counterfactuals that need no extra
sampling, and the direct / allocated advantage schemes
"""

from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from src.agents_envs import ABSTAIN, LogLinearPolicy, VotingTaskEnv
from src.credit_core import (
    AdvantageBatch, RunningStats, ShapingConfig, DEFAULT_EPSILON,
    ema_update, group_advantage, shaped_advantages,
)
from src.validator import Validator, ValidationError
from src.logger import get_logger

logger = get_logger('Voting')

SCHEMES = ('direct', 'allocated')


@dataclass(frozen=True)
class VoteRule:
    """Unique plurality wins, any tie abstains; abstaining always scores 0"""
    kind: str = 'plurality-or-abstain'
    abstain_scores_zero: bool = True


DEFAULT_RULE = VoteRule()


def _decide(answers: Tuple[int, ...]) -> int:
    # An empty panel abstains.
    if not answers:
        return ABSTAIN
    ranked = Counter(answers).most_common(2)
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return ABSTAIN
    return int(ranked[0][0])


def vote(answers: Sequence[int], rule: VoteRule = DEFAULT_RULE) -> int:
    """
    Aggregate a panel's answers

    Raises:
        ValidationError: If answers is empty
    """
    answers = tuple(int(a) for a in answers)
    if not answers:
        logger.log_validation_error('answers', '[]', 'Must not be empty')
        raise ValidationError("Invalid answers: empty panel", 'answers')
    return _decide(answers)


@lru_cache(maxsize=65536)
def panel_outcome(answers: Tuple[int, ...], truth: int) -> Tuple[float, Tuple[float, ...]]:
    team = 1.0 if _decide(answers) == truth else 0.0
    cf = tuple(
        1.0 if _decide(answers[:i] + answers[i + 1:]) == truth else 0.0
        for i in range(len(answers))
    )
    return team, cf


def counterfactual_rewards(answers: Sequence[int], truth: int, rule: VoteRule = DEFAULT_RULE):
    """
    Team reward, per-agent removal rewards and marginal contributions

    Re-applies the vote to the panel minus each agent. No policy is sampled.
    A single-agent panel leaves an empty panel, which abstains.

    Returns:
        (team_reward, cf_rewards, deltas)
    """
    answers = tuple(int(a) for a in answers)
    if not answers:
        raise ValidationError("Invalid answers: empty panel", 'answers')
    team, cf = panel_outcome(answers, int(truth))
    return team, list(cf), [team - c for c in cf]


def is_pivotal(answers: Sequence[int], truth: int, agent: int) -> bool:
    """Removing the agent flips the correctness of the decision"""
    answers = tuple(answers)
    without = answers[:agent] + answers[agent + 1:]
    return (_decide(answers) == truth) != (_decide(without) == truth)


@dataclass(frozen=True)
class VotingRollout:
    prompt: int
    answers: Tuple[int, ...]
    decision: int
    team_reward: float
    per_agent_cf_reward: Tuple[float, ...]
    per_agent_delta: Tuple[float, ...]
    per_agent_logprob: Tuple[float, ...]


@dataclass
class VotingBatch:
    """Rollouts for B prompts with N samples each; agent axis last"""
    prompts: np.ndarray
    answers: np.ndarray
    decisions: np.ndarray
    team_rewards: np.ndarray
    cf_rewards: np.ndarray
    logprobs: np.ndarray

    @property
    def deltas(self) -> np.ndarray:
        return self.team_rewards[..., None] - self.cf_rewards

    def rollouts(self, row: int) -> List[VotingRollout]:
        deltas = self.deltas
        return [
            VotingRollout(
                int(self.prompts[row, j]), tuple(int(a) for a in self.answers[row, j]),
                int(self.decisions[row, j]), float(self.team_rewards[row, j]),
                tuple(float(c) for c in self.cf_rewards[row, j]),
                tuple(float(d) for d in deltas[row, j]),
                tuple(float(lp) for lp in self.logprobs[row, j]),
            )
            for j in range(self.prompts.shape[1])
        ]


def collect_votes(env: VotingTaskEnv, policies: Sequence[LogLinearPolicy], prompts,
                  samples: int, rng: np.random.Generator) -> VotingBatch:
    """
    Sample N panels for each prompt and score them with removal counterfactuals

    Agents draw in order, each consuming one uniform per rollout.
    Counterfactuals are evaluated once per distinct (answers, truth) row.
    """
    Validator.validate_group_size('samples_per_prompt', samples)
    if len(policies) != env.agents:
        raise ValidationError(f"Expected {env.agents} policies, got {len(policies)}", 'policies')

    flat_prompts = np.repeat(np.asarray(prompts, dtype=int).ravel(), samples)
    shape = (flat_prompts.size // samples, samples)

    answers = np.column_stack([p.sample_many(flat_prompts, rng) for p in policies])
    logprobs = np.column_stack([
        p.all_log_probs()[flat_prompts, answers[:, i]] for i, p in enumerate(policies)
    ])

    truth = np.asarray(env.truth)[flat_prompts]
    rows, inverse = np.unique(np.column_stack([answers, truth]), axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    outcomes = [panel_outcome(tuple(int(a) for a in row[:-1]), int(row[-1])) for row in rows]
    decisions = np.array([_decide(tuple(int(a) for a in row[:-1])) for row in rows])[inverse]
    team = np.array([o[0] for o in outcomes])[inverse]
    cf = np.array([o[1] for o in outcomes]).reshape(len(rows), env.agents)[inverse]

    k = env.agents
    return VotingBatch(
        prompts=flat_prompts.reshape(shape),
        answers=answers.reshape(shape + (k,)),
        decisions=decisions.reshape(shape),
        team_rewards=team.reshape(shape),
        cf_rewards=cf.reshape(shape + (k,)),
        logprobs=logprobs.reshape(shape + (k,)),
    )


def collect_rollouts(env: VotingTaskEnv, policies: Sequence[LogLinearPolicy], prompt: int,
                     samples: int, rng: np.random.Generator) -> List[VotingRollout]:
    prompt = Validator.validate_index('prompt', prompt, env.prompts)
    return collect_votes(env, policies, [prompt], samples, rng).rollouts(0)


def joint_advantages(team_rewards, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Within-prompt normalization of team rewards"""
    return group_advantage(team_rewards, epsilon)


def allocation_weights(deltas, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """w_i = max(0, delta_i) / (sum_j max(0, delta_j) + epsilon), along the last axis"""
    Validator.validate_positive('epsilon', epsilon)
    positive = np.maximum(0.0, np.asarray(deltas, dtype=float))
    return positive / (positive.sum(axis=-1, keepdims=True) + epsilon)


def allocate(joint_advantage: float, deltas, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Split a rollout's joint advantage over its pivotal agents"""
    return allocation_weights(deltas, epsilon) * joint_advantage


def direct_advantages(deltas_per_rollout, per_agent_stats: Sequence[RunningStats],
                      shaping: ShapingConfig, update_stats: bool = True) -> List[AdvantageBatch]:
    """
    Per-agent standardize -> shape -> group_advantage

    Args:
        deltas_per_rollout: K x N deltas
        per_agent_stats: One RunningStats per agent
    """
    deltas = np.asarray(deltas_per_rollout, dtype=float)
    if deltas.ndim != 2 or deltas.shape[0] != len(per_agent_stats):
        raise ValidationError("deltas_per_rollout must be K x N with one stats per agent", 'deltas_per_rollout')
    return [shaped_advantages(d, s, shaping, update_stats) for d, s in zip(deltas, per_agent_stats)]


def allocated_advantages(team_rewards, deltas_per_rollout, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """K x N allocated advantages for one prompt"""
    deltas = np.asarray(deltas_per_rollout, dtype=float)
    a_joint = joint_advantages(team_rewards, epsilon)
    return (allocation_weights(deltas.T, epsilon) * a_joint[:, None]).T


@dataclass
class VotingCredit:
    advantages: List[np.ndarray]
    mean_deltas: List[float]


def batch_advantages(batch: VotingBatch, per_agent_stats: Sequence[RunningStats], shaping: ShapingConfig,
                     credit_mode: str = 'ccpo', scheme: str = 'direct') -> VotingCredit:
    """
    Per-agent (B, N) advantages over a batch

    Per-agent statistics are read for every prompt first, then absorb the
    batch's deltas once.
    """
    scheme = Validator.validate_choice('voting_scheme', scheme, SCHEMES)
    eps = shaping.epsilon
    deltas = batch.deltas
    rows = range(batch.prompts.shape[0])
    k = deltas.shape[-1]

    if credit_mode == 'shared':
        shared = np.stack([joint_advantages(batch.team_rewards[b], eps) for b in rows])
        advantages = [shared.copy() for _ in range(k)]
    elif scheme == 'direct':
        advantages = [
            np.stack([
                shaped_advantages(deltas[b, :, i], per_agent_stats[i], shaping, update_stats=False).advantages
                for b in rows
            ])
            for i in range(k)
        ]
    else:
        a_joint = np.stack([joint_advantages(batch.team_rewards[b], eps) for b in rows])
        allocated = allocation_weights(deltas, eps) * a_joint[..., None]
        advantages = [allocated[..., i] for i in range(k)]

    for i in range(k):
        ema_update(per_agent_stats[i], deltas[..., i])

    return VotingCredit(advantages, [float(deltas[..., i].mean()) for i in range(k)])
