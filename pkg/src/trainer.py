"""
Trainer Module
Group-relative clipped policy-gradient loop over a team of log-linear agents
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.agents_envs import LogLinearPolicy, SequentialTaskEnv, VotingTaskEnv, make_rng
from src.config import TrainerConfig
from src.credit_core import RunningStats, clipped_surrogate_grad
from src.oracles.trust_region import clip_kl_check
from src.topologies import sequential, voting
from src.validator import Validator, ValidationError
from src.logger import get_logger

logger = get_logger('Trainer')


class TrainingError(Exception):
    """Training aborted on a numerical or monitoring failure"""


@dataclass
class TrainerState:
    """Mutable training state: policies, EMA statistics, RNG and step counter"""
    env: object
    policies: List[LogLinearPolicy]
    config: TrainerConfig
    rng: np.random.Generator
    gate: Optional[sequential.GateState] = None
    agent_stats: List[RunningStats] = field(default_factory=list)
    step: int = 0

    @property
    def num_agents(self) -> int:
        return len(self.policies)

    @property
    def topology(self) -> str:
        return self.env.topology


@dataclass(frozen=True)
class StepReport:
    step: int
    per_agent_mean_advantage: Tuple[float, ...]
    per_agent_mean_delta: Tuple[float, ...]
    gate_value: float
    train_accuracy: float
    max_kl: float
    grad_norms: Tuple[float, ...]
    updated_agents: Tuple[int, ...] = ()


def build_state(env, policies: Sequence[LogLinearPolicy], config: TrainerConfig) -> TrainerState:
    """
    Fresh state with copied policies and a generator seeded from config.seed

    Raises:
        ValidationError: On policy/env shape mismatches or unknown frozen agents
    """
    policies = [p.copy() for p in policies]
    if isinstance(env, SequentialTaskEnv):
        if len(policies) != 2:
            raise ValidationError("Sequential topology needs exactly 2 policies", 'policies')
        gate = sequential.GateState.create(config.ema_decay, config.min_samples, config.eta)
        state = TrainerState(env, policies, config, make_rng(config.seed), gate=gate)
    elif isinstance(env, VotingTaskEnv):
        if len(policies) != env.agents:
            raise ValidationError(f"Voting topology needs {env.agents} policies", 'policies')
        for p in policies:
            if p.contexts != env.prompts or p.actions != env.answers:
                raise ValidationError("Voting policy shape must be (prompts, answers)", 'policies')
        stats = [RunningStats(decay=config.ema_decay, min_samples=config.min_samples) for _ in policies]
        state = TrainerState(env, policies, config, make_rng(config.seed), agent_stats=stats)
    else:
        raise ValidationError(f"Unsupported env type {type(env).__name__}", 'env')

    for agent in config.frozen_agents:
        Validator.validate_int_range('trainer.frozen_agents', agent, 1, state.num_agents)
    return state


def scheduled_agents(config: TrainerConfig, step: int, num_agents: int) -> List[int]:
    """0-based agents updated at this step; alternating starts with agent 1 at step 0"""
    agents = list(range(num_agents)) if config.schedule == 'synchronous' else [step % num_agents]
    return [a for a in agents if a + 1 not in config.frozen_agents]


def surrogate_coefficients(ratios, advantages, clip_eps: float) -> np.ndarray:
    """
    ratio * d/dratio min(ratio A, clip(ratio) A), elementwise

    Zero where the clipped branch is active; equals A on-policy (ratio 1).
    """
    ratios = np.asarray(ratios, dtype=float)
    return clipped_surrogate_grad(ratios, advantages, clip_eps) * ratios


def policy_gradient(policy: LogLinearPolicy, contexts, actions, coefficients) -> np.ndarray:
    """Sum over rollouts of coefficient * score(context, action)"""
    contexts = np.asarray(contexts, dtype=int).ravel()
    actions = np.asarray(actions, dtype=int).ravel()
    coefficients = np.asarray(coefficients, dtype=float).ravel()
    per_rollout = -policy.all_probs()[contexts]
    per_rollout[np.arange(contexts.size), actions] += 1.0
    grad = np.zeros_like(policy.params)
    np.add.at(grad, contexts, coefficients[:, None] * per_rollout)
    return grad


def clip_global_norm(grad: np.ndarray, max_norm: float) -> Tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def _collect(state: TrainerState, prompts: np.ndarray):
    """Rollouts, per-agent (contexts, actions, logprobs, advantages), deltas, gate, accuracy"""
    config = state.config
    n = config.samples_per_prompt
    if state.topology == 'sequential':
        batch = sequential.draw_pairs(state.env, state.policies[0], state.policies[1], prompts, n,
                                      state.rng, config.solo_pairing)
        credit = sequential.batch_advantages(batch, state.gate, config.shaping, config.credit_mode)
        agents = [
            (batch.prompts, batch.messages, batch.agent1_logprobs, credit.advantages[0]),
            (batch.agent2_contexts, batch.answers, batch.agent2_logprobs, credit.advantages[1]),
        ]
        return agents, credit.mean_deltas, credit.gate_value, float(batch.joint_rewards.mean())

    batch = voting.collect_votes(state.env, state.policies, prompts, n, state.rng)
    credit = voting.batch_advantages(batch, state.agent_stats, config.shaping, config.credit_mode,
                                     config.voting_scheme)
    agents = [
        (batch.prompts, batch.answers[..., i], batch.logprobs[..., i], credit.advantages[i])
        for i in range(state.num_agents)
    ]
    return agents, credit.mean_deltas, float('nan'), float(batch.team_rewards.mean())


def _abort_non_finite(state: TrainerState, agent: int, what: str):
    logger.error(f"Non-finite {what} for agent {agent + 1} at step {state.step}")
    raise TrainingError(f"Non-finite {what} for agent {agent + 1} at step {state.step}")


def step(state: TrainerState, config: Optional[TrainerConfig] = None,
         rng: Optional[np.random.Generator] = None) -> Tuple[TrainerState, StepReport]:
    """
    One optimization step

    Samples batch_size prompts uniformly, N rollouts each, computes per-agent
    advantages, and applies a clipped-norm ascent step to every scheduled agent.

    Raises:
        TrainingError: On a non-finite gradient or a KL reading above the clip bound
    """
    if config is not None:
        state.config = config
    if rng is not None:
        state.rng = rng
    config = state.config

    prompts = state.rng.integers(0, state.env.prompts, size=config.batch_size)
    agents, mean_deltas, gate_value, accuracy = _collect(state, prompts)
    scheduled = scheduled_agents(config, state.step, state.num_agents)

    grad_norms = [0.0] * state.num_agents
    max_kl = 0.0
    for i in scheduled:
        policy = state.policies[i]
        contexts, actions, old_logprobs, advantages = agents[i]
        ratios = np.exp(policy.all_log_probs()[contexts, actions] - old_logprobs)
        if not np.all(np.isfinite(ratios)):
            _abort_non_finite(state, i, 'ratio')
        coefficients = surrogate_coefficients(ratios, advantages, config.clip_eps)

        grad = policy_gradient(policy, contexts, actions, coefficients)
        if not np.all(np.isfinite(grad)):
            _abort_non_finite(state, i, f'gradient (norm {np.linalg.norm(grad)})')
        grad, grad_norms[i] = clip_global_norm(grad, config.grad_clip)
        if grad_norms[i] == 0.0:
            continue

        visited = np.unique(contexts)
        old_probs = policy.all_probs()[visited]
        policy.params += config.learning_rate * grad
        new_probs = policy.all_probs()[visited]
        for old, new in zip(old_probs, new_probs):
            check = clip_kl_check(old, new, config.clip_eps)
            if not check.holds:
                logger.error(f"KL {check.kl:.6g} above clip bound {check.bound:.6g} with in-bound ratios")
                raise TrainingError(
                    f"Agent {i + 1} step {state.step}: KL {check.kl:.6g} exceeds bound {check.bound:.6g}"
                )
            max_kl = max(max_kl, check.kl)

    report = StepReport(
        step=state.step,
        per_agent_mean_advantage=tuple(float(a[3].mean()) for a in agents),
        per_agent_mean_delta=tuple(mean_deltas),
        gate_value=gate_value,
        train_accuracy=accuracy,
        max_kl=max_kl,
        grad_norms=tuple(grad_norms),
        updated_agents=tuple(a + 1 for a in scheduled),
    )
    logger.log_step(report)
    state.step += 1
    return state, report


def train(state: TrainerState, steps: Optional[int] = None,
          callback: Optional[Callable[[StepReport], None]] = None) -> List[StepReport]:
    """Run `steps` (default config.steps) trainer steps and return their reports"""
    steps = state.config.steps if steps is None else Validator.validate_int_range('steps', steps, 1)
    reports = []
    for _ in range(steps):
        _, report = step(state)
        reports.append(report)
        if callback is not None:
            callback(report)
    logger.info(f"Trained {steps} steps - final train_acc={reports[-1].train_accuracy:.4f}")
    return reports


def _greedy_answer(state: TrainerState, env, prompt: int, solo: bool = False) -> int:
    if env.topology == 'sequential':
        message = None if solo else state.policies[0].greedy(prompt)
        return state.policies[1].greedy(env.agent2_context(prompt, message))
    return voting.vote([p.greedy(prompt) for p in state.policies])


def evaluate(state: TrainerState, env=None, episodes: int = 1, rng=None) -> float:
    """
    Greedy team accuracy over one sweep of the prompt set

    Greedy execution is deterministic, so episodes beyond one sweep add
    nothing and rng is not consumed.
    """
    Validator.validate_int_range('episodes', episodes, 1)
    env = env or state.env
    correct = [env.reward(p, _greedy_answer(state, env, p)) for p in range(env.prompts)]
    return float(np.mean(correct))


def solo_evaluate(state: TrainerState, env=None) -> float:
    """Greedy Agent-2 accuracy answering from the prompt alone"""
    env = env or state.env
    if not isinstance(env, SequentialTaskEnv):
        logger.log_validation_error('topology', env.topology, 'Solo evaluation needs the sequential topology')
        raise ValidationError("solo_evaluate requires the sequential topology", 'topology')
    correct = [env.reward(p, _greedy_answer(state, env, p, solo=True)) for p in range(env.prompts)]
    return float(np.mean(correct))
