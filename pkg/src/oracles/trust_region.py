"""
Trust-Region Oracle Module
Clip-to-KL bound, exact tabular MDP quantities and the block-update gain bound
"""

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import rel_entr, softmax

from src.agents_envs import LogLinearPolicy, SequentialTaskEnv, VotingTaskEnv
from src.topologies.voting import panel_outcome
from src.validator import Validator, ValidationError
from src.logger import get_logger

logger = get_logger('TrustRegion')

KL_SLACK = 1e-12
GAIN_SLACK = 1e-9
MAX_TABLE_SIZE = 64


class PreconditionError(Exception):
    """Check called outside the regime its bound covers"""


def _distribution(name: str, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum(axis=-1) - 1.0).max() > 1e-9:
        logger.log_validation_error(name, p.tolist(), 'Must be a probability distribution')
        raise ValidationError(f"Invalid {name}: not a probability distribution", name)
    return p


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats"""
    return float(rel_entr(p, q).sum())


@dataclass(frozen=True)
class KLCheck:
    ratio_in_bounds: bool
    kl: float
    bound: float

    @property
    def holds(self) -> bool:
        return (not self.ratio_in_bounds) or self.kl <= self.bound + KL_SLACK


def clip_kl_check(pi_old, pi_new, clip_eps: float = 0.2) -> KLCheck:
    """
    KL(old || new) against -log(1 - clip_eps)

    The bound applies when every ratio new/old on the support of old lies in
    [1 - clip_eps, 1 + clip_eps].
    """
    pi_old = _distribution('pi_old', pi_old)
    pi_new = _distribution('pi_new', pi_new)
    if pi_old.shape != pi_new.shape:
        raise ValidationError("pi_old and pi_new must share a support", 'pi_new')
    Validator.validate_open_unit('clip_eps', clip_eps)

    support = pi_old > 0
    with np.errstate(divide='ignore'):
        ratios = pi_new[support] / pi_old[support]
    in_bounds = bool(np.all((ratios >= 1.0 - clip_eps - KL_SLACK) & (ratios <= 1.0 + clip_eps + KL_SLACK)))
    return KLCheck(in_bounds, kl_divergence(pi_old, pi_new), -math.log(1.0 - clip_eps))


def c_gamma(gamma: float) -> float:
    """C(gamma) = 2 * gamma * sqrt(2) / (1 - gamma)^2"""
    gamma = Validator.validate_open_unit('gamma', gamma)
    return 2.0 * gamma * math.sqrt(2.0) / (1.0 - gamma) ** 2


@dataclass
class TabularMDP:
    """
    Finite discounted MDP with exact linear-solve evaluation

    Values are unnormalized discounted returns; J = start . V.
    """
    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    start: np.ndarray

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        self.start = np.asarray(self.start, dtype=float)
        self.gamma = Validator.validate_open_unit('gamma', self.gamma)
        s, a = self.reward.shape
        if self.transition.shape != (s, a, s) or self.start.shape != (s,):
            raise ValidationError("transition must be S x A x S and start length S", 'transition')
        if np.abs(self.transition.sum(axis=2) - 1.0).max() > 1e-12 or np.any(self.transition < 0):
            raise ValidationError("Every transition row must sum to 1", 'transition')
        if abs(self.start.sum() - 1.0) > 1e-12 or np.any(self.start < 0):
            raise ValidationError("start must be a distribution", 'start')

    @property
    def states(self) -> int:
        return self.reward.shape[0]

    @property
    def actions(self) -> int:
        return self.reward.shape[1]

    def _check_policy(self, pi) -> np.ndarray:
        pi = _distribution('policy', pi)
        if pi.shape != self.reward.shape:
            raise ValidationError(f"policy must be {self.reward.shape}", 'policy')
        return pi

    def state_transition(self, pi) -> np.ndarray:
        return np.einsum('sa,sat->st', self._check_policy(pi), self.transition)

    def value(self, pi) -> np.ndarray:
        pi = self._check_policy(pi)
        system = np.eye(self.states) - self.gamma * self.state_transition(pi)
        return np.linalg.solve(system, (pi * self.reward).sum(axis=1))

    def q_values(self, pi) -> np.ndarray:
        return self.reward + self.gamma * self.transition @ self.value(pi)

    def advantage(self, pi) -> np.ndarray:
        return self.q_values(pi) - self.value(pi)[:, None]

    def objective(self, pi) -> float:
        return float(self.start @ self.value(pi))

    def visitation(self, pi) -> np.ndarray:
        """Normalized discounted state visitation d = (1 - gamma) * start (I - gamma P)^-1"""
        system = np.eye(self.states) - self.gamma * self.state_transition(pi)
        return (1.0 - self.gamma) * np.linalg.solve(system.T, self.start)

    def surrogate_gain(self, pi_old, pi_new) -> float:
        """L_old(new) - L_old(old) = E_{d_old} sum_a pi_new A_old / (1 - gamma)"""
        pi_new = self._check_policy(pi_new)
        d = self.visitation(pi_old)
        adv = self.advantage(pi_old)
        return float(d @ (pi_new * adv).sum(axis=1) / (1.0 - self.gamma))


@dataclass(frozen=True)
class BlockGainReport:
    lhs: float
    rhs: float
    delta_l: float
    max_advantage: float
    max_kl: float
    delta_kl: float
    c_gamma: float

    @property
    def holds(self) -> bool:
        return self.lhs >= self.rhs - GAIN_SLACK


def max_state_kl(pi_old, pi_new) -> float:
    return float(rel_entr(pi_old, pi_new).sum(axis=1).max())


def block_gain_check(mdp: TabularMDP, pi_old, pi_new, delta_kl: float) -> BlockGainReport:
    """
    J(new) - J(old) >= Delta_L - C(gamma) * eps * sqrt(delta)

    eps is max |A_old(s, a)|.

    Raises:
        ValidationError: If the table exceeds 64 state-action pairs
        PreconditionError: If max-state KL(old || new) exceeds delta_kl
    """
    if mdp.states * mdp.actions > MAX_TABLE_SIZE:
        raise ValidationError(f"S*A = {mdp.states * mdp.actions} exceeds {MAX_TABLE_SIZE}", 'mdp')
    delta_kl = Validator.validate_finite('delta_kl', delta_kl)
    if delta_kl < 0:
        raise ValidationError("delta_kl must be >= 0", 'delta_kl')
    pi_old = mdp._check_policy(pi_old)
    pi_new = mdp._check_policy(pi_new)

    kl = max_state_kl(pi_old, pi_new)
    if kl > delta_kl + KL_SLACK:
        logger.error(f"Block gain precondition violated: max KL {kl:.6g} > delta {delta_kl:.6g}")
        raise PreconditionError(f"max-state KL {kl:.6g} exceeds delta_kl {delta_kl:.6g}")

    delta_l = mdp.surrogate_gain(pi_old, pi_new)
    eps = float(np.abs(mdp.advantage(pi_old)).max())
    c = c_gamma(mdp.gamma)
    return BlockGainReport(
        lhs=mdp.objective(pi_new) - mdp.objective(pi_old),
        rhs=delta_l - c * eps * math.sqrt(delta_kl),
        delta_l=delta_l,
        max_advantage=eps,
        max_kl=kl,
        delta_kl=delta_kl,
        c_gamma=c,
    )


def random_mdp(rng: np.random.Generator, states: int, actions: int, gamma: float) -> TabularMDP:
    transition = rng.dirichlet(np.ones(states), size=(states, actions))
    transition /= transition.sum(axis=2, keepdims=True)
    start = rng.dirichlet(np.ones(states))
    start /= start.sum()
    return TabularMDP(transition, rng.random((states, actions)), gamma, start)


def random_policy(rng: np.random.Generator, states: int, actions: int, scale: float = 1.0) -> np.ndarray:
    return softmax(scale * rng.standard_normal((states, actions)), axis=1)


def perturb_policy(pi, rng: np.random.Generator, scale: float) -> np.ndarray:
    """Random logit-space perturbation of a tabular policy"""
    pi = np.asarray(pi, dtype=float)
    return softmax(np.log(pi) + scale * rng.standard_normal(pi.shape), axis=1)


def policy_improvement_step(mdp: TabularMDP, pi, step_size: float) -> np.ndarray:
    """Soft step along the current advantages; Delta_L > 0 unless pi is greedy-optimal"""
    pi = mdp._check_policy(pi)
    return softmax(np.log(pi) + step_size * mdp.advantage(pi), axis=1)


def _expected_rewards(env, policies: Sequence[LogLinearPolicy], active: int) -> np.ndarray:
    """r(prompt, action) with every other agent frozen"""
    if isinstance(env, SequentialTaskEnv):
        if active != 0:
            raise ValidationError("Induced MDP needs prompt-level contexts: only Agent 1 qualifies", 'active')
        probs2 = policies[1].all_probs()
        rewards = np.zeros((env.prompts, env.messages))
        for p in range(env.prompts):
            for m in range(env.messages):
                rewards[p, m] = probs2[env.agent2_context(p, m), env.truth[p]]
        return rewards

    others = [i for i in range(env.agents) if i != active]
    rewards = np.zeros((env.prompts, env.answers))
    for p in range(env.prompts):
        for combo in itertools.product(range(env.answers), repeat=len(others)):
            weight = np.prod([policies[i].probs(p)[a] for i, a in zip(others, combo)])
            if weight == 0.0:
                continue
            for a in range(env.answers):
                answers = list(combo)
                answers.insert(active, a)
                rewards[p, a] += weight * panel_outcome(tuple(answers), env.truth[p])[0]
    return rewards


def induced_mdp(env, policies: Sequence[LogLinearPolicy], active: int, gamma: float) -> TabularMDP:
    """
    Single-agent MDP seen by one agent while the others stay frozen

    States are prompts, redrawn uniformly after every action. Rewards are the
    expected team reward given the active agent's action.

    Args:
        active: 0-based agent index
    """
    if not isinstance(env, (SequentialTaskEnv, VotingTaskEnv)):
        raise ValidationError("env must be a sequential or voting task", 'env')
    rewards = _expected_rewards(env, policies, active)
    s, a = rewards.shape
    transition = np.full((s, a, s), 1.0 / s)
    return TabularMDP(transition, rewards, gamma, np.full(s, 1.0 / s))
