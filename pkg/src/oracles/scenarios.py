"""
Enumerable Scenario Module
Exact outcome tables for one active agent with every other agent frozen
"""

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.agents_envs import (
    LogLinearPolicy, SequentialTaskEnv, VotingTaskEnv, EnvSpec,
    accuracy_policy, make_hint_env, make_freerider_env, make_pivotal_env, freerider_agent2,
)
from src.config import TrainingConfig
from src.topologies.voting import panel_outcome
from src.validator import Validator
from src.logger import get_logger

logger = get_logger('Scenarios')


class OracleRefusal(Exception):
    """Oracle declined an instance it cannot evaluate"""


@dataclass
class Scenario:
    """
    Every reachable outcome for one active agent

    Rows hold the outcome probability, the team reward, the active agent's
    counterfactual reward and its score vector. Score columns cover only the
    contexts the active agent can act in, in `contexts` order.
    """
    name: str
    probs: np.ndarray
    team_rewards: np.ndarray
    cf_rewards: np.ndarray
    scores: np.ndarray
    contexts: tuple
    active: int

    @property
    def outcome_count(self) -> int:
        return int(self.probs.size)

    @property
    def deltas(self) -> np.ndarray:
        return self.team_rewards - self.cf_rewards

    def draw(self, samples: int, rng: np.random.Generator) -> np.ndarray:
        """Outcome row indices for `samples` independent trajectories"""
        Validator.validate_int_range('samples', samples, 1)
        cdf = np.cumsum(self.probs)
        rows = np.searchsorted(cdf, rng.random(samples) * cdf[-1], side='right')
        return np.minimum(rows, self.outcome_count - 1)


def _check_budget(count: int, max_outcomes: int):
    if count > max_outcomes:
        logger.error(f"Refusing enumeration of {count} outcomes (cap {max_outcomes})")
        raise OracleRefusal(f"{count} joint outcomes exceed the enumeration cap {max_outcomes}")


def _score_table(contexts, actions, probs_table, ctx_ids, chosen) -> np.ndarray:
    """One-hot minus probabilities, placed at each row's context block"""
    index = {c: i for i, c in enumerate(contexts)}
    rows = np.arange(len(chosen))
    slots = np.array([index[c] for c in ctx_ids], dtype=int)
    scores = np.zeros((len(chosen), len(contexts), actions))
    scores[rows, slots, :] = -probs_table[np.asarray(ctx_ids, dtype=int)]
    scores[rows, slots, np.asarray(chosen, dtype=int)] += 1.0
    return scores.reshape(len(chosen), -1)


def _intervals(row: np.ndarray):
    upper = np.cumsum(row)
    return np.concatenate([[0.0], upper[:-1]]), upper


def coupled_answers(row_a: np.ndarray, row_b: np.ndarray) -> np.ndarray:
    """
    P(a, b) when both answers are drawn by inverse CDF from one shared uniform
    """
    lo_a, hi_a = _intervals(row_a)
    lo_b, hi_b = _intervals(row_b)
    overlap = np.minimum(hi_a[:, None], hi_b[None, :]) - np.maximum(lo_a[:, None], lo_b[None, :])
    return np.maximum(overlap, 0.0)


def sequential_scenario(env: SequentialTaskEnv, policy1: LogLinearPolicy, policy2: LogLinearPolicy,
                        active: int, prompts: Optional[Sequence[int]] = None, pairing: str = 'independent',
                        name: str = 'sequential',
                        max_outcomes: int = TrainingConfig.MAX_ENUMERATED_OUTCOMES) -> Scenario:
    """
    Outcome table of the Think-Solve dyad

    active=1: outcomes (prompt, message, answer, solo answer); the counterfactual is the solo reward.
    active=2: outcomes (prompt, message, answer); removing the answerer scores 0.
    """
    Validator.validate_int_range('active', active, 1, 2)
    pairing = Validator.validate_choice('pairing', pairing, ('common', 'independent'))
    prompts = list(range(env.prompts)) if prompts is None else [int(p) for p in prompts]
    solo_width = env.answers if active == 1 else 1
    _check_budget(len(prompts) * env.messages * env.answers * solo_width, max_outcomes)

    p1 = policy1.all_probs()
    p2 = policy2.all_probs()
    weight = 1.0 / len(prompts)
    probs, team, cf, ctx_ids, chosen = [], [], [], [], []

    for p in prompts:
        solo_ctx = env.solo_context(p)
        truth = env.truth[p]
        for m in range(env.messages):
            ctx = env.agent2_context(p, m)
            if active == 2:
                for y in range(env.answers):
                    probs.append(weight * p1[p, m] * p2[ctx, y])
                    team.append(float(y == truth))
                    cf.append(0.0)
                    ctx_ids.append(ctx)
                    chosen.append(y)
                continue
            if pairing == 'common':
                pairs = coupled_answers(p2[ctx], p2[solo_ctx])
            else:
                pairs = np.outer(p2[ctx], p2[solo_ctx])
            for y, y_solo in itertools.product(range(env.answers), repeat=2):
                probs.append(weight * p1[p, m] * pairs[y, y_solo])
                team.append(float(y == truth))
                cf.append(float(y_solo == truth))
                ctx_ids.append(p)
                chosen.append(m)

    if active == 1:
        contexts = tuple(sorted(set(prompts)))
        scores = _score_table(contexts, env.messages, p1, ctx_ids, chosen)
    else:
        contexts = tuple(sorted(set(ctx_ids)))
        scores = _score_table(contexts, env.answers, p2, ctx_ids, chosen)
    return _finish(name, probs, team, cf, scores, contexts, active)


def voting_scenario(env: VotingTaskEnv, policies: Sequence[LogLinearPolicy], active: int,
                    prompts: Optional[Sequence[int]] = None, name: str = 'voting',
                    max_outcomes: int = TrainingConfig.MAX_ENUMERATED_OUTCOMES) -> Scenario:
    """Outcome table of a voting panel; active is 1-based"""
    Validator.validate_int_range('active', active, 1, env.agents)
    prompts = list(range(env.prompts)) if prompts is None else [int(p) for p in prompts]
    _check_budget(len(prompts) * env.answers ** env.agents, max_outcomes)

    tables = [p.all_probs() for p in policies]
    k = active - 1
    weight = 1.0 / len(prompts)
    probs, team, cf, ctx_ids, chosen = [], [], [], [], []
    for p in prompts:
        for answers in itertools.product(range(env.answers), repeat=env.agents):
            probs.append(weight * np.prod([tables[i][p, a] for i, a in enumerate(answers)]))
            r, removed = panel_outcome(answers, env.truth[p])
            team.append(r)
            cf.append(removed[k])
            ctx_ids.append(p)
            chosen.append(answers[k])

    contexts = tuple(sorted(set(prompts)))
    scores = _score_table(contexts, env.answers, tables[k], ctx_ids, chosen)
    return _finish(name, probs, team, cf, scores, contexts, active)


def _finish(name, probs, team, cf, scores, contexts, active) -> Scenario:
    probs = np.asarray(probs, dtype=float)
    keep = probs > 0
    if not keep.any():
        raise OracleRefusal(f"Scenario {name} has no reachable outcome")
    return Scenario(name, probs[keep], np.asarray(team)[keep], np.asarray(cf)[keep],
                    scores[keep], contexts, active)


def _random_rows(rng: np.random.Generator, contexts: int, actions: int, scale: float) -> LogLinearPolicy:
    return LogLinearPolicy(contexts, actions, scale * rng.standard_normal((contexts, actions)))


def freerider_scenario() -> Scenario:
    """Agent 1 in the freerider env against a frozen expert Agent 2"""
    env = make_freerider_env()
    policy1 = LogLinearPolicy(env.prompts, env.messages)
    return sequential_scenario(env, policy1, freerider_agent2(env), active=1, prompts=[0], name='freerider')


def hint_scenario(rng: np.random.Generator, active: int = 1, pairing: str = 'independent') -> Scenario:
    """Hint-dependent dyad with random logits on both agents"""
    env = make_hint_env()
    policy1 = _random_rows(rng, env.prompts, env.messages, 1.0)
    policy2 = _random_rows(rng, env.agent2_contexts, env.answers, 1.0)
    return sequential_scenario(env, policy1, policy2, active=active, prompts=[0], pairing=pairing,
                               name=f'hint-agent{active}-{pairing}')


def pivotal_scenario(active: int = 3) -> Scenario:
    """Pivotal panel with accuracies (0.9, 0.9, 0.5)"""
    env = make_pivotal_env()
    policies = EnvSpec(preset='pivotal').build_policies(env)
    return voting_scenario(env, policies, active=active, prompts=[0], name=f'pivotal-agent{active}')


def strong_partner_scenario(partner_accuracy: float = 0.9, own_accuracy: float = 0.5) -> Scenario:
    """Agent 1 voting alongside two partners that are right with the given probability"""
    env = make_pivotal_env()
    truth = list(env.truth)
    policies = [accuracy_policy(env.prompts, env.answers, truth, own_accuracy)]
    policies += [accuracy_policy(env.prompts, env.answers, truth, partner_accuracy) for _ in range(2)]
    return voting_scenario(env, policies, active=1, prompts=[0], name='strong-partner')


def random_scenario(rng: np.random.Generator) -> Scenario:
    """
    Randomized scenario whose counterfactual reward never depends on the active agent

    Draws a voting panel with K in {2, 3} or an independently paired dyad.
    """
    kind = int(rng.integers(3))
    answers = int(rng.integers(2, 4))
    if kind < 2:
        agents = kind + 2
        truth = [int(rng.integers(answers))]
        env = VotingTaskEnv(1, answers, agents, truth)
        policies = [_random_rows(rng, 1, answers, 1.5) for _ in range(agents)]
        active = int(rng.integers(1, agents + 1))
        return voting_scenario(env, policies, active=active, name=f'random-voting-k{agents}')

    messages = int(rng.integers(2, 4))
    env = SequentialTaskEnv(1, answers, messages, [int(rng.integers(answers))],
                            hint_informativeness=float(rng.random()), agent2_sees_prompt=True)
    policy1 = _random_rows(rng, 1, messages, 1.5)
    policy2 = _random_rows(rng, env.agent2_contexts, answers, 1.5)
    return sequential_scenario(env, policy1, policy2, active=1, pairing='independent', name='random-sequential')


def unbiasedness_battery(rng: np.random.Generator):
    """Scenarios covering both topologies and both pairing modes"""
    return [
        freerider_scenario(),
        hint_scenario(rng, active=1, pairing='independent'),
        hint_scenario(rng, active=1, pairing='common'),
        hint_scenario(rng, active=2),
        pivotal_scenario(active=3),
        pivotal_scenario(active=1),
        strong_partner_scenario(),
    ]
