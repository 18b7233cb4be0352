"""
Tests for plurality-or-abstain voting, removal counterfactuals and the advantage schemes
"""

import itertools
import sys

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.agents_envs import ABSTAIN, LogLinearPolicy, VotingTaskEnv, accuracy_policy, make_rng
from src.credit_core import RunningStats, ShapingConfig
from src.topologies.voting import (
    allocate, allocated_advantages, allocation_weights, batch_advantages, collect_rollouts,
    collect_votes, counterfactual_rewards, direct_advantages, is_pivotal, joint_advantages, vote,
)
from src.validator import ValidationError
from testing_utils import collect, raises, run_tests

A, B, C = 0, 1, 2
HALF_SQRT3 = 0.8660254037844386


class CountingGenerator:
    """Wraps a generator and counts every draw"""

    def __init__(self, rng):
        self.rng = rng
        self.calls = 0

    def random(self, *args, **kwargs):
        self.calls += 1
        return self.rng.random(*args, **kwargs)


def test_vote_examples():
    assert vote([A, A, B]) == A
    assert vote([A, B, C]) == ABSTAIN
    assert vote([A, B]) == ABSTAIN
    assert vote([C]) == C
    with raises(ValidationError, 'empty'):
        vote([])


def test_counterfactual_examples():
    assert counterfactual_rewards([A, A, B], A) == (1.0, [0.0, 0.0, 1.0], [1.0, 1.0, 0.0])
    assert counterfactual_rewards([B, B, B], A) == (0.0, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    assert counterfactual_rewards([A, B, B], A) == (0.0, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])


def test_single_agent_panel_credit_is_team_reward():
    assert counterfactual_rewards([A], A) == (1.0, [0.0], [1.0])
    assert counterfactual_rewards([B], A) == (0.0, [0.0], [0.0])


def test_pivotality_equivalence_exhaustive():
    for answers_count in (2, 3, 4):
        for answers in itertools.product(range(answers_count), repeat=3):
            for truth in range(answers_count):
                _, _, deltas = counterfactual_rewards(answers, truth)
                for i in range(3):
                    assert (deltas[i] != 0) == is_pivotal(answers, truth, i)


def test_counterfactuals_never_sample():
    env = VotingTaskEnv(1, 3, 3, [0])
    policies = [LogLinearPolicy(1, 3) for _ in range(3)]
    counting = CountingGenerator(make_rng(0))
    batch = collect_votes(env, policies, [0], 50, counting)
    # one uniform vector per agent, none for the removal panels
    assert counting.calls == 3
    calls = counting.calls
    for row in batch.answers[0]:
        counterfactual_rewards(row, 0)
    assert counting.calls == calls


def test_collect_votes_consistency():
    env = VotingTaskEnv(2, 3, 3, [0, 2])
    rng = make_rng(1)
    policies = [LogLinearPolicy(2, 3, rng.standard_normal((2, 3))) for _ in range(3)]
    batch = collect_votes(env, policies, [0, 1, 1], 20, rng)
    assert batch.answers.shape == (3, 20, 3)
    for row in range(3):
        for r in batch.rollouts(row):
            team, cf, deltas = counterfactual_rewards(r.answers, env.truth[r.prompt])
            assert r.team_reward == team and list(r.per_agent_cf_reward) == cf
            assert list(r.per_agent_delta) == deltas
            assert r.decision == vote(r.answers)
            for i, lp in enumerate(r.per_agent_logprob):
                assert_allclose(lp, policies[i].log_prob(r.prompt, r.answers[i]), atol=1e-12)


def test_collect_rollouts_validates():
    env = VotingTaskEnv(1, 2, 3, [0])
    with raises(ValidationError):
        collect_rollouts(env, [LogLinearPolicy(1, 2)] * 2, 0, 4, make_rng(0))
    with raises(ValidationError):
        collect_rollouts(env, [LogLinearPolicy(1, 2)] * 3, 1, 4, make_rng(0))
    assert len(collect_rollouts(env, [LogLinearPolicy(1, 2)] * 3, 0, 4, make_rng(0))) == 4


def test_majority_lift():
    p = 0.6
    env = VotingTaskEnv(1, 2, 3, [0])
    policies = [accuracy_policy(1, 2, [0], p) for _ in range(3)]
    samples = 10 ** 5
    batch = collect_votes(env, policies, [0], samples, make_rng(2))
    expected = 3 * p ** 2 - 2 * p ** 3
    assert_allclose(expected, 0.648)
    se = np.sqrt(expected * (1 - expected) / samples)
    assert abs(batch.team_rewards.mean() - expected) <= 3 * se


def test_joint_advantage_examples():
    assert_allclose(joint_advantages([1, 0, 0, 1]), [HALF_SQRT3, -HALF_SQRT3, -HALF_SQRT3, HALF_SQRT3], atol=1e-6)
    assert_array_equal(joint_advantages([1, 1, 1, 1]), np.zeros(4))
    assert_allclose(joint_advantages([0, 1]), [-0.707106, 0.707106], atol=1e-6)


def test_allocate_examples():
    assert_allclose(allocate(2.0, [1, 0, -1]), [2.0, 0.0, 0.0], atol=1e-7)
    assert_array_equal(allocate(3.0, [0, 0, 0]), np.zeros(3))
    assert_allclose(allocate(1.0, [1, 1, 0]), [0.5, 0.5, 0.0], atol=1e-7)


def test_allocation_is_permutation_equivariant():
    rng = make_rng(16)
    for trial in range(100):
        k = int(rng.integers(1, 6))
        if trial % 2:
            deltas = rng.uniform(-1.0, 1.0, k)
        else:
            deltas = rng.choice([-1.0, 0.0, 1.0], size=k)
        weights = allocation_weights(deltas)
        assert np.all(weights >= 0.0)
        assert 0.0 <= weights.sum() <= 1.0
        perm = rng.permutation(k)
        joint = float(rng.standard_normal())
        assert_allclose(allocate(joint, deltas[perm]), allocate(joint, deltas)[perm], rtol=0, atol=1e-12)


def test_allocated_advantages_sum_to_joint_on_pivotal_rollouts():
    team = np.array([1.0, 0.0, 1.0, 0.0])
    deltas = np.array([[1.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    allocated = allocated_advantages(team, deltas)
    assert allocated.shape == (3, 4)
    pivotal = deltas.max(axis=0) > 0
    assert_allclose(allocated.sum(axis=0)[pivotal], joint_advantages(team)[pivotal], atol=1e-7)
    assert_array_equal(allocated[:, ~pivotal], 0.0)


def test_direct_advantage_examples():
    shaping = ShapingConfig()
    stats = [RunningStats() for _ in range(3)]
    batches = direct_advantages([[0, 0, 0, 0], [1, 0, 0, 1], [1, 0, 0, 1]], stats, shaping)
    assert_array_equal(batches[0].advantages, np.zeros(4))
    assert_allclose(batches[1].advantages, [HALF_SQRT3, -HALF_SQRT3, -HALF_SQRT3, HALF_SQRT3], atol=1e-6)
    assert_array_equal(batches[1].advantages, batches[2].advantages)
    assert all(s.observed_count == 4 for s in stats)
    with raises(ValidationError):
        direct_advantages([[1, 0]], stats, shaping)


def test_batch_advantages_schemes():
    env = VotingTaskEnv(2, 2, 3, [0, 1])
    rng = make_rng(3)
    policies = [LogLinearPolicy(2, 2, rng.standard_normal((2, 2))) for _ in range(3)]
    batch = collect_votes(env, policies, [0, 1], 8, rng)
    shaping = ShapingConfig()

    stats = [RunningStats() for _ in range(3)]
    direct = batch_advantages(batch, stats, shaping, scheme='direct')
    assert all(s.observed_count == 16 for s in stats)
    for i in range(3):
        for b in range(2):
            expected = direct_advantages(batch.deltas[b].T, [RunningStats() for _ in range(3)],
                                         shaping)[i].advantages
            assert_allclose(direct.advantages[i][b], expected, atol=1e-12)

    allocated = batch_advantages(batch, [RunningStats() for _ in range(3)], shaping, scheme='allocated')
    for b in range(2):
        expected = allocated_advantages(batch.team_rewards[b], batch.deltas[b].T)
        for i in range(3):
            assert_allclose(allocated.advantages[i][b], expected[i], atol=1e-12)

    shared = batch_advantages(batch, [RunningStats() for _ in range(3)], shaping, credit_mode='shared')
    for i in range(3):
        for b in range(2):
            assert_array_equal(shared.advantages[i][b], joint_advantages(batch.team_rewards[b]))
    assert_allclose(shared.mean_deltas, batch.deltas.mean(axis=(0, 1)))


def main():
    return run_tests("VOTING TOPOLOGY TESTS", collect(globals()))


if __name__ == '__main__':
    sys.exit(main())
