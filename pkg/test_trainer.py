"""
Tests for the group-relative clipped policy-gradient trainer
"""

import math
import sys

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.agents_envs import (
    EnvSpec, LogLinearPolicy, VotingTaskEnv, expert_policy, freerider_agent2, make_freerider_env,
    make_hint_env, make_rng,
)
from src.config import TrainerConfig, TrainingConfig
from src.credit_core import clipped_surrogate_grad
from src.topologies.sequential import draw_pairs
from src.trainer import (
    TrainingError, build_state, clip_global_norm, evaluate, policy_gradient, scheduled_agents,
    solo_evaluate, step, surrogate_coefficients, train,
)
from src.validator import ValidationError
from testing_utils import collect, raises, run_tests

TOY = TrainingConfig.TOY_LEARNING_RATE


def _config(**changes):
    base = dict(learning_rate=TOY, batch_size=8, samples_per_prompt=4, steps=10, seed=0)
    base.update(changes)
    return TrainerConfig(**base)


def _freerider_state(credit_mode, accuracy=None, solo_pairing='independent'):
    env = make_freerider_env()
    policies = [LogLinearPolicy(env.prompts, env.messages), freerider_agent2(env, accuracy)]
    config = _config(batch_size=16, credit_mode=credit_mode, frozen_agents=(2,), seed=3,
                     solo_pairing=solo_pairing)
    return build_state(env, policies, config)


def test_zero_advantages_leave_parameters_unchanged():
    env = VotingTaskEnv(2, 1, 2, [0, 0])
    policies = [LogLinearPolicy(2, 1, [[0.3], [-0.2]]) for _ in range(2)]
    state = build_state(env, policies, _config())
    before = [p.params.copy() for p in state.policies]
    for report in train(state, steps=5):
        assert report.grad_norms == (0.0, 0.0)
    for old, policy in zip(before, state.policies):
        assert_array_equal(policy.params, old)


def test_single_agent_bandit_converges():
    env = VotingTaskEnv(1, 2, 1, [0])
    state = build_state(env, [LogLinearPolicy(1, 2)], _config(batch_size=4, steps=200))
    train(state)
    assert state.policies[0].probs(0)[0] >= 0.95
    assert evaluate(state) == 1.0


def test_alternating_schedule_updates_one_agent_per_step():
    env = VotingTaskEnv(2, 2, 2, [0, 1])
    rng = make_rng(1)
    policies = [LogLinearPolicy(2, 2, rng.standard_normal((2, 2))) for _ in range(2)]
    state = build_state(env, policies, _config(schedule='alternating', seed=4))
    for t in range(12):
        before = [p.params.copy() for p in state.policies]
        _, report = step(state)
        idle = 1 if t % 2 == 0 else 0
        assert report.updated_agents == ((1,) if t % 2 == 0 else (2,))
        assert_array_equal(state.policies[idle].params, before[idle])
        assert report.grad_norms[idle] == 0.0


def test_scheduled_agents():
    config = _config(schedule='alternating', frozen_agents=(2,))
    assert scheduled_agents(config, 0, 3) == [0]
    assert scheduled_agents(config, 1, 3) == []
    assert scheduled_agents(config, 2, 3) == [2]
    assert scheduled_agents(_config(), 5, 3) == [0, 1, 2]


def test_freerider_agent1_gets_no_credit_under_ccpo():
    state = _freerider_state('ccpo')
    initial = state.policies[0].params.copy()
    for report in train(state, steps=50):
        assert report.grad_norms[0] == 0.0
        assert report.per_agent_mean_advantage[0] == 0.0
        assert report.per_agent_mean_delta[0] == 0.0
        assert report.updated_agents == (1,)
    assert_array_equal(state.policies[0].params, initial)


def test_freerider_contrast_with_noisy_partner():
    ccpo = _freerider_state('ccpo', accuracy=0.9, solo_pairing='common')
    for report in train(ccpo, steps=50):
        assert report.grad_norms[0] == 0.0
        assert report.per_agent_mean_delta[0] == 0.0

    shared = _freerider_state('shared', accuracy=0.9, solo_pairing='common')
    reports = train(shared, steps=50)
    assert any(r.grad_norms[0] > 0.0 for r in reports)
    assert all(r.grad_norms[1] == 0.0 for r in reports)


def test_expert_partner_leaves_shared_credit_nothing_to_split():
    for report in train(_freerider_state('shared'), steps=5):
        assert report.grad_norms == (0.0, 0.0)


def test_ccpo_and_shared_share_the_first_batch():
    ccpo = _freerider_state('ccpo', accuracy=0.9, solo_pairing='common')
    shared = _freerider_state('shared', accuracy=0.9, solo_pairing='common')
    _, first = step(ccpo)
    _, second = step(shared)
    assert first.train_accuracy == second.train_accuracy
    assert first.per_agent_mean_delta == second.per_agent_mean_delta


def test_single_voter_shared_step_is_group_normalized_reinforce():
    env = VotingTaskEnv(3, 3, 1, [0, 1, 2])
    start = make_rng(20).standard_normal((3, 3))
    batch, n = 6, 5
    state = build_state(env, [LogLinearPolicy(3, 3, start)],
                        _config(credit_mode='shared', batch_size=batch, samples_per_prompt=n, seed=21))
    step(state)

    rng = make_rng(21)
    prompts = np.repeat(rng.integers(0, 3, size=batch), n)
    uniforms = rng.random(prompts.size)
    probs = np.exp(start) / np.exp(start).sum(axis=1, keepdims=True)
    answers = [min(int((np.cumsum(probs[p]) <= u).sum()), 2) for p, u in zip(prompts, uniforms)]
    rewards = (np.array(answers) == np.array(env.truth)[prompts]).astype(float).reshape(batch, n)

    grad = np.zeros((3, 3))
    for g in range(batch):
        r = rewards[g]
        adv = np.zeros(n) if np.all(r == r[0]) else (r - r.mean()) / (r.std(ddof=1) + 1e-8)
        for j in range(n):
            p, a = prompts[g * n + j], answers[g * n + j]
            grad[p] += adv[j] * (np.eye(3)[a] - probs[p])
    norm = np.linalg.norm(grad)
    if norm > 1.0:
        grad = grad / norm
    assert_allclose(state.policies[0].params, start + TOY * grad, rtol=0, atol=1e-12)


def test_step_kl_stays_within_clip_bound():
    env = make_hint_env()
    config = _config(learning_rate=0.05, steps=20)
    state = build_state(env, EnvSpec(preset='hint').build_policies(env), config)
    bound = -math.log(1.0 - config.clip_eps)
    reports = train(state)
    for report in reports:
        assert math.isfinite(report.max_kl)
        assert 0.0 <= report.max_kl <= bound
    assert any(r.max_kl > 0.0 for r in reports)


def test_hint_env_collaboration():
    env = make_hint_env()
    spec = EnvSpec(preset='hint')
    config = _config(batch_size=16, steps=2000)
    state = build_state(env, spec.build_policies(env), config)
    assert solo_evaluate(state) == 0.5
    train(state)
    joint, solo = evaluate(state), solo_evaluate(state)
    assert joint >= 0.9
    assert joint - solo >= 0.2


def test_on_policy_ratios_are_one():
    env = make_hint_env()
    rng = make_rng(5)
    policy1 = LogLinearPolicy(2, 2, rng.standard_normal((2, 2)))
    policy2 = LogLinearPolicy(3, 2, rng.standard_normal((3, 2)))
    batch = draw_pairs(env, policy1, policy2, [0, 1], 8, rng)
    ratios = np.exp(policy2.all_log_probs()[batch.agent2_contexts, batch.answers] - batch.agent2_logprobs)
    assert_array_equal(ratios, 1.0)
    advantages = rng.standard_normal(ratios.shape)
    coefficients = surrogate_coefficients(ratios, advantages, 0.2)
    assert np.abs(coefficients - advantages).max() <= 1e-12


def test_surrogate_coefficients_clip():
    coefficients = surrogate_coefficients([1.5, 0.5, 1.5, 0.5], [1.0, -1.0, -1.0, 1.0], 0.2)
    assert_allclose(coefficients, [0.0, 0.0, -1.5, 0.5])
    rng = make_rng(13)
    ratios, advantages = rng.uniform(0.6, 1.4, 50), rng.standard_normal(50)
    expected = [r * clipped_surrogate_grad(float(r), float(a), 0.2) for r, a in zip(ratios, advantages)]
    assert_allclose(surrogate_coefficients(ratios, advantages, 0.2), expected, rtol=0, atol=0)


def test_policy_gradient_matches_scores():
    rng = make_rng(6)
    policy = LogLinearPolicy(3, 4, rng.standard_normal((3, 4)))
    contexts = rng.integers(0, 3, 20)
    actions = rng.integers(0, 4, 20)
    coefficients = rng.standard_normal(20)
    expected = np.zeros((3, 4))
    for c, a, w in zip(contexts, actions, coefficients):
        expected[c] += w * policy.score(int(c), int(a))
    assert_allclose(policy_gradient(policy, contexts, actions, coefficients), expected, atol=1e-12)


def test_clip_global_norm():
    grad, norm = clip_global_norm(np.array([3.0, 4.0]), 1.0)
    assert norm == 5.0
    assert_allclose(grad, [0.6, 0.8])
    grad, norm = clip_global_norm(np.array([0.3, 0.4]), 1.0)
    assert_array_equal(grad, [0.3, 0.4])


def test_non_finite_gradient_aborts():
    env = VotingTaskEnv(1, 2, 1, [0])
    state = build_state(env, [LogLinearPolicy(1, 2)], _config())
    state.policies[0].params[0, 0] = np.inf
    with raises(TrainingError, 'agent 1'):
        step(state)


def test_build_state_validation():
    env = make_hint_env()
    policies = EnvSpec(preset='hint').build_policies(env)
    with raises(ValidationError, 'frozen_agents'):
        build_state(env, policies, _config(frozen_agents=(3,)))
    with raises(ValidationError):
        build_state(env, policies[:1], _config())


def test_evaluate_examples():
    env = VotingTaskEnv(2, 2, 3, [0, 1])
    uniform = build_state(env, [LogLinearPolicy(2, 2) for _ in range(3)], _config())
    assert evaluate(uniform) == 0.5
    perfect = build_state(env, [expert_policy(2, 2, [0, 1]) for _ in range(3)], _config())
    assert evaluate(perfect) == 1.0
    wrong = build_state(env, [expert_policy(2, 2, [1, 0]) for _ in range(3)], _config())
    assert evaluate(wrong) == 0.0
    assert evaluate(perfect, env=VotingTaskEnv(2, 2, 3, [1, 0])) == 0.0
    with raises(ValidationError, 'sequential'):
        solo_evaluate(perfect)


def test_solo_evaluate_examples():
    env = make_freerider_env()
    policy2 = expert_policy(env.agent2_contexts, env.answers, env.context_truth())
    state = build_state(env, [LogLinearPolicy(env.prompts, env.messages), policy2], _config())
    assert solo_evaluate(state) == evaluate(state) == 1.0
    shifted = make_freerider_env(truth=(1, 2, 3, 0))
    assert solo_evaluate(state, env=shifted) == evaluate(state, env=shifted) == 0.0

    hint = make_hint_env()
    untrained = build_state(hint, [LogLinearPolicy(2, 2), LogLinearPolicy(3, 2)], _config())
    assert solo_evaluate(untrained) == 1.0 / hint.answers


def main():
    return run_tests("TRAINER TESTS", collect(globals()))


if __name__ == '__main__':
    sys.exit(main())
