"""
Toy agents and synthetic task families
Log-linear softmax policies over discrete actions, the sequential (Think-Solve)
and voting task environments, scenario presets and the seeded RNG.
"""

import math
from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from src.config import TrainingConfig
from src.validator import Validator, ValidationError
from src.logger import get_logger

logger = get_logger('AgentsEnvs')

ABSTAIN = -1

TOPOLOGIES = ('sequential', 'voting')
PRESETS = ('custom', 'freerider', 'pivotal', 'hint')


def make_rng(seed: int) -> np.random.Generator:
    """
    Seeded generator on the Philox-4x64 counter-based bit generator

    The same seed reproduces the same draw sequence on every platform.
    """
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """Independent Philox streams split from one seed"""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


@dataclass
class LogLinearPolicy:
    """Softmax policy with one logit per (context, action)"""
    contexts: int
    actions: int
    params: np.ndarray = None

    def __post_init__(self):
        Validator.validate_int_range('contexts', self.contexts, 1)
        Validator.validate_int_range('actions', self.actions, 1)
        if self.params is None:
            self.params = np.zeros((self.contexts, self.actions))
        self.params = np.array(self.params, dtype=float)
        if self.params.shape != (self.contexts, self.actions):
            raise ValidationError(
                f"Invalid params shape {self.params.shape}, expected {(self.contexts, self.actions)}",
                'params'
            )

    def _check(self, context, action=None):
        context = Validator.validate_index('context', context, self.contexts)
        if action is not None:
            action = Validator.validate_index('action', action, self.actions)
        return context, action

    def probs(self, context: int) -> np.ndarray:
        context, _ = self._check(context)
        return softmax(self.params[context])

    def all_probs(self) -> np.ndarray:
        return softmax(self.params, axis=1)

    def all_log_probs(self) -> np.ndarray:
        return log_softmax(self.params, axis=1)

    def log_prob(self, context: int, action: int) -> float:
        context, action = self._check(context, action)
        row = self.params[context]
        return float(row[action] - logsumexp(row))

    def score(self, context: int, action: int) -> np.ndarray:
        """Gradient of log_prob with respect to the logits of this context's row"""
        context, action = self._check(context, action)
        grad = -softmax(self.params[context])
        grad[action] += 1.0
        return grad

    def greedy(self, context: int) -> int:
        """Most likely action, lowest index on ties"""
        context, _ = self._check(context)
        return int(np.argmax(self.params[context]))

    def sample(self, context: int, rng: np.random.Generator) -> int:
        return int(self.sample_many([context], rng)[0])

    def sample_many(self, contexts: Sequence[int], rng: np.random.Generator,
                    uniforms: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Inverse-CDF draws, one uniform per context in order

        Args:
            contexts: Context id per draw
            rng: Generator consumed when uniforms is None
            uniforms: Pre-drawn uniforms (shared draws for coupled sampling)
        """
        contexts = np.asarray(contexts, dtype=int).ravel()
        if contexts.size and (contexts.min() < 0 or contexts.max() >= self.contexts):
            bad = contexts[(contexts < 0) | (contexts >= self.contexts)][0]
            Validator.validate_index('context', int(bad), self.contexts)
        if uniforms is None:
            uniforms = rng.random(contexts.size)
        cdf = np.cumsum(softmax(self.params[contexts], axis=1), axis=1)
        draws = (cdf <= np.asarray(uniforms)[:, None]).sum(axis=1)
        return np.minimum(draws, self.actions - 1)

    def copy(self) -> 'LogLinearPolicy':
        return LogLinearPolicy(self.contexts, self.actions, self.params.copy())


def sample(policy: LogLinearPolicy, context: int, rng: np.random.Generator) -> int:
    return policy.sample(context, rng)


def log_prob(policy: LogLinearPolicy, context: int, action: int) -> float:
    return policy.log_prob(context, action)


def score(policy: LogLinearPolicy, context: int, action: int) -> np.ndarray:
    return policy.score(context, action)


def accuracy_policy(contexts: int, answers: int, truth: Sequence[int], accuracy: float) -> LogLinearPolicy:
    """
    Policy that answers truth[c] with the given probability in every context

    Contexts whose truth is negative (ambiguous) stay uniform.
    """
    Validator.validate_open_unit('accuracy', accuracy)
    logit = math.log(accuracy * (answers - 1) / (1.0 - accuracy)) if answers > 1 else 0.0
    params = np.zeros((contexts, answers))
    for c, t in enumerate(truth):
        if t >= 0:
            params[c, t] = logit
    return LogLinearPolicy(contexts, answers, params)


@dataclass(frozen=True)
class SequentialTaskEnv:
    """
    Think-Solve task: Agent 1 emits a message, Agent 2 answers

    Agent 2's context fuses its view of the prompt with the message slot.
    The first round(h * messages) symbols are legible; the rest collapse
    onto the empty-message slot that solo answers use.
    """
    prompts: int
    answers: int
    messages: int
    truth: Tuple[int, ...]
    hint_informativeness: float = 1.0
    agent2_sees_prompt: bool = True
    reads_message: bool = True

    def __post_init__(self):
        Validator.validate_int_range('env.prompts', self.prompts, 1, TrainingConfig.MAX_PROMPTS)
        Validator.validate_int_range('env.answers', self.answers, 1, TrainingConfig.MAX_ANSWERS)
        Validator.validate_int_range('env.messages', self.messages, 1, TrainingConfig.MAX_MESSAGES)
        Validator.validate_closed_unit('env.hint_informativeness', self.hint_informativeness)
        object.__setattr__(self, 'truth', _validate_truth(self.truth, self.prompts, self.answers))

    @property
    def topology(self) -> str:
        return 'sequential'

    @property
    def legible_messages(self) -> int:
        return int(round(self.hint_informativeness * self.messages))

    @property
    def agent2_slots(self) -> int:
        return self.legible_messages + 1 if self.reads_message else 1

    @property
    def agent2_contexts(self) -> int:
        views = self.prompts if self.agent2_sees_prompt else 1
        return views * self.agent2_slots

    def agent2_context(self, prompt: int, message: Optional[int] = None) -> int:
        """Context id for Agent 2; message None means answering solo"""
        prompt = Validator.validate_index('prompt', prompt, self.prompts)
        if message is not None:
            message = Validator.validate_index('message', message, self.messages)
        return int(self.agent2_context_many([prompt], None if message is None else [message])[0])

    def agent2_context_many(self, prompts, messages=None) -> np.ndarray:
        prompts = np.asarray(prompts, dtype=int)
        view = prompts if self.agent2_sees_prompt else np.zeros_like(prompts)
        if not self.reads_message:
            slot = np.zeros_like(prompts)
        elif messages is None:
            slot = np.full_like(prompts, self.legible_messages)
        else:
            messages = np.asarray(messages, dtype=int)
            slot = np.where(messages < self.legible_messages, messages, self.legible_messages)
        return view * self.agent2_slots + slot

    def solo_context(self, prompt: int) -> int:
        return self.agent2_context(prompt, None)

    def context_truth(self) -> List[int]:
        """Truth per Agent-2 context, -1 where prompts sharing the context disagree"""
        truth = [None] * self.agent2_contexts
        for p in range(self.prompts):
            ctxs = {self.solo_context(p)} | {self.agent2_context(p, m) for m in range(self.messages)}
            for c in ctxs:
                truth[c] = self.truth[p] if truth[c] in (None, self.truth[p]) else -1
        return [-1 if t is None else t for t in truth]

    def reward(self, prompt: int, answer: int) -> float:
        """Exact-match evaluator"""
        return 1.0 if answer == self.truth[prompt] else 0.0

    def rewards(self, prompts, answers) -> np.ndarray:
        return (np.asarray(answers) == np.asarray(self.truth)[np.asarray(prompts)]).astype(float)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['truth'] = list(self.truth)
        data['topology'] = self.topology
        return data


@dataclass(frozen=True)
class VotingTaskEnv:
    """K agents answer independently; a voting rule picks the team decision"""
    prompts: int
    answers: int
    agents: int
    truth: Tuple[int, ...]

    def __post_init__(self):
        Validator.validate_int_range('env.prompts', self.prompts, 1, TrainingConfig.MAX_PROMPTS)
        Validator.validate_int_range('env.answers', self.answers, 1, TrainingConfig.MAX_ANSWERS)
        Validator.validate_int_range('env.agents', self.agents, 1, TrainingConfig.MAX_AGENTS)
        object.__setattr__(self, 'truth', _validate_truth(self.truth, self.prompts, self.answers))

    @property
    def topology(self) -> str:
        return 'voting'

    def reward(self, prompt: int, decision: int) -> float:
        """ABSTAIN never matches a truth id, so it scores 0"""
        return 1.0 if decision == self.truth[prompt] else 0.0

    def to_dict(self) -> dict:
        data = asdict(self)
        data['truth'] = list(self.truth)
        data['topology'] = self.topology
        return data


def _validate_truth(truth, prompts: int, answers: int) -> Tuple[int, ...]:
    truth = tuple(int(t) for t in truth)
    if len(truth) != prompts:
        logger.log_validation_error('env.truth', list(truth), f'Must list one answer per prompt ({prompts})')
        raise ValidationError(f"env.truth has {len(truth)} entries, expected {prompts}", 'env.truth')
    for t in truth:
        Validator.validate_index('env.truth', t, answers)
    return truth


_PRESET_FIELDS = {
    'custom': {},
    'freerider': dict(topology='sequential', prompts=4, answers=4, messages=4,
                      hint_informativeness=0.0, agent2_sees_prompt=True, init=('uniform', 'expert')),
    'pivotal': dict(topology='voting', prompts=4, answers=2, agents=3, init=('0.9', '0.9', '0.5')),
    'hint': dict(topology='sequential', prompts=2, answers=2, messages=2,
                 hint_informativeness=1.0, agent2_sees_prompt=False),
}

_BASE_FIELDS = dict(topology='sequential', prompts=4, answers=2, messages=2, agents=3,
                    hint_informativeness=1.0, agent2_sees_prompt=True, reads_message=True,
                    init=())


@dataclass
class EnvSpec:
    """
    Serializable environment description

    Fields left as None take the preset's value, then the base default.
    """
    preset: str = 'custom'
    topology: Optional[str] = None
    prompts: Optional[int] = None
    answers: Optional[int] = None
    messages: Optional[int] = None
    agents: Optional[int] = None
    truth: Optional[Tuple[int, ...]] = None
    hint_informativeness: Optional[float] = None
    agent2_sees_prompt: Optional[bool] = None
    reads_message: Optional[bool] = None
    init: Optional[Tuple[str, ...]] = None

    def resolved(self) -> 'EnvSpec':
        preset = Validator.validate_choice('env.preset', self.preset, PRESETS)
        values = dict(_BASE_FIELDS)
        values.update(_PRESET_FIELDS[preset])
        for key, value in asdict(self).items():
            if key != 'preset' and value is not None:
                values[key] = value
        values['topology'] = Validator.validate_choice('env.topology', values['topology'], TOPOLOGIES)
        if values.get('truth') is None:
            values['truth'] = tuple(p % values['answers'] for p in range(values['prompts']))
        values['truth'] = tuple(values['truth'])
        values['init'] = tuple(values['init'])
        return EnvSpec(preset=preset, **values)

    def build_env(self):
        spec = self.resolved()
        if spec.topology == 'sequential':
            return SequentialTaskEnv(spec.prompts, spec.answers, spec.messages, spec.truth,
                                     spec.hint_informativeness, spec.agent2_sees_prompt,
                                     spec.reads_message)
        return VotingTaskEnv(spec.prompts, spec.answers, spec.agents, spec.truth)

    def build_policies(self, env=None) -> List[LogLinearPolicy]:
        spec = self.resolved()
        env = env or spec.build_env()
        if env.topology == 'sequential':
            shapes = [(env.prompts, env.messages, None), (env.agent2_contexts, env.answers, env.context_truth())]
        else:
            shapes = [(env.prompts, env.answers, list(env.truth))] * env.agents

        init = spec.init or ('uniform',) * len(shapes)
        if len(init) != len(shapes):
            logger.log_validation_error('agents.init', list(init), f'Must list {len(shapes)} entries')
            raise ValidationError(f"agents.init has {len(init)} entries, expected {len(shapes)}", 'agents.init')

        policies = []
        for token, (contexts, actions, truth) in zip(init, shapes):
            token = str(token).strip().lower()
            if token == 'uniform':
                policies.append(LogLinearPolicy(contexts, actions))
            elif truth is None:
                logger.log_validation_error('agents.init', token, 'Message senders only support uniform')
                raise ValidationError("agents.init: Agent 1 (message sender) must be 'uniform'", 'agents.init')
            elif token == 'expert':
                policies.append(expert_policy(contexts, actions, truth))
            else:
                accuracy = Validator.validate_open_unit('agents.init', token)
                policies.append(accuracy_policy(contexts, actions, truth, accuracy))
        return policies

    def to_dict(self) -> dict:
        data = asdict(self.resolved())
        data['truth'] = list(data['truth'])
        data['init'] = list(data['init'])
        return data


def make_freerider_env(**overrides) -> SequentialTaskEnv:
    """Illegible messages and a prompt-seeing Agent 2: Agent 1 is structurally redundant"""
    return EnvSpec(preset='freerider', **overrides).build_env()


def make_pivotal_env(**overrides) -> VotingTaskEnv:
    """Three voters over two answers, where a single vote often decides the outcome"""
    return EnvSpec(preset='pivotal', **overrides).build_env()


def make_hint_env(**overrides) -> SequentialTaskEnv:
    """Agent 2 never sees the prompt, so the truth is only recoverable from the message"""
    return EnvSpec(preset='hint', **overrides).build_env()


def freerider_agent2(env: SequentialTaskEnv, accuracy: Optional[float] = None) -> LogLinearPolicy:
    """
    Strong message-ignoring Agent 2 for the freerider env

    Without an accuracy the policy is the expert, so every solo answer equals
    the joint answer under either solo pairing.
    """
    if accuracy is None:
        return expert_policy(env.agent2_contexts, env.answers, env.context_truth())
    return accuracy_policy(env.agent2_contexts, env.answers, env.context_truth(), accuracy)


def expert_policy(contexts: int, answers: int, truth: Sequence[int], strength: float = 50.0) -> LogLinearPolicy:
    """Deterministic-in-the-limit policy that answers truth[c]"""
    params = np.zeros((contexts, answers))
    for c, t in enumerate(truth):
        if t >= 0:
            params[c, t] = strength
    return LogLinearPolicy(contexts, answers, params)
