"""
Configuration module for the CCPO toolkit
Handles environment settings, trainer hyperparameters and config files
"""

import io
import os
from dataclasses import dataclass, fields, asdict
from pathlib import Path
from typing import Optional, Tuple

from dotenv import load_dotenv
from dotenv.parser import parse_stream

from src.credit_core import ShapingConfig
from src.validator import Validator, ValidationError
from src.logger import get_logger

# Load environment variables from .env file
load_dotenv()

logger = get_logger('Config')


class ConfigError(ValidationError):
    """Config file or config value rejected"""

    def __init__(self, message, key=None):
        super().__init__(message, key)
        self.key = key


class Config:
    """Process-level settings read from the environment"""

    LOG_FILE = os.getenv('CCPO_LOG_FILE', 'ccpo.log')
    LOG_LEVEL = os.getenv('CCPO_LOG_LEVEL', 'INFO')
    RUNS_DIR = os.getenv('CCPO_RUNS_DIR', 'runs')

    @classmethod
    def seed_override(cls) -> Optional[int]:
        """CCPO_SEED as an integer, or None when unset"""
        raw = os.getenv('CCPO_SEED', '').strip()
        if not raw:
            return None
        try:
            return Validator.validate_int_range('CCPO_SEED', raw, 0)
        except ValidationError as e:
            raise ConfigError(str(e), 'CCPO_SEED')


class TrainingConfig:
    """Fixed limits and presets"""

    # Enumerable problem sizes
    MAX_PROMPTS = 32
    MAX_MESSAGES = 8
    MAX_ANSWERS = 8
    MAX_AGENTS = 5

    # Recommended learning rate for toy log-linear policies
    TOY_LEARNING_RATE = 0.5

    # Output
    CSV_PRECISION = 9

    # Oracles
    BOOTSTRAP_RESAMPLES = 1000
    MAX_ENUMERATED_OUTCOMES = 10 ** 6


SCHEDULES = ('synchronous', 'alternating')
CREDIT_MODES = ('ccpo', 'shared')
VOTING_SCHEMES = ('direct', 'allocated')
SOLO_PAIRINGS = ('independent', 'common')


@dataclass
class TrainerConfig:
    """Optimization and shaping hyperparameters"""
    learning_rate: float = 1e-6
    batch_size: int = 64
    samples_per_prompt: int = 4
    clip_eps: float = 0.2
    grad_clip: float = 1.0
    alpha: float = 1.0
    eta: float = 1.0
    ema_decay: float = 0.99
    min_samples: int = 50
    epsilon: float = 1e-8
    schedule: str = 'synchronous'
    credit_mode: str = 'ccpo'
    voting_scheme: str = 'direct'
    steps: int = 100
    seed: int = 0
    solo_pairing: str = 'independent'
    frozen_agents: Tuple[int, ...] = ()

    def __post_init__(self):
        self.learning_rate = Validator.validate_positive('trainer.learning_rate', self.learning_rate)
        self.batch_size = Validator.validate_int_range('trainer.batch_size', self.batch_size, 1)
        self.samples_per_prompt = Validator.validate_int_range(
            'trainer.samples_per_prompt', self.samples_per_prompt, 2)
        self.clip_eps = Validator.validate_open_unit('trainer.clip_eps', self.clip_eps)
        self.grad_clip = Validator.validate_positive('trainer.grad_clip', self.grad_clip)
        self.alpha = Validator.validate_positive('trainer.alpha', self.alpha)
        self.eta = Validator.validate_positive('trainer.eta', self.eta)
        self.ema_decay = Validator.validate_open_unit('trainer.ema_decay', self.ema_decay)
        self.min_samples = Validator.validate_int_range('trainer.min_samples', self.min_samples, 1)
        self.epsilon = Validator.validate_positive('trainer.epsilon', self.epsilon)
        self.schedule = Validator.validate_choice('trainer.schedule', self.schedule, SCHEDULES)
        self.credit_mode = Validator.validate_choice('trainer.credit_mode', self.credit_mode, CREDIT_MODES)
        self.voting_scheme = Validator.validate_choice('trainer.voting_scheme', self.voting_scheme, VOTING_SCHEMES)
        self.steps = Validator.validate_int_range('trainer.steps', self.steps, 1)
        self.seed = Validator.validate_int_range('trainer.seed', self.seed, 0, 2 ** 64 - 1)
        self.solo_pairing = Validator.validate_choice('trainer.solo_pairing', self.solo_pairing, SOLO_PAIRINGS)
        self.frozen_agents = tuple(
            Validator.validate_int_range('trainer.frozen_agents', a, 1, TrainingConfig.MAX_AGENTS)
            for a in self.frozen_agents
        )

    @property
    def shaping(self) -> ShapingConfig:
        return ShapingConfig(self.alpha, self.epsilon)

    def replace(self, **changes) -> 'TrainerConfig':
        data = asdict(self)
        data.update(changes)
        return TrainerConfig(**data)


_TRUE = ('true', '1', 'yes', 'on')
_FALSE = ('false', '0', 'no', 'off')


def _parse_bool(key, raw):
    value = raw.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigError(f"Invalid value for {key}: '{raw}'. Must be true or false", key)


def _parse_list(raw, cast=str):
    return tuple(cast(item.strip()) for item in raw.split(',') if item.strip())


def _config_schema():
    """key -> (section, field, parser)"""
    schema = {}
    for f in fields(TrainerConfig):
        if f.name == 'frozen_agents':
            parser = lambda key, raw: _parse_list(raw, int)
        elif f.type in (int, 'int'):
            parser = lambda key, raw: int(raw)
        elif f.type in (float, 'float'):
            parser = lambda key, raw: float(raw)
        else:
            parser = lambda key, raw: raw.strip()
        schema[f'trainer.{f.name}'] = ('trainer', f.name, parser)

    schema.update({
        'env.preset': ('env', 'preset', lambda key, raw: raw.strip()),
        'env.topology': ('env', 'topology', lambda key, raw: raw.strip()),
        'env.prompts': ('env', 'prompts', lambda key, raw: int(raw)),
        'env.answers': ('env', 'answers', lambda key, raw: int(raw)),
        'env.messages': ('env', 'messages', lambda key, raw: int(raw)),
        'env.agents': ('env', 'agents', lambda key, raw: int(raw)),
        'env.truth': ('env', 'truth', lambda key, raw: _parse_list(raw, int)),
        'env.hint_informativeness': ('env', 'hint_informativeness', lambda key, raw: float(raw)),
        'env.agent2_sees_prompt': ('env', 'agent2_sees_prompt', _parse_bool),
        'env.reads_message': ('env', 'reads_message', _parse_bool),
        'agents.init': ('env', 'init', lambda key, raw: _parse_list(raw)),
    })
    return schema


CONFIG_KEYS = tuple(_config_schema())


def parse_config(text: str, source: str = '<config>'):
    """
    Parse config text into (TrainerConfig, EnvSpec)

    Raises:
        ConfigError: On parse errors, unknown keys or out-of-range values
    """
    from src.agents_envs import EnvSpec

    schema = _config_schema()
    sections = {'trainer': {}, 'env': {}}
    for binding in parse_stream(io.StringIO(text)):
        if binding.error:
            line = binding.original.line
            logger.error(f"Config parse error in {source} line {line}: {binding.original.string.strip()}")
            raise ConfigError(f"Parse error in {source} at line {line}: {binding.original.string.strip()!r}")
        if binding.key is None:
            continue
        key = binding.key.strip().lower()
        if key not in schema:
            logger.log_validation_error(key, binding.value, 'Unknown config key')
            raise ConfigError(f"Unknown config key '{key}' in {source}", key)
        section, name, parser = schema[key]
        raw = binding.value or ''
        try:
            sections[section][name] = parser(key, raw)
        except ConfigError:
            raise
        except (ValueError, TypeError):
            logger.log_validation_error(key, raw, 'Wrong value type')
            raise ConfigError(f"Invalid value for {key}: '{raw}'", key)

    try:
        trainer_config = TrainerConfig(**sections['trainer'])
        env_spec = EnvSpec(**sections['env'])
        env_spec.build_policies(env_spec.build_env())
    except ConfigError:
        raise
    except ValidationError as e:
        raise ConfigError(f"Out-of-range value in {source}: {e}", e.field)
    return trainer_config, env_spec


def load_config(path, apply_env_seed: bool = True, overrides: Optional[dict] = None):
    """
    Load a flat `key = value` config file

    Omitted keys take their defaults. CCPO_SEED replaces trainer.seed when set.

    Args:
        path: Config file path
        apply_env_seed: Honor CCPO_SEED
        overrides: Extra `key -> raw value` bindings applied after the file

    Returns:
        (TrainerConfig, EnvSpec)

    Raises:
        ConfigError: Missing file, parse error, unknown key or out-of-range value
    """
    path = Path(path)
    if not path.is_file():
        logger.error(f"Config file not found: {path}")
        raise ConfigError(f"Config file not found: {path}")
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}")

    for key, raw in (overrides or {}).items():
        text += f"\n{key} = {raw}\n"
    trainer_config, env_spec = parse_config(text, str(path))
    if apply_env_seed:
        seed = Config.seed_override()
        if seed is not None:
            logger.info(f"CCPO_SEED overrides trainer.seed: {trainer_config.seed} -> {seed}")
            trainer_config = trainer_config.replace(seed=seed)
    logger.debug(f"Loaded config {path}")
    return trainer_config, env_spec


def _format_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (tuple, list)):
        return ','.join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(trainer_config: TrainerConfig, env_spec) -> str:
    """Serialize every key; parse_config(dump_config(c, e)) reproduces the same values"""
    lines = ['# trainer']
    for name, value in asdict(trainer_config).items():
        lines.append(f'trainer.{name} = {_format_value(value)}')

    env = env_spec.to_dict()
    lines.append('')
    lines.append('# env')
    for key in ('preset', 'topology', 'prompts', 'answers', 'messages', 'agents', 'truth',
                'hint_informativeness', 'agent2_sees_prompt', 'reads_message'):
        lines.append(f'env.{key} = {_format_value(env[key])}')
    lines.append('')
    lines.append('# agents')
    lines.append(f"agents.init = {_format_value(env['init'])}")
    return '\n'.join(lines) + '\n'
