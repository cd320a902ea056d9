"""
Configuration module for dlcl-lab
Environment settings plus the run configuration built from presets, files and flags
"""
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional

from dotenv import load_dotenv

from model import AggregationMode, ModelConfig, NormPlacement
from training import BeamConfig, SchedulerConfig, TaskKind, TaskSpec, TrainConfig, beta2_for

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)


def _flag(value: Optional[str], default: bool) -> bool:
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


class ConfigError(ValueError):
    """Invalid run configuration; names the offending key and, when known, its line"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class Config:
    """Environment configuration"""

    # Logging
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()
    DEBUG = _flag(os.getenv('DEBUG'), False)

    # Run registry
    DATABASE_URL = os.getenv('DATABASE_URL', 'sqlite:///dlcl_runs.db')
    RECORD_RUNS = _flag(os.getenv('RECORD_RUNS'), True)

    # Artifacts
    OUTPUT_DIR = os.getenv('OUTPUT_DIR', 'runs')

    # Seed override, sits between config file and flags
    DLCL_SEED = os.getenv('DLCL_SEED')

    @classmethod
    def validate(cls):
        """Validate the environment"""
        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ValueError(f"LOG_LEVEL must be a logging level name, got {cls.LOG_LEVEL}")
        if cls.DLCL_SEED is not None:
            try:
                int(cls.DLCL_SEED)
            except ValueError:
                raise ValueError(f"DLCL_SEED must be an integer, got {cls.DLCL_SEED!r}")
        return True


# Validate configuration on import
Config.validate()


def _optional_float(value):
    return None if value is None else float(value)


def _strict_int(value):
    if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
        raise ValueError(f"expected an integer, got {value!r}")
    return int(value)


# flat key -> converter; the same names are accepted as --flags
KEYS: Dict[str, Callable[[Any], Any]] = {
    # model
    'encoder_depth': _strict_int,
    'decoder_depth': _strict_int,
    'd_model': _strict_int,
    'd_ff': _strict_int,
    'heads': _strict_int,
    'norm': lambda v: NormPlacement(v).value,
    'aggregation': lambda v: AggregationMode(v).value,
    'dropout': float,
    'attention_dropout': _optional_float,
    'relu_dropout': _optional_float,
    'ln_eps': float,
    'vocab_size': _strict_int,
    # scheduler
    'lr_max': float,
    'warmup': _strict_int,
    'lr_init': float,
    'beta2': _optional_float,
    # train
    'steps': _strict_int,
    'accumulation': _strict_int,
    'batch_tokens': _strict_int,
    'seed': _strict_int,
    'label_smoothing': float,
    'checkpoint_every': _strict_int,
    'keep_checkpoints': _strict_int,
    'log_every': _strict_int,
    # task
    'task': lambda v: TaskKind(v).value,
    'min_len': _strict_int,
    'max_len': _strict_int,
    # decoding
    'beam_size': _strict_int,
    'alpha': float,
    'decode_max_len': _strict_int,
    # paths
    'output_dir': str,
}

SECTIONS = ('model', 'scheduler', 'train', 'task', 'beam', 'run')

DEFAULTS: Dict[str, Any] = {
    'encoder_depth': 6,
    'decoder_depth': 2,
    'd_model': 64,
    'd_ff': 256,
    'heads': 4,
    'norm': 'pre',
    'aggregation': 'standard',
    'dropout': 0.1,
    'attention_dropout': None,
    'relu_dropout': None,
    'ln_eps': 1e-6,
    'vocab_size': 16,
    'lr_max': 1e-3,
    'warmup': 160,
    'lr_init': 1e-7,
    'beta2': None,
    'steps': 2000,
    'accumulation': 1,
    'batch_tokens': 256,
    'seed': 0,
    'label_smoothing': 0.1,
    'checkpoint_every': 200,
    'keep_checkpoints': 5,
    'log_every': 50,
    'task': 'copy',
    'min_len': 4,
    'max_len': 12,
    'beam_size': 4,
    'alpha': 0.6,
    'decode_max_len': 32,
    'output_dir': Config.OUTPUT_DIR,
}

# Full-scale update/warmup counts are divided by this for CPU runs
DESK_SCALE = 50


def _scaled(updates: int, warmup: int) -> Dict[str, int]:
    return {'steps': updates // DESK_SCALE, 'warmup': warmup // DESK_SCALE}


_BASE_POST = {'norm': 'post', 'encoder_depth': 6, 'lr_max': 7e-4, 'beta2': 0.98, **_scaled(100_000, 4000)}
_BASE_PRE = {'norm': 'pre', 'encoder_depth': 6, 'lr_max': 1e-3, 'beta2': 0.997,
             'attention_dropout': 0.1, 'relu_dropout': 0.1, **_scaled(100_000, 8000)}
# deep models: twice the batch through accumulation, half the updates
_DEEP = {'lr_max': 2e-3, 'accumulation': 2, **_scaled(50_000, 16000)}

PRESETS: Dict[str, Dict[str, Any]] = {
    'base-postnorm-6L': _BASE_POST,
    'base-prenorm-6L': _BASE_PRE,
    'deep-postnorm-20L': {**_BASE_POST, **_DEEP, 'encoder_depth': 20},
    'deep-prenorm-20L': {**_BASE_PRE, **_DEEP, 'encoder_depth': 20},
    'dlcl-prenorm-12L': {**_BASE_PRE, 'encoder_depth': 12, 'aggregation': 'learned'},
    'dlcl-postnorm-25L': {**_BASE_POST, **_DEEP, 'encoder_depth': 25, 'aggregation': 'learned'},
    'dlcl-prenorm-30L': {**_BASE_PRE, **_DEEP, 'encoder_depth': 30, 'aggregation': 'learned'},
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    beam: BeamConfig = field(default_factory=BeamConfig)
    output_dir: Path = Path(Config.OUTPUT_DIR)
    beta2: float = 0.997
    preset: Optional[str] = None
    values: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.values)


def _line_of(text: str, key: str) -> Optional[int]:
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def read_config_file(path) -> Dict[str, Any]:
    """Flat JSON object, or one level of sections holding the same flat keys"""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e.msg}", line=e.lineno) from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")

    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in SECTIONS:
                raise ConfigError(f"{path}: unknown section '{key}'", key, _line_of(text, key))
            for inner, inner_value in value.items():
                if isinstance(inner_value, dict):
                    raise ConfigError(f"{path}: '{key}.{inner}' nests more than one level", inner, _line_of(text, inner))
                values[inner] = inner_value
        else:
            values[key] = value

    for key in values:
        if key not in KEYS:
            raise ConfigError(f"{path}: unknown config key '{key}'", key, _line_of(text, key))
    return values


def _coerce(values: Mapping[str, Any]) -> Dict[str, Any]:
    coerced = {}
    for key, value in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key '{key}'", key)
        try:
            coerced[key] = KEYS[key](value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value for '{key}': {e}", key) from e
    return coerced


def build_run_config(values: Mapping[str, Any], preset: Optional[str] = None) -> RunConfig:
    v = dict(values)
    try:
        model = ModelConfig(
            encoder_depth=v['encoder_depth'],
            decoder_depth=v['decoder_depth'],
            d_model=v['d_model'],
            d_ff=v['d_ff'],
            heads=v['heads'],
            norm=v['norm'],
            aggregation=v['aggregation'],
            src_vocab=v['vocab_size'],
            tgt_vocab=v['vocab_size'],
            dropout=v['dropout'],
            attention_dropout=v['attention_dropout'],
            relu_dropout=v['relu_dropout'],
            ln_eps=v['ln_eps'],
        )
        scheduler = SchedulerConfig(lr_max=v['lr_max'], warmup=v['warmup'], lr_init=v['lr_init'])
        train = TrainConfig(
            steps=v['steps'],
            accumulation=v['accumulation'],
            batch_tokens=v['batch_tokens'],
            seed=v['seed'],
            label_smoothing=v['label_smoothing'],
            checkpoint_every=v['checkpoint_every'],
            keep_checkpoints=v['keep_checkpoints'],
            log_every=v['log_every'],
        )
        task = TaskSpec(kind=v['task'], vocab_size=v['vocab_size'], min_len=v['min_len'], max_len=v['max_len'], seed=v['seed'])
        beam = BeamConfig(beam_size=v['beam_size'], alpha=v['alpha'], max_len=v['decode_max_len'])
    except ValueError as e:
        raise ConfigError(str(e)) from e
    beta2 = v['beta2'] if v['beta2'] is not None else beta2_for(model.norm)
    return RunConfig(model, scheduler, train, task, beam, Path(v['output_dir']), beta2, preset, v)


def load_run_config(
    preset: Optional[str] = None,
    path=None,
    flags: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Merge configuration layers: defaults < preset < file < DLCL_SEED < flags

    Args:
        preset: name from PRESETS
        path: JSON config file
        flags: command-line values; None entries count as not given
        env: environment mapping, os.environ when omitted
    """
    values = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}'; choose from {', '.join(PRESETS)}")
        values.update(PRESETS[preset])
        logger.info(f"preset {preset}: update and warmup counts scaled down {DESK_SCALE}x for desk runs")
    if path is not None:
        values.update(read_config_file(path))
    env = os.environ if env is None else env
    if env.get('DLCL_SEED') is not None:
        values['seed'] = env['DLCL_SEED']
    if flags:
        values.update({k: v for k, v in flags.items() if v is not None})
    return build_run_config(_coerce(values), preset)
