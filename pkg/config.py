import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Union

import yaml

from core.errors import ConfigError, ContractError

logger = logging.getLogger(__name__)


class Config:
    # Logging
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    LOG_FILE = os.environ.get('LOG_FILE', '')

    # Reproducibility
    DEFAULT_SEED = int(os.environ.get('DEFAULT_SEED', '0'))

    # Parallel attacks / ingestion
    WORKERS = int(os.environ.get('WORKERS', '1'))

    # Where commands write when no output path is given
    OUTPUT_ROOT = os.environ.get('OUTPUT_ROOT', 'runs')

    DEFAULT_CONFIG_PATH = Path(__file__).parent / 'config' / 'default.yaml'


Delta = Union[float, List[float]]


@dataclass
class DataPrepConfig:
    output: str = os.path.join(Config.OUTPUT_ROOT, 'dataset')
    synthetic: Optional[int] = None
    tusimple: Optional[str] = None
    images: Optional[str] = None
    seed: int = Config.DEFAULT_SEED
    duplicate_rare: bool = True
    height: float = 500
    workers: int = Config.WORKERS

    def validate(self):
        if (self.synthetic is None) == (self.tusimple is None):
            raise ConfigError("data-prep needs exactly one of synthetic or tusimple")
        if self.synthetic is not None and self.synthetic < 1:
            raise ConfigError(f"synthetic sample count must be positive, got {self.synthetic}")
        if self.tusimple is not None:
            _require_file(self.tusimple, 'tusimple label file')
            if not self.images or not Path(self.images).is_dir():
                raise ConfigError(f"image directory not found: {self.images}")
        _require_seed(self.seed)


@dataclass
class TrainConfig:
    dataset: Optional[str] = None
    output: str = os.path.join(Config.OUTPUT_ROOT, 'train')
    stages: List[str] = field(default_factory=lambda: ['mse:0.01:20', 'mse:0.001:10'])
    delta: Delta = 10.0
    kappa: float = 0.01
    layer: str = 'fc40'
    seed: int = Config.DEFAULT_SEED
    seeds: Optional[str] = None
    top_k: Optional[int] = None
    batch_size: int = 32
    warmup: bool = True
    reset_optimizer: bool = True
    validation_fraction: float = 0.1
    init_model: Optional[str] = None

    def validate(self):
        _require_file(self.dataset, 'dataset index', name='index.jsonl')
        if self.init_model:
            _require_file(self.init_model, 'initial model')
        if not self.stages:
            raise ConfigError("train needs at least one stage")
        _require_seed(self.seed)
        seed_list = self.seed_list()
        if self.top_k is not None and not 1 <= self.top_k <= len(seed_list):
            raise ConfigError(f"top-k must lie in 1..{len(seed_list)}, got {self.top_k}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation fraction must lie in [0, 1), got {self.validation_fraction}")
        if self.top_k is not None and self.validation_fraction == 0:
            raise ConfigError("top-k selection needs a validation split")
        _check_spec(self.delta, self.kappa)

    def seed_list(self) -> List[int]:
        """'0-19' or '0,3,7' -> seeds; a single seed when seeds is unset"""
        if self.seeds is None:
            return [self.seed]
        try:
            out = []
            for part in str(self.seeds).split(','):
                if '-' in part:
                    low, high = part.split('-')
                    out.extend(range(int(low), int(high) + 1))
                else:
                    out.append(int(part))
        except ValueError:
            raise ConfigError(f"seeds must look like '0-19' or '0,3,7', got '{self.seeds}'")
        if not out or any(s < 0 for s in out):
            raise ConfigError(f"seeds must be nonnegative, got '{self.seeds}'")
        return out


@dataclass
class CertifyConfig:
    model: Optional[str] = None
    dataset: Optional[str] = None
    output: str = os.path.join(Config.OUTPUT_ROOT, 'certify')
    delta: Delta = 10.0
    kappa: float = 0.01
    layer: str = 'fc40'
    empirical_samples: int = 0
    seed: int = Config.DEFAULT_SEED

    def validate(self):
        _require_file(self.model, 'model file')
        _require_file(self.dataset, 'dataset index', name='index.jsonl')
        if self.empirical_samples < 0:
            raise ConfigError(f"empirical samples must be nonnegative, got {self.empirical_samples}")
        _require_seed(self.seed)
        _check_spec(self.delta, self.kappa)


@dataclass
class CompareConfig:
    model_a: Optional[str] = None
    model_b: Optional[str] = None
    dataset: Optional[str] = None
    output: str = os.path.join(Config.OUTPUT_ROOT, 'compare')
    names: List[str] = field(default_factory=lambda: ['baseline', 'robust'])
    deviation_threshold: float = 80.0
    epsilon_start: float = 0.005
    epsilon_stop: float = 0.5
    epsilon_step: float = 0.005
    equality_band: float = 0.05
    tolerance: float = 10.0
    workers: int = Config.WORKERS

    def epsilon_grid(self) -> List[float]:
        if self.epsilon_step <= 0:
            raise ConfigError(f"epsilon step must be positive, got {self.epsilon_step}")
        count = int(round((self.epsilon_stop - self.epsilon_start) / self.epsilon_step)) + 1
        return [round(self.epsilon_start + k * self.epsilon_step, 9) for k in range(max(count, 0))]

    def attack_config(self):
        from services.attack_eval import AttackConfig
        return AttackConfig(
            deviation_threshold=self.deviation_threshold,
            epsilon_grid=tuple(self.epsilon_grid()),
            equality_band=self.equality_band,
            tolerance=self.tolerance,
        )

    def validate(self):
        _require_file(self.model_a, 'model A')
        _require_file(self.model_b, 'model B')
        _require_file(self.dataset, 'dataset index', name='index.jsonl')
        if len(self.names) != 2:
            raise ConfigError(f"compare needs two model names, got {self.names}")
        self.attack_config()


@dataclass
class RunConfig:
    """Effective settings of one command, loaded from YAML and then overridden by flags"""
    log_level: str = Config.LOG_LEVEL
    data_prep: DataPrepConfig = field(default_factory=DataPrepConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)

    def section(self, command: str):
        try:
            return getattr(self, command.replace('-', '_'))
        except AttributeError:
            raise ConfigError(f"unknown command section '{command}'")

    def with_overrides(self, command: str, overrides: dict) -> 'RunConfig':
        """A copy with every non-None override applied to the command's section"""
        section = self.section(command)
        known = {f.name for f in fields(section)}
        values = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key == 'log_level':
                continue
            if key not in known:
                raise ConfigError(f"'{key}' is not a {command} setting")
            values[key] = value
        updated = replace(self, **{command.replace('-', '_'): replace(section, **values)})
        if overrides.get('log_level'):
            updated.log_level = overrides['log_level']
        return updated

    def dump(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            yaml.safe_dump(asdict(self), f, sort_keys=False)


_SECTIONS = {
    'data_prep': DataPrepConfig,
    'train': TrainConfig,
    'certify': CertifyConfig,
    'compare': CompareConfig,
}


def load_run_config(path=None) -> RunConfig:
    """
    Load a YAML configuration file; missing sections and keys keep their defaults
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path, 'r') as f:
            raw = yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}")
    except yaml.YAMLError as e:
        logger.error(f"Error loading configuration: {e}")
        raise ConfigError(f"{path}: invalid YAML ({e})")

    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - set(_SECTIONS) - {'log_level'}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    sections = {}
    for name, cls in _SECTIONS.items():
        values = raw.get(name) or {}
        known = {f.name for f in fields(cls)}
        extra = set(values) - known
        if extra:
            raise ConfigError(f"{path}: unknown {name} settings {sorted(extra)}")
        sections[name] = cls(**values)
    return RunConfig(log_level=str(raw.get('log_level', Config.LOG_LEVEL)), **sections)


def _require_file(value, what: str, name: Optional[str] = None):
    if not value:
        raise ConfigError(f"missing {what} path")
    path = Path(value)
    if name and path.is_dir():
        path = path / name
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")


def _require_seed(seed: int):
    if seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {seed}")


def _check_spec(delta, kappa):
    from services.interval_propagation import RobustSpec
    try:
        RobustSpec(delta, 1, kappa)
    except ContractError as e:
        raise ConfigError(str(e))
