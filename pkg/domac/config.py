# Process settings come from the environment, optionally from a .env file.
# Run settings come from a config file validated by schemas.TrainConfigSchema.
from dotenv import load_dotenv
import os

# Load .env file if it exists (for local development)
if os.path.exists('.env'):
    load_dotenv()

import io
from dataclasses import asdict, dataclass, field, fields as dc_fields
from typing import Optional, Tuple

from dotenv.parser import parse_stream
from marshmallow import ValidationError

from domac.env import GridConfig
from domac.errors import ConfigurationError

RUNS_DIR = os.environ.get('DOMAC_RUNS_DIR', 'runs')
LOG_LEVEL = os.environ.get('DOMAC_LOG_LEVEL', 'INFO')
DEBUG = os.environ.get('DOMAC_DEBUG', '').lower() in ('1', 'true', 'yes')

NONE_WORDS = ('', 'none', 'null')


@dataclass(frozen=True)
class Preset:
    grid_size: int
    n_predators: int
    n_preys: int
    sample_size: Optional[int]   # None: enumerate every joint prediction


PRESETS = {
    'pp2v1': Preset(grid_size=5, n_predators=2, n_preys=1, sample_size=None),
    'pp4v2': Preset(grid_size=7, n_predators=4, n_preys=2, sample_size=10),
}


@dataclass(frozen=True)
class EnvSection:
    preset: str = 'pp2v1'
    grid_size: Optional[int] = None
    n_predators: Optional[int] = None
    n_preys: Optional[int] = None
    view_size: int = 5
    max_steps: int = 100
    prey_policy: str = 'uniform'


@dataclass(frozen=True)
class AlgoSection:
    gamma: float = 0.95
    alpha: float = 0.01
    quantiles: int = 5
    kappa: float = 1.0
    quantile_levels: str = 'midpoint'
    sample_size: Optional[int] = None
    enumeration_cap: int = 10000
    hidden_dims: Tuple[int, ...] = (64, 64, 64)
    hidden_activation: str = 'tanh'


@dataclass(frozen=True)
class OptimSection:
    lr_actor: float = 2.5e-4
    lr_critic: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class RolloutSection:
    update_mode: str = 'episodes'
    episodes_per_update: int = 10
    forward_steps: int = 5
    n_envs: int = 1
    workers: int = 1


@dataclass(frozen=True)
class EvalSection:
    every: int = 100
    episodes: int = 100
    checkpoint_every: int = 100
    record_wall_time: bool = False
    dump_trajectories: bool = False


@dataclass(frozen=True)
class AblationSection:
    mask_obs: bool = False
    om_dim: int = 5
    om_frozen: str = 'trained'


SECTION_TYPES = {
    'env': EnvSection,
    'algo': AlgoSection,
    'optim': OptimSection,
    'rollout': RolloutSection,
    'eval': EvalSection,
    'ablation': AblationSection,
}


@dataclass(frozen=True)
class TrainConfig:
    variant: str = 'DOMAC'
    seed: int = 0
    episodes: int = 15000
    env: EnvSection = field(default_factory=EnvSection)
    algo: AlgoSection = field(default_factory=AlgoSection)
    optim: OptimSection = field(default_factory=OptimSection)
    rollout: RolloutSection = field(default_factory=RolloutSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    @classmethod
    def from_dict(cls, data):
        kwargs = {k: v for k, v in data.items() if k not in SECTION_TYPES}
        for name, section_type in SECTION_TYPES.items():
            section = data.get(name) or {}
            if isinstance(section, section_type):
                kwargs[name] = section
            else:
                kwargs[name] = section_type(**section)
        return cls(**kwargs)

    def to_dict(self):
        return asdict(self)

    def grid_config(self) -> GridConfig:
        preset = PRESETS[self.env.preset]
        return GridConfig(
            grid_size=self.env.grid_size or preset.grid_size,
            n_predators=self.env.n_predators or preset.n_predators,
            n_preys=self.env.n_preys or preset.n_preys,
            view_size=self.env.view_size,
            max_steps=self.env.max_steps,
            mask_opponent_obs=self.ablation.mask_obs,
            prey_policy=self.env.prey_policy,
        )

    @property
    def sample_size(self) -> Optional[int]:
        """l for sampled marginal policies; None means exact enumeration."""
        if self.algo.sample_size is not None:
            return self.algo.sample_size
        return PRESETS[self.env.preset].sample_size

    def with_overrides(self, **sections):
        """``with_overrides(seed=3, algo={'quantiles': 3})`` -> validated copy."""
        data = self.to_dict()
        for key, value in sections.items():
            if key in SECTION_TYPES:
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return load_config_dict(data)


def _short_keys():
    """Bare section keys that name exactly one field, e.g. ``gamma`` -> ``algo.gamma``."""
    top = {f.name for f in dc_fields(TrainConfig)}
    owners = {}
    for section, section_type in SECTION_TYPES.items():
        for f in dc_fields(section_type):
            owners.setdefault(f.name, []).append(f"{section}.{f.name}")
    return {name: keys[0] for name, keys in owners.items() if len(keys) == 1 and name not in top}


SHORT_KEYS = _short_keys()


def _plain(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def load_config_dict(data, lines=None) -> TrainConfig:
    """Validate a nested mapping through TrainConfigSchema.

    ``lines`` maps dotted keys to config-file line numbers for error messages.
    """
    from domac.schemas import TrainConfigSchema

    data = {k: ({kk: _plain(vv) for kk, vv in v.items()} if isinstance(v, dict) else _plain(v))
            for k, v in data.items()}
    for name in SECTION_TYPES:
        data.setdefault(name, {})
    try:
        return TrainConfigSchema().load(data)
    except ValidationError as err:
        field_name, message = _first_error(err.messages)
        line = (lines or {}).get(field_name)
        raise ConfigurationError(message, field=field_name, line=line,
                                 details={"errors": err.messages})


def _first_error(messages, prefix=''):
    for key in sorted(messages, key=str):
        value = messages[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            return _first_error(value, prefix=f"{name}.")
        if isinstance(value, list):
            return name, "; ".join(str(v) for v in value)
        return name, str(value)
    return prefix.rstrip('.') or 'config', 'invalid value'


def parse_config_text(text: str) -> TrainConfig:
    """Parse dotenv-style ``key = value`` lines; one nesting level via ``section.key``."""
    data, lines = {}, {}
    for binding in parse_stream(io.StringIO(text)):
        # a binding's text starts with any blank lines that precede it
        raw = binding.original.string
        line = binding.original.line + raw[:len(raw) - len(raw.lstrip())].count('\n')
        if binding.error:
            raise ConfigurationError(f"cannot parse {binding.original.string.strip()!r}",
                                     field='config', line=line)
        if binding.key is None:
            continue
        key = binding.key.strip()
        value = binding.value
        if value is not None and value.strip().lower() in NONE_WORDS:
            value = None
        parts = key.split('.')
        if len(parts) > 2 or not all(parts):
            raise ConfigurationError("keys allow one nesting level (section.key)", field=key, line=line)
        if len(parts) == 1 and key in SHORT_KEYS:
            key = SHORT_KEYS[key]
            parts = key.split('.')
        if key in lines:
            raise ConfigurationError(f"duplicate key, first set on line {lines[key]}", field=key, line=line)
        lines[key] = line
        if len(parts) == 1:
            if key in SECTION_TYPES:
                raise ConfigurationError("a section name needs a key (section.key)", field=key, line=line)
            data[key] = value
        else:
            section, name = parts
            if section not in SECTION_TYPES:
                raise ConfigurationError(f"unknown section {section!r}", field=key, line=line)
            data.setdefault(section, {})[name] = value
    return load_config_dict(data, lines)


def parse_config(path) -> TrainConfig:
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_config_text(handle.read())


def _format_value(value):
    if value is None:
        return 'none'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (tuple, list)):
        return ','.join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: TrainConfig) -> str:
    out = []
    for f in dc_fields(config):
        if f.name in SECTION_TYPES:
            continue
        out.append(f"{f.name}={_format_value(getattr(config, f.name))}")
    for name in SECTION_TYPES:
        section = getattr(config, name)
        out.append('')
        for f in dc_fields(section):
            out.append(f"{name}.{f.name}={_format_value(getattr(section, f.name))}")
    return '\n'.join(out) + '\n'


def default_config(**overrides) -> TrainConfig:
    return TrainConfig().with_overrides(**overrides) if overrides else load_config_dict({})
