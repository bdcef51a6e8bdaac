"""
Run configuration.

A run config is a JSON document with nested sections. Values resolve as
defaults <- config file <- command-line overrides; process-level defaults
(output directory, worker count, log level, calibration file) come from
the environment / .env file.
"""
import copy
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from snn.columnar import NetworkBuildError, NetworkParams
from snn.gasearch import OPTIMUM, Chromosome, GaConfig
from snn.pingpong import WorldParams
from snn.utils import read_json

load_dotenv()

KINDS = ('train_eval', 'eval', 'ga', 'baseline', 'record_episode', 'calibrate')
USES_ENCODER = ('train_eval', 'eval', 'ga', 'baseline')


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def env_defaults() -> Dict[str, Any]:
    return {
        'output_dir': os.getenv('SNN_OUTPUT_DIR', '.tmp/runs'),
        'workers': int(os.getenv('SNN_WORKERS', '1')),
        'log_level': os.getenv('SNN_LOG_LEVEL', 'INFO'),
        'calibration_path': os.getenv('SNN_CALIBRATION') or None,
    }


def default_document() -> Dict[str, Any]:
    env = env_defaults()
    ga = asdict(GaConfig())
    ga['workers'] = env['workers']
    network = OPTIMUM.to_dict()
    network.update({'N': 3, 'L': 100, 'init_resource_range': None, 'block_duration': None,
                    'relay_refractory': None, 'column_sizes': None, 'seed': None})
    return {
        'kind': 'train_eval',
        'seed': 0,                      # environment seed; also the default network/encoder seed
        'sim_seconds': 2000.0,
        'eval_seconds': 600.0,
        'output_dir': env['output_dir'],
        'episode_path': None,
        'calibration_path': env['calibration_path'],
        'snapshot_path': None,
        'network': network,
        'plasticity': {'stability_enabled': True},   # False freezes stability at 0 (ablation)
        'world': asdict(WorldParams()),
        'encoder': {'rate_hz': 300.0, 'deterministic_rate': False},
        'ga': ga,
        'baseline': {'max_depth': 20, 'min_leaf': 50, 'readout': 'mean', 'train_seconds': 1400.0,
                     'features': 'state'},
        'traces': {'spikes': False, 'weights': True, 'stability': True, 'resources': True,
                   'prediction': True, 'episode': False, 'bin_ms': 10_000},
    }


def _merge(base: Dict[str, Any], update: Dict[str, Any], prefix: str = '') -> Dict[str, Any]:
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(path, "unknown field")
        if isinstance(base[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(path, f"expected a section, got {type(value).__name__}")
            _merge(base[key], value, path + '.')
        else:
            base[key] = value
    return base


@dataclass
class RunConfig:
    kind: str
    seed: int
    sim_seconds: float
    eval_seconds: float
    output_dir: str
    episode_path: Optional[str]
    calibration_path: Optional[str]
    snapshot_path: Optional[str]
    network: Dict[str, Any]
    plasticity: Dict[str, Any]
    world: Dict[str, Any]
    encoder: Dict[str, Any]
    ga: Dict[str, Any]
    baseline: Dict[str, Any]
    traces: Dict[str, Any]

    @property
    def sim_steps(self) -> int:
        return int(round(self.sim_seconds * 1000))

    @property
    def eval_steps(self) -> int:
        return int(round(self.eval_seconds * 1000))

    @property
    def network_seed(self) -> int:
        seed = self.network.get('seed')
        return self.seed if seed is None else int(seed)

    def chromosome(self) -> Chromosome:
        return Chromosome.from_dict(self.network)

    def network_params(self) -> NetworkParams:
        params = self.chromosome().network_params(self.network_seed, self.network['N'], self.network['L'])
        if self.network['init_resource_range'] is not None:
            params.init_resource_range = tuple(self.network['init_resource_range'])
        params.block_duration = self.network['block_duration']
        params.relay_refractory = self.network['relay_refractory']
        params.column_sizes = self.network['column_sizes']
        if not self.plasticity['stability_enabled']:
            params.plasticity.stability_enabled = False
        return params

    def world_params(self) -> WorldParams:
        return WorldParams(**self.world)

    def ga_config(self) -> GaConfig:
        return GaConfig(**self.ga)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError('kind', f"must be one of {', '.join(KINDS)}")
        if not isinstance(self.seed, int):
            raise ConfigError('seed', "must be an integer")
        if self.sim_seconds <= 0:
            raise ConfigError('sim_seconds', "must be > 0")
        if self.kind in ('train_eval', 'eval') and not 0 < self.eval_seconds <= self.sim_seconds:
            raise ConfigError('eval_seconds', "must be in (0, sim_seconds]")
        if self.kind in USES_ENCODER:
            if not self.calibration_path:
                raise ConfigError('calibration_path', "required for runs that encode the episode")
            if not os.path.exists(self.calibration_path):
                raise ConfigError('calibration_path', f"file not found: {self.calibration_path}")
        if self.episode_path and self.kind != 'record_episode' and not os.path.exists(self.episode_path):
            raise ConfigError('episode_path', f"file not found: {self.episode_path}")
        if self.kind == 'eval':
            if not self.snapshot_path or not os.path.exists(self.snapshot_path):
                raise ConfigError('snapshot_path', "eval needs an existing network snapshot")
        try:
            self.network_params().validate()
        except (NetworkBuildError, ValueError, TypeError) as e:
            raise ConfigError('network', str(e))
        try:
            self.world_params().validate()
        except (ValueError, TypeError) as e:
            raise ConfigError('world', str(e))
        try:
            self.ga_config().validate()
        except (ValueError, TypeError) as e:
            raise ConfigError('ga', str(e))
        if self.encoder['rate_hz'] <= 0 or self.encoder['rate_hz'] > 1000:
            raise ConfigError('encoder.rate_hz', "must be in (0, 1000]")
        if self.baseline['readout'] not in ('mean', 'mode'):
            raise ConfigError('baseline.readout', "must be 'mean' or 'mode'")
        if self.baseline['features'] not in ('state', 'spikes'):
            raise ConfigError('baseline.features', "must be 'state' or 'spikes'")
        if self.kind == 'baseline' and not 0 < self.baseline['train_seconds'] < self.sim_seconds:
            raise ConfigError('baseline.train_seconds', "must be in (0, sim_seconds)")
        if self.baseline['max_depth'] < 1 or self.baseline['min_leaf'] < 1:
            raise ConfigError('baseline', "max_depth and min_leaf must be >= 1")
        if self.traces['bin_ms'] < 1:
            raise ConfigError('traces.bin_ms', "must be >= 1")


def build_config(document: Dict[str, Any] = None, overrides: Dict[str, Any] = None) -> RunConfig:
    resolved = default_document()
    if document:
        _merge(resolved, copy.deepcopy(document))
    if overrides:
        _merge(resolved, {k: v for k, v in overrides.items() if v is not None})
    config = RunConfig(**{f.name: resolved[f.name] for f in fields(RunConfig)})
    config.validate()
    return config


def load_config(path: str = None, overrides: Dict[str, Any] = None) -> RunConfig:
    document = None
    if path:
        try:
            document = read_json(path)
        except FileNotFoundError:
            raise ConfigError('config', f"file not found: {path}")
        except ValueError as e:
            raise ConfigError('config', f"invalid JSON in {path}: {e}")
    return build_config(document, overrides)
