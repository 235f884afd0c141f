"""
This module contains the configuration sections of the engine and the EngineConfig that nests them

The file format is JSON. Keys may be nested by section or flat and dotted::

    {"diffusion": {"rk4_steps": 8}, "training.alpha": 0.5}
"""

import hashlib
import json
import logging

from ..engine.errors import ConfigError
from ..utils.base_json_object import BaseJsonObject
from .base_config import BaseConfigSection
from .base_config import ConfigField


__all__ = ['IngestConfig', 'AttackClassSpec', 'SyntheticSpec', 'DisentangleConfig', 'MemoryConfig',
           'DiffusionConfig', 'OptimConfig', 'TrainConfig', 'OutputConfig', 'EngineConfig', 'DEFAULT_ATTACK_CLASSES']

logger = logging.getLogger(__name__)


def _positive(value):
    return value > 0


def _non_negative(value):
    return value >= 0


def _fraction(value):
    return 0.0 < value < 1.0


class IngestConfig(BaseConfigSection):
    section_name = 'ingest'

    csv_path = ConfigField(str, None, optional=True, doc='Flow CSV. When None the synthetic corpus is used')
    train_fraction = ConfigField(float, 0.7, _fraction)
    val_fraction = ConfigField(float, 0.15, _fraction)
    router_prefixes = ConfigField(list, ['192.168.0.1'], doc='Addresses or CIDR networks of intermediate devices')
    degree_threshold = ConfigField(int, None, _positive, optional=True,
                                   doc='Distinct-neighbour count marking an intermediate device. '
                                       'None derives it from degree_percentile')
    degree_percentile = ConfigField(float, 99.0, lambda v: 0.0 <= v <= 100.0)
    edge_weight = ConfigField(str, 'unit', choices={'unit', 'count'})
    holdout_class = ConfigField(str, None, optional=True, doc='Attack class removed from train and validation')
    intermediate_classes = ConfigField(list, ['MITM'],
                                       doc='Attack classes whose training-split source addresses are marked as '
                                           'intermediate devices')

    def validate(self):
        if self.train_fraction + self.val_fraction >= 1.0:
            raise ConfigError('ingest: train_fraction + val_fraction must leave room for a test split')


class AttackClassSpec(BaseConfigSection):
    """
    One attack cluster of the synthetic corpus.

    Every class draws its features around the same set of levels as benign traffic, assigned to the
    features in a different order. ``level_shift`` rotates the benign order; without it the rotation
    is derived from the class position. An explicit ``mean`` replaces the level assignment.
    """
    section_name = 'synthetic.attack_classes'

    name = ConfigField(str, 'Attack')
    proportion = ConfigField(float, 0.05, _fraction)
    level_shift = ConfigField(int, None, _positive, optional=True)
    mean = ConfigField(lambda v: [float(x) for x in v], None, optional=True)
    std = ConfigField(lambda v: [float(x) for x in v], None, optional=True)
    attacker_count = ConfigField(int, 3, _positive)


def _attack_class_list(value):
    if not isinstance(value, (list, tuple)):
        raise ValueError('expected a list of attack classes')

    return [v if isinstance(v, AttackClassSpec) else AttackClassSpec(v) for v in value]


DEFAULT_ATTACK_CLASSES = [
    {'name': 'DDoS', 'proportion': 0.10},
    {'name': 'MITM', 'proportion': 0.06},
    {'name': 'Scanning', 'proportion': 0.06},
    {'name': 'Backdoor', 'proportion': 0.04},
]


class SyntheticSpec(BaseConfigSection):
    section_name = 'synthetic'

    node_count = ConfigField(int, 200)
    layer1_fraction = ConfigField(float, 0.05)
    flow_count = ConfigField(int, 20000)
    feature_count = ConfigField(int, 5)
    time_horizon_ms = ConfigField(int, 86400000)
    start_timestamp_ms = ConfigField(int, 1600000000000, _non_negative)
    mean_duration_ms = ConfigField(float, 1000.0, _non_negative)
    feature_std = ConfigField(float, 0.055, _positive, doc='Spread of every class around its feature levels')
    attack_classes = ConfigField(_attack_class_list, _attack_class_list(DEFAULT_ATTACK_CLASSES))

    def validate(self):
        for key in ('node_count', 'flow_count', 'feature_count', 'time_horizon_ms'):
            if getattr(self, key) <= 0:
                raise ConfigError('synthetic.{} must be positive, got {}'.format(key, getattr(self, key)))

        if not 0.0 <= self.layer1_fraction < 1.0:
            raise ConfigError('synthetic.layer1_fraction must lie in [0, 1)')

        if sum(c.proportion for c in self.attack_classes) >= 1.0:
            raise ConfigError('synthetic: attack proportions must sum below 1')

        names = [c.name for c in self.attack_classes]

        if len(set(names)) != len(names) or 'Benign' in names:
            raise ConfigError('synthetic: attack class names must be unique and differ from Benign')

        for spec in self.attack_classes:
            for key in ('mean', 'std'):
                vector = getattr(spec, key)
                if vector is not None and len(vector) != self.feature_count:
                    raise ConfigError('synthetic: {}.{} needs {} values'.format(spec.name, key, self.feature_count))


class DisentangleConfig(BaseConfigSection):
    section_name = 'disentangle'

    w_min = ConfigField(float, 0.0)
    w_max = ConfigField(float, 1.0)
    budget = ConfigField(float, 1.0, _positive)
    lp_tolerance = ConfigField(float, 1e-9, _positive)
    objective_variant = ConfigField(str, 'eq5', choices={'eq5', 'eq5star'})
    memo_quantum = ConfigField(float, 1e-4, _positive)

    def validate(self):
        if self.w_min > self.w_max:
            raise ConfigError('disentangle: w_min must not exceed w_max')


class MemoryConfig(BaseConfigSection):
    section_name = 'memory'

    memory_dim = ConfigField(int, 150, _positive)
    message_dim = ConfigField(int, 100, _positive)
    embedding_dim = ConfigField(int, 100, _positive)
    time_encoding_dim = ConfigField(int, 8, _positive)
    projection_init = ConfigField(str, 'zeros', choices={'zeros', 'uniform'},
                                  doc='Initial weights of the memory to representation projection')


class DiffusionConfig(BaseConfigSection):
    section_name = 'diffusion'

    integrator = ConfigField(str, 'rk4', choices={'rk4', 'rk45'})
    rk4_steps = ConfigField(int, 4, _positive)
    rk45_atol = ConfigField(float, 1e-6, _positive)
    rk45_rtol = ConfigField(float, 1e-4, _positive)
    rk45_min_step = ConfigField(float, 1e-8, _positive)
    edge_horizon_s = ConfigField(float, 1e4, _positive)
    hidden_units = ConfigField(int, 64, _positive)
    hidden_channels = ConfigField(int, 256, _positive)


class OptimConfig(BaseConfigSection):
    section_name = 'optim'

    lr = ConfigField(float, 0.01, _positive)
    weight_decay = ConfigField(float, 1e-5, _non_negative)
    lr_decay = ConfigField(float, 0.9, lambda v: 0.0 < v <= 1.0)
    epochs = ConfigField(int, 500, _positive)
    batch_size = ConfigField(int, 200, _positive)
    seed = ConfigField(int, 7, _non_negative)


class TrainConfig(BaseConfigSection):
    section_name = 'training'

    alpha = ConfigField(float, 0.3, _non_negative, doc='Weight of the smoothness loss')
    beta = ConfigField(float, 0.7, _non_negative, doc='Weight of the representation disentanglement loss')
    patience = ConfigField(int, 5, _positive)
    scheduler_patience = ConfigField(int, 3, _positive)
    cascade_heads = ConfigField(bool, False)
    diffusion_writeback = ConfigField(bool, True)
    no_sd = ConfigField(bool, False)
    no_rd = ConfigField(bool, False)
    no_mlgrand = ConfigField(bool, False)
    measure_throughput = ConfigField(bool, False)
    max_batches = ConfigField(int, None, _positive, optional=True, doc='Caps the training batches per epoch')


class OutputConfig(BaseConfigSection):
    section_name = 'output'

    out_dir = ConfigField(str, 'runs/latest')


class EngineConfig(BaseJsonObject):
    """
    The effective configuration: defaults, overridden by a file, overridden by flags
    """

    sections = {
        'ingest': IngestConfig,
        'synthetic': SyntheticSpec,
        'disentangle': DisentangleConfig,
        'memory': MemoryConfig,
        'diffusion': DiffusionConfig,
        'optim': OptimConfig,
        'training': TrainConfig,
        'output': OutputConfig,
    }

    missing_field_error = staticmethod(lambda field: ConfigError('missing required key {}'.format(field)))

    def __init__(self, data=None):
        for name, section in self.sections.items():
            setattr(self, name, section())

        super().__init__(data)

    def __repr__(self):
        return '<EngineConfig: {}>'.format(self.config_hash()[:12])

    @classmethod
    def from_file(cls, path):
        """
        :param path: JSON config file
        :exception ConfigError: the file is not valid JSON or holds unknown keys
        """
        with open(path, 'r') as f:
            text = f.read()

        try:
            return cls(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError('{}: invalid JSON: {}'.format(path, e)) from e

    def load_optional_fields_from_dict(self, values):
        super().load_optional_fields_from_dict(values)

        nested = {}

        for key, value in values.items():
            if '.' in key:
                section, _, field = key.partition('.')
                nested.setdefault(section, {})[field] = value
            elif isinstance(value, dict):
                nested.setdefault(key, {}).update(value)
            else:
                raise ConfigError('key {} is neither a section nor a dotted section.key'.format(key))

        for section, fields in nested.items():
            if section not in self.sections:
                raise ConfigError('unknown config section {}'.format(section))

            getattr(self, section).load_from_dict(fields)

    def apply_overrides(self, overrides):
        """
        :param overrides: Dotted keys mapped to values, e.g. ``{'optim.seed': 3}``
        :type overrides: dict
        :return: self
        """
        self.load_from_dict({k: v for k, v in overrides.items() if v is not None})
        return self

    def copy(self):
        return EngineConfig(self.to_dict())

    def to_dict(self):
        return {name: getattr(self, name).to_dict() for name in self.sections}

    def config_hash(self):
        """
        :return: SHA-256 of the canonical JSON dump of the effective config
        :rtype: str
        """
        return hashlib.sha256(self.to_json().encode('utf-8')).hexdigest()
