"""
This module saves and restores trained models.

A checkpoint is a binary file of little-endian float64 arrays behind a magic header, plus a JSON
sidecar describing the arrays (name, shape, offset) and everything needed to rebuild the model:
the effective config, the node registry, the normalization statistics and the class list.
"""

import json
import logging
import os
import struct

import numpy as np

from .config.engine_config import EngineConfig
from .engine.errors import CheckpointError
from .engine.flow_ingest import FeatureStats, NodeRegistry
from .engine.nn_core import OptimizerState
from .engine.training import IntrusionModel


__all__ = ['Checkpoint', 'save_checkpoint', 'load_checkpoint', 'sidecar_path', 'FORMAT_VERSION']

logger = logging.getLogger(__name__)

MAGIC = b'IDS3DCKP'
FORMAT_VERSION = 1
_HEADER = struct.Struct('<8sI')
_DTYPE = np.dtype('<f8')


def sidecar_path(path):
    """
    ``runs/checkpoint.bin`` -> ``runs/checkpoint.shapes.json``
    """
    return os.path.splitext(path)[0] + '.shapes.json'


class Checkpoint:
    """
    A restored model with its optimizer state and the ingestion artifacts it was trained with
    """

    def __init__(self, model, optimizer, registry, feature_stats, node_layers, config, config_hash):
        self.model = model
        self.optimizer = optimizer
        self.registry = registry
        self.feature_stats = feature_stats
        self.node_layers = node_layers
        self.config = config
        self.config_hash = config_hash

    def __repr__(self):
        return '<Checkpoint: {}>'.format(self.config_hash[:12])

    @property
    def classes(self):
        return self.model.classes


def _arrays(model, optimizer):
    arrays = [('param', name, p.values) for name, p in sorted(model.named_parameters().items())]

    for kind, moments in (('first_moment', optimizer.first_moments), ('second_moment', optimizer.second_moments)):
        arrays.extend((kind, name, value) for name, value in sorted(moments.items()))

    arrays.append(('class_weights', 'heads.class_weights', model.heads.class_weights))
    return arrays


def save_checkpoint(path, model, optimizer, ingest_result):
    """
    Writes the binary file and its sidecar

    :type model: IntrusionModel
    :type optimizer: OptimizerState
    :param ingest_result: Source of the registry, the normalization statistics and the layers
    :type ingest_result: IngestResult
    :exception CheckpointError: the files cannot be written
    """
    entries = []
    offset = _HEADER.size
    chunks = []

    for kind, name, value in _arrays(model, optimizer):
        data = np.ascontiguousarray(value, dtype=_DTYPE)
        entries.append({'kind': kind, 'name': name, 'shape': list(data.shape), 'offset': offset})
        chunks.append(data.tobytes())
        offset += data.nbytes

    sidecar = {
        'format_version': FORMAT_VERSION,
        'config_hash': model.config.config_hash(),
        'config': model.config.to_dict(),
        'feature_count': model.feature_count,
        'classes': model.classes,
        'entries': entries,
        'optimizer': {
            'lr': optimizer.lr,
            'weight_decay': optimizer.weight_decay,
            'lr_decay': optimizer.lr_decay,
            'beta1': optimizer.beta1,
            'beta2': optimizer.beta2,
            'eps': optimizer.eps,
            'step_count': optimizer.step_count,
        },
        'registry': ingest_result.registry.to_list(),
        'node_layers': ingest_result.node_layers.tolist(),
        'feature_stats': {
            'min': ingest_result.feature_stats.minimum.tolist(),
            'max': ingest_result.feature_stats.maximum.tolist(),
        },
    }

    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        with open(path, 'wb') as f:
            f.write(_HEADER.pack(MAGIC, FORMAT_VERSION))
            for chunk in chunks:
                f.write(chunk)

        with open(sidecar_path(path), 'w') as f:
            json.dump(sidecar, f, sort_keys=True, indent=1)
    except OSError as e:
        raise CheckpointError('cannot write checkpoint {}: {}'.format(path, e)) from e

    logger.info('saved checkpoint %s (%d arrays, %d bytes)', path, len(entries), offset)


def _read(path):
    try:
        with open(path, 'rb') as f:
            blob = f.read()

        with open(sidecar_path(path), 'r') as f:
            sidecar = json.load(f)
    except (OSError, ValueError) as e:
        raise CheckpointError('cannot read checkpoint {}: {}'.format(path, e)) from e

    if len(blob) < _HEADER.size:
        raise CheckpointError('{} is truncated'.format(path))

    magic, version = _HEADER.unpack_from(blob)

    if magic != MAGIC:
        raise CheckpointError('{} is not a checkpoint'.format(path))

    if version != FORMAT_VERSION or sidecar.get('format_version') != FORMAT_VERSION:
        raise CheckpointError('unsupported checkpoint version {}'.format(version))

    return blob, sidecar


def load_checkpoint(path, config=None):
    """
    Rebuilds the model of a checkpoint.

    :param config: Config of the current run. A hash differing from the stored one is reported as a
                   warning; the stored config always rebuilds the model
    :type config: EngineConfig
    :rtype: Checkpoint
    :exception CheckpointError: missing, truncated or inconsistent files
    """
    blob, sidecar = _read(path)
    stored = EngineConfig(sidecar['config'])

    if config is not None and config.config_hash() != sidecar['config_hash']:
        logger.warning('config hash %s differs from the checkpoint\'s %s', config.config_hash()[:12],
                       sidecar['config_hash'][:12])

    node_layers = np.asarray(sidecar['node_layers'], dtype=np.int64)
    model = IntrusionModel(stored, sidecar['feature_count'], node_layers, sidecar['classes'])
    params = model.named_parameters()
    opt = sidecar['optimizer']
    optimizer = OptimizerState(lr=opt['lr'], weight_decay=opt['weight_decay'], lr_decay=opt['lr_decay'],
                               beta1=opt['beta1'], beta2=opt['beta2'], eps=opt['eps'])
    optimizer.step_count = opt['step_count']

    for entry in sidecar['entries']:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape)) if shape else 1
        end = entry['offset'] + count * _DTYPE.itemsize

        if end > len(blob):
            raise CheckpointError('{}: array {} runs past the end of the file'.format(path, entry['name']))

        value = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=entry['offset']).reshape(shape)
        value = value.astype(np.float64)
        kind = entry['kind']

        if kind == 'param':
            if entry['name'] not in params:
                raise CheckpointError('{}: unknown parameter {}'.format(path, entry['name']))
            params[entry['name']].values = value
        elif kind == 'first_moment':
            optimizer.first_moments[entry['name']] = value
        elif kind == 'second_moment':
            optimizer.second_moments[entry['name']] = value
        elif kind == 'class_weights':
            model.heads.class_weights = value
        else:
            raise CheckpointError('{}: unknown array kind {}'.format(path, kind))

    stats = sidecar['feature_stats']
    logger.info('loaded checkpoint %s', path)

    return Checkpoint(model, optimizer, NodeRegistry(sidecar['registry']), FeatureStats(stats['min'], stats['max']),
                      node_layers, stored, sidecar['config_hash'])
