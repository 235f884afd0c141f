"""
This module writes the plottable CSV exports of a run
"""

import logging
import os

import numpy as np
import pandas as pd

from .engine.errors import OutputError
from .engine.flow_ingest import address_to_endpoint
from .engine.stat_disentangle import class_overlap_ratio, feature_stats, overlap_ratio
from .engine.training import score_stream


__all__ = ['export_distributions', 'export_representations', 'export_metrics', 'export_ablation', 'metrics_frame',
           'HISTOGRAM_BINS']

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 20


def _write(frame, out_dir, name):
    path = os.path.join(out_dir, name)

    try:
        os.makedirs(out_dir, exist_ok=True)
        frame.to_csv(path, index=False, float_format='%.17g')
    except OSError as e:
        raise OutputError('cannot write {}: {}'.format(path, e)) from e

    logger.info('wrote %s (%d rows)', path, len(frame))
    return path


def export_distributions(stream, out_dir, bins=HISTOGRAM_BINS):
    """
    Per-feature histograms on the unit interval of the normalized features and of their disentangled
    products, plus the average overlap ratio of both stages over all events and per attack class.

    :param stream: Stream with disentangled features attached
    :return: Paths of the histogram and overlap CSVs
    :rtype: (str, str)
    """
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows = []
    overlap = []

    for stage, matrix in (('raw', stream.features_norm), ('disentangled', stream.h)):
        for feature in range(matrix.shape[1]):
            counts, _ = np.histogram(np.clip(matrix[:, feature], 0.0, 1.0), bins=edges)
            density = counts / max(len(matrix), 1)

            for b in range(bins):
                rows.append({'stage': stage, 'feature': feature, 'bin_low': edges[b], 'bin_high': edges[b + 1],
                             'count': int(counts[b]), 'density': density[b]})

        means, stds = feature_stats(matrix)
        overlap.append({'stage': stage, 'overlap_ratio': overlap_ratio(means, stds),
                        'class_overlap_ratio': class_overlap_ratio(matrix, stream.attack_class)})

    return (_write(pd.DataFrame(rows), out_dir, 'distributions.csv'),
            _write(pd.DataFrame(overlap), out_dir, 'overlap.csv'))


def export_representations(model, stream, registry, out_dir):
    """
    Replays the whole stream and writes one row per touched node: id, endpoint, layer, whether the
    node took part in an attack flow, and every representation dimension.

    :return: Path of the CSV
    :rtype: str
    """
    model.reset_state()
    score_stream(model, stream, model.config.optim.batch_size)

    attack = stream.binary_label == 1
    involved = np.zeros(len(model.table), dtype=bool)
    involved[stream.src[attack]] = True
    involved[stream.dst[attack]] = True

    nodes = np.flatnonzero(model.table.touched)
    frame = pd.DataFrame(model.table.repr[nodes], columns=['d{}'.format(i) for i in range(model.table.embedding_dim)])
    endpoints = [address_to_endpoint(registry.address(int(n))) for n in nodes]
    frame.insert(0, 'node_id', nodes)
    frame.insert(1, 'endpoint', ['{}:{}'.format(ip, port) for ip, port in endpoints])
    frame.insert(2, 'layer', model.graph.node_layers[nodes])
    frame.insert(3, 'attack_involved', involved[nodes])

    return _write(frame, out_dir, 'representations.csv')


def metrics_frame(history, report=None):
    """
    One row per epoch followed by one row per attack class of ``report``

    :rtype: pandas.DataFrame
    """
    epochs = pd.DataFrame(history)
    epochs.insert(0, 'row', 'epoch')

    if report is None or not report.per_class_f1:
        return epochs

    classes = pd.DataFrame([{'row': 'class', 'class': name, 'f1': value, 'support': support}
                            for (name, value), support in zip(report.per_class_f1.items(), report.supports)])
    return pd.concat([epochs, classes], ignore_index=True, sort=False)


def export_metrics(history, report, out_dir):
    """
    :return: Path of ``metrics.csv``
    :rtype: str
    """
    return _write(metrics_frame(history, report), out_dir, 'metrics.csv')


def export_ablation(rows, out_dir):
    """
    :param rows: ``(variant, report)`` pairs as returned by :func:`ablate`
    :return: Path of ``metrics.csv`` with one row per variant
    :rtype: str
    """
    frame = pd.DataFrame([{'variant': name, 'f1': report.f1, 'auc': report.auc, 'precision': report.precision,
                           'recall': report.recall} for name, report in rows])
    return _write(frame, out_dir, 'metrics.csv')
