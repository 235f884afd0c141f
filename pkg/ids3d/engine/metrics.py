"""
This module contains the evaluation report and the functions computing its metrics
"""

import logging

import numpy as np
from sklearn.metrics import confusion_matrix, f1_score, precision_score, recall_score, roc_auc_score

from ..utils.base_json_object import BaseJsonObject


__all__ = ['MetricsReport', 'binary_metrics', 'multi_metrics', 'recall_of']

logger = logging.getLogger(__name__)

_FIELDS = ('mode', 'split', 'event_count', 'f1', 'auc', 'precision', 'recall', 'confusion_matrix', 'supports',
           'classes', 'per_class_f1', 'macro_f1', 'holdout_class', 'holdout_recall', 'reference_recall',
           'throughput_flows_per_min')


class MetricsReport(BaseJsonObject):
    """
    Metrics of one evaluation pass.

    Every key is always present in :meth:`to_dict`; metrics a mode does not produce are None.
    The confusion matrix has true classes as rows, so its row sums equal ``supports``.
    """

    def __init__(self, data=None):
        for name in _FIELDS:
            setattr(self, name, None)

        super().__init__(data)

    def __repr__(self):
        return '<MetricsReport: {} {} f1={}>'.format(self.mode, self.split, self.f1)

    def load_optional_fields_from_dict(self, values):
        super().load_optional_fields_from_dict(values)

        for name in _FIELDS:
            if name in values:
                setattr(self, name, values[name])

    def to_dict(self):
        return {name: getattr(self, name) for name in _FIELDS}

    def update(self, **values):
        for name, value in values.items():
            assert name in _FIELDS, name
            setattr(self, name, value)

        _rates_in_unit_interval(self)
        return self


def _rates_in_unit_interval(report):
    for name in ('f1', 'auc', 'precision', 'recall', 'macro_f1', 'holdout_recall', 'reference_recall'):
        value = getattr(report, name)
        assert value is None or 0.0 <= value <= 1.0, (name, value)


def binary_metrics(labels, attack_probs, threshold=0.5):
    """
    :param labels: 0 benign, 1 attack
    :param attack_probs: Attack probability of every event
    :return: f1, auc, precision, recall, confusion matrix and supports. The AUC is None when only one
             class occurs in ``labels``
    :rtype: dict
    """
    labels = np.asarray(labels, dtype=np.int64)
    attack_probs = np.asarray(attack_probs, dtype=np.float64)
    predicted = (attack_probs >= threshold).astype(np.int64)

    if len(np.unique(labels)) < 2:
        logger.warning('AUC is undefined: the ground truth holds a single class')
        auc = None
    else:
        auc = float(roc_auc_score(labels, attack_probs))

    matrix = confusion_matrix(labels, predicted, labels=[0, 1])

    return {
        'f1': float(f1_score(labels, predicted, zero_division=0)),
        'auc': auc,
        'precision': float(precision_score(labels, predicted, zero_division=0)),
        'recall': float(recall_score(labels, predicted, zero_division=0)),
        'confusion_matrix': matrix.tolist(),
        'supports': matrix.sum(axis=1).tolist(),
    }


def multi_metrics(class_index, class_probs, classes):
    """
    :param class_index: True head output of every attack event
    :param class_probs: Class probabilities, one row per attack event
    :type classes: list of str
    :return: per-class f1 keyed by class name, macro f1, confusion matrix and supports
    :rtype: dict
    """
    class_index = np.asarray(class_index, dtype=np.int64)
    labels = list(range(len(classes)))

    if len(class_index) == 0:
        return {'per_class_f1': {name: None for name in classes}, 'macro_f1': None,
                'confusion_matrix': [[0] * len(classes) for _ in classes], 'supports': [0] * len(classes)}

    predicted = np.argmax(np.asarray(class_probs), axis=1)
    per_class = f1_score(class_index, predicted, labels=labels, average=None, zero_division=0)
    matrix = confusion_matrix(class_index, predicted, labels=labels)

    return {
        'per_class_f1': {name: float(value) for name, value in zip(classes, per_class)},
        'macro_f1': float(f1_score(class_index, predicted, labels=labels, average='macro', zero_division=0)),
        'confusion_matrix': matrix.tolist(),
        'supports': matrix.sum(axis=1).tolist(),
    }


def recall_of(predicted_attack, mask):
    """
    Share of the rows selected by ``mask`` that were flagged as attacks

    :rtype: float or None
    """
    mask = np.asarray(mask, dtype=bool)

    if not np.any(mask):
        return None

    return float(np.mean(np.asarray(predicted_attack, dtype=bool)[mask]))
