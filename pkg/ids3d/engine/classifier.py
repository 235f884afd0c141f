"""
This module contains the two-step prediction heads and the training losses.

The binary head separates benign from attack traffic. The multi head types attacks and is only
trained on attack rows. Both read ``[x_src, x_dst, h]`` and, with cascading enabled, the multi
head additionally reads the binary probabilities. Both heads emit log-probabilities.
"""

import logging

import numpy as np

from .errors import DataError
from .nn_core import MLP, Module, Tensor, as_tensor, concat, exp, log_softmax, row_norms, take_rows


__all__ = ['PredictionHeads', 'LossTerms', 'class_indices', 'class_weights', 'edge_logits', 'intrusion_loss',
           'smooth_loss', 'total_loss']

logger = logging.getLogger(__name__)


class PredictionHeads(Module):

    def __init__(self, input_dim, hidden_units, classes, rng, cascade=False, name='heads'):
        """
        :param input_dim: Width of ``[x_src, x_dst, h]``
        :param classes: Attack class names of the training split, in head output order
        :type classes: list of str
        :param cascade: Feed the binary probabilities to the multi head
        """
        super().__init__(name)
        self.classes = list(classes)
        self.cascade = cascade
        self.class_weights = np.ones(len(self.classes))

        self.add_module('binary', MLP(name + '.binary', input_dim, hidden_units, 2, rng))

        if self.classes:
            multi_in = input_dim + (2 if cascade else 0)
            self.add_module('multi', MLP(name + '.multi', multi_in, hidden_units, len(self.classes), rng))
        else:
            self.multi = None

    def __repr__(self):
        return '<PredictionHeads: {} classes{}>'.format(len(self.classes), ', cascade' if self.cascade else '')

    @property
    def class_count(self):
        return len(self.classes)


def edge_logits(heads, x_src, x_dst, h):
    """
    Runs both heads on a batch of edges.

    :return: Benign/attack log-probabilities (column 0 benign, column 1 attack) and attack class
             log-probabilities, None when the training split had no attack class
    :rtype: (Tensor, Tensor or None)
    """
    inputs = concat([x_src, x_dst, h], axis=1)
    binary = log_softmax(heads.binary(inputs))

    if heads.multi is None:
        return binary, None

    if heads.cascade:
        inputs = concat([inputs, exp(binary)], axis=1)

    return binary, log_softmax(heads.multi(inputs))


def class_indices(attack_class, classes, binary_label):
    """
    Maps attack class names to head outputs. Benign rows map to -1.

    :exception DataError: an attack row carries a class the head does not know
    :rtype: numpy.ndarray
    """
    position = {name: i for i, name in enumerate(classes)}
    out = np.full(len(attack_class), -1, dtype=np.int64)

    for i, (name, label) in enumerate(zip(attack_class, binary_label)):
        if label == 0:
            continue

        if name not in position:
            raise DataError('attack class {!r} is not in the class set {}'.format(name, list(classes)))

        out[i] = position[name]

    return out


def class_weights(indices, class_count):
    """
    Inverse class frequencies scaled to mean 1. Classes absent from ``indices`` get the largest weight.

    :param indices: Class index of every attack row
    :rtype: numpy.ndarray
    """
    counts = np.bincount(np.asarray(indices, dtype=np.int64), minlength=class_count).astype(np.float64)

    if class_count == 0:
        return counts

    inverse = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)

    if not np.any(counts > 0):
        return np.ones(class_count)

    inverse[counts == 0] = inverse.max()
    return inverse / inverse.mean()


def _picked(values, index):
    onehot = np.zeros(values.shape)
    onehot[np.arange(len(index)), index] = 1.0
    return (values * onehot).sum(axis=1)


def intrusion_loss(binary_log_probs, class_log_probs, binary_label, class_index, weights):
    """
    Binary cross-entropy over all rows plus class-weighted cross-entropy over the attack rows, summed.

    :param binary_log_probs: Log-probabilities of the binary head
    :param class_log_probs: Log-probabilities of the multi head, or None
    :param binary_label: 0 benign, 1 attack
    :param class_index: Head output of each attack row, -1 for benign rows
    :param weights: Weight of every attack class
    :rtype: Tensor
    """
    binary_label = np.asarray(binary_label, dtype=np.int64)
    class_index = np.asarray(class_index, dtype=np.int64)

    if np.any((binary_label != 0) & (binary_label != 1)):
        raise DataError('binary labels must be 0 or 1')

    loss = -_picked(binary_log_probs, binary_label).sum()
    attack_rows = np.flatnonzero(class_index >= 0)

    if class_log_probs is None or len(attack_rows) == 0:
        return loss

    rows = take_rows(class_log_probs, attack_rows)
    classes = class_index[attack_rows]
    return loss - (_picked(rows, classes) * np.asarray(weights)[classes]).sum()


def smooth_loss(current, previous):
    """
    Sum over touched nodes of the Euclidean length of their representation change
    """
    current = as_tensor(current)

    if current.shape[0] == 0:
        return Tensor(0.0, requires_grad=False)

    return row_norms(current - previous).sum()


class LossTerms:
    """
    Scalar values of the three loss terms and their weighted total
    """

    def __init__(self, intrusion, smooth, disentangle, alpha, beta):
        self.intrusion = intrusion
        self.smooth = smooth
        self.disentangle = disentangle
        self.alpha = alpha
        self.beta = beta

    def __repr__(self):
        return '<LossTerms: total={:.6g}>'.format(self.total)

    @property
    def total(self):
        return self.intrusion + self.alpha * self.smooth + self.beta * self.disentangle

    def to_dict(self):
        return {
            'intrusion': self.intrusion,
            'smooth': self.smooth,
            'disentangle': self.disentangle,
            'total': self.total,
        }


def total_loss(intrusion, smooth, disentangle, alpha, beta):
    """
    ``L_Int + alpha * L_Smooth + beta * L_Dis``. A zero ``beta`` leaves the disentanglement term out of the tape.

    :return: The differentiable total and the per-term values
    :rtype: (Tensor, LossTerms)
    """
    intrusion, smooth, disentangle = as_tensor(intrusion), as_tensor(smooth), as_tensor(disentangle)
    total = intrusion + smooth * alpha

    if beta != 0.0:
        total = total + disentangle * beta

    terms = LossTerms(intrusion.item(), smooth.item(), disentangle.item() if beta != 0.0 else 0.0, alpha, beta)
    logger.debug('loss int=%.6g smooth=%.6g dis=%.6g total=%.6g', terms.intrusion, terms.smooth, terms.disentangle,
                 terms.total)
    return total, terms
