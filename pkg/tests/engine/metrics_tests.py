"""
This module provides classes for testing the evaluation metrics
"""

import unittest

import numpy as np

from ids3d.engine.metrics import MetricsReport
from ids3d.engine.metrics import binary_metrics
from ids3d.engine.metrics import multi_metrics
from ids3d.engine.metrics import recall_of


def counted_metrics(labels, scores, threshold=0.5):
    """
    Precision, recall, f1 and a pair-counting AUC computed element by element
    """
    tp = fp = fn = 0

    for label, score in zip(labels, scores):
        flagged = score >= threshold
        tp += int(flagged and label == 1)
        fp += int(flagged and label == 0)
        fn += int(not flagged and label == 1)

    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    positives = [s for l, s in zip(labels, scores) if l == 1]
    negatives = [s for l, s in zip(labels, scores) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in positives for n in negatives)

    return precision, recall, f1, wins / (len(positives) * len(negatives))


class BinaryMetricsTests(unittest.TestCase):

    def test_against_counting(self):
        rng = np.random.default_rng(8)

        for _ in range(5):
            labels = rng.integers(0, 2, size=60)
            labels[:2] = [0, 1]
            scores = np.round(rng.uniform(size=60), 1)
            metrics = binary_metrics(labels, scores)
            precision, recall, f1, auc = counted_metrics(labels.tolist(), scores.tolist())

            self.assertAlmostEqual(precision, metrics['precision'], places=12)
            self.assertAlmostEqual(recall, metrics['recall'], places=12)
            self.assertAlmostEqual(f1, metrics['f1'], places=12)
            self.assertAlmostEqual(auc, metrics['auc'], places=12)

    def test_confusion_matrix_rows_are_supports(self):
        metrics = binary_metrics([0, 0, 1, 1, 1], [0.1, 0.9, 0.6, 0.4, 0.8])

        self.assertEqual([[1, 1], [1, 2]], metrics['confusion_matrix'])
        self.assertEqual([2, 3], metrics['supports'])

    def test_threshold_is_inclusive(self):
        metrics = binary_metrics([1, 0], [0.5, 0.49])

        self.assertEqual(1.0, metrics['recall'])
        self.assertEqual(1.0, metrics['precision'])

    def test_single_class_has_no_auc(self):
        with self.assertLogs('ids3d.engine.metrics', level='WARNING'):
            metrics = binary_metrics([0, 0, 0], [0.1, 0.7, 0.2])

        self.assertIsNone(metrics['auc'])
        self.assertEqual(0.0, metrics['f1'])
        self.assertEqual([3, 0], metrics['supports'])


class MultiMetricsTests(unittest.TestCase):

    def test_per_class_f1(self):
        probs = np.array([[0.9, 0.1, 0.0], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1], [0.1, 0.1, 0.8]])
        metrics = multi_metrics([0, 1, 1, 2], probs, ['DDoS', 'Scan', 'Backdoor'])

        # DDoS: tp 1, fp 1. Scan: tp 1, fn 1. Backdoor: exact.
        self.assertAlmostEqual(2.0 / 3.0, metrics['per_class_f1']['DDoS'], places=12)
        self.assertAlmostEqual(2.0 / 3.0, metrics['per_class_f1']['Scan'], places=12)
        self.assertEqual(1.0, metrics['per_class_f1']['Backdoor'])
        self.assertAlmostEqual(7.0 / 9.0, metrics['macro_f1'], places=12)
        self.assertEqual([[1, 0, 0], [1, 1, 0], [0, 0, 1]], metrics['confusion_matrix'])
        self.assertEqual([1, 2, 1], metrics['supports'])

    def test_no_attack_events(self):
        metrics = multi_metrics([], np.zeros((0, 2)), ['DDoS', 'Scan'])

        self.assertEqual({'DDoS': None, 'Scan': None}, metrics['per_class_f1'])
        self.assertIsNone(metrics['macro_f1'])
        self.assertEqual([0, 0], metrics['supports'])


class RecallTests(unittest.TestCase):

    def test_share_of_flagged_rows(self):
        self.assertEqual(0.5, recall_of([1, 0, 1, 1], [True, True, False, False]))

    def test_empty_mask(self):
        self.assertIsNone(recall_of([1, 0], [False, False]))


class MetricsReportTests(unittest.TestCase):

    def test_every_key_is_present(self):
        data = MetricsReport().update(mode='binary', split='test', f1=0.5).to_dict()

        self.assertEqual('binary', data['mode'])
        self.assertIsNone(data['auc'])
        self.assertIn('throughput_flows_per_min', data)
        self.assertIn('holdout_recall', data)

    def test_load_from_dict(self):
        report = MetricsReport({'mode': 'multi', 'split': 'val', 'macro_f1': 0.25})

        self.assertEqual('multi', report.mode)
        self.assertEqual(0.25, report.macro_f1)
        self.assertIsNone(report.f1)

    def test_rates_outside_unit_interval(self):
        with self.assertRaises(AssertionError):
            MetricsReport().update(recall=1.5)

    def test_unknown_field(self):
        with self.assertRaises(AssertionError):
            MetricsReport().update(accuracy=0.9)


if __name__ == '__main__':
    unittest.main()
