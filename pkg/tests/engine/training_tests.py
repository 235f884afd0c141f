"""
This module provides classes for testing training, evaluation and the ablation runs on a small synthetic corpus
"""

import math
import unittest

import numpy as np

from ids3d.config.engine_config import EngineConfig
from ids3d.engine.errors import ConfigError
from ids3d.engine.flow_ingest import ingest
from ids3d.engine.flow_ingest import synthesize_corpus
from ids3d.engine.training import IntrusionModel
from ids3d.engine.training import ablate
from ids3d.engine.training import evaluate
from ids3d.engine.training import grid_run
from ids3d.engine.training import logistic_reference
from ids3d.engine.training import prepare_stream
from ids3d.engine.training import score_split
from ids3d.engine.training import train


TINY = {
    'synthetic': {
        'node_count': 12,
        'layer1_fraction': 0.1,
        'flow_count': 200,
        'feature_count': 3,
        'time_horizon_ms': 600000,
        'attack_classes': [
            {'name': 'DDoS', 'proportion': 0.2},
            {'name': 'Scan', 'proportion': 0.3},
        ],
    },
    'memory': {'memory_dim': 4, 'message_dim': 3, 'embedding_dim': 3, 'time_encoding_dim': 2},
    'diffusion': {'hidden_units': 4, 'hidden_channels': 5},
    'optim': {'epochs': 2, 'batch_size': 25, 'seed': 3},
}


def tiny_config(**overrides):
    return EngineConfig(TINY).apply_overrides(overrides)


def tiny_ingest(config):
    return ingest(synthesize_corpus(config.synthetic, config.optim.seed), config.ingest)


class ModelTests(unittest.TestCase):

    def setUp(self):
        self.config = tiny_config()
        self.ingest_result = tiny_ingest(self.config)
        self.stream = prepare_stream(self.ingest_result, self.config)
        self.model = IntrusionModel(self.config, self.stream.feature_count, self.ingest_result.node_layers,
                                    self.ingest_result.attack_classes)

    def test_forward_shapes(self):
        batch = next(self.stream.batches(10))
        output = self.model.forward(batch)

        self.assertEqual((10, 2), output.binary_log_probs.shape)
        self.assertEqual((10, 2), output.class_log_probs.shape)
        self.assertEqual((len(output.update.nodes), 3), output.diffused.shape)

    def test_commit_touches_batch_nodes(self):
        batch = next(self.stream.batches(10))
        self.model.commit(self.model.forward(batch))

        touched = np.flatnonzero(self.model.table.touched).tolist()
        self.assertEqual(sorted(set(batch.src.tolist()) | set(batch.dst.tolist())), touched)
        self.assertEqual(len({(min(s, d), max(s, d)) for s, d in zip(batch.src, batch.dst)}), len(self.model.graph))

    def test_prepared_features(self):
        self.assertEqual(self.stream.features_norm.shape, self.stream.h.shape)
        self.assertTrue(np.all(self.stream.h >= -1e-9))
        self.assertTrue(np.all(self.stream.h.sum(axis=1) <= 1.0 + 1e-6))

    def test_ablated_features(self):
        config = tiny_config(**{'training.no_sd': True})
        stream = prepare_stream(self.ingest_result, config)

        self.assertEqual(stream.features_norm.tolist(), stream.h.tolist())

    def test_ablated_diffusion_is_not_trained(self):
        config = tiny_config(**{'training.no_mlgrand': True})
        model = IntrusionModel(config, 3, self.ingest_result.node_layers, self.ingest_result.attack_classes)
        names = {p.name for p in model.trainable_parameters()}

        self.assertFalse(any(name.startswith('diffusion.') for name in names))
        self.assertGreater(len(model.parameters()), len(names))

    def test_state_dict_round_trip(self):
        state = self.model.state_dict()

        for param in self.model.parameters():
            param.values = np.zeros(param.shape)

        self.model.load_state_dict(state)

        for name, param in self.model.named_parameters().items():
            self.assertEqual(state[name].tolist(), param.values.tolist())


class TrainTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.config = tiny_config()
        cls.ingest_result = tiny_ingest(cls.config)
        cls.result = train(cls.ingest_result, cls.config)

    def test_history(self):
        history = self.result.history

        self.assertEqual([1, 2], [row['epoch'] for row in history])

        for row in history:
            self.assertEqual({'epoch', 'intrusion', 'smooth', 'disentangle', 'total', 'val_f1', 'lr'}, set(row))
            self.assertTrue(all(math.isfinite(row[key]) for key in ('intrusion', 'smooth', 'disentangle', 'total')))
            self.assertAlmostEqual(row['intrusion'] + 0.3 * row['smooth'] + 0.7 * row['disentangle'], row['total'],
                                   places=9)

        self.assertIn(self.result.best_epoch, (1, 2))

    def test_class_weights_have_mean_one(self):
        weights = self.result.model.heads.class_weights

        self.assertEqual(2, len(weights))
        self.assertAlmostEqual(1.0, weights.mean(), places=12)

    def test_deterministic(self):
        again = train(self.ingest_result, self.config)
        first = self.result.model.state_dict()
        second = again.model.state_dict()

        self.assertEqual(sorted(first), sorted(second))
        for name in first:
            self.assertEqual(first[name].tolist(), second[name].tolist())

        self.assertEqual(self.result.history, again.history)

    def test_max_batches(self):
        config = tiny_config(**{'training.max_batches': 1, 'optim.epochs': 1})
        result = train(self.ingest_result, config)

        self.assertEqual(1, result.optimizer.step_count)

    def test_evaluation_keeps_parameters(self):
        before = self.result.model.state_dict()
        evaluate(self.result.model, self.result.stream, 'test')

        for name, value in self.result.model.state_dict().items():
            self.assertEqual(before[name].tolist(), value.tolist())

    def test_binary_evaluation(self):
        report = evaluate(self.result.model, self.result.stream, 'test', 'binary')
        test_size = len(self.result.stream.split_view('test'))

        self.assertEqual('binary', report.mode)
        self.assertEqual(test_size, report.event_count)
        self.assertEqual(test_size, sum(report.supports))
        self.assertTrue(0.0 <= report.f1 <= 1.0)
        self.assertIsNone(report.holdout_recall)

    def test_evaluation_replays_deterministically(self):
        first = evaluate(self.result.model, self.result.stream, 'test', 'binary')
        second = evaluate(self.result.model, self.result.stream, 'test', 'binary')

        self.assertEqual(first.to_dict(), second.to_dict())

    def test_multi_evaluation(self):
        report = evaluate(self.result.model, self.result.stream, 'test', 'multi')

        self.assertEqual(['DDoS', 'Scan'], sorted(report.per_class_f1))
        self.assertEqual(report.event_count, len(self.result.stream.split_view('test')))

    def test_unknown_mode_needs_holdout(self):
        with self.assertRaises(ConfigError):
            evaluate(self.result.model, self.result.stream, 'test', 'unknown')

    def test_invalid_mode(self):
        with self.assertRaises(ConfigError):
            score_split(self.result.model, self.result.stream, 'test', mode='ranking')

    def test_throughput(self):
        self.result.model.config.training.measure_throughput = True

        try:
            report = evaluate(self.result.model, self.result.stream, 'val')
        finally:
            self.result.model.config.training.measure_throughput = False

        self.assertGreater(report.throughput_flows_per_min, 0.0)


class UnknownAttackTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.config = tiny_config(**{'ingest.holdout_class': 'Scan', 'optim.epochs': 1})
        cls.ingest_result = tiny_ingest(cls.config)

    def test_holdout_only_in_test(self):
        stream = self.ingest_result.stream
        held_out = stream.attack_class == 'Scan'

        self.assertEqual(['DDoS'], self.ingest_result.attack_classes)
        self.assertTrue(np.any(held_out))
        self.assertEqual({'test'}, set(stream.split[held_out].tolist()))

    def test_holdout_recall(self):
        result = train(self.ingest_result, self.config)
        report = evaluate(result.model, result.stream, 'test', 'unknown', 'Scan')

        self.assertEqual('Scan', report.holdout_class)
        self.assertTrue(0.0 <= report.holdout_recall <= 1.0)

    def test_logistic_reference(self):
        stream = prepare_stream(self.ingest_result, self.config)
        recall = logistic_reference(stream, 'Scan')

        self.assertTrue(0.0 <= recall <= 1.0)
        self.assertEqual(recall, logistic_reference(stream, 'Scan'))


class AblationTests(unittest.TestCase):

    def setUp(self):
        self.config = tiny_config(**{'optim.epochs': 1})
        self.ingest_result = tiny_ingest(self.config)

    def test_rows(self):
        rows = ablate(self.ingest_result, self.config, ('no_rd', 'no_mlgrand'))

        self.assertEqual(['full', 'no_rd', 'no_mlgrand'], [name for name, _ in rows])
        self.assertFalse(self.config.training.no_rd)

        for _, report in rows:
            self.assertTrue(0.0 <= report.f1 <= 1.0)

    def test_unknown_switch(self):
        with self.assertRaises(ConfigError):
            ablate(self.ingest_result, self.config, ('no_memory',))

    def test_grid_run(self):
        rows = grid_run(self.ingest_result, self.config, [{'training.alpha': 0.1}, {'training.alpha': 0.5}])

        self.assertEqual([{'training.alpha': 0.1}, {'training.alpha': 0.5}], [row['overrides'] for row in rows])
        self.assertNotEqual(rows[0]['config_hash'], rows[1]['config_hash'])
        self.assertIn('f1', rows[0]['metrics'])


if __name__ == '__main__':
    unittest.main()
