"""
This module provides classes for testing node memories, messages and representation updates
"""

import unittest

import numpy as np

from ids3d.config.engine_config import MemoryConfig
from ids3d.engine.errors import OrderingError
from ids3d.engine.errors import ShapeError
from ids3d.engine.flow_ingest import EdgeStream
from ids3d.engine.memory_state import MessageParams
from ids3d.engine.memory_state import NodeStateTable
from ids3d.engine.memory_state import compute_messages
from ids3d.engine.memory_state import last_message_positions
from ids3d.engine.memory_state import message_inputs
from ids3d.engine.memory_state import process_batch
from ids3d.engine.memory_state import repr_disentangle_loss
from ids3d.engine.memory_state import time_encoding
from ids3d.engine.memory_state import update_memory
from ids3d.engine.memory_state import update_representation
from ids3d.engine.nn_core import ParamTensor
from ids3d.engine.nn_core import grad_check


FEATURES = 3


def make_batch(src, dst, t, h=None, layers=None, dt=None):
    count = len(src)
    layers = layers or ([0] * count, [0] * count)
    h = np.full((count, FEATURES), 0.5) if h is None else np.asarray(h, dtype=np.float64)

    return EdgeStream(src, dst, layers[0], layers[1], t, dt if dt is not None else [100] * count,
                      np.zeros((count, FEATURES)), [0] * count, ['Benign'] * count, ['train'] * count, h)


def make_params(seed=0, memory_dim=4, message_dim=3, embedding_dim=5, projection_init='uniform'):
    return MessageParams(memory_dim, message_dim, embedding_dim, 2, FEATURES, np.random.default_rng(seed),
                         projection_init=projection_init)


class TimeEncodingTests(unittest.TestCase):

    def test_frequencies(self):
        np.testing.assert_allclose([[np.sin(1.0), np.sin(0.1), np.sin(0.01)]], time_encoding([1.0], 3))

    def test_zero_elapsed(self):
        self.assertEqual([[0.0, 0.0]] * 2, time_encoding([0.0, 0.0], 2).tolist())


class NodeStateTableTests(unittest.TestCase):

    def setUp(self):
        self.table = NodeStateTable(4, 2, 2, 2)

    def test_from_config(self):
        table = NodeStateTable.from_config(10, MemoryConfig())

        self.assertEqual((10, 150), table.memory.shape)
        self.assertEqual((10, 100), table.repr.shape)
        self.assertEqual((10, 100), table.message.shape)

    def test_commit(self):
        self.table.commit([1], np.ones((1, 2)), np.full((1, 2), 2.0), np.full((1, 2), 3.0), [5000])
        self.table.commit([1], np.ones((1, 2)), np.full((1, 2), 4.0), np.full((1, 2), 3.0), [6000])
        state = self.table.state(1)

        self.assertEqual([2.0, 2.0], state.prev_repr.tolist())
        self.assertEqual([4.0, 4.0], state.repr.tolist())
        self.assertEqual(6000, state.last_update_t)
        self.assertEqual([False, True, False, False], self.table.touched.tolist())

    def test_elapsed_seconds(self):
        self.table.commit([0], np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2)), [2000])

        self.assertEqual([1.5, 0.0], self.table.elapsed_seconds([0, 1], [3500, 3500]).tolist())

    def test_time_regression(self):
        self.table.commit([2], np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2)), [5000])

        with self.assertRaises(OrderingError) as context:
            self.table.check_order([0, 2], [4000, 4000])

        self.assertEqual(2, context.exception.node)
        self.assertEqual(5000, context.exception.last_update_t)

    def test_equal_time_is_allowed(self):
        self.table.commit([2], np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2)), [5000])
        self.table.check_order([2], [5000])

    def test_snapshot_is_independent(self):
        snapshot = self.table.snapshot()
        self.table.commit([0], np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2)), [1])

        self.assertFalse(snapshot.touched.any())
        self.table.restore(snapshot)
        self.assertEqual([[0.0, 0.0]] * 4, self.table.memory.tolist())


class MessageTests(unittest.TestCase):

    def setUp(self):
        self.table = NodeStateTable(3, 4, 3, 5)

    def test_input_width(self):
        params = make_params()
        x_src, x_dst = message_inputs(make_batch([0], [1], [1000]), self.table, 2)

        self.assertEqual(2 * 4 + 2 + 3 + FEATURES, params.input_dim)
        self.assertEqual((1, params.input_dim), x_src.shape)
        self.assertEqual((1, params.input_dim), x_dst.shape)

    def test_zero_inputs_give_zero_messages(self):
        params = make_params()

        for param in params.message.parameters():
            param.values = np.zeros(param.shape)

        batch = make_batch([0], [1], [1000], h=np.zeros((1, FEATURES)), dt=[0])
        c_src, c_dst = compute_messages(batch, self.table, params)

        self.assertEqual([[0.0] * 3], c_src.values.tolist())
        self.assertEqual([[0.0] * 3], c_dst.values.tolist())

    def test_equal_states_give_equal_messages(self):
        params = make_params(seed=3)
        batch = make_batch([0], [1], [1000], h=[[0.1, 0.7, 0.3]], layers=([1], [1]))
        c_src, c_dst = compute_messages(batch, self.table, params)

        self.assertEqual(c_src.values.tolist(), c_dst.values.tolist())

    def test_swapped_memories(self):
        self.table.memory[0] = [1.0, 2.0, 3.0, 4.0]
        x_src, x_dst = message_inputs(make_batch([0], [1], [1000]), self.table, 2)

        self.assertEqual([1.0, 2.0, 3.0, 4.0], x_src[0, :4].tolist())
        self.assertEqual([1.0, 2.0, 3.0, 4.0], x_dst[0, 4:8].tolist())

    def test_reproducible(self):
        batch = make_batch([0, 2], [1, 0], [1000, 2000], h=[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
        first = compute_messages(batch, self.table, make_params(seed=9))[0].values
        second = compute_messages(batch, self.table, make_params(seed=9))[0].values

        self.assertEqual(first.tolist(), second.tolist())

    def test_missing_edge_features(self):
        batch = make_batch([0], [1], [1000])
        batch.h = None

        with self.assertRaises(ShapeError):
            compute_messages(batch, self.table, make_params())


class LastMessageTests(unittest.TestCase):

    def test_later_event_wins(self):
        nodes, positions = last_message_positions([0, 1], [1, 2])

        self.assertEqual([0, 1, 2], nodes.tolist())
        self.assertEqual([0, 1, 3], positions.tolist())

    def test_destination_counts_after_source(self):
        nodes, positions = last_message_positions([4, 5], [5, 4])

        self.assertEqual([4, 5], nodes.tolist())
        self.assertEqual([3, 1], positions.tolist())

    def test_empty(self):
        nodes, positions = last_message_positions([], [])

        self.assertEqual([], nodes.tolist())
        self.assertEqual([], positions.tolist())


class MemoryUpdateTests(unittest.TestCase):

    def setUp(self):
        self.table = NodeStateTable(3, 4, 3, 5)
        self.params = make_params(seed=1)
        self.rng = np.random.default_rng(2)
        self.table.memory[:] = self.rng.normal(size=(3, 4))

    def test_closed_gate_keeps_memory(self):
        self.params.updater.bias_z.values = np.full(4, -1e3)
        messages = self.rng.normal(size=(2, 3))
        memory = update_memory(self.table, np.array([0, 2]), messages, [1000, 1000], self.params)

        np.testing.assert_allclose(self.table.memory[[0, 2]], memory.values, atol=1e-12)

    def test_open_gate_with_zero_candidate(self):
        for param in self.params.updater.parameters():
            param.values = np.zeros(param.shape)

        self.params.updater.bias_z.values = np.full(4, 1e3)
        memory = update_memory(self.table, np.array([1]), np.ones((1, 3)), [1000], self.params)

        np.testing.assert_allclose(np.zeros((1, 4)), memory.values, atol=1e-12)

    def test_regression_raises(self):
        self.table.commit([1], self.table.memory[[1]], np.zeros((1, 5)), np.zeros((1, 3)), [9000])

        with self.assertRaises(OrderingError):
            update_memory(self.table, np.array([1]), np.ones((1, 3)), [8000], self.params)

        with self.assertRaises(OrderingError):
            process_batch(make_batch([0], [1], [8500]), self.table, self.params)


class RepresentationTests(unittest.TestCase):

    def setUp(self):
        self.table = NodeStateTable(3, 4, 3, 5)
        self.params = make_params(seed=4)

    def test_projection_only_between_different_sizes(self):
        self.assertIsNotNone(self.params.projection)
        self.assertIsNone(make_params(memory_dim=5, embedding_dim=5).projection)
        self.assertNotIn('memory.projection.bias', self.params.named_parameters())

    def test_zero_projection_keeps_first_representation_at_origin(self):
        params = make_params(seed=4, projection_init='zeros')
        update = process_batch(make_batch([0], [1], [1000]), self.table, params)

        self.assertEqual([[0.0] * 5] * 2, update.repr.values.tolist())
        self.assertTrue(np.any(update.memory.values != 0.0))

    def test_zero_memory_keeps_representation(self):
        self.table.repr[1] = [1.0, 2.0, 3.0, 4.0, 5.0]
        repr = update_representation(self.table, np.array([1]), np.zeros((1, 4)), self.params)

        self.assertEqual([[1.0, 2.0, 3.0, 4.0, 5.0]], repr.values.tolist())

    def test_first_event_projects_memory(self):
        update = process_batch(make_batch([0], [1], [1000]), self.table, self.params)

        np.testing.assert_allclose(self.params.project(update.memory.values).values, update.repr.values, atol=1e-15)
        self.assertEqual([[0.0] * 5] * 2, update.prev_repr.tolist())

    def test_successive_events_accumulate(self):
        first = process_batch(make_batch([0], [1], [1000]), self.table, self.params)
        first.commit(self.table)
        second = process_batch(make_batch([0], [2], [2000]), self.table, self.params)
        second.commit(self.table)

        expected = (self.params.project(first.memory.values[[0]]).values +
                    self.params.project(second.memory.values[[0]]).values)
        np.testing.assert_allclose(expected, self.table.repr[[0]], atol=1e-12)
        np.testing.assert_allclose(first.repr.values[[0]], self.table.prev_repr[[0]], atol=0)

    def test_process_batch_bookkeeping(self):
        update = process_batch(make_batch([2, 0], [0, 1], [1000, 1500]), self.table, self.params)
        update.commit(self.table)

        self.assertEqual([0, 1, 2], update.nodes.tolist())
        self.assertEqual([1500, 1500, 1000], update.times.tolist())
        self.assertEqual([1500, 1500, 1000], self.table.last_update_t.tolist())
        self.assertTrue(self.table.touched.all())

    def test_commit_with_other_representation(self):
        update = process_batch(make_batch([0], [1], [1000]), self.table, self.params)
        update.commit(self.table, np.ones((2, 5)))

        self.assertEqual([[1.0] * 5] * 2, self.table.repr[[0, 1]].tolist())

    def test_gradients_through_batch(self):
        batch = make_batch([0, 1], [1, 2], [1000, 2000], h=[[0.2, 0.4, 0.6], [0.9, 0.1, 0.5]])
        self.table.memory[:] = np.random.default_rng(5).normal(size=(3, 4))

        def loss():
            update = process_batch(batch, self.table, self.params)
            return (update.repr * update.repr).sum()

        error = grad_check(loss, self.params.parameters(), max_coords=4, rng=np.random.default_rng(0))
        self.assertLess(error, 1e-4)


class DisentangleLossTests(unittest.TestCase):

    def test_orthonormal(self):
        self.assertEqual(0.0, repr_disentangle_loss(np.eye(3), np.eye(3)).item())

    def test_zero_representation(self):
        self.assertEqual(2.0, repr_disentangle_loss(np.zeros((4, 3)), np.ones((4, 3))).item())

    def test_direct_evaluation(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 4))
        y = rng.normal(size=(3, 4))
        expected = 0.0

        for i in range(3):
            for j in range(3):
                dot = sum(x[i, k] * y[j, k] for k in range(4))
                expected += (dot - (1.0 if i == j else 0.0)) ** 2

        self.assertAlmostEqual(0.5 * expected, repr_disentangle_loss(x, y).item(), delta=1e-12 * max(1.0, expected))

    def test_empty_batch(self):
        self.assertEqual(0.0, repr_disentangle_loss(np.zeros((0, 3)), np.zeros((0, 3))).item())

    def test_non_negative(self):
        rng = np.random.default_rng(1)

        for _ in range(5):
            self.assertGreaterEqual(repr_disentangle_loss(rng.normal(size=(4, 2)), rng.normal(size=(4, 2))).item(), 0)

    def test_gradient(self):
        rng = np.random.default_rng(6)
        current = ParamTensor(rng.normal(size=(3, 4)), 'current')
        previous = rng.normal(size=(3, 4))

        self.assertLess(grad_check(lambda: repr_disentangle_loss(current, previous), [current]), 1e-6)


if __name__ == '__main__':
    unittest.main()
