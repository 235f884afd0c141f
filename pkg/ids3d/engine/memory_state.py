"""
This module keeps the per-node memory and representation of the stream.

Each event produces one message per endpoint. A node touched several times in a batch is updated
with its last message, and every message of a batch reads the memories as they were at the batch
start. Updated memories are projected into the representation space and added to the previous
representation.
"""

import logging

import numpy as np

from .errors import OrderingError, ShapeError
from .nn_core import Dense, GRUCell, Module, RNNCell, Tensor, as_tensor, concat, take_rows


__all__ = ['NodeState', 'NodeStateTable', 'MessageParams', 'MemoryUpdate', 'time_encoding', 'message_inputs',
           'compute_messages', 'last_message_positions', 'update_memory', 'update_representation',
           'repr_disentangle_loss', 'process_batch']

logger = logging.getLogger(__name__)


def time_encoding(elapsed_s, dim):
    """
    Sinusoidal features ``sin(elapsed * 10^-k)`` for ``k = 0 .. dim - 1``

    :param elapsed_s: Elapsed seconds, one entry per row
    :rtype: numpy.ndarray
    """
    elapsed = np.asarray(elapsed_s, dtype=np.float64).reshape(-1, 1)
    frequencies = 10.0 ** -np.arange(dim, dtype=np.float64)
    return np.sin(elapsed * frequencies)


class NodeState:
    """
    A copy of one row of the state table
    """

    def __init__(self, memory, repr, last_update_t, prev_repr, message):
        self.memory = memory
        self.repr = repr
        self.last_update_t = last_update_t
        self.prev_repr = prev_repr
        self.message = message

    def __repr__(self):
        return '<NodeState: last_update_t={}>'.format(self.last_update_t)


class NodeStateTable:
    """
    Memory, representation and last message of every node, stored row-wise.

    Only the stream consumer writes to the table, and it does so once per batch through :meth:`commit`.
    Untouched nodes keep zero rows.
    """

    def __init__(self, node_count, memory_dim, message_dim, embedding_dim):
        self.node_count = node_count
        self.memory_dim = memory_dim
        self.message_dim = message_dim
        self.embedding_dim = embedding_dim
        self.reset()

    def __len__(self):
        return self.node_count

    def __repr__(self):
        return '<NodeStateTable: {} nodes, {} touched>'.format(self.node_count, int(self.touched.sum()))

    @classmethod
    def from_config(cls, node_count, config):
        """
        :type config: MemoryConfig
        """
        return cls(node_count, config.memory_dim, config.message_dim, config.embedding_dim)

    def reset(self):
        self.memory = np.zeros((self.node_count, self.memory_dim))
        self.repr = np.zeros((self.node_count, self.embedding_dim))
        self.prev_repr = np.zeros((self.node_count, self.embedding_dim))
        self.message = np.zeros((self.node_count, self.message_dim))
        self.last_update_t = np.zeros(self.node_count, dtype=np.int64)
        self.touched = np.zeros(self.node_count, dtype=bool)

    def state(self, node):
        """
        :rtype: NodeState
        """
        return NodeState(self.memory[node].copy(), self.repr[node].copy(), int(self.last_update_t[node]),
                         self.prev_repr[node].copy(), self.message[node].copy())

    def snapshot(self):
        """
        :return: A deep copy that can be handed to :meth:`restore`
        :rtype: NodeStateTable
        """
        copy = NodeStateTable(self.node_count, self.memory_dim, self.message_dim, self.embedding_dim)
        copy.restore(self)
        return copy

    def restore(self, other):
        for key in ('memory', 'repr', 'prev_repr', 'message', 'last_update_t', 'touched'):
            setattr(self, key, getattr(other, key).copy())

    def elapsed_seconds(self, nodes, t):
        """
        Seconds since the last update of each node, 0 for nodes never updated
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        elapsed = (np.asarray(t, dtype=np.int64) - self.last_update_t[nodes]) / 1000.0
        return np.where(self.touched[nodes], elapsed, 0.0)

    def check_order(self, nodes, t):
        """
        :exception OrderingError: an event is older than the last update of one of its nodes
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        late = self.touched[nodes] & (t < self.last_update_t[nodes])

        if np.any(late):
            i = int(np.argmax(late))
            raise OrderingError(int(nodes[i]), int(t[i]), int(self.last_update_t[nodes[i]]))

    def commit(self, nodes, memory, repr, message, t):
        """
        Stores the batch result. The representations before the write become ``prev_repr``.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        self.prev_repr[nodes] = self.repr[nodes]
        self.memory[nodes] = memory
        self.repr[nodes] = repr
        self.message[nodes] = message
        self.last_update_t[nodes] = t
        self.touched[nodes] = True


class MessageParams(Module):
    """
    The message cell, the memory updater and the projection from memory to representation space.

    The projection is only created when the memory and embedding dimensions differ. It has no bias
    so a zero memory leaves the representation unchanged. With ``projection_init='zeros'`` the projection
    starts at zero and every representation starts at the origin.
    """

    def __init__(self, memory_dim, message_dim, embedding_dim, time_encoding_dim, feature_count, rng,
                 name='memory', projection_init='zeros'):
        super().__init__(name)
        self.memory_dim = memory_dim
        self.message_dim = message_dim
        self.embedding_dim = embedding_dim
        self.time_encoding_dim = time_encoding_dim
        self.feature_count = feature_count
        self.input_dim = 2 * memory_dim + time_encoding_dim + 3 + feature_count

        self.add_module('message', RNNCell(name + '.message', self.input_dim, message_dim, rng))
        self.add_module('updater', GRUCell(name + '.updater', message_dim, memory_dim, rng))

        if memory_dim != embedding_dim:
            self.add_module('projection', Dense(name + '.projection', memory_dim, embedding_dim, rng, bias=False))

            if projection_init == 'zeros':
                self.projection.weight.values = np.zeros((memory_dim, embedding_dim))
        else:
            self.projection = None

    def __repr__(self):
        return '<MessageParams: in={} msg={} mem={} emb={}>'.format(self.input_dim, self.message_dim,
                                                                      self.memory_dim, self.embedding_dim)

    @classmethod
    def from_config(cls, config, feature_count, rng):
        """
        :type config: MemoryConfig
        """
        return cls(config.memory_dim, config.message_dim, config.embedding_dim, config.time_encoding_dim,
                   feature_count, rng, projection_init=config.projection_init)

    def project(self, memory):
        if self.projection is None:
            return as_tensor(memory)

        return self.projection(memory)


def message_inputs(batch, table, time_encoding_dim):
    """
    Builds the message cell inputs of both endpoints.

    The source row is ``[m_src, m_dst, enc(src), dt, l_src, l_dst, h]``. The destination row swaps the
    two memories and encodes the time since the destination's own last update.

    :type batch: EdgeStream
    :type table: NodeStateTable
    :return: Source and destination input matrices
    :rtype: (numpy.ndarray, numpy.ndarray)
    """
    if batch.h is None:
        raise ShapeError('the stream carries no disentangled edge features')

    m_src = table.memory[batch.src]
    m_dst = table.memory[batch.dst]
    shared = np.column_stack([batch.dt / 1000.0, batch.src_layer, batch.dst_layer, batch.h])
    enc_src = time_encoding(table.elapsed_seconds(batch.src, batch.t), time_encoding_dim)
    enc_dst = time_encoding(table.elapsed_seconds(batch.dst, batch.t), time_encoding_dim)

    return np.hstack([m_src, m_dst, enc_src, shared]), np.hstack([m_dst, m_src, enc_dst, shared])


def compute_messages(batch, table, params):
    """
    :type batch: EdgeStream
    :type table: NodeStateTable
    :type params: MessageParams
    :return: Messages of the sources and of the destinations, one row per event
    :rtype: (Tensor, Tensor)
    """
    x_src, x_dst = message_inputs(batch, table, params.time_encoding_dim)

    if x_src.shape[1] != params.input_dim:
        raise ShapeError('message cell expects {} inputs, got {}'.format(params.input_dim, x_src.shape[1]))

    c_src = params.message(x_src, table.message[batch.src])
    c_dst = params.message(x_dst, table.message[batch.dst])
    return c_src, c_dst


def last_message_positions(src, dst):
    """
    Picks the last message of every node touched by a batch.

    Messages are indexed as in ``concat(sources, destinations)``. Within an event the destination
    message counts as later than the source message.

    :return: Touched nodes in ascending order and the position of each node's last message
    :rtype: (numpy.ndarray, numpy.ndarray)
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    count = len(src)
    nodes = np.concatenate([src, dst])
    order = np.concatenate([2 * np.arange(count), 2 * np.arange(count) + 1])
    latest_first = np.argsort(order)[::-1]
    touched, first = np.unique(nodes[latest_first], return_index=True)
    return touched, latest_first[first]


def update_memory(table, nodes, messages, times, params):
    """
    Gated update of the memories of ``nodes`` with one message each.

    :param times: Event time of each node's message, milliseconds
    :rtype: Tensor
    :exception OrderingError: a message is older than the node's last update
    """
    table.check_order(nodes, times)
    return params.updater(messages, table.memory[nodes])


def update_representation(table, nodes, memory, params):
    """
    :return: ``repr + project(memory)`` for ``nodes``
    :rtype: Tensor
    """
    return params.project(memory) + table.repr[nodes]


def repr_disentangle_loss(current, previous):
    """
    ``0.5 * ||current @ previous.T - I||_F^2`` over the touched nodes' rows

    :param current: Representations after the update
    :param previous: Representations before the batch
    :rtype: Tensor
    """
    current, previous = as_tensor(current), as_tensor(previous)

    if current.shape[0] == 0:
        return Tensor(0.0, requires_grad=False)

    residual = current @ previous.T - np.eye(current.shape[0])
    return (residual * residual).sum() * 0.5


class MemoryUpdate:
    """
    The differentiable result of one batch before it is committed to the table
    """

    def __init__(self, nodes, times, messages, memory, repr, prev_repr):
        self.nodes = nodes
        self.times = times
        self.messages = messages
        self.memory = memory
        self.repr = repr
        self.prev_repr = prev_repr

    def __repr__(self):
        return '<MemoryUpdate: {} nodes>'.format(len(self.nodes))

    def commit(self, table, repr=None):
        """
        :param repr: Representations to store instead of :attr:`repr`, e.g. after diffusion
        """
        final = self.repr if repr is None else repr
        final = final.values if isinstance(final, Tensor) else final
        table.commit(self.nodes, self.memory.values, final, self.messages.values, self.times)


def process_batch(batch, table, params):
    """
    Messages, memory and representation updates of one batch, without touching the table.

    :type batch: EdgeStream
    :type table: NodeStateTable
    :type params: MessageParams
    :rtype: MemoryUpdate
    """
    table.check_order(np.concatenate([batch.src, batch.dst]), np.concatenate([batch.t, batch.t]))

    c_src, c_dst = compute_messages(batch, table, params)
    nodes, positions = last_message_positions(batch.src, batch.dst)
    last = take_rows(concat([c_src, c_dst], axis=0), positions)
    times = np.concatenate([batch.t, batch.t])[positions]

    memory = update_memory(table, nodes, last, times, params)
    repr = update_representation(table, nodes, memory, params)

    logger.debug('memory update of %d nodes from %d events', len(nodes), len(batch))
    return MemoryUpdate(nodes, times, last, memory, repr, table.repr[nodes].copy())
