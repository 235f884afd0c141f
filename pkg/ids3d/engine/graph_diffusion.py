"""
This module integrates node representations along a nonlinear diffusion on the evolving multi-layer graph.

The graph keeps every edge seen within the horizon. Its signed incidence matrix ``M`` satisfies
``M.T @ M = D - A``. The right-hand side of the flow is ``-M.T @ (S * sigma(U) * U) @ K`` with
``U = M @ X @ K.T`` and ``sigma(u) = exp(-|u|)``. ``S`` scales each edge by a positive coefficient
that depends on the layers of its endpoints and on the time since it was last seen.
"""

import logging

import numpy as np
import scipy.sparse as sp

from ..utils.lazy_property import invalidate_lazy_properties, lazy_property
from .errors import DataError, IntegrationError, NonFiniteError, SelfLoopError
from .nn_core import MLP, Module, Tensor, absolute, as_tensor, concat, cos, exp, softplus, spmm


__all__ = ['MultiLayerGraphState', 'DiffusionSnapshot', 'DiffusionParams', 'IntegratorSettings', 'incidence_matrix',
           'build_incidence', 'layer_temporal_coeff', 'diffusion_rhs', 'integrate', 'pm_energy', 'diffuse']

logger = logging.getLogger(__name__)


def incidence_matrix(src, dst, weight, node_count):
    """
    :return: One row per edge with ``+sqrt(w)`` in the source column and ``-sqrt(w)`` in the destination column
    :rtype: scipy.sparse.csr_matrix
    :exception SelfLoopError: an edge joins a node to itself
    :exception DataError: a weight is not positive
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)

    loops = np.flatnonzero(src == dst)
    if len(loops):
        raise SelfLoopError(int(src[loops[0]]))

    if np.any(weight <= 0):
        raise DataError('edge weights must be positive')

    rows = np.tile(np.arange(len(src)), 2)
    cols = np.concatenate([src, dst])
    root = np.sqrt(weight)
    data = np.concatenate([root, -root])

    return sp.csr_matrix((data, (rows, cols)), shape=(len(src), node_count))


class MultiLayerGraphState:
    """
    Active edges of the stream with their weights and last occurrence.

    Stream edges are undirected and keyed by the ordered pair ``(min, max)``, which also fixes their
    orientation in the incidence matrix. Self-loops in the stream are skipped. An edge is dropped once
    it has not been seen for ``horizon_s`` seconds of event time. In ``count`` mode the weight is the
    number of flows observed since the edge became active, in ``unit`` mode it is 1.
    """

    def __init__(self, node_layers, horizon_s=1e4, weight_mode='unit'):
        """
        :param node_layers: Layer mark of every node, 0 for terminals and 1 for intermediate devices
        """
        self.node_layers = np.asarray(node_layers, dtype=np.int64)
        self.horizon_ms = horizon_s * 1000.0
        self.weight_mode = weight_mode
        self._edges = {}

    def __len__(self):
        return len(self._edges)

    def __repr__(self):
        return '<MultiLayerGraphState: {} nodes, {} edges>'.format(self.node_count, len(self))

    @classmethod
    def from_config(cls, node_layers, diffusion_config, ingest_config):
        return cls(node_layers, diffusion_config.edge_horizon_s, ingest_config.edge_weight)

    @classmethod
    def from_edges(cls, node_count, edges, node_layers=None):
        """
        Builds a graph from explicit ``(src, dst, weight)`` or ``(src, dst, weight, last_t)`` tuples.

        Edges are stored as given, self-loops included, so that :func:`build_incidence` can reject them.
        """
        if node_layers is None:
            node_layers = np.zeros(node_count, dtype=np.int64)

        graph = cls(node_layers)

        for edge in edges:
            src, dst, weight = edge[:3]
            last_t = edge[3] if len(edge) > 3 else 0
            graph._edges[(int(src), int(dst))] = [float(weight), int(last_t)]

        return graph

    @property
    def node_count(self):
        return len(self.node_layers)

    def reset(self):
        self._edges.clear()
        invalidate_lazy_properties(self)

    def add_events(self, src, dst, t):
        """
        Records one occurrence per event, refreshing the last time and the weight of its edge
        """
        for s, d, time in zip(np.asarray(src).tolist(), np.asarray(dst).tolist(), np.asarray(t).tolist()):
            if s == d:
                logger.debug('skipping self-loop on node %d', s)
                continue

            key = (min(s, d), max(s, d))
            edge = self._edges.get(key)

            if edge is None:
                self._edges[key] = [1.0, time]
            else:
                edge[0] = edge[0] + 1.0 if self.weight_mode == 'count' else 1.0
                edge[1] = max(edge[1], time)

        invalidate_lazy_properties(self)

    def prune(self, t_now):
        """
        Drops the edges last seen more than the horizon before ``t_now``

        :return: Number of dropped edges
        :rtype: int
        """
        stale = [key for key, (_, last_t) in self._edges.items() if t_now - last_t > self.horizon_ms]

        for key in stale:
            del self._edges[key]

        if stale:
            invalidate_lazy_properties(self)
            logger.debug('pruned %d edges older than %.0f ms', len(stale), self.horizon_ms)

        return len(stale)

    @lazy_property
    def _columns(self):
        keys = sorted(self._edges)
        src = np.array([k[0] for k in keys], dtype=np.int64)
        dst = np.array([k[1] for k in keys], dtype=np.int64)
        weight = np.array([self._edges[k][0] for k in keys], dtype=np.float64)
        last_t = np.array([self._edges[k][1] for k in keys], dtype=np.int64)
        return src, dst, weight, last_t

    @property
    def edge_src(self):
        return self._columns[0]

    @property
    def edge_dst(self):
        return self._columns[1]

    @property
    def edge_weight(self):
        return self._columns[2]

    @property
    def edge_last_t(self):
        return self._columns[3]

    @property
    def layer_pairs(self):
        """
        :return: ``(l_src, l_dst)`` of every edge
        :rtype: numpy.ndarray
        """
        return np.column_stack([self.node_layers[self.edge_src], self.node_layers[self.edge_dst]])

    @lazy_property
    def incidence(self):
        return build_incidence(self)

    @lazy_property
    def adjacency(self):
        n = self.node_count
        forward = sp.coo_matrix((self.edge_weight, (self.edge_src, self.edge_dst)), shape=(n, n))
        return (forward + forward.T).tocsr()

    @lazy_property
    def degree_matrix(self):
        return sp.diags(np.asarray(self.adjacency.sum(axis=1)).ravel()).tocsr()

    def snapshot(self, t_now, include_nodes=()):
        """
        Restricts the graph to the nodes with an active edge plus ``include_nodes``

        :param t_now: Event time the coefficients are evaluated at, milliseconds
        :rtype: DiffusionSnapshot
        """
        src, dst, weight, last_t = self._columns
        nodes = np.unique(np.concatenate([src, dst, np.asarray(include_nodes, dtype=np.int64)]))
        local_src = np.searchsorted(nodes, src)
        local_dst = np.searchsorted(nodes, dst)
        elapsed_s = np.maximum(t_now - last_t, 0) / 1000.0

        return DiffusionSnapshot(nodes, incidence_matrix(local_src, local_dst, weight, len(nodes)),
                                 self.layer_pairs.astype(np.float64), elapsed_s)


def build_incidence(graph):
    """
    :type graph: MultiLayerGraphState
    :rtype: scipy.sparse.csr_matrix
    :exception SelfLoopError: the graph holds an edge from a node to itself
    """
    return incidence_matrix(graph.edge_src, graph.edge_dst, graph.edge_weight, graph.node_count)


class DiffusionSnapshot:
    """
    The part of the graph one batch diffuses over, with nodes renumbered ``0 .. len(nodes) - 1``
    """

    def __init__(self, nodes, incidence, layers, elapsed_s):
        self.nodes = nodes
        self.incidence = incidence
        self.layers = layers
        self.elapsed_s = elapsed_s

    def __repr__(self):
        return '<DiffusionSnapshot: {} nodes, {} edges>'.format(len(self.nodes), self.edge_count)

    @property
    def edge_count(self):
        return self.incidence.shape[0]

    def positions(self, node_ids):
        """
        :return: Local row of every global node id
        :rtype: numpy.ndarray
        """
        return np.searchsorted(self.nodes, np.asarray(node_ids, dtype=np.int64))


class DiffusionParams(Module):
    """
    The transformation ``K``, the coefficient network and the time encoder of the edge coefficients.

    ``K`` starts as the identity. The time encoder is ``cos(omega * elapsed + phase)`` with frequencies
    spread geometrically from 1 to 1e-9 per second.
    """

    def __init__(self, embedding_dim, hidden_units, hidden_channels, rng, name='diffusion'):
        super().__init__(name)
        self.embedding_dim = embedding_dim
        self.time_dim = hidden_units
        self.add_parameter('transform', np.eye(embedding_dim))
        self.add_parameter('time_frequency', 10.0 ** -np.linspace(0.0, 9.0, hidden_units))
        self.add_parameter('time_phase', np.zeros(hidden_units))
        self.add_module('coeff', MLP(name + '.coeff', 2 + hidden_units, hidden_channels, 1, rng))

    def __repr__(self):
        return '<DiffusionParams: emb={} time={}>'.format(self.embedding_dim, self.time_dim)

    @classmethod
    def from_config(cls, embedding_dim, config, rng):
        """
        :type config: DiffusionConfig
        """
        return cls(embedding_dim, config.hidden_units, config.hidden_channels, rng)

    def time_features(self, elapsed_s):
        elapsed = as_tensor(np.asarray(elapsed_s, dtype=np.float64).reshape(-1, 1))
        return cos(elapsed * self.time_frequency + self.time_phase)


def layer_temporal_coeff(layers, elapsed_s, params):
    """
    ``softplus(f([l_i, l_j, phi(elapsed)]))`` for every edge

    :param layers: Layer marks, one ``(l_i, l_j)`` row per edge
    :param elapsed_s: Seconds since each edge was last seen
    :type params: DiffusionParams
    :return: Strictly positive coefficients, shape (edges,)
    :rtype: Tensor
    """
    layers = np.asarray(layers, dtype=np.float64).reshape(-1, 2)
    inputs = concat([layers, params.time_features(elapsed_s)], axis=1)
    return softplus(params.coeff(inputs)).reshape(-1)


def _first_bad_row(values):
    bad = ~np.all(np.isfinite(values.reshape(values.shape[0], -1)), axis=1)
    return int(np.argmax(bad)) if np.any(bad) else None


def diffusion_rhs(x, incidence, coefficients, transform):
    """
    ``-M.T @ (S * sigma(U) * U) @ K`` with ``U = M @ X @ K.T``

    :param x: Node representations, shape (nodes, d)
    :param incidence: Signed incidence matrix ``M``, shape (edges, nodes)
    :param coefficients: Per-edge coefficients, the diagonal of ``S``
    :param transform: ``K``, shape (d, d)
    :rtype: Tensor
    :exception NonFiniteError: an edge produced a non-finite flux
    """
    x, transform = as_tensor(x), as_tensor(transform)
    coefficients = as_tensor(coefficients)

    if incidence.shape[0] == 0:
        return x * 0.0

    u = spmm(incidence, x) @ transform.T
    flux = exp(-absolute(u)) * u * coefficients.reshape((-1, 1))

    bad = _first_bad_row(flux.values)
    if bad is not None:
        raise NonFiniteError('edge {}'.format(bad), 'non-finite diffusion flux')

    return -(spmm(incidence.T, flux) @ transform)


def pm_energy(x, incidence, transform=None):
    """
    ``sum(Phi(U))`` with ``Phi(u) = 1 - exp(-|u|) * (1 + |u|)``, the potential whose gradient flow
    the diffusion is when ``K`` and ``S`` are identities

    :rtype: float
    """
    x = np.asarray(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    u = incidence @ x

    if transform is not None:
        u = u @ np.asarray(transform).T

    magnitude = np.abs(u)
    return float(np.sum(1.0 - np.exp(-magnitude) * (1.0 + magnitude)))


class IntegratorSettings:

    def __init__(self, method='rk4', steps=4, atol=1e-6, rtol=1e-4, min_step=1e-8):
        self.method = method
        self.steps = steps
        self.atol = atol
        self.rtol = rtol
        self.min_step = min_step

    def __repr__(self):
        return '<IntegratorSettings: {}>'.format(self.method)

    @classmethod
    def from_config(cls, config):
        """
        :type config: DiffusionConfig
        """
        return cls(config.integrator, config.rk4_steps, config.rk45_atol, config.rk45_rtol, config.rk45_min_step)


# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _combine(y, h, weights, stages):
    out = y

    for w, k in zip(weights, stages):
        if w != 0.0:
            out = out + k * (h * w)

    return out


def _rk4(x, t0, t1, rhs, steps, observer):
    h = (t1 - t0) / steps
    tau = t0

    for _ in range(steps):
        k1 = rhs(tau, x)
        k2 = rhs(tau + h / 2, x + k1 * (h / 2))
        k3 = rhs(tau + h / 2, x + k2 * (h / 2))
        k4 = rhs(tau + h, x + k3 * h)
        x = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6)
        tau += h

        if observer is not None:
            observer(tau, x)

    return x


def _rk45(x, t0, t1, rhs, settings, observer):
    tau = t0
    h = t1 - t0
    k1 = rhs(tau, x)

    while tau < t1:
        h = min(h, t1 - tau)

        if h < settings.min_step:
            raise IntegrationError('adaptive step underflow at t={:.6g}'.format(tau), h)

        stages = [k1]

        for i in range(1, 7):
            stages.append(rhs(tau + _DP_C[i] * h, _combine(x, h, _DP_A[i], stages)))

        candidate = _combine(x, h, _DP_A[6], stages)
        error = h * sum((b5 - b4) * k.values for b5, b4, k in zip(_DP_B5, _DP_B4, stages))
        scale = settings.atol + settings.rtol * np.maximum(np.abs(x.values), np.abs(candidate.values))
        ratio = float(np.max(np.abs(error) / scale)) if error.size else 0.0

        if not np.isfinite(ratio):
            raise IntegrationError('non-finite error estimate at t={:.6g}'.format(tau), h)

        if ratio <= 1.0:
            tau += h
            x = candidate
            k1 = stages[6]

            if observer is not None:
                observer(tau, x)

        factor = 5.0 if ratio == 0.0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
        h *= factor

    return x


def integrate(x0, interval, rhs, settings, observer=None):
    """
    Integrates ``dx/dt = rhs(t, x)`` across ``interval`` on the tape, so the result can be backpropagated.

    :param x0: Initial state
    :param interval: ``(t0, t1)`` with ``t1 >= t0``
    :param rhs: Callable ``(t, x) -> Tensor``
    :type settings: IntegratorSettings
    :param observer: Called with ``(t, x)`` after every accepted step
    :rtype: Tensor
    :exception IntegrationError: the adaptive step fell below ``settings.min_step``
    """
    x0 = as_tensor(x0)
    t0, t1 = interval

    if t1 < t0:
        raise IntegrationError('interval end precedes its start', t1 - t0)

    if t1 == t0:
        return x0

    if settings.method == 'rk45':
        return _rk45(x0, t0, t1, rhs, settings, observer)

    return _rk4(x0, t0, t1, rhs, settings.steps, observer)


def diffuse(x0, snapshot, params, settings):
    """
    Integrates the representations of a snapshot over the unit interval

    :param x0: Representations of ``snapshot.nodes``
    :type snapshot: DiffusionSnapshot
    :type params: DiffusionParams
    :type settings: IntegratorSettings
    :rtype: Tensor
    """
    if snapshot.edge_count == 0:
        return as_tensor(x0)

    coefficients = layer_temporal_coeff(snapshot.layers, snapshot.elapsed_s, params)

    def rhs(tau, x):
        return diffusion_rhs(x, snapshot.incidence, coefficients, params.transform)

    return integrate(x0, (0.0, 1.0), rhs, settings)
