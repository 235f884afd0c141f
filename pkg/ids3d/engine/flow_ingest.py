"""
This module turns flow records into the ordered stream of edge events the model consumes.

It parses or synthesizes flow records, converts ``IP:port`` endpoints to dense node ids,
marks intermediate devices with layer 1, fits min-max statistics on the training split and
emits timestamp-ordered, split-tagged events.
"""

import ipaddress
import logging
import re

import numpy as np
import pandas as pd

from ..utils.base_json_object import BaseJsonObject
from ..utils.lazy_property import lazy_property
from .errors import ConfigError
from .errors import DataError
from .errors import FlowParseError
from .errors import OutputError


__all__ = ['FlowRecord', 'EdgeEvent', 'EdgeStream', 'NodeRegistry', 'DegreeStats', 'FeatureStats', 'IngestResult',
           'BENIGN', 'SPLITS', 'CSV_COLUMNS', 'node_id_from_address', 'address_to_endpoint', 'build_node_registry',
           'assign_layer', 'intermediate_addresses', 'normalize_features', 'feature_levels', 'level_order',
           'synthesize_corpus', 'records_to_frame', 'records_from_frame', 'read_flow_csv', 'write_flow_csv',
           'chronological_split', 'ingest', 'ingest_frozen']

logger = logging.getLogger(__name__)

BENIGN = 'Benign'

SPLITS = ('train', 'val', 'test')

CSV_COLUMNS = ['src_ip', 'src_port', 'dst_ip', 'dst_port', 'timestamp_ms', 'duration_ms', 'binary_label',
               'attack_class']

_FEATURE_COLUMN = re.compile(r'^f(\d+)$')


def _parse_ip(value, field):
    if not isinstance(value, str):
        raise FlowParseError(field, 'expected a dotted IPv4 string, got {!r}'.format(value))

    try:
        return ipaddress.IPv4Address(value)
    except ipaddress.AddressValueError as e:
        raise FlowParseError(field, 'malformed IPv4 address {!r}: {}'.format(value, e)) from e


def _parse_int(value, field, low=None, high=None):
    if isinstance(value, (bool, np.bool_)):
        raise FlowParseError(field, 'expected an integer, got {!r}'.format(value))

    if isinstance(value, (float, np.floating)):
        if not float(value).is_integer():
            raise FlowParseError(field, 'expected an integer, got {!r}'.format(value))
        number = int(value)
    else:
        try:
            number = int(value)
        except (TypeError, ValueError) as e:
            raise FlowParseError(field, 'expected an integer, got {!r}'.format(value)) from e

    if (low is not None and number < low) or (high is not None and number > high):
        raise FlowParseError(field, '{} is outside [{}, {}]'.format(number, low, high))

    return number


class FlowRecord(BaseJsonObject):
    """
    Represents one pre-aggregated traffic flow.

    Loads from a CSV row dictionary: ``src_ip, src_port, dst_ip, dst_port, timestamp_ms, duration_ms,
    binary_label, attack_class, f0 .. f{N-1}``.
    """

    missing_field_error = staticmethod(lambda field: FlowParseError(field, 'missing required column'))

    def __init__(self, data=None):
        self._src_ip = None
        self._src_port = None
        self._dst_ip = None
        self._dst_port = None
        self._timestamp = None
        self._duration = None
        self._features = None
        self._binary_label = None
        self._attack_class = None

        super().__init__(data)

    def __repr__(self):
        return '<FlowRecord: {}:{} -> {}:{} @{}>'.format(self.src_ip, self.src_port, self.dst_ip, self.dst_port,
                                                          self.timestamp)

    def load_required_fields_from_dict(self, values):
        super().load_required_fields_from_dict(values)

        self.src_ip = values['src_ip']
        self.src_port = values['src_port']
        self.dst_ip = values['dst_ip']
        self.dst_port = values['dst_port']
        self.timestamp = values['timestamp_ms']
        self.duration = values['duration_ms']
        self.binary_label = values['binary_label']
        self.attack_class = values['attack_class']

        if 'features' in values:
            self.features = values['features']
        else:
            indexed = sorted((int(m.group(1)), key) for key, m in
                             ((key, _FEATURE_COLUMN.match(key)) for key in values) if m)

            if [i for i, _ in indexed] != list(range(len(indexed))):
                raise FlowParseError('features', 'feature columns must be f0..f{N-1} without gaps')

            self.features = [values[key] for _, key in indexed]

        if (self.attack_class == BENIGN) != (self.binary_label == 0):
            raise DataError('attack_class {!r} contradicts binary_label {}'.format(self.attack_class,
                                                                                   self.binary_label))

    def to_dict(self):
        row = {
            'src_ip': self.src_ip,
            'src_port': self.src_port,
            'dst_ip': self.dst_ip,
            'dst_port': self.dst_port,
            'timestamp_ms': self.timestamp,
            'duration_ms': self.duration,
            'binary_label': self.binary_label,
            'attack_class': self.attack_class,
        }

        for i, value in enumerate(self.features):
            row['f{}'.format(i)] = float(value)

        return row

    @property
    def src_ip(self):
        """
        :return: Source address, dotted IPv4
        :rtype: str
        """
        return self._src_ip

    @src_ip.setter
    def src_ip(self, value):
        self._src_ip = str(_parse_ip(value, 'src_ip'))

    @property
    def src_port(self):
        """
        :rtype: int
        """
        return self._src_port

    @src_port.setter
    def src_port(self, value):
        self._src_port = _parse_int(value, 'src_port', 0, 65535)

    @property
    def dst_ip(self):
        """
        :return: Destination address, dotted IPv4
        :rtype: str
        """
        return self._dst_ip

    @dst_ip.setter
    def dst_ip(self, value):
        self._dst_ip = str(_parse_ip(value, 'dst_ip'))

    @property
    def dst_port(self):
        """
        :rtype: int
        """
        return self._dst_port

    @dst_port.setter
    def dst_port(self, value):
        self._dst_port = _parse_int(value, 'dst_port', 0, 65535)

    @property
    def timestamp(self):
        """
        :return: Milliseconds since epoch
        :rtype: int
        """
        return self._timestamp

    @timestamp.setter
    def timestamp(self, value):
        self._timestamp = _parse_int(value, 'timestamp_ms')

    @property
    def duration(self):
        """
        :return: Flow duration in milliseconds
        :rtype: int
        """
        return self._duration

    @duration.setter
    def duration(self, value):
        self._duration = _parse_int(value, 'duration_ms', 0)

    @property
    def features(self):
        """
        Raw traffic statistics. Non-finite values are accepted here and rejected at normalization.

        :rtype: numpy.ndarray
        """
        return self._features

    @features.setter
    def features(self, value):
        try:
            self._features = np.asarray(value, dtype=np.float64).reshape(-1)
        except (TypeError, ValueError) as e:
            raise FlowParseError('features', 'non-numeric feature value') from e

    @property
    def binary_label(self):
        """
        :return: 0 for benign, 1 for attack
        :rtype: int
        """
        return self._binary_label

    @binary_label.setter
    def binary_label(self, value):
        self._binary_label = _parse_int(value, 'binary_label', 0, 1)

    @property
    def attack_class(self):
        """
        :rtype: str
        """
        return self._attack_class

    @attack_class.setter
    def attack_class(self, value):
        if not isinstance(value, str) or not value:
            raise FlowParseError('attack_class', 'expected a class name, got {!r}'.format(value))
        self._attack_class = value


class EdgeEvent:
    """
    One timestamped edge: endpoints, layer marks, time, duration and normalized features
    """

    __slots__ = ('src', 'dst', 'src_layer', 'dst_layer', 't', 'dt', 'features_norm', 'binary_label',
                 'attack_class', 'split')

    def __init__(self, src, dst, src_layer, dst_layer, t, dt, features_norm, binary_label, attack_class, split):
        self.src = src
        self.dst = dst
        self.src_layer = src_layer
        self.dst_layer = dst_layer
        self.t = t
        self.dt = dt
        self.features_norm = features_norm
        self.binary_label = binary_label
        self.attack_class = attack_class
        self.split = split

    def __repr__(self):
        return '<EdgeEvent: {} -> {} @{} ({})>'.format(self.src, self.dst, self.t, self.split)


class EdgeStream:
    """
    Column-wise store of ordered edge events.

    Rows are sorted by ``t`` with ties in input order. ``h`` holds the disentangled edge features once
    they were attached with :meth:`with_edge_features`; until then it is None.
    """

    def __init__(self, src, dst, src_layer, dst_layer, t, dt, features_norm, binary_label, attack_class, split,
                 h=None):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.src_layer = np.asarray(src_layer, dtype=np.int64)
        self.dst_layer = np.asarray(dst_layer, dtype=np.int64)
        self.t = np.asarray(t, dtype=np.int64)
        self.dt = np.asarray(dt, dtype=np.int64)
        self.features_norm = np.asarray(features_norm, dtype=np.float64)
        self.binary_label = np.asarray(binary_label, dtype=np.int64)
        self.attack_class = np.asarray(attack_class, dtype=object)
        self.split = np.asarray(split, dtype=object)
        self.h = None if h is None else np.asarray(h, dtype=np.float64)

    def __len__(self):
        return len(self.t)

    def __repr__(self):
        return '<EdgeStream: {} events>'.format(len(self))

    def __iter__(self):
        for i in range(len(self)):
            yield self.event(i)

    def event(self, i):
        """
        :rtype: EdgeEvent
        """
        return EdgeEvent(int(self.src[i]), int(self.dst[i]), int(self.src_layer[i]), int(self.dst_layer[i]),
                         int(self.t[i]), int(self.dt[i]), self.features_norm[i], int(self.binary_label[i]),
                         self.attack_class[i], self.split[i])

    def select(self, mask):
        """
        :return: A new stream with the rows where ``mask`` holds, order preserved
        :rtype: EdgeStream
        """
        return EdgeStream(self.src[mask], self.dst[mask], self.src_layer[mask], self.dst_layer[mask], self.t[mask],
                          self.dt[mask], self.features_norm[mask], self.binary_label[mask],
                          self.attack_class[mask], self.split[mask], None if self.h is None else self.h[mask])

    def split_view(self, *splits):
        return self.select(np.isin(self.split, list(splits)))

    def with_edge_features(self, h):
        stream = self.select(np.ones(len(self), dtype=bool))
        stream.h = np.asarray(h, dtype=np.float64)
        return stream

    def batches(self, batch_size):
        """
        Yields consecutive slices of at most ``batch_size`` events
        """
        for start in range(0, len(self), batch_size):
            yield self.select(slice(start, start + batch_size))

    @property
    def feature_count(self):
        return self.features_norm.shape[1]

    @property
    def is_ordered(self):
        return bool(np.all(np.diff(self.t) >= 0))


def node_id_from_address(ip, port, field='ip'):
    """
    Converts an ``IP:port`` endpoint to the 48-bit integer formed by the four 8-bit octets followed by the 16-bit port.

    :param ip: Dotted IPv4 address
    :type ip: str
    :param port: Port number
    :type port: int
    :param field: Name reported when parsing fails
    :rtype: int
    :exception FlowParseError: malformed address or port
    """
    address = _parse_ip(ip, field)
    port = _parse_int(port, field.replace('ip', 'port'), 0, 65535)
    return (int(address) << 16) | port


def address_to_endpoint(address):
    """
    Inverse of :func:`node_id_from_address`

    :rtype: (str, int)
    """
    return str(ipaddress.IPv4Address(address >> 16)), address & 0xFFFF


class NodeRegistry:
    """
    Dense ids over observed endpoints, assigned by the sort rank of the 48-bit address
    """

    def __init__(self, addresses):
        self._ids = build_node_registry(addresses)
        self._addresses = np.array(sorted(self._ids), dtype=np.int64)

    def __len__(self):
        return len(self._ids)

    def __repr__(self):
        return '<NodeRegistry: {} nodes>'.format(len(self))

    def __contains__(self, address):
        return address in self._ids

    @classmethod
    def from_records(cls, records):
        addresses = []

        for record in records:
            addresses.append(node_id_from_address(record.src_ip, record.src_port, 'src_ip'))
            addresses.append(node_id_from_address(record.dst_ip, record.dst_port, 'dst_ip'))

        return cls(addresses)

    def node_id(self, address):
        return self._ids[address]

    def lookup(self, ip, port):
        """
        :exception DataError: the endpoint is not registered
        """
        address = node_id_from_address(ip, port)

        if address not in self._ids:
            raise DataError('endpoint {}:{} is not in the node registry'.format(ip, port))

        return self._ids[address]

    def address(self, node_id):
        return int(self._addresses[node_id])

    def endpoint(self, node_id):
        """
        :rtype: (str, int)
        """
        return address_to_endpoint(self.address(node_id))

    def to_list(self):
        """
        :return: Addresses ordered by node id
        :rtype: list of int
        """
        return [int(a) for a in self._addresses]


def build_node_registry(addresses):
    """
    :param addresses: Iterable of 48-bit endpoint addresses
    :return: Sorted-unique addresses mapped to their 0-based rank
    :rtype: dict of [int, int]
    """
    return {address: rank for rank, address in enumerate(sorted(set(addresses)))}


class DegreeStats:
    """
    Distinct-neighbour counts per IP address over the training split
    """

    def __init__(self, counts):
        """
        :type counts: dict of [str, int]
        """
        self.counts = dict(counts)

    def __repr__(self):
        return '<DegreeStats: {} addresses>'.format(len(self.counts))

    @classmethod
    def from_records(cls, records):
        neighbors = {}

        for record in records:
            neighbors.setdefault(record.src_ip, set()).add(record.dst_ip)
            neighbors.setdefault(record.dst_ip, set()).add(record.src_ip)

        return cls({ip: len(peers) for ip, peers in neighbors.items()})

    def neighbor_count(self, ip):
        return self.counts.get(ip, 0)

    def percentile(self, q):
        if not self.counts:
            return float('inf')

        return float(np.percentile(list(self.counts.values()), q))


def assign_layer(ip, degree_stats, config, intermediate=()):
    """
    Layer 1 marks intermediate devices, layer 0 terminals.

    :param ip: Dotted IPv4 address
    :param degree_stats: Connection counts of the training split
    :type degree_stats: DegreeStats
    :param config: Router prefixes and the degree rule
    :type config: IngestConfig
    :param intermediate: Addresses already known to relay traffic, see :func:`intermediate_addresses`
    :rtype: int
    """
    address = _parse_ip(ip, 'ip')

    if ip in intermediate:
        return 1

    for prefix in config.router_prefixes:
        if address in ipaddress.ip_network(prefix, strict=False):
            return 1

    threshold = config.degree_threshold

    if threshold is None:
        threshold = degree_stats.percentile(config.degree_percentile)

    return int(degree_stats.neighbor_count(ip) >= threshold)


def intermediate_addresses(train_records, config):
    """
    Source addresses of training flows whose attack class is listed in ``intermediate_classes``.
    A man-in-the-middle relays the traffic it intercepts.

    :type config: IngestConfig
    :rtype: set of str
    """
    classes = set(config.intermediate_classes)
    return {r.src_ip for r in train_records if r.binary_label == 1 and r.attack_class in classes}


class FeatureStats:
    """
    Per-feature min and max of the training split, frozen for validation and test
    """

    def __init__(self, minimum, maximum):
        self.minimum = np.asarray(minimum, dtype=np.float64)
        self.maximum = np.asarray(maximum, dtype=np.float64)

        if np.any(self.minimum > self.maximum):
            raise DataError('feature minimum exceeds maximum')

    def __repr__(self):
        return '<FeatureStats: {} features>'.format(len(self.minimum))

    @classmethod
    def fit(cls, matrix):
        """
        :param matrix: Raw features, one row per flow
        :exception FlowParseError: a value is not finite
        """
        matrix = np.asarray(matrix, dtype=np.float64)
        _check_finite(matrix)
        return cls(matrix.min(axis=0), matrix.max(axis=0))

    @lazy_property
    def span(self):
        return self.maximum - self.minimum


def _check_finite(matrix):
    bad = ~np.isfinite(matrix)

    if np.any(bad):
        column = int(np.argwhere(bad)[0][-1])
        raise FlowParseError('f{}'.format(column), 'feature value is NaN or infinite')


def normalize_features(raw, stats):
    """
    Min-max normalization with frozen statistics.

    Constant features map to 0. Values outside the training range are clipped into [0, 1].

    :param raw: One N-vector or a matrix of N-vectors
    :type stats: FeatureStats
    :exception FlowParseError: NaN or infinite value, naming the feature index
    """
    raw = np.asarray(raw, dtype=np.float64)
    _check_finite(raw)

    span = stats.span
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (raw - stats.minimum) / safe, 0.0)
    return np.clip(scaled, 0.0, 1.0)


def _synthetic_endpoints(spec):
    layer1 = int(round(spec.node_count * spec.layer1_fraction))
    endpoints = []

    for i in range(layer1):
        endpoints.append(('192.168.0.{}'.format(i + 1), 8080 + i))

    for i in range(spec.node_count - layer1):
        endpoints.append(('10.{}.{}.{}'.format(i // 62500, (i // 250) % 250, i % 250 + 1), 1024 + i))

    return endpoints, layer1


def feature_levels(count):
    """
    Evenly spaced feature levels inside the unit interval, ``(k + 1) / (count + 1)``

    :rtype: numpy.ndarray
    """
    return np.arange(1, count + 1, dtype=np.float64) / (count + 1)


def level_order(spec, position):
    """
    Level index of every feature for the attack class at ``position``.

    Classes rotate the benign order by their ``level_shift``. Without one, the first ``N - 1`` classes
    take the rotations 1 .. N - 1 and the following ones reuse them reversed.

    :type spec: SyntheticSpec
    :rtype: numpy.ndarray
    """
    n = spec.feature_count
    attack = spec.attack_classes[position]
    rotations = max(n - 1, 1)
    shift = attack.level_shift if attack.level_shift is not None else position % rotations + 1
    order = (np.arange(n) + shift) % n

    if attack.level_shift is None and n > 2 and (position // rotations) % 2 == 1:
        order = order[::-1]

    return order


def _class_mean(spec, position, levels):
    attack = spec.attack_classes[position]

    if attack.mean is not None:
        return np.asarray(attack.mean)

    return levels[level_order(spec, position)]


def synthesize_corpus(spec, seed):
    """
    Generates a deterministic labelled corpus.

    Benign flows scatter around evenly spaced feature levels. Each attack class uses the same levels
    in another feature order and a fixed set of attacker endpoints. Values are non-negative. Class
    counts are exact (rounded) proportions, spread uniformly in time.

    :type spec: SyntheticSpec
    :type seed: int
    :rtype: list of FlowRecord
    :exception ConfigError: non-positive counts or inconsistent class list
    """
    spec.validate()

    if spec.node_count < 2:
        raise ConfigError('synthetic.node_count must be at least 2')

    rng = np.random.default_rng(seed)
    n = spec.flow_count
    endpoints, layer1 = _synthetic_endpoints(spec)
    terminals = np.arange(layer1, spec.node_count)

    if len(terminals) == 0:
        raise ConfigError('synthetic: no terminal nodes left after layer-1 allocation')

    names = [BENIGN] + [c.name for c in spec.attack_classes]
    counts = [int(round(c.proportion * n)) for c in spec.attack_classes]
    counts.insert(0, n - sum(counts))
    labels = np.repeat(np.arange(len(names)), counts)
    labels = labels[rng.permutation(n)]

    times = np.sort(rng.integers(0, spec.time_horizon_ms, size=n)) + spec.start_timestamp_ms
    durations = np.floor(rng.exponential(spec.mean_duration_ms, size=n)).astype(np.int64)

    levels = feature_levels(spec.feature_count)
    means = [levels] + [_class_mean(spec, k, levels) for k in range(len(spec.attack_classes))]
    stds = [np.full(spec.feature_count, spec.feature_std)]
    stds += [np.asarray(c.std) if c.std is not None else stds[0] for c in spec.attack_classes]

    attackers = [None]
    shuffled = rng.permutation(terminals)

    for k, attack in enumerate(spec.attack_classes):
        start = (k * attack.attacker_count) % len(shuffled)
        attackers.append(np.take(shuffled, range(start, start + attack.attacker_count), mode='wrap'))

    records = []

    for i in range(n):
        label = int(labels[i])

        if label == 0:
            src = int(rng.choice(terminals))
        else:
            src = int(rng.choice(attackers[label]))

        if layer1 > 0 and rng.random() < 0.5:
            dst = int(rng.integers(0, layer1))
        else:
            dst = int(rng.integers(0, spec.node_count))

        if dst == src:
            dst = (dst + 1) % spec.node_count

        features = np.maximum(rng.normal(means[label], stds[label]), 0.0)
        src_ip, src_port = endpoints[src]
        dst_ip, dst_port = endpoints[dst]

        records.append(FlowRecord({
            'src_ip': src_ip, 'src_port': src_port, 'dst_ip': dst_ip, 'dst_port': dst_port,
            'timestamp_ms': int(times[i]), 'duration_ms': int(durations[i]),
            'binary_label': int(label != 0), 'attack_class': names[label],
            'features': features,
        }))

    logger.info('synthesized %d flows over %d nodes with %d attack classes', n, spec.node_count,
                len(spec.attack_classes))
    return records


def records_to_frame(records):
    """
    :rtype: pandas.DataFrame
    """
    return pd.DataFrame([record.to_dict() for record in records])


def records_from_frame(frame):
    """
    :type frame: pandas.DataFrame
    :rtype: list of FlowRecord
    :exception FlowParseError: a required column is missing or a value is malformed
    """
    for column in CSV_COLUMNS:
        if column not in frame.columns:
            raise FlowParseError(column, 'missing required column')

    feature_columns = [c for c in frame.columns if _FEATURE_COLUMN.match(str(c))]
    unknown = [c for c in frame.columns if c not in CSV_COLUMNS and c not in feature_columns]

    if unknown:
        logger.warning('ignoring unknown columns: %s', ', '.join(map(str, unknown)))

    rows = frame[CSV_COLUMNS + feature_columns].to_dict('records')
    return [FlowRecord(row) for row in rows]


def read_flow_csv(path):
    """
    :param path: CSV with a header row
    :rtype: list of FlowRecord
    """
    try:
        frame = pd.read_csv(path, dtype={'src_ip': str, 'dst_ip': str, 'attack_class': str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FlowParseError('csv', str(e)) from e
    except OSError as e:
        raise OutputError('cannot read {}: {}'.format(path, e)) from e

    return records_from_frame(frame)


def write_flow_csv(records, path):
    try:
        records_to_frame(records).to_csv(path, index=False, float_format='%.17g')
    except OSError as e:
        raise OutputError('cannot write {}: {}'.format(path, e)) from e


def chronological_split(count, train_fraction, val_fraction):
    """
    :return: Split tag per position of a time-ordered sequence
    :rtype: numpy.ndarray
    """
    train_end = int(round(count * train_fraction))
    val_end = int(round(count * (train_fraction + val_fraction)))
    tags = np.empty(count, dtype=object)
    tags[:train_end] = 'train'
    tags[train_end:val_end] = 'val'
    tags[val_end:] = 'test'
    return tags


class IngestResult:
    """
    Everything ingestion derives from a corpus: the ordered stream and the frozen training statistics
    """

    def __init__(self, stream, registry, feature_stats, degree_stats, node_layers, attack_classes):
        self.stream = stream
        self.registry = registry
        self.feature_stats = feature_stats
        self.degree_stats = degree_stats
        self.node_layers = node_layers
        self.attack_classes = attack_classes

    def __repr__(self):
        return '<IngestResult: {} events, {} nodes>'.format(len(self.stream), len(self.registry))

    @property
    def node_count(self):
        return len(self.registry)


def _ordered_split(records, config):
    if not records:
        raise ConfigError('corpus is empty')

    widths = {len(r.features) for r in records}

    if len(widths) != 1:
        raise FlowParseError('features', 'records carry different feature counts: {}'.format(sorted(widths)))

    order = np.argsort(np.array([r.timestamp for r in records], dtype=np.int64), kind='stable')
    records = [records[i] for i in order]
    split = chronological_split(len(records), config.train_fraction, config.val_fraction)

    if config.holdout_class is not None:
        if not any(r.attack_class == config.holdout_class for r in records):
            raise ConfigError('holdout class {!r} does not occur in the corpus'.format(config.holdout_class))

        keep = np.array([s == 'test' or r.attack_class != config.holdout_class for r, s in zip(records, split)])
        records = [r for r, k in zip(records, keep) if k]
        split = split[keep]

    for name in SPLITS:
        if not np.any(split == name):
            raise ConfigError('the {} split is empty'.format(name))

    return records, split


def _build_result(records, split, registry, feature_stats, node_layers):
    train_records = [r for r, s in zip(records, split) if s == 'train']
    src = np.array([registry.lookup(r.src_ip, r.src_port) for r in records], dtype=np.int64)
    dst = np.array([registry.lookup(r.dst_ip, r.dst_port) for r in records], dtype=np.int64)

    stream = EdgeStream(
        src=src,
        dst=dst,
        src_layer=node_layers[src],
        dst_layer=node_layers[dst],
        t=[r.timestamp for r in records],
        dt=[r.duration for r in records],
        features_norm=normalize_features(np.stack([r.features for r in records]), feature_stats),
        binary_label=[r.binary_label for r in records],
        attack_class=[r.attack_class for r in records],
        split=split,
    )

    attack_classes = sorted({r.attack_class for r in train_records if r.binary_label == 1})
    logger.info('ingested %d events, %d nodes (%d intermediate), %d attack classes in training',
                len(stream), len(registry), int(node_layers.sum()), len(attack_classes))

    return IngestResult(stream, registry, feature_stats, DegreeStats.from_records(train_records), node_layers,
                        attack_classes)


def ingest(records, config):
    """
    Orders, splits, identifies, layers and normalizes a corpus.

    :type records: list of FlowRecord
    :param config: ``train_fraction``, ``val_fraction``, layer rules and ``holdout_class``
    :type config: IngestConfig
    :rtype: IngestResult
    :exception ConfigError: an empty split or a holdout class absent from the corpus
    """
    records, split = _ordered_split(records, config)

    train_records = [r for r, s in zip(records, split) if s == 'train']
    registry = NodeRegistry.from_records(records)
    degree_stats = DegreeStats.from_records(train_records)
    feature_stats = FeatureStats.fit(np.stack([r.features for r in train_records]))
    intermediate = intermediate_addresses(train_records, config)

    node_layers = np.zeros(len(registry), dtype=np.int64)
    layer_of_ip = {}

    for node in range(len(registry)):
        ip, _ = registry.endpoint(node)

        if ip not in layer_of_ip:
            layer_of_ip[ip] = assign_layer(ip, degree_stats, config, intermediate)

        node_layers[node] = layer_of_ip[ip]

    return _build_result(records, split, registry, feature_stats, node_layers)


def ingest_frozen(records, config, registry, feature_stats, node_layers):
    """
    Ingests a corpus through the registry, normalization statistics and layers of an earlier run,
    e.g. the ones stored with a checkpoint. Nothing is refitted.

    :type registry: NodeRegistry
    :type feature_stats: FeatureStats
    :param node_layers: Layer of every registered node
    :rtype: IngestResult
    :exception DataError: an endpoint is not registered or the feature count differs
    """
    node_layers = np.asarray(node_layers, dtype=np.int64)

    if len(node_layers) != len(registry):
        raise DataError('{} node layers for {} registered nodes'.format(len(node_layers), len(registry)))

    records, split = _ordered_split(records, config)
    width = len(records[0].features)

    if width != len(feature_stats.minimum):
        raise DataError('corpus has {} features, the normalization statistics {}'.format(
            width, len(feature_stats.minimum)))

    return _build_result(records, split, registry, feature_stats, node_layers)
