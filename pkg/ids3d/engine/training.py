"""
This module contains the streaming model and its training, evaluation and ablation runs.

Every batch flows through messages, memory, diffusion and the heads. During training the batch
loss is backpropagated and Adam updates the parameters before the batch is committed to the node
state. Evaluation replays the earlier splits to rebuild the node state, then scores the requested
split without touching the parameters.
"""

import logging
import time

import numpy as np
from sklearn.linear_model import LogisticRegression

from .classifier import PredictionHeads, class_indices, class_weights, edge_logits, intrusion_loss, smooth_loss
from .classifier import total_loss
from .errors import ConfigError
from .graph_diffusion import DiffusionParams, IntegratorSettings, MultiLayerGraphState, diffuse
from .memory_state import MessageParams, NodeStateTable, process_batch, repr_disentangle_loss
from .metrics import MetricsReport, binary_metrics, multi_metrics, recall_of
from .nn_core import EarlyStopping, OptimizerState, PlateauScheduler, adam_step, scatter_rows, take_rows
from .stat_disentangle import Disentangler


__all__ = ['IntrusionModel', 'BatchOutput', 'TrainingResult', 'prepare_stream', 'train', 'score_stream', 'score_split',
           'evaluate', 'logistic_reference', 'run_variant', 'ablate', 'grid_run', 'ABLATIONS', 'EVALUATION_MODES']

logger = logging.getLogger(__name__)

ABLATIONS = ('no_sd', 'no_rd', 'no_mlgrand')

EVALUATION_MODES = ('binary', 'multi', 'unknown')

_REPLAY = {
    'train': (),
    'val': ('train',),
    'test': ('train', 'val'),
}


class BatchOutput:
    """
    The forward pass of one batch, ready to be scored, backpropagated and committed
    """

    def __init__(self, update, diffused, binary_log_probs, class_log_probs):
        self.update = update
        self.diffused = diffused
        self.binary_log_probs = binary_log_probs
        self.class_log_probs = class_log_probs

    def __repr__(self):
        return '<BatchOutput: {} events>'.format(self.binary_log_probs.shape[0])


class IntrusionModel:
    """
    All parameters and the streaming state of the detector
    """

    def __init__(self, config, feature_count, node_layers, classes):
        """
        :type config: EngineConfig
        :param feature_count: Width of the edge features ``h``
        :param node_layers: Layer mark of every node
        :param classes: Attack classes of the training split
        """
        rng = np.random.default_rng(config.optim.seed)
        self.config = config
        self.feature_count = feature_count
        self.memory_params = MessageParams.from_config(config.memory, feature_count, rng)
        self.diffusion_params = DiffusionParams.from_config(config.memory.embedding_dim, config.diffusion, rng)
        self.heads = PredictionHeads(2 * config.memory.embedding_dim + feature_count, config.diffusion.hidden_units,
                                     classes, rng, cascade=config.training.cascade_heads)
        self.table = NodeStateTable.from_config(len(node_layers), config.memory)
        self.graph = MultiLayerGraphState.from_config(node_layers, config.diffusion, config.ingest)
        self.settings = IntegratorSettings.from_config(config.diffusion)

    def __repr__(self):
        return '<IntrusionModel: {} parameters>'.format(sum(p.values.size for p in self.parameters()))

    @property
    def classes(self):
        return self.heads.classes

    @property
    def uses_diffusion(self):
        return not self.config.training.no_mlgrand

    def modules(self):
        return [self.memory_params, self.diffusion_params, self.heads]

    def parameters(self):
        """
        :return: Every parameter, including those an ablation leaves unused
        :rtype: list of ParamTensor
        """
        return [p for module in self.modules() for p in module.parameters()]

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def trainable_parameters(self):
        modules = [self.memory_params, self.heads]

        if self.uses_diffusion:
            modules.append(self.diffusion_params)

        return [p for module in modules for p in module.parameters()]

    def reset_state(self):
        self.table.reset()
        self.graph.reset()

    def forward(self, batch):
        """
        :type batch: EdgeStream
        :rtype: BatchOutput
        """
        update = process_batch(batch, self.table, self.memory_params)
        diffused = update.repr

        if self.uses_diffusion:
            self.graph.add_events(batch.src, batch.dst, batch.t)
            t_now = int(batch.t[-1])
            self.graph.prune(t_now)

            snapshot = self.graph.snapshot(t_now, update.nodes)
            local = snapshot.positions(update.nodes)
            x0 = scatter_rows(self.table.repr[snapshot.nodes], local, update.repr)
            diffused = take_rows(diffuse(x0, snapshot, self.diffusion_params, self.settings), local)

        src_rows = np.searchsorted(update.nodes, batch.src)
        dst_rows = np.searchsorted(update.nodes, batch.dst)
        binary, classes = edge_logits(self.heads, take_rows(diffused, src_rows), take_rows(diffused, dst_rows),
                                      batch.h)

        return BatchOutput(update, diffused, binary, classes)

    def committed_repr(self, output):
        if self.config.training.diffusion_writeback:
            return output.diffused

        return output.update.repr

    def commit(self, output):
        output.update.commit(self.table, self.committed_repr(output))

    def state_dict(self):
        return {name: p.values.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, values):
        params = self.named_parameters()

        for name, value in values.items():
            params[name].values = value


class TrainingResult:

    def __init__(self, model, stream, history, best_epoch, best_val_f1, optimizer):
        self.model = model
        self.stream = stream
        self.history = history
        self.best_epoch = best_epoch
        self.best_val_f1 = best_val_f1
        self.optimizer = optimizer

    def __repr__(self):
        return '<TrainingResult: {} epochs, best {} (val f1 {})>'.format(len(self.history), self.best_epoch,
                                                                         self.best_val_f1)


def prepare_stream(ingest_result, config):
    """
    Attaches the edge features the model consumes: the disentangled features, or the normalized
    features themselves when statistical disentanglement is ablated

    :type ingest_result: IngestResult
    :type config: EngineConfig
    :rtype: EdgeStream
    """
    stream = ingest_result.stream

    if config.training.no_sd:
        return stream.with_edge_features(stream.features_norm)

    return stream.with_edge_features(Disentangler(config.disentangle).transform(stream.features_norm))


def _train_epoch(model, stream, optimizer, config):
    alpha = config.training.alpha
    beta = 0.0 if config.training.no_rd else config.training.beta
    weights = model.heads.class_weights
    sums = np.zeros(4)
    count = 0

    for b, batch in enumerate(stream.batches(config.optim.batch_size)):
        if config.training.max_batches is not None and b >= config.training.max_batches:
            break

        assert np.all(batch.split == 'train'), 'only training events may update parameters'

        output = model.forward(batch)
        update = output.update
        index = class_indices(batch.attack_class, model.classes, batch.binary_label)

        l_int = intrusion_loss(output.binary_log_probs, output.class_log_probs, batch.binary_label, index, weights)
        l_smooth = smooth_loss(model.committed_repr(output), update.prev_repr)
        l_dis = repr_disentangle_loss(update.repr, update.prev_repr)
        total, terms = total_loss(l_int, l_smooth, l_dis, alpha, beta)

        total.backward()
        adam_step(model.trainable_parameters(), optimizer)
        model.commit(output)

        sums += [terms.intrusion, terms.smooth, terms.disentangle, terms.total]
        count += 1

    return sums / max(count, 1)


def train(ingest_result, config, stream=None):
    """
    Trains on the chronological training split with early stopping on validation F1.

    :type ingest_result: IngestResult
    :type config: EngineConfig
    :param stream: Prepared stream, built with :func:`prepare_stream` when None
    :return: The model holding the parameters of the best epoch
    :rtype: TrainingResult
    """
    stream = prepare_stream(ingest_result, config) if stream is None else stream
    train_stream = stream.split_view('train')

    if len(train_stream) == 0 or len(stream.split_view('val')) == 0:
        raise ConfigError('training needs non-empty train and val splits')

    model = IntrusionModel(config, stream.feature_count, ingest_result.node_layers, ingest_result.attack_classes)
    attack = train_stream.binary_label == 1
    model.heads.class_weights = class_weights(
        class_indices(train_stream.attack_class[attack], model.classes, train_stream.binary_label[attack]),
        model.heads.class_count)

    optim = config.optim
    optimizer = OptimizerState(lr=optim.lr, weight_decay=optim.weight_decay, lr_decay=optim.lr_decay)
    scheduler = PlateauScheduler(optimizer, patience=config.training.scheduler_patience)
    stopping = EarlyStopping(patience=config.training.patience)

    history = []
    best_state = model.state_dict()
    best_epoch = 0

    for epoch in range(1, optim.epochs + 1):
        model.reset_state()
        intrusion, smooth, disentangle, total = _train_epoch(model, train_stream, optimizer, config)
        val_f1 = score_split(model, stream, 'val', replay=False).f1

        history.append({
            'epoch': epoch,
            'intrusion': float(intrusion),
            'smooth': float(smooth),
            'disentangle': float(disentangle),
            'total': float(total),
            'val_f1': val_f1,
            'lr': optimizer.lr,
        })
        logger.info('epoch %d: loss %.6g (int %.6g, smooth %.6g, dis %.6g), val f1 %.4f, lr %.3g', epoch, total,
                    intrusion, smooth, disentangle, val_f1, optimizer.lr)

        scheduler.observe(val_f1)

        if stopping.observe(val_f1):
            best_state = model.state_dict()
            best_epoch = epoch

        if stopping.should_stop:
            logger.info('early stopping after %d epochs without improvement', stopping.patience)
            break

    model.load_state_dict(best_state)
    model.reset_state()
    return TrainingResult(model, stream, history, best_epoch, stopping.best, optimizer)


def score_stream(model, stream, batch_size):
    """
    Runs events through the model and commits them, without any parameter update

    :return: Attack probabilities and class probabilities (None without attack classes)
    :rtype: (numpy.ndarray, numpy.ndarray or None)
    """
    attack, classes = [], []

    for batch in stream.batches(batch_size):
        output = model.forward(batch)
        model.commit(output)
        attack.append(np.exp(output.binary_log_probs.values[:, 1]))

        if output.class_log_probs is not None:
            classes.append(np.exp(output.class_log_probs.values))

    attack = np.concatenate(attack) if attack else np.zeros(0)
    classes = np.concatenate(classes) if classes else None
    return attack, classes


def score_split(model, stream, split, replay=True, mode='binary', holdout_class=None):
    """
    Scores one split of a prepared stream.

    With ``replay`` the node state is rebuilt from the earlier splits first. Without it the split
    is scored from the current state, which is how validation follows a training epoch.

    :rtype: MetricsReport
    """
    if mode not in EVALUATION_MODES:
        raise ConfigError('unknown evaluation mode {!r}'.format(mode))

    batch_size = model.config.optim.batch_size

    if replay:
        model.reset_state()
        earlier = _REPLAY[split]

        if earlier:
            score_stream(model, stream.split_view(*earlier), batch_size)

    target = stream.split_view(split)

    if len(target) == 0:
        raise ConfigError('the {} split is empty'.format(split))

    started = time.perf_counter()
    attack_probs, class_probs = score_stream(model, target, batch_size)
    elapsed = time.perf_counter() - started

    report = MetricsReport().update(mode=mode, split=split, event_count=len(target), classes=model.classes)
    report.update(**binary_metrics(target.binary_label, attack_probs))

    if model.config.training.measure_throughput and elapsed > 0:
        report.update(throughput_flows_per_min=len(target) / elapsed * 60.0)

    if mode == 'multi' and class_probs is not None:
        known = np.isin(target.attack_class, model.classes) & (target.binary_label == 1)
        index = class_indices(target.attack_class[known], model.classes, target.binary_label[known])
        report.update(**multi_metrics(index, class_probs[known], model.classes))

    if mode == 'unknown':
        if holdout_class is None:
            raise ConfigError('unknown-attack evaluation needs a holdout class')

        held_out = target.attack_class == holdout_class

        if not np.any(held_out):
            raise ConfigError('holdout class {!r} does not occur in the {} split'.format(holdout_class, split))

        report.update(holdout_class=holdout_class, holdout_recall=recall_of(attack_probs >= 0.5, held_out))

    return report


def evaluate(model, stream, split='test', mode='binary', holdout_class=None):
    """
    :type model: IntrusionModel
    :param stream: Prepared stream holding all splits
    :param mode: binary, multi or unknown
    :rtype: MetricsReport
    """
    report = score_split(model, stream, split, replay=True, mode=mode, holdout_class=holdout_class)
    logger.info('%s evaluation on %s: f1 %.4f, auc %s', mode, split, report.f1, report.auc)
    return report


def logistic_reference(stream, holdout_class, seed=0):
    """
    Recall of a logistic regression on the normalized features for the held-out class of the test split

    :rtype: float
    """
    train_stream = stream.split_view('train')
    test_stream = stream.split_view('test')

    if len(np.unique(train_stream.binary_label)) < 2:
        raise ConfigError('the logistic reference needs both benign and attack training events')

    reference = LogisticRegression(max_iter=1000, random_state=seed)
    reference.fit(train_stream.features_norm, train_stream.binary_label)

    held_out = test_stream.attack_class == holdout_class
    return recall_of(reference.predict(test_stream.features_norm) == 1, held_out)


def run_variant(ingest_result, config, mode='binary'):
    """
    Trains one configuration and evaluates it on the test split

    :rtype: (TrainingResult, MetricsReport)
    """
    result = train(ingest_result, config)
    return result, evaluate(result.model, result.stream, 'test', mode, config.ingest.holdout_class)


def ablate(ingest_result, config, switches=ABLATIONS):
    """
    Runs the full model and one variant per ablation switch

    :return: ``(variant name, report)`` rows, the full model first
    :rtype: list of (str, MetricsReport)
    """
    rows = []

    for variant in ('full',) + tuple(switches):
        if variant != 'full' and variant not in ABLATIONS:
            raise ConfigError('unknown ablation {!r}'.format(variant))

        variant_config = config.copy()

        if variant != 'full':
            variant_config.apply_overrides({'training.' + variant: True})

        logger.info('ablation run: %s', variant)
        _, report = run_variant(ingest_result, variant_config)
        rows.append((variant, report))

    return rows


def grid_run(ingest_result, config, overrides_list):
    """
    Trains and evaluates one run per override dictionary

    :param overrides_list: Dotted keys to values, e.g. ``[{'training.alpha': 0.1}, {'training.alpha': 0.5}]``
    :return: One row per run with the overrides and the test metrics
    :rtype: list of dict
    """
    rows = []

    for overrides in overrides_list:
        run_config = config.copy().apply_overrides(overrides)
        result, report = run_variant(ingest_result, run_config)
        rows.append({
            'overrides': dict(overrides),
            'config_hash': run_config.config_hash(),
            'best_epoch': result.best_epoch,
            'metrics': report.to_dict(),
        })

    return rows
