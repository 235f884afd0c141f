"""
This module contains the ``ids3d`` command line.

Every command resolves the effective config (defaults, then ``--config``, then flags), echoes it
to ``effective_config.json`` in the output directory and exits with the code of the error
category on failure.
"""

import argparse
import json
import logging
import os
import sys
from enum import Enum

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config.engine_config import EngineConfig
from .engine.errors import ConfigError, IdsError, OutputError
from .engine.flow_ingest import SPLITS, ingest, ingest_frozen, read_flow_csv, synthesize_corpus, write_flow_csv
from .engine.metrics import MetricsReport
from .engine.training import ABLATIONS, ablate, evaluate, logistic_reference, prepare_stream, train
from .export import export_ablation, export_distributions, export_metrics, export_representations


__all__ = ['main', 'build_parser', 'resolve_config', 'ExportKind']

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_IO = 4


class ExportKind(Enum):
    distributions = 'distributions'
    representations = 'representations'
    metrics = 'metrics'


def _write_json(path, payload):
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        with open(path, 'w') as f:
            json.dump(payload, f, sort_keys=True, indent=2)
    except OSError as e:
        raise OutputError('cannot write {}: {}'.format(path, e)) from e

    logger.info('wrote %s', path)
    return path


def _read_json(path):
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise OutputError('cannot read {}: {}'.format(path, e)) from e


def resolve_config(args):
    """
    :return: Defaults overridden by the config file, overridden by the flags
    :rtype: EngineConfig
    """
    config = EngineConfig.from_file(args.config) if args.config else EngineConfig()

    config.apply_overrides({
        'optim.seed': args.seed,
        'output.out_dir': args.out,
        'ingest.holdout_class': getattr(args, 'holdout', None),
        'training.measure_throughput': True if args.throughput else None,
    })

    if args.dataset == 'synth':
        config.ingest.csv_path = None
    elif args.dataset is not None:
        config.apply_overrides({'ingest.csv_path': args.dataset})

    return config


def _out_path(config, name):
    return os.path.join(config.output.out_dir, name)


def _echo_config(config):
    payload = config.to_dict()
    payload['config_hash'] = config.config_hash()
    _write_json(_out_path(config, 'effective_config.json'), payload)


def _load_records(config):
    if config.ingest.csv_path:
        logger.info('reading flows from %s', config.ingest.csv_path)
        return read_flow_csv(config.ingest.csv_path)

    logger.info('synthesizing %d flows (seed %d)', config.synthetic.flow_count, config.optim.seed)
    return synthesize_corpus(config.synthetic, config.optim.seed)


def _checkpoint_path(args, config):
    return args.checkpoint or _out_path(config, 'checkpoint.bin')


def cmd_synth(args, config):
    path = _out_path(config, 'flows.csv')
    os.makedirs(config.output.out_dir, exist_ok=True)
    write_flow_csv(synthesize_corpus(config.synthetic, config.optim.seed), path)
    logger.info('wrote synthetic corpus to %s', path)


def cmd_ingest(args, config):
    result = ingest(_load_records(config), config.ingest)
    stream = result.stream
    layers = result.node_layers

    _write_json(_out_path(config, 'ingest_summary.json'), {
        'events': {split: int(np.sum(stream.split == split)) for split in SPLITS},
        'nodes': result.node_count,
        'intermediate_nodes': int(layers.sum()),
        'attack_classes': result.attack_classes,
        'feature_min': result.feature_stats.minimum.tolist(),
        'feature_max': result.feature_stats.maximum.tolist(),
        'ordered': stream.is_ordered,
    })


def _reports(model, stream, holdout_class):
    reports = {'binary': evaluate(model, stream, 'test', 'binary')}

    if model.classes:
        reports['multi'] = evaluate(model, stream, 'test', 'multi')

    if holdout_class is not None:
        reports['unknown'] = evaluate(model, stream, 'test', 'unknown', holdout_class)

    return reports


def cmd_train(args, config):
    ingest_result = ingest(_load_records(config), config.ingest)
    result = train(ingest_result, config)
    save_checkpoint(_checkpoint_path(args, config), result.model, result.optimizer, ingest_result)

    reports = _reports(result.model, result.stream, config.ingest.holdout_class)
    _write_json(_out_path(config, 'metrics.json'), {
        'config_hash': config.config_hash(),
        'best_epoch': result.best_epoch,
        'best_val_f1': result.best_val_f1,
        'history': result.history,
        'test': {mode: report.to_dict() for mode, report in reports.items()},
    })
    export_metrics(result.history, reports.get('multi'), config.output.out_dir)


def _checkpoint_ingest(args, config, checkpoint):
    """
    Ingests the checkpoint's corpus, or the one named by --dataset, through the stored registry,
    normalization statistics and layers
    """
    stored = checkpoint.config
    records = _load_records(config if args.dataset is not None else stored)
    return ingest_frozen(records, stored.ingest, checkpoint.registry, checkpoint.feature_stats, checkpoint.node_layers)


def cmd_eval(args, config):
    checkpoint = load_checkpoint(_checkpoint_path(args, config), config)
    stored = checkpoint.config
    stream = prepare_stream(_checkpoint_ingest(args, config, checkpoint), stored)
    reports = {args.mode: evaluate(checkpoint.model, stream, args.split, args.mode, stored.ingest.holdout_class)}

    _write_json(_out_path(config, 'eval_metrics.json'), {
        'config_hash': checkpoint.config_hash,
        args.split: {mode: report.to_dict() for mode, report in reports.items()},
    })


def cmd_ablate(args, config):
    switches = tuple('no_' + name for name in args.ablate) if args.ablate else ABLATIONS
    ingest_result = ingest(_load_records(config), config.ingest)
    rows = ablate(ingest_result, config, switches)

    _write_json(_out_path(config, 'metrics.json'), {
        'config_hash': config.config_hash(),
        'ablation': {name: report.to_dict() for name, report in rows},
    })
    export_ablation(rows, config.output.out_dir)

    for name, report in rows:
        logger.info('%-10s f1 %.4f', name, report.f1)


def cmd_unknown(args, config):
    holdout = config.ingest.holdout_class

    if holdout is None:
        raise ConfigError('the unknown command needs --holdout CLASS')

    ingest_result = ingest(_load_records(config), config.ingest)
    result = train(ingest_result, config)
    report = evaluate(result.model, result.stream, 'test', 'unknown', holdout)
    report.update(reference_recall=logistic_reference(result.stream, holdout, config.optim.seed))

    _write_json(_out_path(config, 'metrics.json'), {
        'config_hash': config.config_hash(),
        'best_epoch': result.best_epoch,
        'history': result.history,
        'unknown': report.to_dict(),
    })
    export_metrics(result.history, None, config.output.out_dir)
    logger.info('held-out %s: recall %.4f, logistic reference %.4f', holdout, report.holdout_recall,
                report.reference_recall)


def cmd_export(args, config):
    kinds = [ExportKind(k) for k in (args.export or [k.value for k in ExportKind])]

    if ExportKind.metrics in kinds:
        metrics = _read_json(_out_path(config, 'metrics.json'))
        multi = metrics.get('test', {}).get('multi')
        export_metrics(metrics.get('history', []), MetricsReport(multi) if multi else None, config.output.out_dir)

    if ExportKind.distributions in kinds or ExportKind.representations in kinds:
        checkpoint = load_checkpoint(_checkpoint_path(args, config), config)
        ingest_result = _checkpoint_ingest(args, config, checkpoint)
        stream = prepare_stream(ingest_result, checkpoint.config)

        if ExportKind.distributions in kinds:
            export_distributions(stream, config.output.out_dir)

        if ExportKind.representations in kinds:
            export_representations(checkpoint.model, stream, ingest_result.registry, config.output.out_dir)


COMMANDS = {
    'synth': cmd_synth,
    'ingest': cmd_ingest,
    'train': cmd_train,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
    'unknown': cmd_unknown,
    'export': cmd_export,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH', help='JSON config file')
    common.add_argument('--seed', type=int, help='random seed of the corpus and the parameters')
    common.add_argument('--out', metavar='DIR', help='output directory')
    common.add_argument('--dataset', metavar='PATH|synth', help='flow CSV, or synth for the synthetic corpus')
    common.add_argument('--throughput', action='store_true', help='report flows per minute of scoring')
    common.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    parser = argparse.ArgumentParser(prog='ids3d', description='Streaming intrusion detection on flow records')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    commands.add_parser('synth', parents=[common], help='write the synthetic corpus as CSV')
    commands.add_parser('ingest', parents=[common], help='ingest a corpus and summarize it')

    sub = commands.add_parser('train', parents=[common], help='train, checkpoint and evaluate on the test split')
    sub.add_argument('--holdout', metavar='CLASS', help='attack class removed from train and val')
    sub.add_argument('--checkpoint', metavar='PATH')

    sub = commands.add_parser('eval', parents=[common], help='evaluate a checkpoint')
    sub.add_argument('--checkpoint', metavar='PATH')
    sub.add_argument('--mode', default='binary', choices=['binary', 'multi', 'unknown'])
    sub.add_argument('--split', default='test', choices=list(SPLITS))

    sub = commands.add_parser('ablate', parents=[common], help='compare the full model with its ablations')
    sub.add_argument('--ablate', action='append', choices=['sd', 'rd', 'mlgrand'],
                     help='ablation to run, repeatable; all when omitted')

    sub = commands.add_parser('unknown', parents=[common], help='unknown-attack protocol')
    sub.add_argument('--holdout', metavar='CLASS', help='attack class to hold out, unless the config names one')

    sub = commands.add_parser('export', parents=[common], help='write plottable CSVs')
    sub.add_argument('--export', action='append', choices=[k.value for k in ExportKind],
                     help='export to write, repeatable; all when omitted')
    sub.add_argument('--checkpoint', metavar='PATH')

    return parser


def main(argv=None):
    """
    :return: Process exit status
    :rtype: int
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        config = resolve_config(args)
        _echo_config(config)
        COMMANDS[args.command](args, config)
    except IdsError as e:
        logger.error('%s: %s', type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        logger.error('I/O error: %s', e)
        return EXIT_IO
    except Exception:
        logger.exception('unexpected failure')
        return EXIT_OTHER

    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
