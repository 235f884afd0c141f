"""
This module provides classes for testing the ids3d command line
"""

import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

import pandas as pd

from ids3d.cli import ExportKind
from ids3d.cli import build_parser
from ids3d.cli import main
from ids3d.cli import resolve_config


def get_fixture_path(fixture_name):
    return os.path.join(os.path.dirname(os.path.realpath(__file__)), 'fixtures', fixture_name)


def flows_fixture_path():
    return os.path.join(os.path.dirname(os.path.dirname(os.path.realpath(__file__))), 'engine', 'fixtures',
                        'flows.csv')


def read_json(path):
    with open(path, 'r') as f:
        return json.load(f)


def run(*argv):
    return main(list(argv) + ['--config', get_fixture_path('tiny.json'), '--log-level', 'WARNING'])


class ParserTests(unittest.TestCase):

    def test_flags_override_file(self):
        args = build_parser().parse_args(['train', '--config', get_fixture_path('tiny.json'), '--seed', '9',
                                          '--out', 'runs/x', '--holdout', 'Scan', '--throughput'])
        config = resolve_config(args)

        self.assertEqual(9, config.optim.seed)
        self.assertEqual('runs/x', config.output.out_dir)
        self.assertEqual('Scan', config.ingest.holdout_class)
        self.assertTrue(config.training.measure_throughput)
        self.assertEqual(12, config.synthetic.node_count)

    def test_dataset_selection(self):
        args = build_parser().parse_args(['ingest', '--dataset', 'flows.csv'])
        self.assertEqual('flows.csv', resolve_config(args).ingest.csv_path)

        args = build_parser().parse_args(['ingest', '--dataset', 'synth'])
        self.assertIsNone(resolve_config(args).ingest.csv_path)

    def test_export_kinds(self):
        self.assertEqual(['distributions', 'representations', 'metrics'], [k.value for k in ExportKind])

    def test_unknown_command(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args(['serve'])

    def test_invalid_ablation(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args(['ablate', '--ablate', 'memory'])


class CommandTests(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def out(self, name):
        return os.path.join(self.directory, name)

    def test_synth(self):
        self.assertEqual(0, run('synth', '--out', self.directory))

        self.assertEqual(200, len(pd.read_csv(self.out('flows.csv'))))
        effective = read_json(self.out('effective_config.json'))
        self.assertEqual(64, len(effective['config_hash']))
        self.assertEqual(3, effective['optim']['seed'])

    def test_ingest_synthetic(self):
        self.assertEqual(0, run('ingest', '--out', self.directory))

        summary = read_json(self.out('ingest_summary.json'))
        self.assertEqual(200, sum(summary['events'].values()))
        self.assertEqual(12, summary['nodes'])
        self.assertTrue(summary['ordered'])

    def test_ingest_csv(self):
        self.assertEqual(0, run('ingest', '--out', self.directory, '--dataset', flows_fixture_path()))

        summary = read_json(self.out('ingest_summary.json'))
        self.assertEqual({'train': 14, 'val': 3, 'test': 3}, summary['events'])
        self.assertEqual(7, summary['nodes'])
        self.assertEqual(2, summary['intermediate_nodes'])
        self.assertEqual(['DDoS', 'Scan'], summary['attack_classes'])

    def test_missing_dataset(self):
        self.assertEqual(4, run('ingest', '--out', self.directory, '--dataset', self.out('absent.csv')))

    def test_invalid_config(self):
        path = self.out('config.json')

        with open(path, 'w') as f:
            json.dump({'training': {'alpha': -1.0}}, f)

        self.assertEqual(2, main(['ingest', '--config', path, '--out', self.directory, '--log-level', 'ERROR']))

    def test_unknown_needs_holdout(self):
        self.assertEqual(2, run('unknown', '--out', self.directory))

    def test_absent_holdout_class(self):
        self.assertEqual(2, run('unknown', '--out', self.directory, '--holdout', 'Worm'))

    def test_eval_without_checkpoint(self):
        self.assertEqual(4, run('eval', '--out', self.directory))

    def test_unknown(self):
        self.assertEqual(0, run('unknown', '--out', self.directory, '--holdout', 'Scan'))

        report = read_json(self.out('metrics.json'))['unknown']
        self.assertEqual('Scan', report['holdout_class'])
        self.assertTrue(0.0 <= report['holdout_recall'] <= 1.0)
        self.assertTrue(0.0 <= report['reference_recall'] <= 1.0)

    @mock.patch('ids3d.cli.write_flow_csv', autospec=True)
    @mock.patch('ids3d.cli.synthesize_corpus', autospec=True)
    def test_synth_seed_flag(self, synthesize_corpus, write_flow_csv):
        synthesize_corpus.return_value = []

        self.assertEqual(0, run('synth', '--out', self.directory, '--seed', '5'))

        spec, seed = synthesize_corpus.call_args[0]
        self.assertEqual(5, seed)
        self.assertEqual(200, spec.flow_count)
        write_flow_csv.assert_called_once_with([], self.out('flows.csv'))

    @mock.patch('ids3d.cli.ingest', autospec=True)
    def test_os_error_exit_code(self, ingest):
        ingest.side_effect = PermissionError('denied')

        self.assertEqual(4, run('ingest', '--out', self.directory))

    @mock.patch('ids3d.cli.ingest', autospec=True)
    def test_unexpected_error_exit_code(self, ingest):
        ingest.side_effect = RuntimeError('boom')

        with self.assertLogs('ids3d.cli', level='ERROR'):
            self.assertEqual(1, run('ingest', '--out', self.directory))

    def test_ablate(self):
        self.assertEqual(0, run('ablate', '--out', self.directory, '--ablate', 'rd'))

        frame = pd.read_csv(self.out('metrics.csv'))
        self.assertEqual(['full', 'no_rd'], frame['variant'].tolist())
        self.assertEqual({'full', 'no_rd'}, set(read_json(self.out('metrics.json'))['ablation']))


class TrainedRunTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.directory = tempfile.mkdtemp()
        cls.status = run('train', '--out', cls.directory)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.directory)

    def out(self, name):
        return os.path.join(self.directory, name)

    def test_train(self):
        self.assertEqual(0, self.status)
        self.assertTrue(os.path.isfile(self.out('checkpoint.bin')))
        self.assertTrue(os.path.isfile(self.out('checkpoint.shapes.json')))

        metrics = read_json(self.out('metrics.json'))
        self.assertEqual({'binary', 'multi'}, set(metrics['test']))
        self.assertEqual(1, len(metrics['history']))
        self.assertEqual(metrics['config_hash'], read_json(self.out('effective_config.json'))['config_hash'])

    def test_eval_matches_train(self):
        self.assertEqual(0, run('eval', '--out', self.directory))

        evaluated = read_json(self.out('eval_metrics.json'))['test']['binary']
        trained = read_json(self.out('metrics.json'))['test']['binary']
        self.assertEqual(trained['f1'], evaluated['f1'])
        self.assertEqual(trained['confusion_matrix'], evaluated['confusion_matrix'])

    def test_eval_val_split(self):
        self.assertEqual(0, run('eval', '--out', self.directory, '--split', 'val', '--mode', 'multi'))

        self.assertIn('multi', read_json(self.out('eval_metrics.json'))['val'])

    def test_eval_rejects_endpoints_outside_the_checkpoint(self):
        directory = tempfile.mkdtemp()

        try:
            status = run('eval', '--out', directory, '--checkpoint', self.out('checkpoint.bin'),
                         '--dataset', flows_fixture_path())
        finally:
            shutil.rmtree(directory)

        self.assertEqual(3, status)

    def test_export(self):
        self.assertEqual(0, run('export', '--out', self.directory))

        for name in ('distributions.csv', 'overlap.csv', 'representations.csv', 'metrics.csv'):
            self.assertTrue(os.path.isfile(self.out(name)), name)

    def test_export_only_distributions(self):
        self.assertEqual(0, run('export', '--out', self.directory, '--export', 'distributions'))

        self.assertTrue(os.path.isfile(self.out('overlap.csv')))


if __name__ == '__main__':
    unittest.main()
