import io
import json
import math
import os
import tempfile
import unittest
from unittest import mock

import numpy as np

from pyrejective.cli import dispatch, load_case_control_csv, load_population_csv, write_case_control_csv
from pyrejective.errors import DataFileError, ValidationError
from pyrejective.logistic import CaseControlSet, clogit_eval, make_model

HERE = os.path.dirname(os.path.abspath(__file__))


def fixture(name: str) -> str:
    return os.path.join(HERE, name)


class CommandLineTests(unittest.TestCase):

    def run_cli(self, *argv):
        """exit status, stdout and stderr of one invocation"""
        with mock.patch('sys.stdout', new_callable=io.StringIO) as out, \
                mock.patch('sys.stderr', new_callable=io.StringIO) as err:
            status = dispatch(list(argv))
        return status, out.getvalue(), err.getvalue()

    def test_pmf(self):
        status, out, _ = self.run_cli('pb', 'pmf', '--probs', '0.5,0.5')
        self.assertEqual(status, 0)
        self.assertEqual(out.splitlines(), ['k,prob', '0,0.25', '1,0.5', '2,0.25'])

    def test_pmf_pattern(self):
        status, out, _ = self.run_cli('pb', 'pmf', '--pattern', '0.3,0.5,0.7', '--n', '6')
        self.assertEqual(status, 0)
        self.assertEqual(len(out.splitlines()), 8, 'header and k = 0..6')
        status, _, err = self.run_cli('pb', 'pmf', '--pattern', '0.3,0.5,0.7')
        self.assertEqual(status, 1)
        self.assertEqual(json.loads(err)['code'], 'INVALID_INPUT')

    def test_lclt(self):
        status, out, _ = self.run_cli('pb', 'lclt', '--probs', '0.5,0.5', '--kappa', '0')
        self.assertEqual(status, 0)
        rows = out.splitlines()
        self.assertEqual(rows[0], 'k,nu,approx,exact,condition_ok')
        k, nu, approx, exact, ok = rows[1].split(',')
        self.assertEqual((k, ok), ('1', '1'))
        self.assertAlmostEqual(float(approx), 0.5, places=12)
        status, _, err = self.run_cli('pb', 'lclt', '--probs', '0.5,0.5', '--s', '3')
        self.assertEqual(status, 1)
        self.assertEqual(json.loads(err)['code'], 'INVALID_INPUT')

    def test_inversion(self):
        status, out, _ = self.run_cli('pb', 'inversion', '--probs', '0.2,0.4,0.6,0.8', '--kappa', '2')
        self.assertEqual(status, 0)
        for row in out.splitlines()[1:]:
            _, _, inversion, exact = row.split(',')
            self.assertLess(abs(float(inversion) - float(exact)), 1e-9)

    def test_inclusion(self):
        status, out, _ = self.run_cli('rej', 'inclusion', '--weights', '1,2,3', '--eta', '2')
        self.assertEqual(status, 0)
        rows = [row.split(',') for row in out.splitlines()]
        self.assertEqual(rows[0], ['id', 'inclusion'])
        for (label, value), expected in zip(rows[1:], (5 / 11, 8 / 11, 9 / 11)):
            self.assertAlmostEqual(float(value), expected, places=12, msg=f'item {label}')

    def test_inclusion_population_file(self):
        status, out, _ = self.run_cli('rej', 'inclusion', '--population', fixture('population.csv'), '--eta', '1')
        self.assertEqual(status, 0)
        rows = [row.split(',') for row in out.splitlines()[1:]]
        self.assertEqual([label for label, _ in rows], ['alpha', 'beta', 'gamma'])
        self.assertAlmostEqual(float(rows[2][1]), 0.5, places=14)

    def test_corr(self):
        status, out, _ = self.run_cli('rej', 'corr', '--weights', '1,2,3', '--eta', '2', '--items', '1,2',
                                      '--method', 'both')
        self.assertEqual(status, 0)
        rows = dict(row.split(',') for row in out.splitlines()[1:])
        for method in ('exact', 'recursion'):
            self.assertAlmostEqual(float(rows[method]), -18 / 121, places=14, msg=method)

    def test_sample(self):
        argv = ('rej', 'sample', '--weights', '1,2,3,4,5', '--eta', '2', '--draws', '5', '--seed', '99')
        status, first, _ = self.run_cli(*argv)
        self.assertEqual(status, 0)
        self.assertEqual(len(first.splitlines()), 11, 'header plus eta rows per draw')
        self.assertEqual(first, self.run_cli(*argv)[1], 'seeded draws repeat')

    def test_usage_errors(self):
        self.assertEqual(self.run_cli('xyz')[0], 2)
        self.assertEqual(self.run_cli('rej', 'sample', '--weights', '1,2', '--eta', '1')[0], 2, 'seed is required')
        self.assertEqual(self.run_cli('rej', 'sample', '--weights', '1,2', '--eta', '1', '--seed', '-4')[0], 2)
        self.assertEqual(self.run_cli('pb', 'pmf')[0], 2)

    def test_version(self):
        status, out, _ = self.run_cli('--version')
        self.assertEqual(status, 0)
        self.assertIn('pyrejective', out)

    def test_missing_data_file(self):
        status, out, err = self.run_cli('fit', 'clogit', '--data', 'missing.csv')
        self.assertEqual(status, 1)
        self.assertEqual(out, '')
        error = json.loads(err)
        self.assertEqual(error['code'], 'FILE_NOT_FOUND')
        self.assertEqual(set(error), {'code', 'message', 'context'})

    def test_fit(self):
        status, out, _ = self.run_cli('fit', 'ulogit', '--data', fixture('cc_table.csv'))
        self.assertEqual(status, 0)
        payload = json.loads(out)
        self.assertAlmostEqual(payload['beta_hat'][0], math.log(3.5), places=8)
        self.assertEqual((payload['eta'], payload['size'], payload['dimension']), (9, 20, 1))
        manifest = payload['manifest']
        self.assertEqual(manifest['subcommand'], 'fit ulogit')
        self.assertEqual(len(list(manifest['inputs'].values())[0]), 64, 'sha256 digest')

    def test_fit_rerun_identical(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'fit.json')
            outputs = list()
            for _ in range(2):
                status, _, _ = self.run_cli('fit', 'clogit', '--data', fixture('cc_small.csv'), '--out', path)
                self.assertEqual(status, 0)
                with open(path, 'rb') as f:
                    outputs.append(f.read())
            self.assertEqual(outputs[0], outputs[1], 'fit output differs between identical runs')
            payload = json.loads(outputs[0])
            self.assertNotIn('wall_time', payload['manifest'])
            with open(path + '.manifest.json') as f:
                self.assertIn('wall_time', json.load(f), 'timing belongs in the sidecar manifest')

    def test_unwritable_out(self):
        missing = os.path.join(HERE, 'no_such_dir', 'pmf.csv')
        status, out, err = self.run_cli('pb', 'pmf', '--probs', '0.5', '--out', missing)
        self.assertEqual(status, 1)
        self.assertEqual(out, '')
        error = json.loads(err)
        self.assertEqual(error['code'], 'FILE_NOT_FOUND')
        self.assertEqual(error['context']['path'], missing)

    def test_fit_bad_row(self):
        status, _, err = self.run_cli('fit', 'clogit', '--data', fixture('cc_bad.csv'))
        self.assertEqual(status, 1)
        error = json.loads(err)
        self.assertEqual(error['code'], 'PARSE_ERROR')
        self.assertEqual(error['context']['line'], 5)

    def test_out_and_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'pmf.csv')
            status, out, _ = self.run_cli('pb', 'pmf', '--probs', '0.25', '--out', path)
            self.assertEqual(status, 0)
            self.assertEqual(out, '', 'CSV goes to the file')
            with open(path) as f:
                self.assertEqual(f.read(), 'k,prob\n0,0.75\n1,0.25\n')
            with open(path + '.manifest.json') as f:
                manifest = json.load(f)
            self.assertEqual(manifest['subcommand'], 'pb pmf')
            self.assertEqual(manifest['config']['probs'], '0.25')

    def test_sim_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            status, out, _ = self.run_cli('sim', 'run', '--config', fixture('small.yml'), '--seed', '3',
                                          '--out', tmp)
            self.assertEqual(status, 0)
            self.assertIn('replications', out)
            for name in ('replications.csv', 'summary.json', 'coverage.csv', 'manifest.json'):
                self.assertTrue(os.path.exists(os.path.join(tmp, name)), f'{name} missing')
            with open(os.path.join(tmp, 'manifest.json')) as f:
                manifest = json.load(f)
            self.assertEqual(manifest['seed'], 3)
            self.assertEqual(manifest['config']['design']['family'], 'CB_BT')
            with open(os.path.join(tmp, 'summary.json')) as f:
                first = f.read()
            self.run_cli('sim', 'run', '--config', fixture('small.yml'), '--seed', '3', '--out', tmp)
            with open(os.path.join(tmp, 'summary.json')) as f:
                self.assertEqual(f.read(), first, 'rerun is byte-identical')


class CaseControlFileTests(unittest.TestCase):

    def test_load(self):
        data = load_case_control_csv(fixture('cc_small.csv'))
        self.assertEqual(data.size, 3)
        self.assertEqual(data.ids, ('a', 'b', 'c'))
        self.assertEqual(data.eta, 1)

    def test_line_numbers(self):
        with self.assertRaises(DataFileError) as ctx:
            load_case_control_csv(fixture('cc_bad.csv'))
        self.assertIn('line 5', ctx.exception.message)

    def test_dimension(self):
        data = load_case_control_csv(fixture('cc_wide.csv'))
        self.assertEqual(data.dimension, 3)
        _, score, information = clogit_eval(data, make_model('exponential', data.dimension), np.zeros(3))
        self.assertEqual(score.shape, (3,))
        self.assertEqual(information.shape, (3, 3))

    def test_rejections(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'cc.csv')
            with open(path, 'w') as f:
                f.write('id,is_case,z1\na,1,0\nb,0,1\na,0,2\n')
            with self.assertRaises(DataFileError) as ctx:
                load_case_control_csv(path)
            self.assertIn('duplicate', ctx.exception.message)
            with open(path, 'w') as f:
                f.write('id,is_case,z1\na,1,0\nb,1,1\n')
            with self.assertRaises(ValidationError) as ctx:
                load_case_control_csv(path)
            self.assertEqual(ctx.exception.code, 'ETA_BOUNDS')
            with open(path, 'w') as f:
                f.write('name,case,z1\na,1,0\n')
            with self.assertRaises(DataFileError):
                load_case_control_csv(path)

    def test_round_trip(self):
        rng = np.random.default_rng(8)
        data = CaseControlSet([f'id{i}' for i in range(12)], rng.standard_normal((12, 2)) / 3,
                              rng.permutation([True] * 5 + [False] * 7))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'cc.csv')
            write_case_control_csv(data, path)
            self.assertEqual(load_case_control_csv(path), data, 'write then load changed the set')

    def test_population(self):
        population = load_population_csv(fixture('population.csv'))
        self.assertEqual(population.ids, ('alpha', 'beta', 'gamma'))
        self.assertEqual(population.weights.tolist(), [1.0, 2.0, 3.0])


if __name__ == '__main__':
    unittest.main()
