import json
import math
import os
import tempfile
import unittest

import numpy as np

from pyrejective.config import SimulationConfig, StudyBaseConfig
from pyrejective.designs import DesignSpec, StudyBase, case_fraction_study, draw_covariates, generate_study_base, \
    load_covariate_file, regime_counts, sample_controls
from pyrejective.errors import ConfigError, DataFileError, ReplicationSKIP
from pyrejective.harness import ReplicationPool, run_replication, run_simulation

HERE = os.path.dirname(os.path.abspath(__file__))
SLOW = os.environ.get('PYREJECTIVE_SLOW', '') == '1'
LOG2 = math.log(2.0)


def base_config(**overrides) -> StudyBaseConfig:
    settings = {'N': 2000, 'beta0': [LOG2], 'lambda0': 0.25,
                'covariates': {'generator': 'bernoulli', 'prob': 0.5}}
    settings.update(overrides)
    return StudyBaseConfig(settings)


def simulation(replications: int = 6, workers: int = 1, **design) -> SimulationConfig:
    return SimulationConfig({
        'base': {'N': 300, 'beta0': [LOG2], 'prevalence': 0.2,
                 'covariates': {'generator': 'bernoulli', 'prob': 0.5}},
        'design': dict({'family': 'CC_SRS', 'count_basis': 'observed', 'f': 0.5}, **design),
        'replications': replications,
        'workers': workers,
        'reference_size': 5000,
    })


def toy_base(cases: int, size: int = 10) -> StudyBase:
    is_case = np.zeros(size, dtype=bool)
    is_case[:cases] = True
    return StudyBase(np.arange(size, dtype=float).reshape(-1, 1), is_case, 0.1, np.zeros(1))


class DesignSpecTests(unittest.TestCase):

    def test_rows(self):
        self.assertEqual(len(DesignSpec.ROWS), 8, 'two count bases for each of four families')
        spec = DesignSpec.parse('cb_bt/expected', 0.25, 0.1)
        self.assertEqual(spec.name, 'CB_BT/expected')
        self.assertTrue(spec.is_case_base and spec.is_bernoulli)
        self.assertEqual(DesignSpec.parse('CC_SRS', 0.5).count_basis, 'observed')

    def test_validation(self):
        with self.assertRaises(ConfigError):
            DesignSpec('CC_XYZ', 'observed', 0.5)
        with self.assertRaises(ConfigError):
            DesignSpec('CC_SRS', 'observed', 1.0)
        with self.assertRaises(ConfigError):
            DesignSpec('CC_BT', 'expected', 0.5)
        with self.assertRaises(ConfigError):
            DesignSpec.from_dict({'family': 'CC_SRS'})

    def test_targets(self):
        self.assertAlmostEqual(DesignSpec('CC_BT', 'expected', 0.5, 0.2).target(40, 200), 0.25)
        self.assertAlmostEqual(DesignSpec('CC_SRS', 'observed', 0.5).target(40, 200), 40.0)
        self.assertAlmostEqual(DesignSpec('CC_SRS', 'observed', 0.2).target(40, 200), 160.0)
        self.assertAlmostEqual(DesignSpec('CC_SRS', 'expected', 0.5, 0.2).target(37, 200), 40.0)
        self.assertAlmostEqual(DesignSpec('CC_BT', 'observed', 0.5).target(40, 200), 0.25)
        self.assertAlmostEqual(DesignSpec('CB_SRS', 'observed', 0.5).target(40, 200), 50.0)
        self.assertAlmostEqual(DesignSpec('CB_BT', 'expected', 0.5, 0.2).target(40, 200), 0.25)

    def test_round_trip_dict(self):
        spec = DesignSpec('CB_SRS', 'expected', 0.3, 0.1)
        self.assertEqual(DesignSpec.from_dict(spec.to_dict()), spec)


class StudyBaseTests(unittest.TestCase):

    def test_null_truth(self):
        base = generate_study_base(base_config(beta0=[0.0], N=50), 1)
        np.testing.assert_allclose(base.disease_probabilities(), 0.25 / 1.25, err_msg='constant without exposure')

    def test_deterministic(self):
        first = generate_study_base(base_config(), 42)
        second = generate_study_base(base_config(), 42)
        np.testing.assert_array_equal(first.z, second.z)
        np.testing.assert_array_equal(first.is_case, second.is_case)
        self.assertFalse(np.array_equal(first.is_case, generate_study_base(base_config(), 43).is_case))

    def test_case_fraction(self):
        n = 100_000
        base = generate_study_base(base_config(N=n, lambda0=0.1), 7)
        mean = 0.5 * 0.1 / 1.1 + 0.5 * 0.2 / 1.2
        sigma = math.sqrt(mean * (1 - mean) / n)
        self.assertLess(abs(base.case_fraction - mean), 4 * sigma, f'case fraction {base.case_fraction}')

    def test_drift_regimes(self):
        covariates = {'generator': 'drift', 'regimes': [
            {'fraction': 0.5, 'generator': 'bernoulli', 'prob': 0.2},
            {'fraction': 0.5, 'generator': 'bernoulli', 'prob': 0.8}]}
        n = 100_000
        base = generate_study_base(base_config(N=n, lambda0=0.1, covariates=covariates), 11)
        self.assertEqual(list(np.bincount(base.regimes)), [n // 2, n // 2])
        for label, prob in ((0, 0.2), (1, 0.8)):
            cases = base.is_case[base.regimes == label]
            mean = prob * 0.2 / 1.2 + (1 - prob) * 0.1 / 1.1
            sigma = math.sqrt(mean * (1 - mean) / len(cases))
            self.assertLess(abs(float(np.mean(cases)) - mean), 4 * sigma, f'regime {label}')

    def test_prevalence(self):
        base = generate_study_base(base_config(N=50_000, lambda0=None, prevalence=0.2), 3)
        self.assertLess(abs(base.case_fraction - 0.2), 4 * math.sqrt(0.16 / 50_000) + 0.01)

    def test_regime_counts(self):
        self.assertEqual(regime_counts([0.3, 0.7], 10), [3, 7])
        self.assertEqual(regime_counts([0.25, 0.25, 0.5], 7), [2, 2, 3])

    def test_covariate_file(self):
        z = load_covariate_file(os.path.join(HERE, 'covariates.csv'), 2)
        self.assertEqual(z.shape, (6, 2))
        self.assertEqual(z[1].tolist(), [1.0, -0.25])
        with self.assertRaises(DataFileError) as ctx:
            load_covariate_file(os.path.join(HERE, 'covariates.csv'), 3)
        self.assertIn('line 2', ctx.exception.message)
        with self.assertRaises(DataFileError) as ctx:
            load_covariate_file(os.path.join(HERE, 'missing.csv'), 1)
        self.assertEqual(ctx.exception.code, 'FILE_NOT_FOUND')

    def test_file_generator(self):
        config = StudyBaseConfig({'beta0': [0.5, 0.0], 'lambda0': 0.3,
                                  'covariates': {'generator': 'file', 'path': 'covariates.csv'}}, HERE)
        z, labels = draw_covariates(config, None, np.random.default_rng(0))
        self.assertEqual(z.shape, (6, 2))
        self.assertIsNone(labels)
        z, _ = draw_covariates(config, 4, np.random.default_rng(0))
        self.assertEqual(len(z), 4)
        with self.assertRaises(ConfigError):
            draw_covariates(config, 7, np.random.default_rng(0))


class SampleControlsTests(unittest.TestCase):

    def test_case_control_half(self):
        base = generate_study_base(base_config(), 5)
        data = sample_controls(base, DesignSpec('CC_SRS', 'observed', 0.5), 6)
        self.assertEqual(data.eta, base.cases, 'every case enters E')
        self.assertEqual(data.size, 2 * base.cases)
        self.assertEqual(data.eta / data.size, 0.5)
        self.assertFalse(data.meta['clamped'])

    def test_bernoulli_probability(self):
        base = generate_study_base(base_config(), 5)
        data = sample_controls(base, DesignSpec('CC_BT', 'expected', 0.5, 0.2), 6)
        self.assertAlmostEqual(data.meta['control_target'], 0.25)
        self.assertAlmostEqual(data.meta['requested'], 0.25)

    def test_case_base_contains_cases(self):
        base = generate_study_base(base_config(), 8)
        for spec in (DesignSpec('CB_SRS', 'observed', 0.5), DesignSpec('CB_BT', 'expected', 0.5, 0.2)):
            data = sample_controls(base, spec, 9)
            self.assertEqual(data.eta, base.cases, spec.name)
            self.assertLessEqual(data.size, base.N)
            self.assertEqual(len(set(data.ids)), data.size, 'E is a set')

    def test_deterministic(self):
        base = generate_study_base(base_config(), 5)
        spec = DesignSpec('CB_SRS', 'observed', 0.5)
        self.assertEqual(sample_controls(base, spec, 1), sample_controls(base, spec, 1))

    def test_clamping(self):
        base = toy_base(5)
        data = sample_controls(base, DesignSpec('CC_SRS', 'observed', 0.2), 1)
        self.assertTrue(data.meta['clamped'])
        self.assertEqual(data.size, 10)
        data = sample_controls(base, DesignSpec('CC_BT', 'observed', 0.2), 1)
        self.assertTrue(data.meta['clamped'])
        self.assertEqual(data.meta['requested'], 1.0)

    def test_skips(self):
        with self.assertRaises(ReplicationSKIP):
            sample_controls(toy_base(0), DesignSpec('CC_SRS', 'observed', 0.5), 1)
        with self.assertRaises(ReplicationSKIP):
            sample_controls(toy_base(10), DesignSpec('CC_SRS', 'observed', 0.5), 1)
        with self.assertRaises(ReplicationSKIP) as ctx:
            sample_controls(toy_base(1, 100), DesignSpec('CC_SRS', 'observed', 0.9), 1)
        self.assertEqual(ctx.exception.reason, 'no controls sampled')

    def test_fraction_concentrates(self):
        config = base_config(N=10_000, lambda0=None, prevalence=0.2)
        reps = 1000 if SLOW else 60
        for family, basis in DesignSpec.ROWS:
            spec = DesignSpec(family, basis, 0.5, 0.2 if basis == 'expected' else None)
            fractions = list()
            for r in range(reps):
                base_seed, design_seed = np.random.SeedSequence([17, r]).spawn(2)
                data = sample_controls(generate_study_base(config, base_seed), spec, design_seed)
                fractions.append(data.eta / data.size)
            self.assertLess(abs(float(np.mean(fractions)) - 0.5), 0.02, spec.name)

    def test_case_fraction_study(self):
        config = base_config(lambda0=None, prevalence=0.2)
        spec = DesignSpec('CC_BT', 'observed', 0.5)
        table, means = case_fraction_study(config, spec, [1000, 10_000], 40, 3)
        self.assertLess(table.values[1], table.values[0], f'variances {table.values}')
        self.assertLess(table.slope, 0)
        self.assertLess(abs(means[10_000] - 0.5), 0.02)

    def test_case_fraction_study_every_row(self):
        config = base_config(lambda0=None, prevalence=0.2)
        sizes, reps = ([1000, 10_000, 100_000], 40) if SLOW else ([1000, 10_000], 30)
        for family, basis in DesignSpec.ROWS:
            spec = DesignSpec(family, basis, 0.5, 0.2 if basis == 'expected' else None)
            table, _ = case_fraction_study(config, spec, sizes, reps, 5)
            variances = table.values
            for smaller, larger in zip(variances, variances[1:]):
                # observed-count SRS fixes eta / |E| exactly, so both variances may be zero
                if smaller > 0:
                    self.assertLess(larger, smaller, f'{spec.name}: variances {variances}')
                else:
                    self.assertEqual(larger, 0.0, f'{spec.name}: variances {variances}')


class ConfigTests(unittest.TestCase):

    def test_standard_file(self):
        config = SimulationConfig(os.path.join(HERE, 'standard.yml'))
        self.assertEqual(config.base.N, 2000)
        self.assertIsNone(config.base.lambda0)
        self.assertAlmostEqual(config.base.prevalence, 0.2)
        self.assertEqual(config.design.name, 'CC_SRS/observed')
        self.assertEqual(config.fitters, ['clogit', 'ulogit'])
        self.assertEqual((config.replications, config.workers), (1000, 4))
        resolved = config.as_dict()
        self.assertEqual(resolved['base']['model'], 'exponential')
        self.assertEqual(resolved['design']['f'], 0.5)

    def test_errors(self):
        with self.assertRaises(DataFileError) as ctx:
            SimulationConfig(os.path.join(HERE, 'nothing.yml'))
        self.assertEqual(ctx.exception.code, 'FILE_NOT_FOUND')
        with self.assertRaises(ConfigError):
            SimulationConfig(os.path.join(HERE, 'broken.yml'))
        with self.assertRaises(ConfigError):
            SimulationConfig({'base': {'N': 10, 'lambda0': 1.0}})
        with self.assertRaises(ConfigError):
            SimulationConfig({'base': {'N': 10}, 'design': {'f': 0.5}})
        with self.assertRaises(ConfigError):
            simulation(replications=0)
        with self.assertRaises(ConfigError):
            SimulationConfig(dict(simulation().settings, fitters=['probit']))

    def test_generator_checks(self):
        bad = [
            {'generator': 'poisson'},
            {'generator': 'bernoulli', 'prob': 1.5},
            {'generator': 'normal', 'sd': 0},
            {'generator': 'file'},
            {'generator': 'drift', 'regimes': [{'fraction': 1.0, 'generator': 'normal'}]},
            {'generator': 'drift', 'regimes': [{'fraction': 0.5, 'generator': 'normal'},
                                               {'fraction': 0.4, 'generator': 'normal'}]},
            {'generator': 'drift', 'regimes': [{'fraction': 0.5, 'generator': 'normal'},
                                               {'fraction': 0.5, 'generator': 'file', 'path': 'x.csv'}]},
        ]
        for covariates in bad:
            with self.assertRaises(ConfigError, msg=f'{covariates} accepted'):
                base_config(covariates=covariates)

    def test_with_size(self):
        config = base_config()
        self.assertEqual(config.with_size(500).N, 500)
        self.assertEqual(config.N, 2000, 'original untouched')
        self.assertEqual(config.with_lambda0(0.5).lambda0, 0.5)


class HarnessTests(unittest.TestCase):

    def test_replication_record(self):
        config = simulation()
        record = run_replication(config.base.with_lambda0(0.25), config.design, ['clogit', 'ulogit'], 9, 0)
        self.assertEqual(record.status, 'completed')
        self.assertEqual(record.size, 2 * record.eta)
        self.assertTrue(record.fits['clogit'].converged)
        self.assertIsNotNone(record.fits['ulogit'].alpha)
        self.assertIsNotNone(record.alpha_eta)

    def test_order_independent(self):
        serial = run_simulation(simulation(workers=1), 2024)
        parallel = run_simulation(simulation(workers=3), 2024)
        self.assertEqual(serial.to_json(), parallel.to_json(), 'merge depends on scheduling')
        self.assertEqual(serial.replication_rows(), parallel.replication_rows())

    def test_pool_keeps_every_index(self):
        config = simulation()
        pool = ReplicationPool(config.base.with_lambda0(0.25), config.design, ['clogit'], 1, 4)
        records = pool.start(9)
        self.assertEqual([r.index for r in records], list(range(9)))

    def test_report(self):
        report = run_simulation(simulation(), 11)
        dispositions = report.dispositions
        self.assertEqual(dispositions['completed'] + dispositions['skipped'], 6)
        self.assertEqual(dispositions['count_rounding'], 'nearest, ties to even')
        self.assertIn('agreement', report.summaries)
        self.assertIsNotNone(report.config['base']['lambda0'], 'lambda0 resolved from prevalence')
        self.assertIn('sigma_inverse', report.reference)
        with tempfile.TemporaryDirectory() as out:
            paths = report.write(out)
            self.assertEqual([os.path.basename(p) for p in paths], ['replications.csv', 'summary.json', 'coverage.csv'])
            with open(paths[0]) as f:
                self.assertEqual(len(f.read().splitlines()), 7, 'header plus one row per replication')
            with open(paths[1]) as f:
                summary = json.load(f)
            self.assertEqual(summary['seed'], 11)
            self.assertEqual(set(summary['summaries']['fitters']), {'clogit', 'ulogit'})


class AcceptanceTests(unittest.TestCase):
    """Monte Carlo checks of the estimator limits; minutes of runtime, so opt in with PYREJECTIVE_SLOW=1"""

    def check_bands(self, report, label: str, variance: bool = False):
        for name in ('clogit', 'ulogit'):
            summary = report.summaries['fitters'][name]
            entry = summary['coefficients'][0]
            self.assertLess(abs(entry['bias']), 3 * entry['mcse'], f'{label} {name}: bias {entry["bias"]}')
            self.assertTrue(0.925 <= entry['coverage'] <= 0.975, f'{label} {name}: coverage {entry["coverage"]}')
            if variance:
                self.assertTrue(0.85 <= entry['variance_ratio'] <= 1.15,
                                f'{label} {name}: variance ratio {entry["variance_ratio"]}')

    @unittest.skipUnless(SLOW, 'set PYREJECTIVE_SLOW=1')
    def test_standard_scenario(self):
        report = run_simulation(SimulationConfig(os.path.join(HERE, 'standard.yml')), 20240601)
        self.check_bands(report, 'standard', variance=True)
        agreement = report.summaries['agreement'][0]
        self.assertGreater(agreement['correlation'], 0.95, f'clogit/ulogit correlation {agreement["correlation"]}')
        self.assertLess(agreement['median_relative_gap'], 0.5,
                        f'median clogit/ulogit gap {agreement["median_relative_gap"]} standard errors')
        alpha = report.summaries['fitters']['ulogit']['alpha']
        ratio = alpha['scaled_variance'] / alpha['reference_variance']
        self.assertTrue(0.75 <= ratio <= 1.25, f'alpha variance ratio {ratio}')

    @unittest.skipUnless(SLOW, 'set PYREJECTIVE_SLOW=1')
    def test_null_truth(self):
        settings = SimulationConfig(os.path.join(HERE, 'standard.yml')).settings
        settings['base']['beta0'] = [0.0]
        settings['replications'] = 300
        report = run_simulation(SimulationConfig(settings), 5)
        for name in ('clogit', 'ulogit'):
            entry = report.summaries['fitters'][name]['coefficients'][0]
            self.assertLess(abs(entry['bias']), 3 * entry['mcse'], f'{name}: bias {entry["bias"]}')

    @unittest.skipUnless(SLOW, 'set PYREJECTIVE_SLOW=1')
    def test_all_designs(self):
        settings = SimulationConfig(os.path.join(HERE, 'standard.yml')).settings
        settings['replications'] = 300
        for family, basis in DesignSpec.ROWS:
            settings['design'] = {'family': family, 'count_basis': basis, 'f': 0.5, 'p_hint': 0.2}
            report = run_simulation(SimulationConfig(settings), 77)
            self.check_bands(report, f'{family}/{basis}')

    @unittest.skipUnless(SLOW, 'set PYREJECTIVE_SLOW=1')
    def test_drift(self):
        report = run_simulation(SimulationConfig(os.path.join(HERE, 'drift.yml')), 13)
        self.check_bands(report, 'drift')


if __name__ == '__main__':
    unittest.main()
